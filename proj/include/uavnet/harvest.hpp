#pragma once

// Data-harvesting trajectories: a fixed-altitude path of time slots, each slot
// serving one ground node, planned under a length budget and first-order
// dynamics limits.

#include "uavnet/compress.hpp"
#include "uavnet/world.hpp"

#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace uavnet {

struct TrajectorySpec {
    Pose3 start;
    Pose3 end;
    double L_max = 0.0;     // meters
    int n_waypoints = 2;
    double v_max = 20.0;    // m/s
    double a_max = 5.0;     // m/s^2
    double slot_duration = 1.0;  // s
    double altitude = 50.0;
    FlightArea area;

    /// Also requires the straight start-end path to satisfy the speed limit.
    void validate() const;
};

struct Trajectory {
    std::vector<Pose3> waypoints;
    std::vector<int> schedule;  // served node id per waypoint
    double slot_duration = 1.0;  // s
    double planned_objective = 0.0;  // bits
    /// Per-node bits in the order of the node list passed to evaluate_path.
    std::vector<double> realized_data;

    double length() const;
    double realized_total() const;
};

/// Hard check of the length budget (+1e-6 m), the flight area, per-slot
/// displacement and displacement-difference limits; throws ValidationError
/// when violated.
void check_trajectory(const Trajectory& trajectory, const TrajectorySpec& spec);

enum class ViewKind {
    DeterministicLoS,
    GlobalProbabilistic,
    CompressedMap,
    TrueMap,
};

/// What a planner believes about the links. All views use mean RSSI.
struct ChannelView {
    ViewKind kind = ViewKind::DeterministicLoS;
    SegmentedModel model;
    GlobalLosParams global;                 // GlobalProbabilistic
    std::map<int, LosView> local;           // CompressedMap, by node id
    CityMap map;                            // TrueMap
    SegmentRule rule;                       // TrueMap

    /// Rate (bit/s) the view predicts for the link.
    double rate(const Pose3& uav, const GroundNode& node) const;
    /// Whether the view supplies an analytic gradient.
    bool differentiable() const;
};

ChannelView deterministic_view(const SegmentedModel& model);
ChannelView global_view(const SegmentedModel& model, const GlobalLosParams& params);
ChannelView compressed_view(const SegmentedModel& model, std::span<const LocalLosModel> local);
ChannelView true_map_view(const SegmentedModel& model, const CityMap& map, const SegmentRule& rule = {});

const char* view_name(ViewKind kind);

struct PlanOptions {
    int max_rounds = 300;
    /// Stop once the objective gained less than tolerance (relative) over the
    /// last `window` rounds.
    double tolerance = 1e-4;
    int window = 10;
    /// Initial path; projected onto the constraints before the search.
    std::optional<std::vector<Pose3>> warm_start;
    /// Also start from a detour through each node (projected) and keep the
    /// best result.
    bool detour_starts = false;
};

/// Greedy schedule: each waypoint serves the node with the highest predicted
/// rate, ties to the lowest id. Returns the total in bits.
double schedule_path(const ChannelView& view, std::span<const Pose3> waypoints, std::span<const GroundNode> nodes,
                     double slot_duration, std::vector<int>& schedule);

/// Local search over single-waypoint moves: trust-region gradient steps for
/// differentiable views, pattern search otherwise. Each candidate is projected
/// by scaling its displacement from the straight chord until feasible. The
/// search runs from the straight path (or the warm start) and, optionally,
/// from one detour per node; start k uses seed stream sub_seed(seed, k).
Trajectory plan_path(const TrajectorySpec& spec, std::span<const GroundNode> nodes, const ChannelView& view,
                     std::uint64_t seed, const PlanOptions& options = {});

/// Scales the path toward the straight chord until it satisfies the spec.
std::vector<Pose3> project_to_constraints(const TrajectorySpec& spec, std::span<const Pose3> waypoints);

/// Ground-truth scoring: slot i draws shadowing from sub_seed(seed, i).
/// Fills trajectory.realized_data and returns it.
std::vector<double> evaluate_path(Trajectory& trajectory, const CityMap& map, const SegmentedModel& model,
                                  std::span<const GroundNode> nodes, std::uint64_t seed, const SegmentRule& rule = {});

std::string trajectory_json(const Trajectory& trajectory);

} // namespace uavnet
