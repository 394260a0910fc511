#pragma once

// Decode-and-forward relay placement for one user at a fixed altitude.

#include "uavnet/world.hpp"

#include <string>

namespace uavnet {

enum class BsLink {
    AlwaysLoS,
    RayTraced,
};

struct RelayOptions {
    double altitude = 50.0;
    double step = 2.5;  // meters
    BsLink bs_link = BsLink::AlwaysLoS;
    /// Perpendicular march length on each side of the axis; <= 0 means up to
    /// the map edge.
    double lateral_limit = 0.0;
    SegmentRule rule{};

    void validate() const;
};

struct RelayPlacement {
    Pose3 pose;
    double throughput = 0.0;  // bit/s
    /// Link-state and rate evaluations performed.
    long long evaluations = 0;
    bool on_axis = false;
    bool on_boundary = false;
};

/// End-to-end rate with the UAV at `uav`, using mean RSSI on both hops.
double relay_throughput(const CityMap& map, const SegmentedModel& model, const Pose3& bs, const GroundNode& user,
                        const Pose3& uav, const RelayOptions& options = {});

/// Candidates on the BS-user axis plus, for every axis point, each LoS
/// boundary crossing met when marching perpendicular to the axis on both
/// sides up to the lateral limit (bisected to below step / 10). The march
/// covers the same width at every axis point, so the work per axis point does
/// not depend on the scene. The best axis and boundary candidates are then refined
/// by a dyadic pattern search along the axis.
RelayPlacement plan_relay_nested(const CityMap& map, const SegmentedModel& model, const Pose3& bs,
                                 const GroundNode& user, const RelayOptions& options = {});

/// Exhaustive search over cell-centered grid points of spacing `resolution`
/// covering the map. Ties go to the lexicographically smallest pose.
RelayPlacement plan_relay_oracle(const CityMap& map, const SegmentedModel& model, const Pose3& bs,
                                 const GroundNode& user, double resolution, const RelayOptions& options = {});

std::string relay_placement_json(const RelayPlacement& placement);

} // namespace uavnet
