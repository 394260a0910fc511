#pragma once

// Radio-map reconstruction from sparse RSSI samples: a kernel/KNN baseline
// and the model-based route built on a jointly classified segmented fit.

#include "uavnet/world.hpp"

#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

namespace uavnet {

/// id -> node lookup for a scenario.
class NodeIndex {
public:
    explicit NodeIndex(std::span<const GroundNode> nodes);
    const GroundNode& at(int id) const;
    bool contains(int id) const { return index_.count(id) != 0; }

private:
    std::vector<GroundNode> nodes_;
    std::unordered_map<int, std::size_t> index_;
};

struct LabeledDataset {
    std::vector<Measurement> measurements;
    std::vector<int> labels;

    void validate(int K) const;
};

enum class InitPolicy {
    /// Threshold the global LoS probability of each link's elevation angle.
    ElevationPlos,
    /// Start from caller-supplied labels.
    Given,
    /// Start from the simulation ground truth (tests only).
    TrueSegment,
};

struct FitOptions {
    int K = 2;
    InitPolicy init = InitPolicy::ElevationPlos;
    GlobalLosParams warm_start{};
    std::vector<int> initial_labels;
    /// Optional per-measurement, per-segment log prior added to the
    /// classification score; row-major [measurement][segment].
    std::vector<double> log_prior;
    int max_iters = 100;
    double tol = 1e-6;
    /// Fraction of the largest segment moved into an emptied segment.
    double rescue_fraction = 0.10;
    /// Keeps fitted shadowing strictly positive on noiseless data.
    double sigma_floor = 1e-3;
    /// Skip classification and only fit per-segment parameters.
    bool fixed_labels = false;
    /// Run the alternation first with one shared shadowing std (nearest-line
    /// clustering), then with per-segment std.
    bool pooled_warmup = true;
    /// Also start from residual-quantile splits of a single pooled line and
    /// keep the run with the lowest final objective.
    bool multi_start = true;
};

struct FitIteration {
    double objective = 0.0;  // Gaussian negative log-likelihood
    int label_changes = 0;
    bool rescued = false;
    /// Objective evaluated with the shared-std warm-up score.
    bool pooled = false;
};

struct FitResult {
    SegmentedModel model;
    LabeledDataset labeled;
    std::vector<FitIteration> trace;
    bool converged = false;
};

/// Alternates hard classification and per-segment least squares on
/// (log10 d, rssi). Radio constants (tx_power, noise_floor, bandwidth) come
/// from `radio`; its segment parameters are ignored.
FitResult fit_segmented_model(std::span<const Measurement> measurements, const NodeIndex& nodes,
                              const SegmentedModel& radio, const FitOptions& options);

/// Per-measurement Gaussian negative log-likelihood under segment s.
double segment_nll(const SegmentedModel& model, int s, double rssi, double d);

struct RadioMap {
    int node_id = 0;
    std::vector<Pose3> grid;
    std::vector<double> predicted_rssi;
    std::vector<int> predicted_segment;  // empty when not available
};

struct DirectOptions {
    enum class Kind { Knn, Kernel };
    Kind kind = Kind::Knn;
    int k = 5;
    double bandwidth = 25.0;  // meters
};

/// Averages training RSSI of `node_id` in 3D UAV-position space.
RadioMap reconstruct_direct(std::span<const Measurement> training, int node_id, std::span<const Pose3> grid,
                            const DirectOptions& options);

using SegmentPredictor = std::function<int(const Pose3& uav, const GroundNode& node)>;

/// Ray tracing over a known city.
SegmentPredictor map_segment_predictor(const CityMap& map, int K, SegmentRule rule = {});

/// Majority label of the k nearest labeled measurements of the same node
/// (ties to the lower segment).
SegmentPredictor nearest_label_predictor(const LabeledDataset& data, int k = 1);

RadioMap reconstruct_model_based(const SegmentedModel& model, const SegmentPredictor& predictor,
                                 std::span<const Pose3> grid, const GroundNode& node);

double map_rmse(const RadioMap& predicted, const RadioMap& truth);

/// Fraction of labels equal to the recorded true segment.
double label_accuracy(const LabeledDataset& data);

} // namespace uavnet
