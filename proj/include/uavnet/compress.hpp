#pragma once

// Per-node logistic LoS-probability models distilled from a city map. They
// replace ray tracing with a smooth function of the elevation angle.

#include "uavnet/world.hpp"

#include <array>
#include <span>
#include <string>
#include <vector>

namespace uavnet {

struct LosSample {
    double theta = 0.0;  // degrees
    bool los = false;
};

struct TrainingSpec {
    int count = 2000;
    double radius_min = 10.0;
    double radius_max = 300.0;
    double altitude_min = 20.0;
    double altitude_max = 100.0;

    void validate() const;
};

/// UAV positions uniform (by area) in the annulus around `node` and uniform in
/// altitude, clamped into the map, each labeled by ray tracing.
std::vector<LosSample> sample_training_set(const CityMap& map, const GroundNode& node, const TrainingSpec& spec,
                                           std::uint64_t seed);

/// p(theta) = 1 / (1 + exp(-a (theta - b))).
struct LocalLosModel {
    int node_id = 0;
    double a = 0.1;   // per degree
    double b = 20.0;  // degrees
    int samples = 0;
    double loglik = 0.0;  // unpenalized Bernoulli log-likelihood at the fit
    int iterations = 0;
};

/// Logistic regression z = w theta + c with the slope penalty (ridge / 2) w^2,
/// so separable data still gives a finite slope; a = w, b = -c / w. Damped
/// Newton until the gradient norm drops below 1e-8. Single-class data has no
/// maximizer and yields a capped model (p >= 0.99, or <= 0.01, above the
/// horizon).
LocalLosModel fit_local_logistic(std::span<const LosSample> training, double ridge = 1e-3, int node_id = 0);

double local_plos(const LocalLosModel& model, double theta_deg);

/// Bernoulli log-likelihood of `data` under slope/midpoint (a, b).
double logistic_loglik(std::span<const LosSample> data, double a, double b);

/// One fitted model per node; node n uses seed stream sub_seed(seed, id).
std::vector<LocalLosModel> compress_map(const CityMap& map, std::span<const GroundNode> nodes,
                                        const TrainingSpec& spec, double ridge, std::uint64_t seed);

/// A single logistic fitted on the pooled training data of every node.
GlobalLosParams fit_global_logistic(const CityMap& map, std::span<const GroundNode> nodes, const TrainingSpec& spec,
                                    double ridge, std::uint64_t seed);

/// LoS probability seen by a planner: a local or a global logistic.
struct LosView {
    double a = 0.1;
    double b = 20.0;
    /// Clamp applied to the probability; the gradient is zero where it binds.
    double p_min = 0.0;
    double p_max = 1.0;
};

inline LosView view_of(const LocalLosModel& m) { return {m.a, m.b, 0.0, 1.0}; }
inline LosView view_of(const GlobalLosParams& g) { return {g.slope, g.midpoint, 0.0, 1.0}; }

struct RateAndGradient {
    double rate = 0.0;                  // bit/s
    std::array<double, 3> gradient{};   // d rate / d (x, y, z) of the UAV
};

/// p R_LoS(d) + (1 - p) R_NLoS(d) with p from the view at the link's elevation.
/// Directly above the node the horizontal gradient is taken as zero.
RateAndGradient expected_rate_and_gradient(const SegmentedModel& model, const LosView& view, const Pose3& uav,
                                           const GroundNode& node);

double expected_rate(const SegmentedModel& model, const LocalLosModel& local, const Pose3& uav,
                     const GroundNode& node);

std::string compressed_map_json(std::span<const LocalLosModel> models);

} // namespace uavnet
