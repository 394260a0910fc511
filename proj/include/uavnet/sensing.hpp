#pragma once

// Localizing a ground node from UAV-borne RSSI with a particle filter, and
// choosing where to measure next.

#include "uavnet/world.hpp"

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace uavnet {

struct Particle {
    double x = 0.0;
    double y = 0.0;
    double weight = 0.0;
};

struct ParticleBelief {
    std::vector<Particle> particles;
    /// Number of updates whose likelihood underflowed on every particle and
    /// forced a reset to uniform weights.
    int underflow_resets = 0;

    /// 1 / sum(w^2).
    double effective_sample_size() const;
    Pose3 mean(double z = kDefaultNodeHeight) const;
    /// Weighted 2x2 covariance, row-major.
    std::array<double, 4> covariance() const;
    double covariance_trace() const;
    /// Throws ValidationError unless weights are nonnegative and sum to 1.
    void validate(double tolerance = 1e-9) const;
};

/// `count` particles uniform over the map footprint, equal weights.
ParticleBelief uniform_belief(const CityMap& map, int count, std::uint64_t seed);

/// How an update or a prediction links a hypothesis to the RSSI.
struct SensingModel {
    SegmentedModel model;
    /// When set, the segment of each hypothesis is ray traced on this map;
    /// otherwise the likelihood is a mixture over segments weighted by
    /// `global` (segment 1 with p_LoS, the rest sharing 1 - p_LoS).
    std::optional<CityMap> map;
    GlobalLosParams global;
    SegmentRule rule;
    double node_height = kDefaultNodeHeight;
    /// Jittered particles are clamped into this area.
    FlightArea area;

    double log_likelihood(const Pose3& uav, double rssi, double x, double y) const;
};

struct UpdateOptions {
    /// Resample when the effective sample size drops below this fraction of
    /// the particle count.
    double resample_fraction = 0.5;
    /// Std (m) of the Gaussian jitter added after resampling, kept in the map.
    double jitter = 1.0;
};

/// Bayes update with one measurement; resampling and jitter draw from `rng`.
void update_belief(ParticleBelief& belief, const Measurement& measurement, const SensingModel& sensing, Rng& rng,
                   const UpdateOptions& options = {});

/// Systematic resampling to equal weights (no jitter).
void systematic_resample(ParticleBelief& belief, Rng& rng);

struct InfoOptions {
    /// Hypotheses drawn from the belief to score candidates.
    int hypotheses = 400;
    /// Predictive measurements per candidate.
    int samples = 64;
};

/// Expected drop in the covariance trace after measuring at `uav`.
double expected_information(const ParticleBelief& belief, const Pose3& uav, const SensingModel& sensing,
                            std::uint64_t seed, const InfoOptions& options = {});

/// Candidate with the largest expected information; ties go to the first.
/// Every candidate is scored with the same random stream.
Pose3 next_waypoint(const ParticleBelief& belief, std::span<const Pose3> candidates, const SensingModel& sensing,
                    std::uint64_t seed, const InfoOptions& options = {});

enum class SensingPolicy {
    Random,
    MapFreeActive,
    MapAidedActive,
};

const char* policy_name(SensingPolicy policy);
SensingPolicy parse_policy(const std::string& name);

struct LocalizationOptions {
    int particles = 5000;
    double altitude = 50.0;
    /// Candidate ring around the current pose.
    int ring_size = 16;
    double ring_radius = 50.0;
    /// Defaults to the map center.
    std::optional<Pose3> start;
    /// Used by the map-free filter and planner.
    GlobalLosParams global;
    /// Whether the filter traces rays on the map. Defaults to true for the
    /// map-aided policy only.
    std::optional<bool> map_filter;
    UpdateOptions update;
    InfoOptions info;

    void validate() const;
};

struct LocalizationStep {
    Pose3 uav;
    double rssi = 0.0;
    Pose3 estimate;
    double error = 0.0;  // m, horizontal
};

struct LocalizationResult {
    Pose3 estimate;
    /// Horizontal estimate error before any measurement, then after each one.
    std::vector<double> rmse;
    std::vector<LocalizationStep> steps;
    /// sqrt of the final covariance trace, m.
    double posterior_std = 0.0;
    int underflow_resets = 0;
};

/// `count` poses evenly spaced on a ring around `center`, starting due east;
/// poses outside the map are dropped.
std::vector<Pose3> ring_candidates(const CityMap& map, const Pose3& center, int count, double radius);

/// Loop of choose-waypoint, measure, update for `budget` measurements.
/// Streams: sub_seed(seed, 1) prior, (seed, 2, k) measurement k, (seed, 3, k)
/// waypoint choice k, (seed, 4) filter.
LocalizationResult run_localization(const CityMap& map, const SegmentedModel& model, const GroundNode& truth,
                                    int budget, SensingPolicy policy, std::uint64_t seed,
                                    const LocalizationOptions& options = {});

std::string localization_json(const LocalizationResult& result);

} // namespace uavnet
