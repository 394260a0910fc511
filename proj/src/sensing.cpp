#include "uavnet/sensing.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace uavnet {

namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;

double gaussian_log(double residual, double sigma)
{
    const double z = residual / sigma;
    return -0.5 * z * z - std::log(sigma) - kLogSqrt2Pi;
}

// Segment probabilities of the map-free mixture.
std::vector<double> segment_weights(const SensingModel& sensing, const Pose3& uav, const Pose3& node)
{
    const int K = sensing.model.K();
    const double p = global_plos(sensing.global, elevation_angle(uav, node));
    std::vector<double> w(static_cast<std::size_t>(K), K > 1 ? (1.0 - p) / (K - 1) : 0.0);
    w[0] = K > 1 ? p : 1.0;
    return w;
}

double log_sum_exp(double a, double b)
{
    if (a == -std::numeric_limits<double>::infinity()) {
        return b;
    }
    const double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// Per-hypothesis link description, precomputed once per UAV pose.
struct Link {
    double d = 0.0;
    int segment = 0;                // map-aided
    std::vector<double> mixture;    // map-free
};

Link describe(const SensingModel& sensing, const Pose3& uav, double x, double y)
{
    const Pose3 node{x, y, sensing.node_height};
    Link link;
    link.d = std::max(distance(uav, node), 1e-6);
    if (sensing.map) {
        link.segment = sensing.model.K() >= 2
                           ? classify_segment(*sensing.map, uav, GroundNode{0, node}, sensing.model.K(), sensing.rule)
                           : 1;
    } else {
        link.mixture = segment_weights(sensing, uav, node);
    }
    return link;
}

double link_log_likelihood(const SegmentedModel& model, const Link& link, double rssi)
{
    if (link.mixture.empty()) {
        return gaussian_log(rssi - rssi_mean(model, link.segment, link.d), model.segment(link.segment).sigma);
    }
    double total = -std::numeric_limits<double>::infinity();
    for (int s = 1; s <= model.K(); ++s) {
        const double w = link.mixture[static_cast<std::size_t>(s - 1)];
        if (w > 0.0) {
            total = log_sum_exp(total, std::log(w) + gaussian_log(rssi - rssi_mean(model, s, link.d),
                                                                  model.segment(s).sigma));
        }
    }
    return total;
}

double weighted_trace(std::span<const double> x, std::span<const double> y, std::span<const double> w)
{
    double sw = 0.0;
    double mx = 0.0;
    double my = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        sw += w[i];
        mx += w[i] * x[i];
        my += w[i] * y[i];
    }
    mx /= sw;
    my /= sw;
    double t = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        t += w[i] * ((x[i] - mx) * (x[i] - mx) + (y[i] - my) * (y[i] - my));
    }
    return t / sw;
}

double clamp_into(double v, double lo, double hi)
{
    const double eps = 1e-9 * std::max(1.0, std::abs(hi));
    return std::clamp(v, lo, hi - eps);
}

} // namespace

double ParticleBelief::effective_sample_size() const
{
    double s = 0.0;
    for (const auto& p : particles) {
        s += p.weight * p.weight;
    }
    return s > 0.0 ? 1.0 / s : 0.0;
}

Pose3 ParticleBelief::mean(double z) const
{
    double x = 0.0;
    double y = 0.0;
    for (const auto& p : particles) {
        x += p.weight * p.x;
        y += p.weight * p.y;
    }
    return {x, y, z};
}

std::array<double, 4> ParticleBelief::covariance() const
{
    const Pose3 m = mean();
    double xx = 0.0;
    double xy = 0.0;
    double yy = 0.0;
    for (const auto& p : particles) {
        const double dx = p.x - m.x;
        const double dy = p.y - m.y;
        xx += p.weight * dx * dx;
        xy += p.weight * dx * dy;
        yy += p.weight * dy * dy;
    }
    return {xx, xy, xy, yy};
}

double ParticleBelief::covariance_trace() const
{
    const auto c = covariance();
    return c[0] + c[3];
}

void ParticleBelief::validate(double tolerance) const
{
    require(!particles.empty(), "belief: no particles");
    double sum = 0.0;
    for (const auto& p : particles) {
        require(p.weight >= 0.0 && std::isfinite(p.weight), "belief: negative or non-finite weight");
        sum += p.weight;
    }
    require(std::abs(sum - 1.0) <= tolerance, "belief: weights do not sum to 1");
}

ParticleBelief uniform_belief(const CityMap& map, int count, std::uint64_t seed)
{
    require(count >= 1, "uniform_belief: count must be >= 1");
    Rng rng(seed);
    std::uniform_real_distribution<double> ux(map.origin_x(), map.max_x());
    std::uniform_real_distribution<double> uy(map.origin_y(), map.max_y());
    ParticleBelief b;
    b.particles.resize(static_cast<std::size_t>(count));
    for (auto& p : b.particles) {
        p.x = clamp_into(ux(rng), map.origin_x(), map.max_x());
        p.y = clamp_into(uy(rng), map.origin_y(), map.max_y());
        p.weight = 1.0 / count;
    }
    return b;
}

double SensingModel::log_likelihood(const Pose3& uav, double rssi, double x, double y) const
{
    return link_log_likelihood(model, describe(*this, uav, x, y), rssi);
}

void systematic_resample(ParticleBelief& belief, Rng& rng)
{
    const std::size_t n = belief.particles.size();
    std::vector<Particle> out(n);
    const double step = 1.0 / static_cast<double>(n);
    double u = std::uniform_real_distribution<double>(0.0, step)(rng);
    double cumulative = belief.particles[0].weight;
    std::size_t j = 0;
    for (std::size_t i = 0; i < n; ++i) {
        while (u > cumulative && j + 1 < n) {
            ++j;
            cumulative += belief.particles[j].weight;
        }
        out[i] = {belief.particles[j].x, belief.particles[j].y, step};
        u += step;
    }
    belief.particles = std::move(out);
}

void update_belief(ParticleBelief& belief, const Measurement& measurement, const SensingModel& sensing, Rng& rng,
                   const UpdateOptions& options)
{
    belief.validate(1e-6);
    require(std::isfinite(measurement.rssi), "update_belief: non-finite rssi");
    const std::size_t n = belief.particles.size();
    std::vector<double> logw(n);
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        const auto& p = belief.particles[i];
        logw[i] = p.weight > 0.0 ? std::log(p.weight) + sensing.log_likelihood(measurement.uav, measurement.rssi, p.x, p.y)
                                 : -std::numeric_limits<double>::infinity();
        top = std::max(top, logw[i]);
    }
    // Every product weight * likelihood below the smallest normal double.
    if (!(top >= std::log(std::numeric_limits<double>::min()))) {
        std::fprintf(stderr, "warning: all particle likelihoods underflowed; belief reset to uniform weights\n");
        ++belief.underflow_resets;
        for (auto& p : belief.particles) {
            p.weight = 1.0 / static_cast<double>(n);
        }
        return;
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        logw[i] = std::exp(logw[i] - top);
        sum += logw[i];
    }
    for (std::size_t i = 0; i < n; ++i) {
        belief.particles[i].weight = logw[i] / sum;
    }

    if (belief.effective_sample_size() < options.resample_fraction * static_cast<double>(n)) {
        systematic_resample(belief, rng);
        if (options.jitter > 0.0) {
            std::normal_distribution<double> noise(0.0, options.jitter);
            const FlightArea& a = sensing.area;
            for (auto& p : belief.particles) {
                p.x = std::clamp(p.x + noise(rng), a.x0, a.x1);
                p.y = std::clamp(p.y + noise(rng), a.y0, a.y1);
            }
        }
    }
}

double expected_information(const ParticleBelief& belief, const Pose3& uav, const SensingModel& sensing,
                            std::uint64_t seed, const InfoOptions& options)
{
    require(options.hypotheses >= 1 && options.samples >= 1, "expected_information: invalid options");
    belief.validate(1e-6);
    Rng rng(seed);

    // Equal-weight hypotheses by systematic resampling of the belief.
    ParticleBelief h;
    h.particles.reserve(static_cast<std::size_t>(options.hypotheses));
    {
        const double step = 1.0 / options.hypotheses;
        double u = std::uniform_real_distribution<double>(0.0, step)(rng);
        double cumulative = belief.particles[0].weight;
        std::size_t j = 0;
        for (int i = 0; i < options.hypotheses; ++i) {
            while (u > cumulative && j + 1 < belief.particles.size()) {
                ++j;
                cumulative += belief.particles[j].weight;
            }
            h.particles.push_back({belief.particles[j].x, belief.particles[j].y, step});
            u += step;
        }
    }
    const std::size_t m = h.particles.size();
    std::vector<double> xs(m);
    std::vector<double> ys(m);
    std::vector<Link> links(m);
    for (std::size_t i = 0; i < m; ++i) {
        xs[i] = h.particles[i].x;
        ys[i] = h.particles[i].y;
        links[i] = describe(sensing, uav, xs[i], ys[i]);
    }
    const std::vector<double> flat(m, 1.0);
    const double prior_trace = weighted_trace(xs, ys, flat);
    if (!(prior_trace > 0.0)) {
        return 0.0;
    }

    std::uniform_int_distribution<std::size_t> pick(0, m - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> logw(m);
    std::vector<double> w(m);
    double expected = 0.0;
    for (int k = 0; k < options.samples; ++k) {
        const Link& truth = links[pick(rng)];
        int s = truth.segment;
        const double u = unit(rng);
        if (!truth.mixture.empty()) {
            double c = 0.0;
            s = sensing.model.K();
            for (int q = 1; q <= sensing.model.K(); ++q) {
                c += truth.mixture[static_cast<std::size_t>(q - 1)];
                if (u < c) {
                    s = q;
                    break;
                }
            }
        }
        const double rssi = rssi_mean(sensing.model, s, truth.d) + sensing.model.segment(s).sigma * gauss(rng);
        double top = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < m; ++i) {
            logw[i] = link_log_likelihood(sensing.model, links[i], rssi);
            top = std::max(top, logw[i]);
        }
        for (std::size_t i = 0; i < m; ++i) {
            w[i] = std::exp(logw[i] - top);
        }
        expected += weighted_trace(xs, ys, w);
    }
    return prior_trace - expected / options.samples;
}

Pose3 next_waypoint(const ParticleBelief& belief, std::span<const Pose3> candidates, const SensingModel& sensing,
                    std::uint64_t seed, const InfoOptions& options)
{
    require(!candidates.empty(), "next_waypoint: no candidates");
    if (candidates.size() == 1) {
        return candidates.front();
    }
    const double scale = std::max(1.0, belief.covariance_trace());
    std::size_t best = 0;
    double best_score = expected_information(belief, candidates[0], sensing, seed, options);
    for (std::size_t c = 1; c < candidates.size(); ++c) {
        const double score = expected_information(belief, candidates[c], sensing, seed, options);
        if (score > best_score + 1e-12 * scale) {
            best = c;
            best_score = score;
        }
    }
    return candidates[best];
}

const char* policy_name(SensingPolicy policy)
{
    switch (policy) {
    case SensingPolicy::Random:
        return "random";
    case SensingPolicy::MapFreeActive:
        return "map-free-active";
    case SensingPolicy::MapAidedActive:
        return "map-aided-active";
    }
    return "";
}

SensingPolicy parse_policy(const std::string& name)
{
    for (const auto p : {SensingPolicy::Random, SensingPolicy::MapFreeActive, SensingPolicy::MapAidedActive}) {
        if (name == policy_name(p)) {
            return p;
        }
    }
    throw ValidationError("unknown sensing policy: " + name);
}

void LocalizationOptions::validate() const
{
    require(particles >= 1, "localization: particles must be >= 1");
    require(altitude > 0.0, "localization: altitude must be positive");
    require(ring_size >= 1 && ring_radius > 0.0, "localization: invalid candidate ring");
    require(update.resample_fraction >= 0.0 && update.resample_fraction <= 1.0 && update.jitter >= 0.0,
            "localization: invalid update options");
    require(info.hypotheses >= 1 && info.samples >= 1, "localization: invalid information options");
    global.validate();
}

std::vector<Pose3> ring_candidates(const CityMap& map, const Pose3& center, int count, double radius)
{
    std::vector<Pose3> out;
    for (int k = 0; k < count; ++k) {
        const double a = 2.0 * kPi * k / count;
        const Pose3 p{center.x + radius * std::cos(a), center.y + radius * std::sin(a), center.z};
        if (map.contains(p)) {
            out.push_back(p);
        }
    }
    return out;
}

LocalizationResult run_localization(const CityMap& map, const SegmentedModel& model, const GroundNode& truth,
                                    int budget, SensingPolicy policy, std::uint64_t seed,
                                    const LocalizationOptions& options)
{
    require(budget >= 0, "run_localization: budget must be >= 0");
    options.validate();
    model.validate();
    require(map.contains(truth.position), "run_localization: node outside the map");

    SensingModel free_model;
    free_model.model = model;
    free_model.global = options.global;
    free_model.node_height = truth.position.z;
    free_model.area = area_of(map);
    SensingModel aided_model = free_model;
    aided_model.map = map;

    const bool aided_filter = options.map_filter.value_or(policy == SensingPolicy::MapAidedActive);
    const SensingModel& filter = aided_filter ? aided_model : free_model;
    const SensingModel& planner = policy == SensingPolicy::MapAidedActive ? aided_model : free_model;

    auto belief = uniform_belief(map, options.particles, sub_seed(seed, 1));
    Rng filter_rng(sub_seed(seed, 4));
    Pose3 uav = options.start.value_or(Pose3{0.5 * (map.origin_x() + map.max_x()),
                                             0.5 * (map.origin_y() + map.max_y()), options.altitude});
    uav.z = options.altitude;
    require(map.contains(uav), "run_localization: start outside the map");

    LocalizationResult result;
    auto error = [&](const Pose3& e) { return horizontal_distance(e, truth.position); };
    result.estimate = belief.mean(truth.position.z);
    result.rmse.push_back(error(result.estimate));

    for (int k = 0; k < budget; ++k) {
        const auto kk = static_cast<std::uint64_t>(k);
        auto candidates = ring_candidates(map, uav, options.ring_size, options.ring_radius);
        if (candidates.empty()) {
            candidates.push_back(uav);
        }
        if (policy == SensingPolicy::Random) {
            Rng rng(sub_seed(seed, 3, kk));
            uav = candidates[std::uniform_int_distribution<std::size_t>(0, candidates.size() - 1)(rng)];
        } else {
            uav = next_waypoint(belief, candidates, planner, sub_seed(seed, 3, kk), options.info);
        }
        const auto m = sample_rssi(sub_seed(seed, 2, kk), model, map, uav, truth);
        update_belief(belief, m, filter, filter_rng, options.update);
        result.estimate = belief.mean(truth.position.z);
        result.rmse.push_back(error(result.estimate));
        result.steps.push_back({uav, m.rssi, result.estimate, result.rmse.back()});
    }
    result.posterior_std = std::sqrt(belief.covariance_trace());
    result.underflow_resets = belief.underflow_resets;
    return result;
}

std::string localization_json(const LocalizationResult& result)
{
    nlohmann::ordered_json j;
    j["estimate"] = {{"x", result.estimate.x}, {"y", result.estimate.y}};
    j["final_error_m"] = result.rmse.back();
    j["posterior_std_m"] = result.posterior_std;
    j["rmse"] = result.rmse;
    j["measurements"] = result.steps.size();
    j["underflow_resets"] = result.underflow_resets;
    return j.dump(2);
}

} // namespace uavnet
