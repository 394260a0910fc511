#include "uavnet/compress.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>

namespace uavnet {

namespace {

double sigmoid(double z)
{
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// log(sigmoid(z)) without overflow.
double log_sigmoid(double z) { return z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z)); }

double penalized_loglik(std::span<const LosSample> data, double w, double c, double ridge)
{
    double ll = 0.0;
    for (const auto& s : data) {
        const double z = w * s.theta + c;
        ll += s.los ? log_sigmoid(z) : log_sigmoid(-z);
    }
    return ll - 0.5 * ridge * w * w;
}

constexpr double kCapSlope = 0.1;

} // namespace

void TrainingSpec::validate() const
{
    require(count >= 1, "training spec: count must be >= 1");
    require(radius_min >= 0.0 && radius_max > radius_min, "training spec: need 0 <= radius_min < radius_max");
    require(altitude_min > 0.0 && altitude_max >= altitude_min, "training spec: need 0 < altitude_min <= altitude_max");
}

std::vector<LosSample> sample_training_set(const CityMap& map, const GroundNode& node, const TrainingSpec& spec,
                                           std::uint64_t seed)
{
    spec.validate();
    require(map.contains(node.position), "sample_training_set: node outside the map");
    Rng rng(seed);
    std::uniform_real_distribution<double> r2(spec.radius_min * spec.radius_min, spec.radius_max * spec.radius_max);
    std::uniform_real_distribution<double> phi(0.0, 2.0 * kPi);
    std::uniform_real_distribution<double> alt(spec.altitude_min, spec.altitude_max);
    const double x_hi = std::nextafter(map.max_x(), map.origin_x());
    const double y_hi = std::nextafter(map.max_y(), map.origin_y());

    std::vector<LosSample> out;
    out.reserve(static_cast<std::size_t>(spec.count));
    for (int i = 0; i < spec.count; ++i) {
        const double r = std::sqrt(r2(rng));
        const double a = phi(rng);
        const double z = alt(rng);
        const Pose3 uav{std::clamp(node.position.x + r * std::cos(a), map.origin_x(), x_hi),
                        std::clamp(node.position.y + r * std::sin(a), map.origin_y(), y_hi), z};
        if (horizontal_distance(uav, node.position) == 0.0 && uav.z == node.position.z) {
            continue;
        }
        out.push_back({elevation_angle(uav, node), line_of_sight(map, uav, node.position)});
    }
    return out;
}

LocalLosModel fit_local_logistic(std::span<const LosSample> training, double ridge, int node_id)
{
    require(training.size() >= 10, "fit_local_logistic: need at least 10 samples");
    require(ridge > 0.0, "fit_local_logistic: ridge must be positive");

    const bool first = training.front().los;
    const bool uniform = std::all_of(training.begin(), training.end(),
                                     [first](const LosSample& s) { return s.los == first; });
    if (uniform) {
        // No finite maximizer exists; return the capped model: slope +-kCapSlope
        // with p = 0.99 (all LoS) or 0.01 (all NLoS) at the horizon.
        LocalLosModel m;
        m.node_id = node_id;
        m.a = first ? kCapSlope : -kCapSlope;
        m.b = -std::log(99.0) / kCapSlope;
        m.samples = static_cast<int>(training.size());
        m.loglik = logistic_loglik(training, m.a, m.b);
        return m;
    }

    double w = 0.0;
    double c = 0.0;
    double f = penalized_loglik(training, w, c, ridge);
    int it = 0;
    constexpr int kMaxIters = 500;
    for (; it < kMaxIters; ++it) {
        double gw = -ridge * w;
        double gc = -ridge * c;
        double hww = ridge;
        double hwc = 0.0;
        double hcc = 1e-12;
        for (const auto& s : training) {
            const double p = sigmoid(w * s.theta + c);
            const double r = (s.los ? 1.0 : 0.0) - p;
            const double v = p * (1.0 - p);
            gw += r * s.theta;
            gc += r;
            hww += v * s.theta * s.theta;
            hwc += v * s.theta;
            hcc += v;
        }
        if (std::hypot(gw, gc) < 1e-8) {
            break;
        }
        // Newton step on the concave objective: solve H step = g with H the
        // negated Hessian (positive definite thanks to the ridge).
        const double det = hww * hcc - hwc * hwc;
        double sw = (hcc * gw - hwc * gc) / det;
        double sc = (hww * gc - hwc * gw) / det;
        double step = 1.0;
        double next = penalized_loglik(training, w + sw, c + sc, ridge);
        while (next < f && step > 1e-12) {
            step *= 0.5;
            next = penalized_loglik(training, w + step * sw, c + step * sc, ridge);
        }
        if (next < f) {
            break;
        }
        w += step * sw;
        c += step * sc;
        f = next;
    }
    if (!std::isfinite(w) || !std::isfinite(c) || w == 0.0) {
        throw NumericalError("fit_local_logistic: degenerate fit (zero or non-finite slope)");
    }

    LocalLosModel m;
    m.node_id = node_id;
    m.a = w;
    m.b = -c / w;
    m.samples = static_cast<int>(training.size());
    m.loglik = penalized_loglik(training, w, c, 0.0);
    m.iterations = it;
    return m;
}

double local_plos(const LocalLosModel& model, double theta_deg) { return sigmoid(model.a * (theta_deg - model.b)); }

double logistic_loglik(std::span<const LosSample> data, double a, double b)
{
    return penalized_loglik(data, a, -a * b, 0.0);
}

std::vector<LocalLosModel> compress_map(const CityMap& map, std::span<const GroundNode> nodes,
                                        const TrainingSpec& spec, double ridge, std::uint64_t seed)
{
    std::vector<LocalLosModel> out;
    out.reserve(nodes.size());
    for (const auto& n : nodes) {
        const auto data = sample_training_set(map, n, spec, sub_seed(seed, static_cast<std::uint64_t>(n.id)));
        out.push_back(fit_local_logistic(data, ridge, n.id));
    }
    return out;
}

GlobalLosParams fit_global_logistic(const CityMap& map, std::span<const GroundNode> nodes, const TrainingSpec& spec,
                                    double ridge, std::uint64_t seed)
{
    std::vector<LosSample> pooled;
    for (const auto& n : nodes) {
        const auto data = sample_training_set(map, n, spec, sub_seed(seed, static_cast<std::uint64_t>(n.id)));
        pooled.insert(pooled.end(), data.begin(), data.end());
    }
    const auto m = fit_local_logistic(pooled, ridge, -1);
    return GlobalLosParams{m.a, m.b};
}

RateAndGradient expected_rate_and_gradient(const SegmentedModel& model, const LosView& view, const Pose3& uav,
                                           const GroundNode& node)
{
    require(model.K() == 2, "expected_rate: needs a two-segment model");
    const double dx = uav.x - node.position.x;
    const double dy = uav.y - node.position.y;
    const double dz = uav.z - node.position.z;
    const double h = std::hypot(dx, dy);
    const double d = std::hypot(h, dz);
    if (!(d > 0.0)) {
        throw ValidationError("expected_rate: UAV and node coincide");
    }

    const double theta = std::atan2(dz, h) * kRadToDeg;
    const double p_raw = sigmoid(view.a * (theta - view.b));
    const double p = std::clamp(p_raw, view.p_min, view.p_max);

    // d theta / d (x, y, z) in degrees per meter.
    const double d2 = d * d;
    std::array<double, 3> dtheta{0.0, 0.0, h / d2 * kRadToDeg};
    if (h > 0.0) {
        dtheta[0] = -dz * dx / (h * d2) * kRadToDeg;
        dtheta[1] = -dz * dy / (h * d2) * kRadToDeg;
    }

    double rate[2];
    double drate_dd[2];
    for (int s = 1; s <= 2; ++s) {
        const double rssi = rssi_mean(model, s, d);
        rate[s - 1] = link_rate(model, rssi);
        const double drssi_dd = -10.0 * model.segment(s).alpha / (d * std::log(10.0));
        drate_dd[s - 1] = link_rate_slope(model, rssi) * drssi_dd;
    }

    RateAndGradient out;
    out.rate = p * rate[0] + (1.0 - p) * rate[1];
    const double dp_dtheta = p == p_raw ? p * (1.0 - p) * view.a : 0.0;
    const double dr_dd = p * drate_dd[0] + (1.0 - p) * drate_dd[1];
    const std::array<double, 3> dd{dx / d, dy / d, dz / d};
    for (int k = 0; k < 3; ++k) {
        out.gradient[k] = dp_dtheta * dtheta[k] * (rate[0] - rate[1]) + dr_dd * dd[k];
    }
    return out;
}

double expected_rate(const SegmentedModel& model, const LocalLosModel& local, const Pose3& uav,
                     const GroundNode& node)
{
    return expected_rate_and_gradient(model, view_of(local), uav, node).rate;
}

std::string compressed_map_json(std::span<const LocalLosModel> models)
{
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& m : models) {
        arr.push_back({{"node_id", m.node_id}, {"a_n", m.a}, {"b_n", m.b}, {"samples", m.samples},
                       {"loglik", m.loglik}});
    }
    return arr.dump(2);
}

} // namespace uavnet
