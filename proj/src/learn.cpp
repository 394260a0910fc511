#include "uavnet/learn.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

namespace uavnet {

NodeIndex::NodeIndex(std::span<const GroundNode> nodes) : nodes_(nodes.begin(), nodes.end())
{
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (!index_.emplace(nodes_[i].id, i).second) {
            throw ValidationError("duplicate node id " + std::to_string(nodes_[i].id));
        }
    }
}

const GroundNode& NodeIndex::at(int id) const
{
    const auto it = index_.find(id);
    if (it == index_.end()) {
        throw ValidationError("unknown node id " + std::to_string(id));
    }
    return nodes_[it->second];
}

void LabeledDataset::validate(int K) const
{
    require(labels.size() == measurements.size(), "labels and measurements differ in length");
    for (int s : labels) {
        require(s >= 1 && s <= K, "label outside 1..K");
    }
}

double segment_nll(const SegmentedModel& model, int s, double rssi, double d)
{
    const auto& p = model.segment(s);
    const double r = rssi - rssi_mean(model, s, d);
    return 0.5 * std::log(2.0 * kPi * p.sigma * p.sigma) + r * r / (2.0 * p.sigma * p.sigma);
}

namespace {

constexpr int kMinSegmentPoints = 3;

struct Sample {
    double logd;
    double rssi;
    double theta;
};

struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double ssr = 0.0;
    std::size_t n = 0;
};

bool fit_line(const std::vector<Sample>& xs, const std::vector<int>& labels, int s, LineFit& out)
{
    double sx = 0.0;
    double sy = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (labels[i] == s) {
            sx += xs[i].logd;
            sy += xs[i].rssi;
            ++n;
        }
    }
    if (n < kMinSegmentPoints) {
        return false;
    }
    const double mx = sx / static_cast<double>(n);
    const double my = sy / static_cast<double>(n);
    double sxx = 0.0;
    double sxy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (labels[i] == s) {
            const double dx = xs[i].logd - mx;
            sxx += dx * dx;
            sxy += dx * (xs[i].rssi - my);
        }
    }
    if (sxx < 1e-12) {
        return false;
    }
    out.slope = sxy / sxx;
    out.intercept = my - out.slope * mx;
    out.n = n;
    out.ssr = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (labels[i] == s) {
            const double r = xs[i].rssi - (out.intercept + out.slope * xs[i].logd);
            out.ssr += r * r;
        }
    }
    return true;
}

// Moves the worst-fit points of the most populous segment into segment `empty`.
void rescue_segment(const std::vector<Sample>& xs, std::vector<int>& labels, int K, int empty, double fraction)
{
    std::vector<std::size_t> counts(static_cast<std::size_t>(K) + 1, 0);
    for (int s : labels) {
        ++counts[static_cast<std::size_t>(s)];
    }
    int largest = 1;
    for (int s = 2; s <= K; ++s) {
        if (counts[static_cast<std::size_t>(s)] > counts[static_cast<std::size_t>(largest)]) {
            largest = s;
        }
    }
    LineFit fit;
    if (!fit_line(xs, labels, largest, fit)) {
        throw NumericalError("segmented fit: cannot rescue an empty segment, data too degenerate");
    }
    std::vector<std::pair<double, std::size_t>> resid;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (labels[i] == largest) {
            const double r = xs[i].rssi - (fit.intercept + fit.slope * xs[i].logd);
            resid.emplace_back(-std::abs(r), i);
        }
    }
    std::sort(resid.begin(), resid.end());
    const auto take = std::max<std::size_t>(
        kMinSegmentPoints, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(resid.size()))));
    for (std::size_t j = 0; j < std::min(take, resid.size()); ++j) {
        labels[resid[j].second] = empty;
    }
}

} // namespace

namespace {

FitResult run_alternation(const std::vector<Sample>& xs, std::vector<int> labels, const SegmentedModel& radio,
                          const FitOptions& options)
{
    const int K = options.K;
    const std::size_t n = xs.size();
    FitResult result;
    SegmentedModel model = radio;
    model.segments.assign(static_cast<std::size_t>(K), SegmentParams{});

    auto prior = [&](std::size_t i, int s) {
        return options.log_prior.empty() ? 0.0 : options.log_prior[i * K + (s - 1)];
    };

    // Fits every segment on the current labels, rescuing emptied segments, and
    // orders segments by exponent. Returns whether a rescue happened.
    auto fit_all = [&]() {
        bool rescued = false;
        for (int attempt = 0; attempt <= K; ++attempt) {
            bool ok = true;
            for (int s = 1; s <= K; ++s) {
                LineFit f;
                if (!fit_line(xs, labels, s, f)) {
                    if (K == 1) {
                        throw NumericalError("segmented fit: degenerate distances");
                    }
                    rescue_segment(xs, labels, K, s, options.rescue_fraction);
                    rescued = true;
                    ok = false;
                    break;
                }
                auto& p = model.segments[static_cast<std::size_t>(s - 1)];
                p.alpha = -f.slope / 10.0;
                p.beta = f.intercept - radio.tx_power;
                p.sigma = std::max(options.sigma_floor, std::sqrt(f.ssr / static_cast<double>(f.n)));
            }
            if (ok) {
                break;
            }
            if (attempt == K) {
                throw NumericalError("segmented fit: could not populate every segment");
            }
        }
        std::vector<int> order(static_cast<std::size_t>(K));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return model.segments[static_cast<std::size_t>(a)].alpha < model.segments[static_cast<std::size_t>(b)].alpha;
        });
        std::vector<SegmentParams> sorted(static_cast<std::size_t>(K));
        std::vector<int> relabel(static_cast<std::size_t>(K) + 1);
        for (int j = 0; j < K; ++j) {
            sorted[static_cast<std::size_t>(j)] = model.segments[static_cast<std::size_t>(order[j])];
            relabel[static_cast<std::size_t>(order[j] + 1)] = j + 1;
        }
        model.segments = sorted;
        for (auto& s : labels) {
            s = relabel[static_cast<std::size_t>(s)];
        }
        return rescued;
    };

    // During the pooled warm-up every segment is scored with one shared
    // shadowing std, which makes classification a nearest-line assignment.
    bool pooled = false;
    double pooled_sigma = 1.0;
    auto update_pooled_sigma = [&]() {
        double ssr = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double r = xs[i].rssi - rssi_mean(model, labels[i], std::pow(10.0, xs[i].logd));
            ssr += r * r;
        }
        pooled_sigma = std::max(options.sigma_floor, std::sqrt(ssr / static_cast<double>(n)));
    };
    auto score = [&](std::size_t i, int s) {
        const double d = std::pow(10.0, xs[i].logd);
        if (!pooled) {
            return segment_nll(model, s, xs[i].rssi, d) - prior(i, s);
        }
        const double r = xs[i].rssi - rssi_mean(model, s, d);
        return 0.5 * std::log(2.0 * kPi * pooled_sigma * pooled_sigma) + r * r / (2.0 * pooled_sigma * pooled_sigma) -
               prior(i, s);
    };
    auto objective = [&]() {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            total += score(i, labels[i]);
        }
        return total;
    };
    auto classify = [&](std::size_t i) {
        int best = 1;
        double best_score = score(i, 1);
        for (int s = 2; s <= K; ++s) {
            const double sc = score(i, s);
            if (sc < best_score) {
                best = s;
                best_score = sc;
            }
        }
        return best;
    };

    const bool single_pass = options.fixed_labels || K == 1;
    const int phases = (options.pooled_warmup && !single_pass) ? 2 : 1;
    int changes = 0;
    for (int phase = 0; phase < phases; ++phase) {
        pooled = phases == 2 && phase == 0;
        bool consistent = false;  // model was fit on the current labels
        std::size_t phase_start = result.trace.size();
        for (int it = 0; it < options.max_iters; ++it) {
            FitIteration rec;
            rec.rescued = fit_all();
            update_pooled_sigma();
            rec.label_changes = changes;
            rec.objective = objective();
            rec.pooled = pooled;
            consistent = true;
            result.trace.push_back(rec);

            if (single_pass) {
                result.converged = true;
                break;
            }
            if (result.trace.size() > phase_start + 1) {
                const double prev = result.trace[result.trace.size() - 2].objective;
                if (std::abs(prev - rec.objective) <= options.tol * std::max(1.0, std::abs(prev))) {
                    result.converged = true;
                    break;
                }
            }
            std::vector<int> next(n);
            changes = 0;
            for (std::size_t i = 0; i < n; ++i) {
                next[i] = classify(i);
                changes += next[i] != labels[i];
            }
            if (changes == 0) {
                result.converged = true;
                break;
            }
            result.converged = false;
            labels = std::move(next);
            consistent = false;
        }
        if (!consistent) {
            FitIteration rec;
            rec.rescued = fit_all();
            update_pooled_sigma();
            rec.label_changes = changes;
            rec.objective = objective();
            rec.pooled = pooled;
            result.trace.push_back(rec);
        }
        changes = 0;
    }

    result.model = model;
    result.labeled.labels = std::move(labels);
    return result;
}

// Initial split on the residual of a single pooled line: the top `q` fraction
// goes to segment 1, the rest is split evenly over 2..K by residual rank.
std::vector<int> residual_split(const std::vector<Sample>& xs, int K, double q)
{
    const std::size_t n = xs.size();
    const std::vector<int> all(n, 1);
    LineFit f;
    if (!fit_line(xs, all, 1, f)) {
        return all;
    }
    std::vector<std::pair<double, std::size_t>> ranked(n);
    for (std::size_t i = 0; i < n; ++i) {
        ranked[i] = {-(xs[i].rssi - (f.intercept + f.slope * xs[i].logd)), i};
    }
    std::sort(ranked.begin(), ranked.end());
    std::vector<int> labels(n, K);
    const auto top = static_cast<std::size_t>(q * static_cast<double>(n));
    const std::size_t rest = n - top;
    for (std::size_t r = 0; r < n; ++r) {
        int s = 1;
        if (r >= top) {
            s = 2 + static_cast<int>((r - top) * static_cast<std::size_t>(K - 1) / std::max<std::size_t>(rest, 1));
        }
        labels[ranked[r].second] = std::min(s, K);
    }
    return labels;
}

} // namespace

FitResult fit_segmented_model(std::span<const Measurement> measurements, const NodeIndex& nodes,
                              const SegmentedModel& radio, const FitOptions& options)
{
    const int K = options.K;
    require(K >= 1, "segmented fit needs K >= 1");
    const std::size_t n = measurements.size();
    if (n < static_cast<std::size_t>(2 * K * 3)) {
        throw ValidationError("segmented fit: insufficient data (need at least 6K measurements)");
    }
    require(options.log_prior.empty() || options.log_prior.size() == n * static_cast<std::size_t>(K),
            "segmented fit: log_prior must have n*K entries");

    std::vector<Sample> xs(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& m = measurements[i];
        const auto& node = nodes.at(m.node_id);
        const double d = distance(m.uav, node.position);
        require(d > 0.0 && std::isfinite(m.rssi), "segmented fit: distances must be positive, rssi finite");
        xs[i] = {std::log10(d), m.rssi, elevation_angle(m.uav, node)};
    }

    std::vector<int> labels(n, 1);
    switch (options.init) {
    case InitPolicy::ElevationPlos:
        for (std::size_t i = 0; i < n; ++i) {
            const double p = global_plos(options.warm_start, xs[i].theta);
            labels[i] = std::clamp(K - static_cast<int>(std::floor(p * K)), 1, K);
        }
        break;
    case InitPolicy::Given:
        require(options.initial_labels.size() == n, "segmented fit: initial_labels size mismatch");
        labels = options.initial_labels;
        break;
    case InitPolicy::TrueSegment:
        for (std::size_t i = 0; i < n; ++i) {
            require(measurements[i].true_segment.has_value(), "segmented fit: missing true_segment");
            labels[i] = *measurements[i].true_segment;
        }
        break;
    }
    for (int s : labels) {
        require(s >= 1 && s <= K, "segmented fit: initial label outside 1..K");
    }

    std::vector<std::vector<int>> starts{labels};
    if (options.multi_start && !options.fixed_labels && K >= 2) {
        for (double q : {0.1, 0.2, 0.35, 0.5}) {
            starts.push_back(residual_split(xs, K, q));
        }
    }

    FitResult best;
    bool have = false;
    for (const auto& start : starts) {
        FitResult r = run_alternation(xs, start, radio, options);
        // Compare on the final (per-segment) objective; earlier starts win ties.
        if (!have || r.trace.back().objective < best.trace.back().objective) {
            best = std::move(r);
            have = true;
        }
    }
    best.labeled.measurements.assign(measurements.begin(), measurements.end());
    return best;
}

RadioMap reconstruct_direct(std::span<const Measurement> training, int node_id, std::span<const Pose3> grid,
                            const DirectOptions& options)
{
    std::vector<const Measurement*> pts;
    for (const auto& m : training) {
        if (m.node_id == node_id) {
            pts.push_back(&m);
        }
    }
    if (pts.empty()) {
        throw ValidationError("direct reconstruction: no training data for node " + std::to_string(node_id));
    }
    require(options.kind != DirectOptions::Kind::Knn || options.k >= 1, "direct reconstruction: k must be >= 1");
    require(options.kind != DirectOptions::Kind::Kernel || options.bandwidth > 0.0,
            "direct reconstruction: bandwidth must be > 0");

    RadioMap out;
    out.node_id = node_id;
    out.grid.assign(grid.begin(), grid.end());
    out.predicted_rssi.resize(grid.size());

    std::vector<std::pair<double, std::size_t>> dist(pts.size());
    for (std::size_t q = 0; q < grid.size(); ++q) {
        for (std::size_t i = 0; i < pts.size(); ++i) {
            dist[i] = {distance(grid[q], pts[i]->uav), i};
        }
        if (options.kind == DirectOptions::Kind::Knn) {
            const auto k = std::min<std::size_t>(static_cast<std::size_t>(options.k), pts.size());
            std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
            double sum = 0.0;
            for (std::size_t j = 0; j < k; ++j) {
                sum += pts[dist[j].second]->rssi;
            }
            out.predicted_rssi[q] = sum / static_cast<double>(k);
        } else {
            const double h2 = 2.0 * options.bandwidth * options.bandwidth;
            double wsum = 0.0;
            double acc = 0.0;
            for (const auto& [d, i] : dist) {
                const double w = std::exp(-d * d / h2);
                wsum += w;
                acc += w * pts[i]->rssi;
            }
            if (wsum > 0.0) {
                out.predicted_rssi[q] = acc / wsum;
            } else {
                const auto nearest = std::min_element(dist.begin(), dist.end());
                out.predicted_rssi[q] = pts[nearest->second]->rssi;
            }
        }
    }
    return out;
}

SegmentPredictor map_segment_predictor(const CityMap& map, int K, SegmentRule rule)
{
    return [&map, K, rule = std::move(rule)](const Pose3& uav, const GroundNode& node) {
        return classify_segment(map, uav, node, K, rule);
    };
}

SegmentPredictor nearest_label_predictor(const LabeledDataset& data, int k)
{
    require(k >= 1, "nearest-label predictor needs k >= 1");
    require(data.labels.size() == data.measurements.size(), "labels and measurements differ in length");
    struct Entry {
        Pose3 uav;
        int label;
    };
    auto by_node = std::make_shared<std::unordered_map<int, std::vector<Entry>>>();
    int K = 1;
    for (std::size_t i = 0; i < data.measurements.size(); ++i) {
        (*by_node)[data.measurements[i].node_id].push_back({data.measurements[i].uav, data.labels[i]});
        K = std::max(K, data.labels[i]);
    }
    return [by_node, k, K](const Pose3& uav, const GroundNode& node) {
        const auto it = by_node->find(node.id);
        if (it == by_node->end() || it->second.empty()) {
            throw ValidationError("nearest-label predictor: no labeled data for node " + std::to_string(node.id));
        }
        const auto& entries = it->second;
        std::vector<std::pair<double, std::size_t>> dist(entries.size());
        for (std::size_t i = 0; i < entries.size(); ++i) {
            dist[i] = {distance(uav, entries[i].uav), i};
        }
        const auto kk = std::min<std::size_t>(static_cast<std::size_t>(k), entries.size());
        std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(kk), dist.end());
        std::vector<int> votes(static_cast<std::size_t>(K) + 1, 0);
        for (std::size_t j = 0; j < kk; ++j) {
            ++votes[static_cast<std::size_t>(entries[dist[j].second].label)];
        }
        int best = 1;
        for (int s = 2; s <= K; ++s) {
            if (votes[static_cast<std::size_t>(s)] > votes[static_cast<std::size_t>(best)]) {
                best = s;
            }
        }
        return best;
    };
}

RadioMap reconstruct_model_based(const SegmentedModel& model, const SegmentPredictor& predictor,
                                 std::span<const Pose3> grid, const GroundNode& node)
{
    RadioMap out;
    out.node_id = node.id;
    out.grid.assign(grid.begin(), grid.end());
    out.predicted_rssi.resize(grid.size());
    out.predicted_segment.resize(grid.size());
    for (std::size_t q = 0; q < grid.size(); ++q) {
        const int s = predictor(grid[q], node);
        out.predicted_segment[q] = s;
        out.predicted_rssi[q] = rssi_mean(model, s, distance(grid[q], node.position));
    }
    return out;
}

double map_rmse(const RadioMap& predicted, const RadioMap& truth)
{
    if (predicted.grid != truth.grid || predicted.predicted_rssi.size() != truth.predicted_rssi.size()) {
        throw ValidationError("map_rmse: radio maps are defined on different grids");
    }
    if (predicted.grid.empty()) {
        return 0.0;
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < predicted.predicted_rssi.size(); ++i) {
        const double d = predicted.predicted_rssi[i] - truth.predicted_rssi[i];
        sum += d * d;
    }
    return std::sqrt(sum / static_cast<double>(predicted.predicted_rssi.size()));
}

double label_accuracy(const LabeledDataset& data)
{
    std::size_t known = 0;
    std::size_t hit = 0;
    for (std::size_t i = 0; i < data.measurements.size(); ++i) {
        if (data.measurements[i].true_segment) {
            ++known;
            hit += *data.measurements[i].true_segment == data.labels[i];
        }
    }
    return known == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(known);
}

} // namespace uavnet
