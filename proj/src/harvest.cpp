#include "uavnet/harvest.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace uavnet {

namespace {

double path_length(std::span<const Pose3> w)
{
    double total = 0.0;
    for (std::size_t i = 1; i < w.size(); ++i) {
        total += distance(w[i - 1], w[i]);
    }
    return total;
}

std::vector<Pose3> chord(const TrajectorySpec& spec)
{
    std::vector<Pose3> out(static_cast<std::size_t>(spec.n_waypoints));
    const double last = static_cast<double>(spec.n_waypoints - 1);
    for (int i = 0; i < spec.n_waypoints; ++i) {
        const double t = static_cast<double>(i) / last;
        out[static_cast<std::size_t>(i)] = {spec.start.x + t * (spec.end.x - spec.start.x),
                                            spec.start.y + t * (spec.end.y - spec.start.y), spec.altitude};
    }
    return out;
}

// Length budget and per-slot limits, each relaxed by `slack`.
bool feasible(const TrajectorySpec& spec, std::span<const Pose3> w, double slack)
{
    if (path_length(w) > spec.L_max + slack) {
        return false;
    }
    const double dmax = spec.v_max * spec.slot_duration + slack;
    const double amax = spec.a_max * spec.slot_duration * spec.slot_duration + slack;
    for (const auto& p : w) {
        if (!spec.area.contains(p)) {
            return false;
        }
    }
    for (std::size_t i = 1; i < w.size(); ++i) {
        if (distance(w[i - 1], w[i]) > dmax) {
            return false;
        }
        if (i >= 2) {
            const double ex = (w[i].x - w[i - 1].x) - (w[i - 1].x - w[i - 2].x);
            const double ey = (w[i].y - w[i - 1].y) - (w[i - 1].y - w[i - 2].y);
            if (std::hypot(ex, ey) > amax) {
                return false;
            }
        }
    }
    return true;
}

// Internal feasibility slack, far below the 1e-6 m acceptance tolerance.
constexpr double kSlack = 1e-9;

struct Gradient {
    double rate = 0.0;
    double gx = 0.0;
    double gy = 0.0;
};

// Planners keep LoS probabilities inside [0.001, 0.999].
LosView clamped(LosView v)
{
    v.p_min = 1e-3;
    v.p_max = 1.0 - 1e-3;
    return v;
}

LosView los_view(const ChannelView& view, const GroundNode& node)
{
    return clamped(view.kind == ViewKind::GlobalProbabilistic ? view_of(view.global) : view.local.at(node.id));
}

Gradient view_gradient(const ChannelView& view, const Pose3& uav, const GroundNode& node)
{
    const auto g = expected_rate_and_gradient(view.model, los_view(view, node), uav, node);
    return {g.rate, g.gradient[0], g.gradient[1]};
}

class Planner {
public:
    Planner(const TrajectorySpec& spec, std::span<const GroundNode> nodes, const ChannelView& view)
        : spec_(spec), nodes_(nodes), view_(view)
    {
    }

    // Recomputes the per-slot best node and rate for every waypoint.
    double rescore(std::span<const Pose3> w, std::vector<int>& served, std::vector<double>& rates) const
    {
        served.resize(w.size());
        rates.resize(w.size());
        for (std::size_t i = 0; i < w.size(); ++i) {
            std::tie(served[i], rates[i]) = best_node(w[i]);
        }
        return total(rates);
    }

    std::pair<int, double> best_node(const Pose3& p) const
    {
        int best = -1;
        double best_rate = -1.0;
        int best_id = 0;
        for (std::size_t k = 0; k < nodes_.size(); ++k) {
            const double r = view_.rate(p, nodes_[k]);
            if (r > best_rate || (r == best_rate && nodes_[k].id < best_id)) {
                best = static_cast<int>(k);
                best_rate = r;
                best_id = nodes_[k].id;
            }
        }
        return {best, best_rate};
    }

    double total(const std::vector<double>& rates) const
    {
        return spec_.slot_duration * std::accumulate(rates.begin(), rates.end(), 0.0);
    }

private:
    const TrajectorySpec& spec_;
    std::span<const GroundNode> nodes_;
    const ChannelView& view_;
};

struct SearchResult {
    std::vector<Pose3> path;
    std::vector<int> served;
    std::vector<double> rates;
    double objective = 0.0;
};

// Piecewise-linear start -> via -> end, resampled at equal arc length.
std::vector<Pose3> detour(const TrajectorySpec& spec, const Pose3& via)
{
    const Pose3 a{spec.start.x, spec.start.y, spec.altitude};
    const Pose3 m{via.x, via.y, spec.altitude};
    const Pose3 b{spec.end.x, spec.end.y, spec.altitude};
    const double l1 = distance(a, m);
    const double total = l1 + distance(m, b);
    std::vector<Pose3> out(static_cast<std::size_t>(spec.n_waypoints));
    for (int i = 0; i < spec.n_waypoints; ++i) {
        const double s = total * static_cast<double>(i) / static_cast<double>(spec.n_waypoints - 1);
        const Pose3& p = s <= l1 ? a : m;
        const Pose3& q = s <= l1 ? m : b;
        const double seg = s <= l1 ? l1 : total - l1;
        const double t = seg > 0.0 ? (s <= l1 ? s : s - l1) / seg : 0.0;
        out[static_cast<std::size_t>(i)] = {p.x + t * (q.x - p.x), p.y + t * (q.y - p.y), spec.altitude};
    }
    return out;
}

SearchResult local_search(const TrajectorySpec& spec, std::span<const GroundNode> nodes, const ChannelView& view,
                          const Planner& planner, std::vector<Pose3> path, std::uint64_t seed,
                          const PlanOptions& options)
{
    std::vector<int> served;
    std::vector<double> rates;
    double objective = planner.rescore(path, served, rates);

    const std::size_t n = path.size();
    const double straight = std::hypot(spec.end.x - spec.start.x, spec.end.y - spec.start.y);
    const bool slack = spec.L_max - straight > kSlack && n > 2;
    if (slack) {
        Rng rng(seed);
        const double r_max = std::min(spec.v_max * spec.slot_duration, spec.a_max * spec.slot_duration * spec.slot_duration);
        const double r_min = 1e-3;
        std::vector<double> radius(n, 0.25 * r_max);
        std::vector<std::size_t> order(n - 2);
        std::iota(order.begin(), order.end(), std::size_t{1});
        std::vector<double> history{objective};

        auto try_candidate = [&](std::size_t i, double x, double y) {
            std::vector<Pose3> cand(path);
            cand[i].x = x;
            cand[i].y = y;
            if (feasible(spec, cand, kSlack)) {
                const auto [k, r] = planner.best_node(cand[i]);
                const double next = objective + spec.slot_duration * (r - rates[i]);
                if (next > objective) {
                    path[i] = cand[i];
                    served[i] = k;
                    rates[i] = r;
                    objective = planner.total(rates);
                    return true;
                }
                return false;
            }
            cand = project_to_constraints(spec, cand);
            std::vector<int> s2;
            std::vector<double> r2;
            const double next = planner.rescore(cand, s2, r2);
            if (next > objective) {
                path = std::move(cand);
                served = std::move(s2);
                rates = std::move(r2);
                objective = next;
                return true;
            }
            return false;
        };

        for (int round = 0; round < options.max_rounds; ++round) {
            std::shuffle(order.begin(), order.end(), rng);
            for (const std::size_t i : order) {
                bool improved = false;
                if (view.differentiable()) {
                    const auto g = view_gradient(view, path[i], nodes[static_cast<std::size_t>(served[i])]);
                    const double norm = std::hypot(g.gx, g.gy);
                    if (norm > 0.0) {
                        improved = try_candidate(i, path[i].x + radius[i] * g.gx / norm,
                                                 path[i].y + radius[i] * g.gy / norm);
                    }
                } else {
                    const double r = radius[i];
                    const double q = r * std::sqrt(0.5);
                    const double moves[8][2] = {{r, 0.0}, {-r, 0.0}, {0.0, r}, {0.0, -r},
                                                {q, q},   {-q, q},   {q, -q},  {-q, -q}};
                    for (const auto& m : moves) {
                        if (try_candidate(i, path[i].x + m[0], path[i].y + m[1])) {
                            improved = true;
                            break;
                        }
                    }
                }
                radius[i] = improved ? std::min(2.0 * radius[i], r_max) : std::max(0.5 * radius[i], r_min);
            }
            history.push_back(objective);
            const std::size_t h = history.size() - 1;
            if (h >= static_cast<std::size_t>(options.window)) {
                const double gain = history[h] - history[h - static_cast<std::size_t>(options.window)];
                if (gain <= options.tolerance * std::abs(history[h])) {
                    break;
                }
            }
        }
    }

    return {std::move(path), std::move(served), std::move(rates), objective};
}

} // namespace

FlightArea area_of(const CityMap& map, double margin)
{
    return {map.origin_x() + margin, map.origin_y() + margin, map.max_x() - margin, map.max_y() - margin};
}

void TrajectorySpec::validate() const
{
    require(n_waypoints >= 2, "trajectory spec: n_waypoints must be >= 2");
    require(v_max > 0.0 && a_max > 0.0, "trajectory spec: v_max and a_max must be positive");
    require(slot_duration >= 0.0, "trajectory spec: slot_duration must be >= 0");
    require(altitude > 0.0, "trajectory spec: altitude must be positive");
    const double straight = std::hypot(end.x - start.x, end.y - start.y);
    require(L_max >= straight, "trajectory spec: L_max is shorter than the start-end distance");
    require(area.contains(start) && area.contains(end), "trajectory spec: start or end outside the flight area");
    require(straight / (n_waypoints - 1) <= v_max * slot_duration + kSlack,
            "trajectory spec: the straight path already exceeds v_max");
}

double Trajectory::length() const { return path_length(waypoints); }

double Trajectory::realized_total() const { return std::accumulate(realized_data.begin(), realized_data.end(), 0.0); }

void check_trajectory(const Trajectory& trajectory, const TrajectorySpec& spec)
{
    require(trajectory.waypoints.size() == static_cast<std::size_t>(spec.n_waypoints),
            "trajectory: waypoint count differs from the spec");
    require(trajectory.schedule.size() == trajectory.waypoints.size(), "trajectory: schedule length mismatch");
    require(feasible(spec, trajectory.waypoints, 1e-6), "trajectory: length or dynamics limit violated");
}

double ChannelView::rate(const Pose3& uav, const GroundNode& node) const
{
    const double d = distance(uav, node.position);
    switch (kind) {
    case ViewKind::DeterministicLoS:
        return link_rate(model, rssi_mean(model, 1, d));
    case ViewKind::GlobalProbabilistic:
    case ViewKind::CompressedMap:
        return expected_rate_and_gradient(model, los_view(*this, node), uav, node).rate;
    case ViewKind::TrueMap:
        return link_rate(model, rssi_mean(model, classify_segment(map, uav, node, model.K(), rule), d));
    }
    return 0.0;
}

bool ChannelView::differentiable() const
{
    return kind == ViewKind::GlobalProbabilistic || kind == ViewKind::CompressedMap;
}

ChannelView deterministic_view(const SegmentedModel& model)
{
    ChannelView v;
    v.kind = ViewKind::DeterministicLoS;
    v.model = model;
    return v;
}

ChannelView global_view(const SegmentedModel& model, const GlobalLosParams& params)
{
    ChannelView v;
    v.kind = ViewKind::GlobalProbabilistic;
    v.model = model;
    v.global = params;
    return v;
}

ChannelView compressed_view(const SegmentedModel& model, std::span<const LocalLosModel> local)
{
    ChannelView v;
    v.kind = ViewKind::CompressedMap;
    v.model = model;
    for (const auto& m : local) {
        v.local[m.node_id] = view_of(m);
    }
    return v;
}

ChannelView true_map_view(const SegmentedModel& model, const CityMap& map, const SegmentRule& rule)
{
    ChannelView v;
    v.kind = ViewKind::TrueMap;
    v.model = model;
    v.map = map;
    v.rule = rule;
    return v;
}

const char* view_name(ViewKind kind)
{
    switch (kind) {
    case ViewKind::DeterministicLoS:
        return "deterministic";
    case ViewKind::GlobalProbabilistic:
        return "global";
    case ViewKind::CompressedMap:
        return "compressed";
    case ViewKind::TrueMap:
        return "true-map";
    }
    return "";
}

double schedule_path(const ChannelView& view, std::span<const Pose3> waypoints, std::span<const GroundNode> nodes,
                     double slot_duration, std::vector<int>& schedule)
{
    require(!nodes.empty(), "schedule_path: no nodes");
    TrajectorySpec dummy;
    dummy.slot_duration = slot_duration;
    const Planner planner(dummy, nodes, view);
    std::vector<int> served;
    std::vector<double> rates;
    const double total = planner.rescore(waypoints, served, rates);
    schedule.resize(served.size());
    for (std::size_t i = 0; i < served.size(); ++i) {
        schedule[i] = nodes[static_cast<std::size_t>(served[i])].id;
    }
    return total;
}

std::vector<Pose3> project_to_constraints(const TrajectorySpec& spec, std::span<const Pose3> waypoints)
{
    spec.validate();
    require(waypoints.size() == static_cast<std::size_t>(spec.n_waypoints), "project: waypoint count mismatch");
    const auto base = chord(spec);
    auto blend = [&](double lambda) {
        std::vector<Pose3> out(base);
        for (std::size_t i = 1; i + 1 < out.size(); ++i) {
            out[i].x += lambda * (waypoints[i].x - base[i].x);
            out[i].y += lambda * (waypoints[i].y - base[i].y);
        }
        return out;
    };
    auto full = blend(1.0);
    if (feasible(spec, full, kSlack)) {
        return full;
    }
    // Every limit is a convex function of lambda and holds at lambda = 0, so
    // the feasible set is an interval [0, lambda*].
    double lo = 0.0;
    double hi = 1.0;
    for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        (feasible(spec, blend(mid), kSlack) ? lo : hi) = mid;
    }
    return blend(lo);
}

Trajectory plan_path(const TrajectorySpec& spec, std::span<const GroundNode> nodes, const ChannelView& view,
                     std::uint64_t seed, const PlanOptions& options)
{
    spec.validate();
    require(!nodes.empty(), "plan_path: no nodes");
    require(options.max_rounds >= 0 && options.window >= 1, "plan_path: invalid search options");
    {
        std::set<int> ids;
        for (const auto& n : nodes) {
            require(ids.insert(n.id).second, "plan_path: duplicate node id");
            if (view.kind == ViewKind::CompressedMap) {
                require(view.local.count(n.id) == 1, "plan_path: no compressed model for a node");
            }
        }
    }

    const Planner planner(spec, nodes, view);
    std::vector<std::vector<Pose3>> starts{chord(spec)};
    if (options.warm_start) {
        starts.front() = project_to_constraints(spec, *options.warm_start);
    }
    if (options.detour_starts) {
        for (const auto& node : nodes) {
            starts.push_back(project_to_constraints(spec, detour(spec, node.position)));
        }
    }

    SearchResult best;
    best.objective = -1.0;
    for (std::size_t k = 0; k < starts.size(); ++k) {
        auto r = local_search(spec, nodes, view, planner, std::move(starts[k]), sub_seed(seed, k), options);
        if (r.objective > best.objective) {
            best = std::move(r);
        }
    }
    const std::size_t n = best.path.size();
    const auto& path = best.path;
    const auto& served = best.served;
    const auto& rates = best.rates;

    Trajectory t;
    t.waypoints = path;
    t.slot_duration = spec.slot_duration;
    t.schedule.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        t.schedule[i] = nodes[static_cast<std::size_t>(served[i])].id;
    }
    t.planned_objective = planner.total(rates);
    if (!feasible(spec, t.waypoints, 1e-6)) {
        throw NumericalError("plan_path: search left the feasible set");
    }
    return t;
}

std::vector<double> evaluate_path(Trajectory& trajectory, const CityMap& map, const SegmentedModel& model,
                                  std::span<const GroundNode> nodes, std::uint64_t seed, const SegmentRule& rule)
{
    require(trajectory.schedule.size() == trajectory.waypoints.size(), "evaluate_path: schedule length mismatch");
    std::map<int, std::size_t> slot_of;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
        slot_of[nodes[k].id] = k;
    }
    std::vector<double> data(nodes.size(), 0.0);
    for (std::size_t i = 0; i < trajectory.waypoints.size(); ++i) {
        const auto it = slot_of.find(trajectory.schedule[i]);
        require(it != slot_of.end(), "evaluate_path: schedule names an unknown node");
        const auto& node = nodes[it->second];
        const auto m = sample_rssi(sub_seed(seed, i), model, map, trajectory.waypoints[i], node, rule);
        data[it->second] += trajectory.slot_duration * link_rate(model, m.rssi);
    }
    trajectory.realized_data = data;
    return data;
}

std::string trajectory_json(const Trajectory& trajectory)
{
    nlohmann::ordered_json j;
    auto& w = j["waypoints"] = nlohmann::ordered_json::array();
    for (const auto& p : trajectory.waypoints) {
        w.push_back({p.x, p.y, p.z});
    }
    j["schedule"] = trajectory.schedule;
    j["slot_duration"] = trajectory.slot_duration;
    j["length"] = trajectory.length();
    j["planned_bits"] = trajectory.planned_objective;
    j["realized_bits"] = trajectory.realized_data;
    j["realized_total"] = trajectory.realized_total();
    return j.dump(2);
}

} // namespace uavnet
