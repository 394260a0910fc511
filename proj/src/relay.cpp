#include "uavnet/relay.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>
#include <utility>
#include <vector>

namespace uavnet {

namespace {

// Bisection halvings: a bracket of one step shrinks below step / 10.
constexpr int kHalvings = 4;

struct Probe {
    bool los = false;
    double throughput = 0.0;
};

class Evaluator {
public:
    Evaluator(const CityMap& map, const SegmentedModel& model, const Pose3& bs, const GroundNode& user,
              const RelayOptions& options)
        : map_(map), model_(model), bs_(bs), user_(user), opt_(options)
    {
    }

    Probe probe(const Pose3& uav)
    {
        ++count;
        const int s_user = model_.K() >= 2 ? classify_segment(map_, uav, user_, model_.K(), opt_.rule) : 1;
        const double r_user = hop_rate(s_user, distance(uav, user_.position));
        int s_bs = 1;
        if (opt_.bs_link == BsLink::RayTraced && model_.K() >= 2) {
            s_bs = classify_segment(map_, uav, GroundNode{-1, bs_}, model_.K(), opt_.rule);
        }
        const double r_bs = hop_rate(s_bs, distance(uav, bs_));
        return {s_user == 1, relay_rate(r_bs, r_user)};
    }

    bool los(const Pose3& uav)
    {
        ++count;
        return model_.K() < 2 || classify_segment(map_, uav, user_, model_.K(), opt_.rule) == 1;
    }

    long long count = 0;

private:
    double hop_rate(int s, double d) const
    {
        if (!(d > 0.0)) {
            return std::numeric_limits<double>::infinity();
        }
        return link_rate(model_, rssi_mean(model_, s, d));
    }

    const CityMap& map_;
    const SegmentedModel& model_;
    Pose3 bs_;
    const GroundNode& user_;
    RelayOptions opt_;
};

bool better(double t, const Pose3& p, const RelayPlacement& best)
{
    if (t != best.throughput) {
        return t > best.throughput;
    }
    return std::tie(p.x, p.y, p.z) < std::tie(best.pose.x, best.pose.y, best.pose.z);
}

} // namespace

void RelayOptions::validate() const
{
    require(step > 0.0, "relay options: step must be positive");
    require(altitude > 0.0, "relay options: altitude must be positive");
}

double relay_throughput(const CityMap& map, const SegmentedModel& model, const Pose3& bs, const GroundNode& user,
                        const Pose3& uav, const RelayOptions& options)
{
    Evaluator ev(map, model, bs, user, options);
    return ev.probe(uav).throughput;
}

RelayPlacement plan_relay_nested(const CityMap& map, const SegmentedModel& model, const Pose3& bs,
                                 const GroundNode& user, const RelayOptions& options)
{
    options.validate();
    model.validate();
    require(map.contains(user.position), "plan_relay_nested: user outside the map");
    Evaluator ev(map, model, bs, user, options);
    RelayPlacement best;
    best.throughput = -1.0;

    auto offer = [&](const Pose3& p, double t, bool axis, bool boundary) {
        if (better(t, p, best)) {
            best.pose = p;
            best.throughput = t;
            best.on_axis = axis;
            best.on_boundary = boundary;
        }
    };

    const double ux = user.position.x;
    const double uy = user.position.y;
    const double L = std::hypot(ux - bs.x, uy - bs.y);
    if (L < 1e-9) {
        const Pose3 above{ux, uy, options.altitude};
        offer(above, ev.probe(above).throughput, true, false);
        best.evaluations = ev.count;
        return best;
    }

    const double dx = (ux - bs.x) / L;
    const double dy = (uy - bs.y) / L;
    const double step = options.step;
    const double lateral = options.lateral_limit > 0.0 ? options.lateral_limit : std::numeric_limits<double>::infinity();
    const auto n_axis = static_cast<long long>(std::floor(L / step));

    auto at = [&](double along, double across) {
        return Pose3{bs.x + along * dx - across * dy, bs.y + along * dy + across * dx, options.altitude};
    };

    // Every LoS transition met marching sideways from the axis point at
    // `along` to the lateral limit, each bisected and reported on its LoS side
    // as (offset, pose).
    auto boundary = [&](double along, int side, bool state) {
        std::vector<std::pair<double, Pose3>> found;
        for (long long j = 1; static_cast<double>(j) * step <= lateral; ++j) {
            const Pose3 q = at(along, side * static_cast<double>(j) * step);
            if (!map.contains(q)) {
                break;
            }
            if (ev.los(q) == state) {
                continue;
            }
            double lo = static_cast<double>(j - 1) * step;
            double hi = static_cast<double>(j) * step;
            for (int h = 0; h < kHalvings; ++h) {
                const double mid = 0.5 * (lo + hi);
                (ev.los(at(along, side * mid)) == state ? lo : hi) = mid;
            }
            const double offset = state ? lo : hi;
            found.emplace_back(offset, at(along, side * offset));
            state = !state;
        }
        return found;
    };

    struct Family {
        double along = 0.0;
        double offset = 0.0;
        double throughput = -1.0;
    };
    Family best_axis;
    Family best_side[2];

    std::vector<double> stations;
    for (long long k = 0; k <= n_axis; ++k) {
        stations.push_back(static_cast<double>(k) * step);
    }
    if (L - stations.back() > 1e-9) {
        stations.push_back(L);
    }

    for (const double along : stations) {
        const Pose3 a = at(along, 0.0);
        if (!map.contains(a)) {
            continue;
        }
        const Probe pa = ev.probe(a);
        offer(a, pa.throughput, true, false);
        if (pa.throughput > best_axis.throughput) {
            best_axis = {along, 0.0, pa.throughput};
        }
        for (int i = 0; i < 2; ++i) {
            for (const auto& [offset, edge] : boundary(along, i == 0 ? 1 : -1, pa.los)) {
                const double t = ev.probe(edge).throughput;
                offer(edge, t, false, true);
                if (t > best_side[i].throughput) {
                    best_side[i] = {along, offset, t};
                }
            }
        }
    }

    // Pattern search along the axis parameter around the best candidate of
    // each family, with steps step/2, step/4, ... On the sides, the boundary
    // point closest in offset to the incumbent is followed.
    auto refine = [&](Family f, int side) {
        if (f.throughput < 0.0) {
            return;
        }
        for (int h = 1; h <= kHalvings; ++h) {
            const double delta = step / static_cast<double>(1 << h);
            for (const double along : {f.along - delta, f.along + delta}) {
                if (along < 0.0 || along > L) {
                    continue;
                }
                const Pose3 a = at(along, 0.0);
                if (!map.contains(a)) {
                    continue;
                }
                if (side == 0) {
                    const double t = ev.probe(a).throughput;
                    offer(a, t, true, false);
                    if (t > f.throughput) {
                        f = {along, 0.0, t};
                        break;
                    }
                    continue;
                }
                const auto edges = boundary(along, side, ev.los(a));
                if (edges.empty()) {
                    continue;
                }
                const auto nearest = std::min_element(edges.begin(), edges.end(), [&](const auto& u, const auto& v) {
                    return std::abs(u.first - f.offset) < std::abs(v.first - f.offset);
                });
                const double t = ev.probe(nearest->second).throughput;
                offer(nearest->second, t, false, true);
                if (t > f.throughput) {
                    f = {along, nearest->first, t};
                    break;
                }
            }
        }
    };
    refine(best_axis, 0);
    refine(best_side[0], 1);
    refine(best_side[1], -1);

    best.evaluations = ev.count;
    return best;
}

RelayPlacement plan_relay_oracle(const CityMap& map, const SegmentedModel& model, const Pose3& bs,
                                 const GroundNode& user, double resolution, const RelayOptions& options)
{
    require(resolution > 0.0, "plan_relay_oracle: resolution must be positive");
    options.validate();
    model.validate();
    Evaluator ev(map, model, bs, user, options);
    RelayPlacement best;
    best.throughput = -1.0;
    const auto nx = static_cast<long long>(std::floor((map.max_x() - map.origin_x()) / resolution));
    const auto ny = static_cast<long long>(std::floor((map.max_y() - map.origin_y()) / resolution));
    for (long long i = 0; i < nx; ++i) {
        for (long long j = 0; j < ny; ++j) {
            const Pose3 p{map.origin_x() + (static_cast<double>(i) + 0.5) * resolution,
                          map.origin_y() + (static_cast<double>(j) + 0.5) * resolution, options.altitude};
            const double t = ev.probe(p).throughput;
            if (better(t, p, best)) {
                best.pose = p;
                best.throughput = t;
            }
        }
    }
    best.evaluations = ev.count;
    return best;
}

std::string relay_placement_json(const RelayPlacement& placement)
{
    nlohmann::ordered_json j;
    j["pose"] = {{"x", placement.pose.x}, {"y", placement.pose.y}, {"z", placement.pose.z}};
    j["throughput_bps"] = placement.throughput;
    j["evaluations"] = placement.evaluations;
    j["on_axis"] = placement.on_axis;
    j["on_boundary"] = placement.on_boundary;
    return j.dump(2);
}

} // namespace uavnet
