#include "doctest.h"
#include "scenes.hpp"

#include "uavnet/relay.hpp"

#include "json.hpp"

#include <cmath>

using namespace uavnet;

namespace {

const SegmentedModel kModel{};

// Point-to-line distance from p to the ground line through a and b.
double off_axis(const Pose3& p, const Pose3& a, const Pose3& b)
{
    const double lx = b.x - a.x;
    const double ly = b.y - a.y;
    return std::abs((p.x - a.x) * ly - (p.y - a.y) * lx) / std::hypot(lx, ly);
}

// A wall taller than the flight altitude stands between the user and a base
// station due south, shadowing the middle of the axis.
struct WallScene {
    CityMap map{100, 100, 5.0};
    Pose3 bs{252.5, 2.5, 30.0};
    GroundNode user{0, {252.5, 252.5, kDefaultNodeHeight}};

    WallScene() { map.add_box(225.0, 280.0, 180.0, 190.0, 60.0); }
};

} // namespace

TEST_CASE("relay_throughput is the decode-and-forward minimum of the two hops")
{
    const CityMap map(100, 100, 5.0);
    const Pose3 bs{10.0, 10.0, 30.0};
    const GroundNode user{0, {400.0, 300.0, kDefaultNodeHeight}};
    const Pose3 uav{200.0, 150.0, 50.0};
    const double r_bs = link_rate(kModel, rssi_mean(kModel, 1, distance(uav, bs)));
    const double r_user = link_rate(kModel, rssi_mean(kModel, 1, distance(uav, user.position)));
    CHECK(relay_throughput(map, kModel, bs, user, uav) == doctest::Approx(std::min(r_bs, r_user)));
}

TEST_CASE("empty map: the optimum lies on the BS-user axis")
{
    const CityMap map(100, 100, 5.0);
    const Pose3 bs{40.0, 60.0, 30.0};
    const GroundNode user{0, {430.0, 380.0, kDefaultNodeHeight}};
    const auto nested = plan_relay_nested(map, kModel, bs, user);
    CHECK(nested.on_axis);
    CHECK(off_axis(nested.pose, bs, user.position) < 1e-9);
    CHECK(nested.pose.z == 50.0);

    const auto oracle = plan_relay_oracle(map, kModel, bs, user, 2.5);
    CHECK(nested.throughput >= oracle.throughput * (1.0 - 1e-3));
    CHECK(off_axis(oracle.pose, bs, user.position) <= 2.5);
}

TEST_CASE("a wall shadowing the user pushes the relay off the axis")
{
    const WallScene s;
    const auto nested = plan_relay_nested(s.map, kModel, s.bs, s.user);
    CHECK(nested.on_boundary);
    CHECK_FALSE(nested.on_axis);
    CHECK(off_axis(nested.pose, s.bs, s.user.position) > 20.0);
    CHECK(line_of_sight(s.map, nested.pose, s.user.position));

    const auto oracle = plan_relay_oracle(s.map, kModel, s.bs, s.user, 1.0);
    CHECK(nested.throughput >= 0.99 * oracle.throughput);

    double axis_best = 0.0;
    for (double y = 2.5; y <= 252.5; y += 0.5) {
        axis_best = std::max(axis_best, relay_throughput(s.map, kModel, s.bs, s.user, {252.5, y, 50.0}));
    }
    CHECK(nested.throughput > 1.1 * axis_best);
}

TEST_CASE("reported throughput is recomputed at the returned pose")
{
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto s = scenes::relay_scene(seed);
        const auto p = plan_relay_nested(s.map, kModel, s.bs, s.user);
        CHECK(p.throughput == relay_throughput(s.map, kModel, s.bs, s.user, p.pose));
        CHECK((p.on_axis || p.on_boundary));
        CHECK(p.evaluations > 0);
    }
}

TEST_CASE("halving the step never lowers the throughput")
{
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto s = scenes::relay_scene(seed);
        RelayOptions coarse;
        coarse.step = 5.0;
        RelayOptions fine = coarse;
        fine.step = 2.5;
        const double a = plan_relay_nested(s.map, kModel, s.bs, s.user, coarse).throughput;
        const double b = plan_relay_nested(s.map, kModel, s.bs, s.user, fine).throughput;
        CHECK(b >= a * (1.0 - 1e-3));
    }
}

TEST_CASE("base station above the user")
{
    const auto s = scenes::relay_scene(3);
    const Pose3 bs{s.user.position.x, s.user.position.y, 30.0};
    const auto p = plan_relay_nested(s.map, kModel, bs, s.user);
    CHECK(p.pose.x == s.user.position.x);
    CHECK(p.pose.y == s.user.position.y);
    CHECK(p.pose.z == 50.0);
    CHECK(p.on_axis);
}

TEST_CASE("ray-traced backhaul never beats an always-LoS backhaul")
{
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto s = scenes::relay_scene(seed);
        RelayOptions traced;
        traced.bs_link = BsLink::RayTraced;
        const auto los = plan_relay_oracle(s.map, kModel, s.bs, s.user, 5.0);
        const auto ray = plan_relay_oracle(s.map, kModel, s.bs, s.user, 5.0, traced);
        CHECK(ray.throughput <= los.throughput);
    }
}

TEST_CASE("nested search tracks the exhaustive oracle on random scenes")
{
    for (std::uint64_t seed = 100; seed < 120; ++seed) {
        const auto s = scenes::relay_scene(seed);
        const auto nested = plan_relay_nested(s.map, kModel, s.bs, s.user);
        const auto oracle = plan_relay_oracle(s.map, kModel, s.bs, s.user, 2.5);
        CAPTURE(seed);
        CHECK(nested.throughput >= 0.99 * oracle.throughput);
        CHECK(nested.evaluations < oracle.evaluations);
    }
}

TEST_CASE("evaluation count grows linearly with the BS-user distance")
{
    CitySpec spec = scenes::downtown_spec();
    spec.nx = 500;
    spec.ny = 100;
    const auto map = generate_city(5, spec);
    std::vector<double> lx;
    std::vector<double> ly;
    for (const double d : {250.0, 500.0, 1000.0, 2000.0}) {
        const Pose3 bs{100.0, 250.0, 30.0};
        const GroundNode user{0, {100.0 + d, 252.5, kDefaultNodeHeight}};
        const auto p = plan_relay_nested(map, kModel, bs, user);
        lx.push_back(std::log(d));
        ly.push_back(std::log(static_cast<double>(p.evaluations)));
    }
    double mx = 0.0;
    double my = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        mx += lx[i] / 4.0;
        my += ly[i] / 4.0;
    }
    double sxy = 0.0;
    double sxx = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sxy += (lx[i] - mx) * (ly[i] - my);
        sxx += (lx[i] - mx) * (lx[i] - mx);
    }
    const double slope = sxy / sxx;
    CHECK(std::abs(slope - 1.0) <= 0.1);
}

TEST_CASE("relay options and JSON")
{
    const CityMap map(10, 10, 5.0);
    const GroundNode user{0, {20.0, 20.0, kDefaultNodeHeight}};
    RelayOptions bad;
    bad.step = 0.0;
    CHECK_THROWS_AS(plan_relay_nested(map, kModel, {1.0, 1.0, 30.0}, user, bad), ValidationError);
    CHECK_THROWS_AS(plan_relay_oracle(map, kModel, {1.0, 1.0, 30.0}, user, 0.0), ValidationError);

    const RelayPlacement p{{1.5, 2.5, 50.0}, 1234.5, 77, true, false};
    const auto j = nlohmann::json::parse(relay_placement_json(p));
    CHECK(j["pose"]["x"] == 1.5);
    CHECK(j["pose"]["z"] == 50.0);
    CHECK(j["throughput_bps"] == 1234.5);
    CHECK(j["evaluations"] == 77);
    CHECK(j["on_axis"] == true);
    CHECK(j["on_boundary"] == false);
}
