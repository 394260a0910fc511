#include "doctest.h"
#include "scenes.hpp"

#include "uavnet/harvest.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>

using namespace uavnet;

namespace {

const SegmentedModel kModel{};

SegmentedModel noiseless()
{
    SegmentedModel m;
    for (auto& s : m.segments) {
        s.sigma = 1e-12;
    }
    return m;
}

TrajectorySpec corridor(const CityMap& map, double L_max)
{
    TrajectorySpec spec;
    spec.start = {50.0, 250.0, 50.0};
    spec.end = {450.0, 250.0, 50.0};
    spec.L_max = L_max;
    spec.n_waypoints = 21;
    spec.slot_duration = 2.0;
    spec.area = area_of(map);
    return spec;
}

struct Fixture {
    CityMap map = generate_city(sub_seed(11, 1), scenes::downtown_spec());
    std::vector<GroundNode> nodes = random_ground_nodes(map, 6, sub_seed(11, 2));
    std::vector<LocalLosModel> local = compress_map(map, nodes, TrainingSpec{}, 1e-3, sub_seed(11, 3));
    GlobalLosParams global = fit_global_logistic(map, nodes, TrainingSpec{}, 1e-3, sub_seed(11, 3));

    std::vector<ChannelView> views() const
    {
        return {deterministic_view(kModel), global_view(kModel, global), compressed_view(kModel, local),
                true_map_view(kModel, map)};
    }
};

double min_ground_distance(const Trajectory& t, const Pose3& p)
{
    double best = 1e300;
    for (const auto& w : t.waypoints) {
        best = std::min(best, std::hypot(w.x - p.x, w.y - p.y));
    }
    return best;
}

} // namespace

TEST_CASE("zero slack yields the straight path with the argmax schedule")
{
    const Fixture f;
    const auto spec = corridor(f.map, 400.0);
    for (const auto& view : f.views()) {
        CAPTURE(view_name(view.kind));
        const auto t = plan_path(spec, f.nodes, view, 1);
        REQUIRE(t.waypoints.size() == 21);
        for (std::size_t i = 0; i < t.waypoints.size(); ++i) {
            CHECK(t.waypoints[i].x == doctest::Approx(50.0 + 20.0 * static_cast<double>(i)));
            CHECK(t.waypoints[i].y == 250.0);
            CHECK(t.waypoints[i].z == 50.0);
        }
        std::vector<int> schedule;
        const double total = schedule_path(view, t.waypoints, f.nodes, spec.slot_duration, schedule);
        CHECK(schedule == t.schedule);
        CHECK(total == doctest::Approx(t.planned_objective).epsilon(1e-12));
    }
}

TEST_CASE("with a generous budget the path moves toward a lone node")
{
    const Fixture f;
    const GroundNode node{0, {250.0, 400.0, kDefaultNodeHeight}};
    const std::vector<GroundNode> nodes{node};
    const auto local = compress_map(f.map, nodes, TrainingSpec{}, 1e-3, 5);
    const auto spec = corridor(f.map, 700.0);
    for (const auto& view : {deterministic_view(kModel), global_view(kModel, f.global), compressed_view(kModel, local),
                             true_map_view(kModel, f.map)}) {
        CAPTURE(view_name(view.kind));
        const auto t = plan_path(spec, nodes, view, 3);
        CHECK(min_ground_distance(t, node.position) < 150.0 - 50.0);
        check_trajectory(t, spec);
    }
}

TEST_CASE("planned objective is nondecreasing in the length budget with warm starts")
{
    const Fixture f;
    for (const auto& view : f.views()) {
        CAPTURE(view_name(view.kind));
        std::optional<std::vector<Pose3>> warm;
        double previous = 0.0;
        for (const double L : {400.0, 500.0, 600.0, 800.0}) {
            const auto spec = corridor(f.map, L);
            PlanOptions options;
            options.warm_start = warm;
            const auto t = plan_path(spec, f.nodes, view, 7, options);
            CHECK(t.planned_objective >= previous);
            CHECK(t.length() <= L + 1e-6);
            previous = t.planned_objective;
            warm = t.waypoints;
        }
    }
}

TEST_CASE("returned trajectories are feasible and their schedules locally optimal")
{
    const Fixture f;
    const auto spec = corridor(f.map, 650.0);
    for (const auto& view : f.views()) {
        CAPTURE(view_name(view.kind));
        const auto t = plan_path(spec, f.nodes, view, 9);
        CHECK_NOTHROW(check_trajectory(t, spec));
        for (std::size_t i = 0; i < t.waypoints.size(); ++i) {
            const auto served = std::find_if(f.nodes.begin(), f.nodes.end(),
                                             [&](const GroundNode& n) { return n.id == t.schedule[i]; });
            REQUIRE(served != f.nodes.end());
            const double own = view.rate(t.waypoints[i], *served);
            for (const auto& other : f.nodes) {
                CHECK(view.rate(t.waypoints[i], other) <= own);
            }
        }
        CHECK(t.waypoints.front().x == spec.start.x);
        CHECK(t.waypoints.back().x == spec.end.x);
    }
}

TEST_CASE("planning is deterministic per seed")
{
    const Fixture f;
    const auto spec = corridor(f.map, 600.0);
    const auto view = compressed_view(kModel, f.local);
    const auto a = plan_path(spec, f.nodes, view, 21);
    const auto b = plan_path(spec, f.nodes, view, 21);
    CHECK(trajectory_json(a) == trajectory_json(b));
}

TEST_CASE("evaluate_path: zero slot duration collects nothing")
{
    const Fixture f;
    auto t = plan_path(corridor(f.map, 500.0), f.nodes, deterministic_view(kModel), 1);
    t.slot_duration = 0.0;
    const auto data = evaluate_path(t, f.map, kModel, f.nodes, 4);
    REQUIRE(data.size() == f.nodes.size());
    for (const double d : data) {
        CHECK(d == 0.0);
    }
    CHECK(t.realized_total() == 0.0);
}

TEST_CASE("evaluate_path: a noiseless true-map plan realizes its planned total")
{
    const Fixture f;
    const auto model = noiseless();
    const auto t0 = plan_path(corridor(f.map, 600.0), f.nodes, true_map_view(model, f.map), 2);
    auto t = t0;
    evaluate_path(t, f.map, model, f.nodes, 8);
    CHECK(t.realized_total() == doctest::Approx(t.planned_objective).epsilon(1e-9));

    auto again = t0;
    evaluate_path(again, f.map, model, f.nodes, 8);
    CHECK(again.realized_data == t.realized_data);
}

TEST_CASE("evaluate_path is reproducible per seed")
{
    const Fixture f;
    auto t = plan_path(corridor(f.map, 500.0), f.nodes, deterministic_view(kModel), 1);
    auto u = t;
    evaluate_path(t, f.map, kModel, f.nodes, 31);
    evaluate_path(u, f.map, kModel, f.nodes, 31);
    CHECK(t.realized_data == u.realized_data);
    evaluate_path(u, f.map, kModel, f.nodes, 32);
    CHECK(t.realized_data != u.realized_data);
}

TEST_CASE("projection scales displacements back to the chord")
{
    const Fixture f;
    const auto spec = corridor(f.map, 450.0);
    std::vector<Pose3> wild(21);
    for (std::size_t i = 0; i < wild.size(); ++i) {
        wild[i] = {50.0 + 20.0 * static_cast<double>(i), (i % 2 == 0) ? 200.0 : 300.0, 50.0};
    }
    wild.front() = spec.start;
    wild.back() = spec.end;
    const auto p = project_to_constraints(spec, wild);
    Trajectory t;
    t.waypoints = p;
    t.schedule.assign(p.size(), f.nodes.front().id);
    CHECK_NOTHROW(check_trajectory(t, spec));
    CHECK(p[1].y > 250.0);
    CHECK(p[2].y < 250.0);

    const auto kept = project_to_constraints(spec, p);
    for (std::size_t i = 0; i < p.size(); ++i) {
        CHECK(kept[i].y == doctest::Approx(p[i].y).epsilon(1e-12));
    }
}

TEST_CASE("clairvoyant planning mostly dominates the compressed map under the true channel")
{
    // Not guaranteed per scenario: both planners are local searches.
    const auto model = noiseless();
    int dominated = 0;
    const int runs = 6;
    for (int s = 0; s < runs; ++s) {
        const auto scene = scenes::harvest_scene(static_cast<std::uint64_t>(s));
        const auto local = compress_map(scene.map, scene.nodes, TrainingSpec{}, 1e-3, sub_seed(s, 3));
        TrajectorySpec spec;
        spec.start = {300.0, 500.0, 50.0};
        spec.end = {700.0, 500.0, 50.0};
        spec.L_max = 600.0;
        spec.n_waypoints = 41;
        spec.slot_duration = 2.0;
        spec.area = area_of(scene.map);
        auto truth = plan_path(spec, scene.nodes, true_map_view(model, scene.map), sub_seed(s, 5));
        auto comp = plan_path(spec, scene.nodes, compressed_view(model, local), sub_seed(s, 5));
        evaluate_path(truth, scene.map, model, scene.nodes, 1);
        evaluate_path(comp, scene.map, model, scene.nodes, 1);
        dominated += truth.realized_total() >= 0.99 * comp.realized_total() ? 1 : 0;
    }
    CHECK(dominated >= runs - 1);
}

TEST_CASE("spec validation and JSON")
{
    const Fixture f;
    auto bad = corridor(f.map, 399.0);
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = corridor(f.map, 500.0);
    bad.n_waypoints = 1;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = corridor(f.map, 500.0);
    bad.n_waypoints = 5;  // 100 m per slot > 40 m
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = corridor(f.map, 500.0);
    bad.start.x = -10.0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);

    const auto spec = corridor(f.map, 500.0);
    CHECK_THROWS_AS(plan_path(spec, {}, deterministic_view(kModel), 1), ValidationError);
    const std::vector<GroundNode> dup{f.nodes[0], f.nodes[0]};
    CHECK_THROWS_AS(plan_path(spec, dup, deterministic_view(kModel), 1), ValidationError);
    const std::vector<GroundNode> stranger{{99, f.nodes[0].position}};
    CHECK_THROWS_AS(plan_path(spec, stranger, compressed_view(kModel, f.local), 1), ValidationError);

    auto t = plan_path(spec, f.nodes, deterministic_view(kModel), 1);
    evaluate_path(t, f.map, kModel, f.nodes, 2);
    const auto j = nlohmann::json::parse(trajectory_json(t));
    CHECK(j["waypoints"].size() == 21);
    CHECK(j["waypoints"][0][0] == 50.0);
    CHECK(j["schedule"].size() == 21);
    CHECK(j["slot_duration"] == 2.0);
    CHECK(j["length"].get<double>() == doctest::Approx(t.length()));
    CHECK(j["planned_bits"].get<double>() == t.planned_objective);
    CHECK(j["realized_bits"].size() == 6);
    CHECK(j["realized_total"].get<double>() == doctest::Approx(t.realized_total()));

    Trajectory broken = t;
    broken.waypoints[5].y += 200.0;
    CHECK_THROWS_AS(check_trajectory(broken, spec), ValidationError);
}
