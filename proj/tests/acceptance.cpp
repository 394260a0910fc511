// Full-scale acceptance run. Prints one PASS/FAIL line per criterion with the
// measured values. Exits 0 once every criterion has run; with --strict the
// exit code is the number of failures.

#include "scenes.hpp"

#include "uavnet/cli.hpp"
#include "uavnet/compress.hpp"
#include "uavnet/harvest.hpp"
#include "uavnet/learn.hpp"
#include "uavnet/map3d.hpp"
#include "uavnet/relay.hpp"
#include "uavnet/sensing.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

using namespace uavnet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double median(std::vector<double> v)
{
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Outcome nested_propagation()
{
    CitySpec spec;
    spec.nx = 60;
    spec.ny = 60;
    spec.density = 0.3;
    spec.hmax = 50.0;
    Rng rng(20240601);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    long long violations = 0;
    long long probes = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto map = generate_city(sub_seed(1, 1, static_cast<std::uint64_t>(trial)), spec);
        const GroundNode node{0, {20.0 + 260.0 * u(rng), 20.0 + 260.0 * u(rng), kDefaultNodeHeight}};
        const double alt = 20.0 + 80.0 * u(rng);
        const double ang = 2.0 * kPi * u(rng);
        const int K = trial % 2 == 0 ? 2 : 3;
        int prev = K + 1;
        for (double r = 400.0; r >= 0.0; r -= 1.0) {
            const Pose3 p{node.position.x + r * std::cos(ang), node.position.y + r * std::sin(ang), alt};
            if (!map.contains(p.x, p.y) || map.height_at(p) > alt) {
                continue;
            }
            const int s = classify_segment(map, p, node, K);
            violations += s > prev;
            prev = s;
            ++probes;
        }
    }
    return {violations == 0, fmt("violations=%lld over %lld probes", violations, probes)};
}

Outcome channel_learning()
{
    const SegmentedModel truth;
    std::vector<double> acc;
    std::vector<double> err0;
    std::vector<double> err1;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto c = scenes::campaign(sub_seed(2, seed), 100, 400, 50.0, truth);
        const NodeIndex index(c.nodes);
        const auto fit = fit_segmented_model(c.measurements, index, truth, FitOptions{});
        acc.push_back(label_accuracy(fit.labeled));
        err0.push_back(std::abs(fit.model.segments[0].alpha - truth.segments[0].alpha));
        err1.push_back(std::abs(fit.model.segments[1].alpha - truth.segments[1].alpha));
    }
    const double a = median(acc);
    const double e0 = median(err0);
    const double e1 = median(err1);
    return {a >= 0.95 && e0 <= 0.1 && e1 <= 0.1,
            fmt("median accuracy=%.4f, median |alpha err| LoS=%.4f NLoS=%.4f (min accuracy %.4f)", a, e0, e1,
                *std::min_element(acc.begin(), acc.end()))};
}

Outcome reconstruction_ordering()
{
    const SegmentedModel truth;
    int wins = 0;
    std::vector<double> model_rmse;
    std::vector<double> direct_rmse;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto c = scenes::campaign(sub_seed(3, seed), 100, 400, 50.0, truth);
        const NodeIndex index(c.nodes);
        const auto joint = joint_refine(c.measurements, index, grid_geometry(c.map), truth, JointOptions{});
        const auto predictor = fused_segment_predictor(joint.bounds, joint.labeled);
        const auto held = random_uav_poses(c.map, 100, 50.0, sub_seed(3, seed, 1));
        Rng rng(sub_seed(3, seed, 2));
        double se_model = 0.0;
        double se_direct = 0.0;
        for (const auto& node : c.nodes) {
            RadioMap observed{node.id, held, {}, {}};
            for (const auto& p : held) {
                observed.predicted_rssi.push_back(sample_rssi(rng, truth, c.map, p, node).rssi);
            }
            const double m = map_rmse(reconstruct_model_based(joint.model, predictor, held, node), observed);
            const double d = map_rmse(reconstruct_direct(c.measurements, node.id, held, DirectOptions{}), observed);
            se_model += m * m;
            se_direct += d * d;
        }
        const double n = static_cast<double>(c.nodes.size());
        model_rmse.push_back(std::sqrt(se_model / n));
        direct_rmse.push_back(std::sqrt(se_direct / n));
        wins += se_model < se_direct;
    }
    return {wins >= 18, fmt("model-based < KNN in %d/20, median RMSE %.3f vs %.3f dB", wins, median(model_rmse),
                            median(direct_rmse))};
}

Outcome inference_soundness()
{
    long long unsound = 0;
    long long tight_cells = 0;
    double worst_gap = 0.0;
    int oracle_checked = 0;
    double oracle_worst = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto survey = scenes::dense_survey(sub_seed(4, seed));
        const NodeIndex index(survey.nodes);
        LabeledDataset labeled{survey.links, {}};
        for (const auto& m : survey.links) {
            labeled.labels.push_back(*m.true_segment);
        }
        const auto b = infer_bounds(labeled, index, survey.map);
        for (std::size_t c = 0; c < b.upper.size(); ++c) {
            const double h = survey.map.heights()[c];
            unsound += b.upper[c] < h;
            if (b.ray_count[c] >= 20) {
                ++tight_cells;
                worst_gap = std::max(worst_gap, b.upper[c] - h);
            }
        }

        // Independent check of the upper bound on a sample of well-covered
        // cells: the lowest altitude of any LoS link over the cell by slab
        // clipping, endpoint cells excluded.
        if (seed == 0) {
            std::vector<CellIndex> cells;
            for (int ix = 0; ix < survey.map.nx(); ++ix) {
                for (int iy = 0; iy < survey.map.ny(); ++iy) {
                    if (b.ray_count[survey.map.index(ix, iy)] >= 20 && (ix * 7 + iy * 13) % 29 == 0) {
                        cells.push_back({ix, iy});
                    }
                }
            }
            const double cs = survey.map.cell_size();
            for (const auto& cell : cells) {
                const double x0 = survey.map.origin_x() + cell.ix * cs;
                const double y0 = survey.map.origin_y() + cell.iy * cs;
                double best = std::numeric_limits<double>::infinity();
                for (const auto& m : survey.links) {
                    if (*m.true_segment != 1) {
                        continue;
                    }
                    const Pose3& a = m.uav;
                    const Pose3& e = index.at(m.node_id).position;
                    if (std::max(a.x, e.x) < x0 || std::min(a.x, e.x) > x0 + cs || std::max(a.y, e.y) < y0 ||
                        std::min(a.y, e.y) > y0 + cs) {
                        continue;
                    }
                    if (survey.map.cell_of(a.x, a.y) == cell || survey.map.cell_of(e.x, e.y) == cell) {
                        continue;
                    }
                    // Clip the ground projection against the cell's slabs.
                    double t0 = 0.0;
                    double t1 = 1.0;
                    const double d[2] = {e.x - a.x, e.y - a.y};
                    const double o[2] = {a.x, a.y};
                    const double lo[2] = {x0, y0};
                    for (int k = 0; k < 2; ++k) {
                        if (d[k] == 0.0) {
                            if (o[k] < lo[k] || o[k] >= lo[k] + cs) {
                                t1 = -1.0;
                            }
                            continue;
                        }
                        double ta = (lo[k] - o[k]) / d[k];
                        double tb = (lo[k] + cs - o[k]) / d[k];
                        if (ta > tb) {
                            std::swap(ta, tb);
                        }
                        t0 = std::max(t0, ta);
                        t1 = std::min(t1, tb);
                    }
                    if (t1 - t0 > 1e-9) {
                        best = std::min({best, a.z + (e.z - a.z) * t0, a.z + (e.z - a.z) * t1});
                    }
                }
                oracle_worst = std::max(oracle_worst, std::abs(best - b.upper[survey.map.index(cell.ix, cell.iy)]));
                ++oracle_checked;
            }
        }
    }
    return {unsound == 0 && worst_gap <= 5.0 && oracle_worst <= 1e-6,
            fmt("unsound cells=%lld, worst gap %.3f m over %lld cells with >=20 rays; clipped upper bound "
                "matches within %.2e m on %d cells",
                unsound, worst_gap, tight_cells, oracle_worst, oracle_checked)};
}

Outcome relay_search()
{
    const SegmentedModel model;
    double worst = 1e300;
    int within = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto s = scenes::relay_scene(sub_seed(5, seed));
        const auto nested = plan_relay_nested(s.map, model, s.bs, s.user);
        const auto oracle = plan_relay_oracle(s.map, model, s.bs, s.user, 2.5);
        const double ratio = nested.throughput / oracle.throughput;
        worst = std::min(worst, ratio);
        within += ratio >= 0.99;
    }

    CitySpec spec = scenes::downtown_spec();
    spec.nx = 500;
    spec.ny = 100;
    const auto map = generate_city(sub_seed(5, 1000), spec);
    std::vector<double> lx;
    std::vector<double> ly;
    for (const double d : {250.0, 500.0, 1000.0, 2000.0}) {
        const Pose3 bs{100.0, 250.0, 30.0};
        const GroundNode user{0, {100.0 + d, 252.5, kDefaultNodeHeight}};
        lx.push_back(std::log(d));
        ly.push_back(std::log(static_cast<double>(plan_relay_nested(map, model, bs, user).evaluations)));
    }
    const double mx = (lx[0] + lx[1] + lx[2] + lx[3]) / 4.0;
    const double my = (ly[0] + ly[1] + ly[2] + ly[3]) / 4.0;
    double sxy = 0.0;
    double sxx = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sxy += (lx[i] - mx) * (ly[i] - my);
        sxx += (lx[i] - mx) * (lx[i] - mx);
    }
    const double slope = sxy / sxx;
    return {within == 100 && std::abs(slope - 1.0) <= 0.1,
            fmt("within 1%% of oracle on %d/100 (worst ratio %.4f), evaluation slope %.3f", within, worst, slope)};
}

Outcome harvesting_trend()
{
    const SegmentedModel model;
    const std::vector<double> Ls{400.0, 600.0, 800.0, 1000.0};
    const int scenarios = 10;
    // realized[view][L][scenario]
    std::vector<std::vector<std::vector<double>>> realized(4, std::vector<std::vector<double>>(Ls.size()));
    for (int s = 0; s < scenarios; ++s) {
        const auto scene = scenes::harvest_scene(sub_seed(6, static_cast<std::uint64_t>(s)));
        const auto seed = sub_seed(6, static_cast<std::uint64_t>(s), 1);
        const auto local = compress_map(scene.map, scene.nodes, TrainingSpec{}, 1e-3, sub_seed(seed, 3));
        const auto global = fit_global_logistic(scene.map, scene.nodes, TrainingSpec{}, 1e-3, sub_seed(seed, 3));
        const std::vector<ChannelView> views{deterministic_view(model), global_view(model, global),
                                             compressed_view(model, local), true_map_view(model, scene.map)};
        TrajectorySpec spec;
        spec.start = {300.0, 500.0, 50.0};
        spec.end = {700.0, 500.0, 50.0};
        spec.n_waypoints = 41;
        spec.slot_duration = 2.0;
        spec.v_max = 20.0;
        spec.a_max = 5.0;
        spec.area = area_of(scene.map);
        for (std::size_t v = 0; v < views.size(); ++v) {
            PlanOptions options;
            for (std::size_t l = 0; l < Ls.size(); ++l) {
                spec.L_max = Ls[l];
                auto t = plan_path(spec, scene.nodes, views[v], sub_seed(seed, 5), options);
                options.warm_start = t.waypoints;
                evaluate_path(t, scene.map, model, scene.nodes, sub_seed(seed, 6));
                realized[v][l].push_back(t.realized_total());
            }
        }
    }
    bool pass = true;
    std::string wins = "compressed >= global:";
    for (std::size_t l = 0; l < Ls.size(); ++l) {
        int w = 0;
        for (int s = 0; s < scenarios; ++s) {
            w += realized[2][l][static_cast<std::size_t>(s)] >= realized[1][l][static_cast<std::size_t>(s)];
        }
        wins += fmt(" L=%.0f %d/%d", Ls[l], w, scenarios);
        pass = pass && w >= 8;
    }
    bool monotone = true;
    for (std::size_t v = 0; v < realized.size(); ++v) {
        for (std::size_t l = 1; l < Ls.size(); ++l) {
            monotone = monotone && median(realized[v][l]) >= median(realized[v][l - 1]);
        }
    }
    return {pass && monotone, wins + fmt("; median realized nondecreasing for every planner: %s",
                                         monotone ? "yes" : "no")};
}

Outcome gradient_check()
{
    const SegmentedModel model;
    Rng rng(sub_seed(7, 0));
    std::uniform_real_distribution<double> xy(-400.0, 400.0);
    std::uniform_real_distribution<double> z(20.0, 150.0);
    std::uniform_real_distribution<double> a(0.02, 0.5);
    std::uniform_real_distribution<double> b(0.0, 60.0);
    const GroundNode node{0, {0.0, 0.0, kDefaultNodeHeight}};
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const LosView view{a(rng), b(rng)};
        const Pose3 p{xy(rng), xy(rng), z(rng)};
        const auto g = expected_rate_and_gradient(model, view, p, node);
        const double h = 1e-3;
        double err2 = 0.0;
        double norm2 = 0.0;
        for (int k = 0; k < 3; ++k) {
            Pose3 hi = p;
            Pose3 lo = p;
            (k == 0 ? hi.x : k == 1 ? hi.y : hi.z) += h;
            (k == 0 ? lo.x : k == 1 ? lo.y : lo.z) -= h;
            const double fd = (expected_rate_and_gradient(model, view, hi, node).rate -
                               expected_rate_and_gradient(model, view, lo, node).rate) /
                              (2.0 * h);
            err2 += (fd - g.gradient[k]) * (fd - g.gradient[k]);
            norm2 += g.gradient[k] * g.gradient[k];
        }
        worst = std::max(worst, std::sqrt(err2 / norm2));
    }
    return {worst <= 1e-5, fmt("worst relative error %.3e over 1000 poses", worst)};
}

Outcome sensing_improvement()
{
    const SegmentedModel model;
    int wins = 0;
    std::vector<double> improvement;
    std::vector<double> aided_err;
    std::vector<double> random_err;
    for (std::uint64_t s = 0; s < 50; ++s) {
        const auto seed = sub_seed(8, s);
        const auto map = generate_city(sub_seed(seed, 1), scenes::downtown_spec());
        const auto node = random_ground_nodes(map, 1, sub_seed(seed, 2)).front();
        const auto aided = run_localization(map, model, node, 20, SensingPolicy::MapAidedActive, sub_seed(seed, 3));
        const auto random = run_localization(map, model, node, 20, SensingPolicy::Random, sub_seed(seed, 3));
        const double fa = aided.rmse.back();
        const double fr = random.rmse.back();
        wins += fa < fr;
        improvement.push_back((fr - fa) / fr);
        aided_err.push_back(fa);
        random_err.push_back(fr);
    }
    const double imp = median(improvement);
    return {wins >= 40 && imp >= 0.2,
            fmt("map-aided beats random in %d/50, median improvement %.1f%% (median error %.2f vs %.2f m)", wins,
                100.0 * imp, median(aided_err), median(random_err))};
}

std::string slurp(const fs::path& p)
{
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

Outcome cli_determinism()
{
    const fs::path root = fs::temp_directory_path() / "uavnet_acceptance_cli";
    fs::remove_all(root);
    const std::vector<std::string> config{
        "--seed",       "42",
        "--override",   "simulate.poses=150",
        "--override",   "nodes.count=4",
        "--override",   "learn.holdout=50",
        "--override",   "compress.count=500",
        "--override",   "relay.oracle_resolution=10",
        "--override",   "harvest.n_waypoints=21",
        "--override",   "harvest.scenarios=2",
        "--override",   "harvest.L_sweep=[400, 600]",
        "--override",   "sensing.particles=1000",
        "--override",   "sensing.budget=6",
        "--override",   "inputs.measurements=simulate/measurements.csv",
    };
    const std::vector<std::string> steps{"simulate", "gen-city",   "fit-channel", "reconstruct", "infer-3d",
                                         "compress", "plan-relay", "plan-iot",    "localize",    "sweep"};
    const fs::path cwd = fs::current_path();
    std::vector<std::string> summaries[2];
    int failures = 0;
    for (int run = 0; run < 2; ++run) {
        const fs::path dir = root / ("run" + std::to_string(run));
        fs::create_directories(dir);
        fs::current_path(dir);
        for (const auto& step : steps) {
            std::vector<std::string> args{"uavnet-cli", step, "--out-dir", step};
            args.insert(args.end(), config.begin(), config.end());
            if (step == "simulate") {
                args.resize(args.size() - 2);
            }
            std::ostringstream out;
            std::ostringstream err;
            failures += run_cli(args, out, err) != kExitOk;
            summaries[run].push_back(out.str());
        }
        fs::current_path(cwd);
    }
    std::size_t files = 0;
    std::size_t differing = 0;
    for (const auto& entry : fs::recursive_directory_iterator(root / "run0")) {
        if (!entry.is_regular_file()) {
            continue;
        }
        ++files;
        const fs::path other = root / "run1" / fs::relative(entry.path(), root / "run0");
        differing += !fs::exists(other) || slurp(entry.path()) != slurp(other);
    }
    const bool same_summaries = summaries[0] == summaries[1];
    fs::remove_all(root);
    return {failures == 0 && differing == 0 && same_summaries && files > 0,
            fmt("%zu steps, %zu artifacts, %zu differing, summaries identical: %s, failed steps: %d", steps.size(),
                files, differing, same_summaries ? "yes" : "no", failures)};
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Acceptance run"};
    bool strict = false;
    std::vector<int> only;
    std::string report;
    app.add_flag("--strict", strict, "Exit with the number of failed criteria");
    app.add_option("--only", only, "Run only these criteria (1-9)")->check(CLI::Range(1, 9));
    app.add_option("--report", report, "Also write the result lines to this file");
    CLI11_PARSE(app, argc, argv);
    std::ostringstream lines;

    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"nested segment propagation", nested_propagation},
        {"channel learning at 100 nodes x 400 poses", channel_learning},
        {"model-based reconstruction beats KNN", reconstruction_ordering},
        {"3D height bounds sound and tight", inference_soundness},
        {"relay search vs oracle and linear complexity", relay_search},
        {"harvesting trend over L_max", harvesting_trend},
        {"expected-rate gradient vs finite differences", gradient_check},
        {"map-aided sensing beats random waypoints", sensing_improvement},
        {"CLI pipeline byte-identical across runs", cli_determinism},
    };
    const std::set<int> selected(only.begin(), only.end());
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!selected.empty() && !selected.count(id)) {
            continue;
        }
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        failed += !o.pass;
        const std::string line = std::string(o.pass ? "PASS" : "FAIL") + " [" + std::to_string(id) + "] " +
                                 criteria[i].first + ": " + o.detail + fmt(" (%.1f s)", secs);
        std::cout << line << std::endl;
        lines << line << "\n";
    }
    std::cout << "acceptance: " << failed << " failed" << std::endl;
    lines << "acceptance: " << failed << " failed\n";
    if (!report.empty()) {
        std::ofstream(report) << lines.str();
    }
    return strict ? failed : 0;
}
