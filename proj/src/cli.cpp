#include "uavnet/cli.hpp"

#include "uavnet/compress.hpp"
#include "uavnet/harvest.hpp"
#include "uavnet/learn.hpp"
#include "uavnet/map3d.hpp"
#include "uavnet/relay.hpp"
#include "uavnet/sensing.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>

namespace uavnet {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

json defaults()
{
    return json::parse(R"({
  "seed": 1,
  "inputs": {"city": "", "measurements": ""},
  "city": {"nx": 100, "ny": 100, "cell_size": 5.0, "origin": [0.0, 0.0], "density": 0.3,
           "hmin": 10.0, "hmax": 40.0, "min_side": 2, "max_side": 8, "gap": 1, "border": 0,
           "footprints": []},
  "model": {"segments": [{"alpha": 2.2, "beta": -40.0, "sigma": 2.0},
                         {"alpha": 3.6, "beta": -45.0, "sigma": 6.0}],
            "tx_power": 20.0, "noise_floor": -90.0, "bandwidth": 1000000.0, "thresholds": []},
  "global_los": {"slope": 0.1, "midpoint": 20.0},
  "nodes": {"count": 6, "positions": []},
  "simulate": {"poses": 400, "altitude": 50.0},
  "learn": {"K": 2, "direct": "knn", "k": 5, "bandwidth": 25.0, "holdout": 200, "holdout_altitude": 50.0,
            "outer_iters": 5},
  "compress": {"count": 2000, "radius_min": 10.0, "radius_max": 300.0, "altitude_min": 20.0,
               "altitude_max": 100.0, "ridge": 0.001},
  "relay": {"bs": null, "user": null, "altitude": 50.0, "step": 2.5, "bs_link": "los", "oracle_resolution": 0.0},
  "harvest": {"start": null, "end": null, "L_max": 600.0, "L_sweep": [400.0, 600.0, 800.0, 1000.0],
              "n_waypoints": 41, "v_max": 20.0, "a_max": 5.0, "slot_duration": 2.0, "altitude": 50.0,
              "planners": ["deterministic", "global", "compressed", "true-map"], "scenarios": 1,
              "max_rounds": 300},
  "sensing": {"node": null, "policies": ["random", "map-free-active", "map-aided-active"], "budget": 20,
              "particles": 5000, "altitude": 50.0, "ring_size": 16, "ring_radius": 50.0}
})");
}

const char* type_name(const json& j)
{
    if (j.is_number()) {
        return "number";
    }
    return j.type_name();
}

// Overlays `patch` on `base`. Keys must already exist in `base`; a null in
// `base` accepts any value.
void merge_checked(json& base, const json& patch, const std::string& path)
{
    if (base.is_object()) {
        require(patch.is_object(), "config: " + path + " must be an object");
        for (auto it = patch.begin(); it != patch.end(); ++it) {
            const std::string child = path.empty() ? it.key() : path + "." + it.key();
            require(base.contains(it.key()), "config: unknown key " + child);
            merge_checked(base[it.key()], it.value(), child);
        }
        return;
    }
    const bool ok = base.is_null() || patch.is_null() || (base.is_number() && patch.is_number()) ||
                    base.type() == patch.type();
    require(ok, "config: " + path + " expects " + type_name(base) + ", got " + type_name(patch));
    base = patch;
}

void apply_override(json& config, const std::string& kv)
{
    const auto eq = kv.find('=');
    require(eq != std::string::npos && eq > 0, "override must be key=value: " + kv);
    const std::string key = kv.substr(0, eq);
    const std::string text = kv.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) {
        value = text;
    }
    json* node = &config;
    std::stringstream ss(key);
    std::string part;
    std::string walked;
    while (std::getline(ss, part, '.')) {
        walked += (walked.empty() ? "" : ".") + part;
        if (node->is_array()) {
            require(!part.empty() && std::all_of(part.begin(), part.end(), ::isdigit), "config: bad index " + walked);
            const auto idx = static_cast<std::size_t>(std::stoul(part));
            require(idx < node->size(), "config: index out of range " + walked);
            node = &(*node)[idx];
        } else {
            require(node->is_object() && node->contains(part), "config: unknown key " + walked);
            node = &(*node)[part];
        }
    }
    merge_checked(*node, value, key);
}

double round6(double v)
{
    if (!std::isfinite(v)) {
        return v;
    }
    const double r = std::round(v * 1e6) / 1e6;
    return r == 0.0 ? 0.0 : r;
}

json rounded(const json& j)
{
    if (j.is_number_float()) {
        return round6(j.get<double>());
    }
    if (j.is_structured()) {
        json out = j;
        for (auto& v : out) {
            v = rounded(v);
        }
        return out;
    }
    return j;
}

std::string num(double v)
{
    if (std::isnan(v)) {
        return "nan";
    }
    if (std::isinf(v)) {
        return v > 0 ? "inf" : "-inf";
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", round6(v));
    return buf;
}

void write_atomic(const fs::path& path, const std::string& content)
{
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) {
            throw std::runtime_error("cannot write " + tmp.string());
        }
        f << content;
        if (!f.flush()) {
            throw std::runtime_error("write failed: " + tmp.string());
        }
    }
    fs::rename(tmp, path);
}

std::string read_file(const std::string& path)
{
    std::ifstream f(path, std::ios::binary);
    require(static_cast<bool>(f), "cannot read " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

int as_int(const json& j, const std::string& what)
{
    require(j.is_number(), what + " must be a number");
    const double v = j.get<double>();
    require(std::floor(v) == v && std::abs(v) < 2e9, what + " must be an integer");
    return static_cast<int>(v);
}

double as_double(const json& j, const std::string& what)
{
    require(j.is_number(), what + " must be a number");
    return j.get<double>();
}

std::vector<double> as_doubles(const json& j, const std::string& what)
{
    require(j.is_array(), what + " must be an array");
    std::vector<double> out;
    for (const auto& v : j) {
        out.push_back(as_double(v, what));
    }
    return out;
}

Pose3 as_point(const json& j, double z, const std::string& what)
{
    const auto v = as_doubles(j, what);
    require(v.size() == 2 || v.size() == 3, what + " must be [x, y] or [x, y, z]");
    return {v[0], v[1], v.size() == 3 ? v[2] : z};
}

// ---------------------------------------------------------------------------
// Scenario pieces

CitySpec city_spec(const json& c)
{
    CitySpec s;
    s.nx = as_int(c["nx"], "city.nx");
    s.ny = as_int(c["ny"], "city.ny");
    s.cell_size = as_double(c["cell_size"], "city.cell_size");
    const auto o = as_doubles(c["origin"], "city.origin");
    require(o.size() == 2, "city.origin must be [x, y]");
    s.origin_x = o[0];
    s.origin_y = o[1];
    s.density = as_double(c["density"], "city.density");
    s.hmin = as_double(c["hmin"], "city.hmin");
    s.hmax = as_double(c["hmax"], "city.hmax");
    s.min_side = as_int(c["min_side"], "city.min_side");
    s.max_side = as_int(c["max_side"], "city.max_side");
    s.gap = as_int(c["gap"], "city.gap");
    s.border = as_int(c["border"], "city.border");
    for (const auto& f : c["footprints"]) {
        require(f.is_object(), "city.footprints entries must be objects");
        s.footprints.push_back({as_int(f.at("ix0"), "footprint.ix0"), as_int(f.at("iy0"), "footprint.iy0"),
                                as_int(f.at("ix1"), "footprint.ix1"), as_int(f.at("iy1"), "footprint.iy1"),
                                as_double(f.at("height"), "footprint.height")});
    }
    s.validate();
    return s;
}

SegmentedModel model_of(const json& m)
{
    SegmentedModel model;
    model.segments.clear();
    for (const auto& s : m["segments"]) {
        model.segments.push_back({as_double(s.at("alpha"), "model.alpha"), as_double(s.at("beta"), "model.beta"),
                                  as_double(s.at("sigma"), "model.sigma")});
    }
    model.tx_power = as_double(m["tx_power"], "model.tx_power");
    model.noise_floor = as_double(m["noise_floor"], "model.noise_floor");
    model.bandwidth = as_double(m["bandwidth"], "model.bandwidth");
    model.validate();
    return model;
}

struct Context {
    json config;
    std::uint64_t seed = 0;
    fs::path out_dir;
    std::vector<std::string> artifacts;
    json summary = json::object();

    SegmentedModel model;
    SegmentRule rule;
    GlobalLosParams global;

    void write(const std::string& name, const std::string& content)
    {
        write_atomic(out_dir / name, content);
        artifacts.push_back(name);
    }
    void write_json(const std::string& name, const json& j) { write(name, rounded(j).dump(2) + "\n"); }
    const json& at(const char* block) const { return config.at(block); }
};

void load_common(Context& ctx)
{
    ctx.model = model_of(ctx.at("model"));
    ctx.rule.thresholds = as_doubles(ctx.at("model")["thresholds"], "model.thresholds");
    ctx.global.slope = as_double(ctx.at("global_los")["slope"], "global_los.slope");
    ctx.global.midpoint = as_double(ctx.at("global_los")["midpoint"], "global_los.midpoint");
    ctx.global.validate();
    const int K = as_int(ctx.at("learn")["K"], "learn.K");
    require(K >= 2, "learn.K must be >= 2");
}

CityMap scenario_city(const Context& ctx, std::uint64_t master)
{
    const auto& file = ctx.at("inputs")["city"];
    require(file.is_string(), "inputs.city must be a path");
    if (!file.get<std::string>().empty()) {
        require(fs::exists(file.get<std::string>()), "inputs.city does not exist: " + file.get<std::string>());
        return city_from_json(read_file(file.get<std::string>()));
    }
    return generate_city(stream_seed(master, SeedStream::City), city_spec(ctx.at("city")));
}

std::vector<GroundNode> scenario_nodes(const Context& ctx, const CityMap& map, std::uint64_t master)
{
    const auto& n = ctx.at("nodes");
    std::vector<GroundNode> nodes;
    if (!n["positions"].empty()) {
        for (const auto& p : n["positions"]) {
            const Pose3 q = as_point(p, kDefaultNodeHeight, "nodes.positions");
            require(map.contains(q.x, q.y), "nodes.positions: node outside the map");
            nodes.push_back({static_cast<int>(nodes.size()), q});
        }
        return nodes;
    }
    const int count = as_int(n["count"], "nodes.count");
    require(count >= 1, "nodes.count must be >= 1");
    return random_ground_nodes(map, count, stream_seed(master, SeedStream::Nodes));
}

std::vector<Measurement> read_measurements(const std::string& path)
{
    require(fs::exists(path), "inputs.measurements does not exist: " + path);
    std::ifstream f(path);
    std::string line;
    std::getline(f, line);
    require(line == "x,y,z,node_id,rssi,true_segment", "measurements file: unexpected header");
    std::vector<Measurement> out;
    while (std::getline(f, line)) {
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            cells.push_back(cell);
        }
        if (line.back() == ',') {
            cells.emplace_back();
        }
        require(cells.size() == 6, "measurements file: expected 6 columns");
        try {
            Measurement m{{std::stod(cells[0]), std::stod(cells[1]), std::stod(cells[2])},
                          std::stoi(cells[3]),
                          std::stod(cells[4]),
                          {}};
            if (!cells[5].empty()) {
                m.true_segment = std::stoi(cells[5]);
            }
            out.push_back(m);
        } catch (const std::logic_error&) {
            throw ValidationError("measurements file: malformed row: " + line);
        }
    }
    return out;
}

struct Campaign {
    CityMap map;
    std::vector<GroundNode> nodes;
    std::vector<Measurement> measurements;
};

Campaign campaign(const Context& ctx)
{
    Campaign c;
    c.map = scenario_city(ctx, ctx.seed);
    c.nodes = scenario_nodes(ctx, c.map, ctx.seed);
    const auto& file = ctx.at("inputs")["measurements"];
    require(file.is_string(), "inputs.measurements must be a path");
    if (!file.get<std::string>().empty()) {
        c.measurements = read_measurements(file.get<std::string>());
        const NodeIndex index(c.nodes);
        for (const auto& m : c.measurements) {
            require(index.contains(m.node_id), "measurements file: unknown node id");
        }
        return c;
    }
    const auto& s = ctx.at("simulate");
    const int count = as_int(s["poses"], "simulate.poses");
    require(count >= 1, "simulate.poses must be >= 1");
    const auto poses = random_uav_poses(c.map, count, as_double(s["altitude"], "simulate.altitude"),
                                        stream_seed(ctx.seed, SeedStream::Poses));
    c.measurements =
        simulate_campaign(ctx.model, c.map, poses, c.nodes, stream_seed(ctx.seed, SeedStream::Measurements), ctx.rule);
    return c;
}

TrainingSpec training_spec(const json& c)
{
    TrainingSpec t;
    t.count = as_int(c["count"], "compress.count");
    t.radius_min = as_double(c["radius_min"], "compress.radius_min");
    t.radius_max = as_double(c["radius_max"], "compress.radius_max");
    t.altitude_min = as_double(c["altitude_min"], "compress.altitude_min");
    t.altitude_max = as_double(c["altitude_max"], "compress.altitude_max");
    t.validate();
    return t;
}

FitOptions fit_options(const Context& ctx)
{
    FitOptions o;
    o.K = as_int(ctx.at("learn")["K"], "learn.K");
    o.warm_start = ctx.global;
    return o;
}

JointOptions joint_options(const Context& ctx)
{
    JointOptions o;
    o.outer_iters = as_int(ctx.at("learn")["outer_iters"], "learn.outer_iters");
    o.fit = fit_options(ctx);
    return o;
}

// ---------------------------------------------------------------------------
// Commands

std::string nodes_csv(const std::vector<GroundNode>& nodes)
{
    std::string s = "id,x,y,z\n";
    for (const auto& n : nodes) {
        s += std::to_string(n.id) + "," + num(n.position.x) + "," + num(n.position.y) + "," + num(n.position.z) + "\n";
    }
    return s;
}

void cmd_gen_city(Context& ctx)
{
    const auto map = scenario_city(ctx, ctx.seed);
    ctx.write("city.json", city_to_json(map));
    std::string csv;
    int built = 0;
    for (int ix = 0; ix < map.nx(); ++ix) {
        for (int iy = 0; iy < map.ny(); ++iy) {
            csv += (iy ? "," : "") + num(map.height(ix, iy));
            built += map.height(ix, iy) > 0.0 ? 1 : 0;
        }
        csv += "\n";
    }
    ctx.write("heights.csv", csv);
    ctx.summary["nx"] = map.nx();
    ctx.summary["ny"] = map.ny();
    ctx.summary["built_fraction"] = static_cast<double>(built) / (map.nx() * map.ny());
    ctx.summary["max_height"] = map.max_height();
}

void cmd_simulate(Context& ctx)
{
    const auto c = campaign(ctx);
    ctx.write("nodes.csv", nodes_csv(c.nodes));
    std::string csv = "x,y,z,node_id,rssi,true_segment\n";
    int los = 0;
    for (const auto& m : c.measurements) {
        csv += num(m.uav.x) + "," + num(m.uav.y) + "," + num(m.uav.z) + "," + std::to_string(m.node_id) + "," +
               num(m.rssi) + "," + (m.true_segment ? std::to_string(*m.true_segment) : "") + "\n";
        los += m.true_segment && *m.true_segment == 1 ? 1 : 0;
    }
    ctx.write("measurements.csv", csv);
    ctx.summary["measurements"] = c.measurements.size();
    ctx.summary["los_fraction"] = static_cast<double>(los) / static_cast<double>(c.measurements.size());
}

bool all_labeled(const std::vector<Measurement>& ms)
{
    return std::all_of(ms.begin(), ms.end(), [](const Measurement& m) { return m.true_segment.has_value(); });
}

json segments_json(const SegmentedModel& m)
{
    json arr = json::array();
    for (const auto& s : m.segments) {
        arr.push_back({{"alpha", s.alpha}, {"beta", s.beta}, {"sigma", s.sigma}});
    }
    return arr;
}

void cmd_fit_channel(Context& ctx)
{
    const auto c = campaign(ctx);
    const NodeIndex index(c.nodes);
    const auto fit = fit_segmented_model(c.measurements, index, ctx.model, fit_options(ctx));
    json j;
    j["segments"] = segments_json(fit.model);
    j["converged"] = fit.converged;
    j["iterations"] = fit.trace.size();
    j["objective"] = fit.trace.empty() ? 0.0 : fit.trace.back().objective;
    if (all_labeled(c.measurements)) {
        j["label_accuracy"] = label_accuracy(fit.labeled);
    }
    ctx.write_json("channel_fit.json", j);
    std::string csv = "index,node_id,label,true_segment\n";
    for (std::size_t i = 0; i < fit.labeled.measurements.size(); ++i) {
        const auto& m = fit.labeled.measurements[i];
        csv += std::to_string(i) + "," + std::to_string(m.node_id) + "," + std::to_string(fit.labeled.labels[i]) +
               "," + (m.true_segment ? std::to_string(*m.true_segment) : "") + "\n";
    }
    ctx.write("labels.csv", csv);
    for (const char* key : {"segments", "converged", "label_accuracy"}) {
        if (j.contains(key)) {
            ctx.summary[key] = j[key];
        }
    }
}

void cmd_reconstruct(Context& ctx)
{
    const auto c = campaign(ctx);
    const NodeIndex index(c.nodes);
    const auto& l = ctx.at("learn");
    const auto joint = joint_refine(c.measurements, index, grid_geometry(c.map), ctx.model, joint_options(ctx));
    const auto predictor = fused_segment_predictor(joint.bounds, joint.labeled);
    const int holdout = as_int(l["holdout"], "learn.holdout");
    require(holdout >= 1, "learn.holdout must be >= 1");
    const auto held = random_uav_poses(c.map, holdout, as_double(l["holdout_altitude"], "learn.holdout_altitude"),
                                       stream_seed(ctx.seed, SeedStream::Holdout));
    DirectOptions direct;
    const std::string kind = l["direct"].get<std::string>();
    require(kind == "knn" || kind == "kernel", "learn.direct must be knn or kernel");
    direct.kind = kind == "knn" ? DirectOptions::Kind::Knn : DirectOptions::Kind::Kernel;
    direct.k = as_int(l["k"], "learn.k");
    direct.bandwidth = as_double(l["bandwidth"], "learn.bandwidth");

    std::string csv = "node_id,x,y,z,true_mean,direct,model_based\n";
    double se_direct = 0.0;
    double se_model = 0.0;
    std::size_t n = 0;
    for (const auto& node : c.nodes) {
        const auto d = reconstruct_direct(c.measurements, node.id, held, direct);
        const auto m = reconstruct_model_based(joint.model, predictor, held, node);
        for (std::size_t i = 0; i < held.size(); ++i) {
            const int s = classify_segment(c.map, held[i], node, ctx.model.K(), ctx.rule);
            const double truth = rssi_mean(ctx.model, s, distance(held[i], node.position));
            csv += std::to_string(node.id) + "," + num(held[i].x) + "," + num(held[i].y) + "," + num(held[i].z) + "," +
                   num(truth) + "," + num(d.predicted_rssi[i]) + "," + num(m.predicted_rssi[i]) + "\n";
            se_direct += (d.predicted_rssi[i] - truth) * (d.predicted_rssi[i] - truth);
            se_model += (m.predicted_rssi[i] - truth) * (m.predicted_rssi[i] - truth);
            ++n;
        }
    }
    ctx.write("radiomap.csv", csv);
    ctx.summary["rmse_direct_db"] = std::sqrt(se_direct / static_cast<double>(n));
    ctx.summary["rmse_model_db"] = std::sqrt(se_model / static_cast<double>(n));
}

void cmd_infer_3d(Context& ctx)
{
    const auto c = campaign(ctx);
    const NodeIndex index(c.nodes);
    const auto joint = joint_refine(c.measurements, index, grid_geometry(c.map), ctx.model, joint_options(ctx));
    const auto& b = joint.bounds;
    std::string csv = "ix,iy,true_height,lower,upper,estimate,rays\n";
    int constrained = 0;
    int sound = 0;
    double abs_err = 0.0;
    for (int ix = 0; ix < c.map.nx(); ++ix) {
        for (int iy = 0; iy < c.map.ny(); ++iy) {
            const std::size_t k = c.map.index(ix, iy);
            csv += std::to_string(ix) + "," + std::to_string(iy) + "," + num(c.map.height(ix, iy)) + "," +
                   num(b.lower[k]) + "," + num(b.upper[k]) + "," + num(b.estimate[k]) + "," +
                   std::to_string(b.ray_count[k]) + "\n";
            if (std::isfinite(b.upper[k])) {
                ++constrained;
                sound += b.upper[k] >= c.map.height(ix, iy) ? 1 : 0;
                abs_err += std::abs(b.estimate[k] - c.map.height(ix, iy));
            }
        }
    }
    ctx.write("heights_estimate.csv", csv);
    json j;
    j["segments"] = segments_json(joint.model);
    j["outer_iterations"] = joint.iterations;
    j["converged"] = joint.converged;
    if (all_labeled(c.measurements)) {
        j["label_accuracy"] = label_accuracy(joint.labeled);
    }
    j["constrained_cells"] = constrained;
    j["sound_fraction"] = constrained ? static_cast<double>(sound) / constrained : 1.0;
    j["mean_abs_error_m"] = constrained ? abs_err / constrained : 0.0;
    ctx.write_json("infer3d.json", j);
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (it.key() != "segments") {
            ctx.summary[it.key()] = it.value();
        }
    }
}

struct Compressed {
    std::vector<LocalLosModel> local;
    GlobalLosParams global;
};

Compressed compress_scenario(const Context& ctx, const CityMap& map, const std::vector<GroundNode>& nodes,
                             std::uint64_t master)
{
    const auto spec = training_spec(ctx.at("compress"));
    const double ridge = as_double(ctx.at("compress")["ridge"], "compress.ridge");
    const auto seed = stream_seed(master, SeedStream::Compress);
    return {compress_map(map, nodes, spec, ridge, seed), fit_global_logistic(map, nodes, spec, ridge, seed)};
}

void cmd_compress(Context& ctx)
{
    const auto map = scenario_city(ctx, ctx.seed);
    const auto nodes = scenario_nodes(ctx, map, ctx.seed);
    const auto c = compress_scenario(ctx, map, nodes, ctx.seed);
    json j;
    j["global"] = {{"slope", c.global.slope}, {"midpoint", c.global.midpoint}};
    j["nodes"] = json::parse(compressed_map_json(c.local));
    ctx.write_json("compressed_map.json", j);
    ctx.summary["nodes"] = c.local.size();
    ctx.summary["global"] = j["global"];
}

void cmd_plan_relay(Context& ctx)
{
    const auto map = scenario_city(ctx, ctx.seed);
    const auto& r = ctx.at("relay");
    RelayOptions opt;
    opt.altitude = as_double(r["altitude"], "relay.altitude");
    opt.step = as_double(r["step"], "relay.step");
    const std::string link = r["bs_link"].get<std::string>();
    require(link == "los" || link == "ray", "relay.bs_link must be los or ray");
    opt.bs_link = link == "los" ? BsLink::AlwaysLoS : BsLink::RayTraced;
    opt.rule = ctx.rule;
    opt.validate();
    const double w = map.max_x() - map.origin_x();
    const double h = map.max_y() - map.origin_y();
    const Pose3 bs = r["bs"].is_null() ? Pose3{map.origin_x() + 0.1 * w, map.origin_y() + 0.1 * h, 30.0}
                                       : as_point(r["bs"], 30.0, "relay.bs");
    require(map.contains(bs.x, bs.y), "relay.bs outside the map");
    GroundNode user;
    if (r["user"].is_null()) {
        user = scenario_nodes(ctx, map, ctx.seed).front();
    } else {
        user = {0, as_point(r["user"], kDefaultNodeHeight, "relay.user")};
    }
    const auto nested = plan_relay_nested(map, ctx.model, bs, user, opt);
    json j;
    j["bs"] = {bs.x, bs.y, bs.z};
    j["user"] = {user.position.x, user.position.y, user.position.z};
    j["nested"] = json::parse(relay_placement_json(nested));
    const double res = as_double(r["oracle_resolution"], "relay.oracle_resolution");
    if (res > 0.0) {
        j["oracle"] = json::parse(relay_placement_json(plan_relay_oracle(map, ctx.model, bs, user, res, opt)));
        ctx.summary["oracle_throughput_bps"] = j["oracle"]["throughput_bps"];
    }
    ctx.write_json("relay.json", j);
    ctx.summary["throughput_bps"] = nested.throughput;
    ctx.summary["on_axis"] = nested.on_axis;
    ctx.summary["on_boundary"] = nested.on_boundary;
    ctx.summary["evaluations"] = nested.evaluations;
}

TrajectorySpec trajectory_spec(const Context& ctx, const CityMap& map, double L_max)
{
    const auto& hv = ctx.at("harvest");
    TrajectorySpec spec;
    spec.altitude = as_double(hv["altitude"], "harvest.altitude");
    const double w = map.max_x() - map.origin_x();
    const double cy = 0.5 * (map.origin_y() + map.max_y());
    spec.start = hv["start"].is_null() ? Pose3{map.origin_x() + 0.1 * w, cy, spec.altitude}
                                       : as_point(hv["start"], spec.altitude, "harvest.start");
    spec.end = hv["end"].is_null() ? Pose3{map.origin_x() + 0.9 * w, cy, spec.altitude}
                                   : as_point(hv["end"], spec.altitude, "harvest.end");
    spec.start.z = spec.altitude;
    spec.end.z = spec.altitude;
    spec.L_max = L_max;
    spec.n_waypoints = as_int(hv["n_waypoints"], "harvest.n_waypoints");
    spec.v_max = as_double(hv["v_max"], "harvest.v_max");
    spec.a_max = as_double(hv["a_max"], "harvest.a_max");
    spec.slot_duration = as_double(hv["slot_duration"], "harvest.slot_duration");
    spec.area = area_of(map);
    spec.validate();
    return spec;
}

std::vector<ChannelView> harvest_views(const Context& ctx, const CityMap& map, const std::vector<GroundNode>& nodes,
                                       std::uint64_t master, std::vector<std::string>& names)
{
    names.clear();
    for (const auto& p : ctx.at("harvest")["planners"]) {
        require(p.is_string(), "harvest.planners must be strings");
        names.push_back(p.get<std::string>());
    }
    require(!names.empty(), "harvest.planners is empty");
    std::optional<Compressed> comp;
    std::vector<ChannelView> views;
    for (const auto& name : names) {
        if ((name == "global" || name == "compressed") && !comp) {
            comp = compress_scenario(ctx, map, nodes, master);
        }
        if (name == "deterministic") {
            views.push_back(deterministic_view(ctx.model));
        } else if (name == "global") {
            views.push_back(global_view(ctx.model, comp->global));
        } else if (name == "compressed") {
            views.push_back(compressed_view(ctx.model, comp->local));
        } else if (name == "true-map") {
            views.push_back(true_map_view(ctx.model, map, ctx.rule));
        } else {
            throw ValidationError("unknown planner: " + name);
        }
    }
    return views;
}

PlanOptions plan_options(const Context& ctx)
{
    PlanOptions o;
    o.max_rounds = as_int(ctx.at("harvest")["max_rounds"], "harvest.max_rounds");
    return o;
}

void cmd_plan_iot(Context& ctx)
{
    const auto map = scenario_city(ctx, ctx.seed);
    const auto nodes = scenario_nodes(ctx, map, ctx.seed);
    const auto spec = trajectory_spec(ctx, map, as_double(ctx.at("harvest")["L_max"], "harvest.L_max"));
    std::vector<std::string> names;
    const auto views = harvest_views(ctx, map, nodes, ctx.seed, names);
    json planned;
    json realized;
    for (std::size_t v = 0; v < views.size(); ++v) {
        auto t = plan_path(spec, nodes, views[v], stream_seed(ctx.seed, SeedStream::HarvestPlan), plan_options(ctx));
        check_trajectory(t, spec);
        evaluate_path(t, map, ctx.model, nodes, stream_seed(ctx.seed, SeedStream::HarvestEval), ctx.rule);
        ctx.write_json("trajectory_" + names[v] + ".json", json::parse(trajectory_json(t)));
        planned[names[v]] = t.planned_objective;
        realized[names[v]] = t.realized_total();
    }
    ctx.summary["L_max"] = spec.L_max;
    ctx.summary["planned_bits"] = planned;
    ctx.summary["realized_bits"] = realized;
}

double median_of(std::vector<double> v)
{
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void cmd_sweep(Context& ctx)
{
    const auto& hv = ctx.at("harvest");
    const auto Ls = as_doubles(hv["L_sweep"], "harvest.L_sweep");
    require(!Ls.empty() && std::is_sorted(Ls.begin(), Ls.end()), "harvest.L_sweep must be nonempty and ascending");
    const int scenarios = as_int(hv["scenarios"], "harvest.scenarios");
    require(scenarios >= 1, "harvest.scenarios must be >= 1");

    std::vector<std::string> names;
    // realized[planner][L] over scenarios
    std::vector<std::vector<std::vector<double>>> realized;
    std::vector<std::vector<std::vector<double>>> planned;
    std::string csv = "scenario,planner,L_max,planned_bits,realized_bits\n";
    for (int k = 0; k < scenarios; ++k) {
        const auto master = stream_seed(ctx.seed, SeedStream::Sweep, static_cast<std::uint64_t>(k));
        const auto map = scenario_city(ctx, master);
        const auto nodes = scenario_nodes(ctx, map, master);
        const auto views = harvest_views(ctx, map, nodes, master, names);
        realized.resize(views.size(), std::vector<std::vector<double>>(Ls.size()));
        planned.resize(views.size(), std::vector<std::vector<double>>(Ls.size()));
        for (std::size_t v = 0; v < views.size(); ++v) {
            std::optional<std::vector<Pose3>> warm;
            for (std::size_t l = 0; l < Ls.size(); ++l) {
                const auto spec = trajectory_spec(ctx, map, Ls[l]);
                auto options = plan_options(ctx);
                options.warm_start = warm;
                auto t = plan_path(spec, nodes, views[v], stream_seed(master, SeedStream::HarvestPlan), options);
                warm = t.waypoints;
                evaluate_path(t, map, ctx.model, nodes, stream_seed(master, SeedStream::HarvestEval), ctx.rule);
                realized[v][l].push_back(t.realized_total());
                planned[v][l].push_back(t.planned_objective);
                csv += std::to_string(k) + "," + names[v] + "," + num(Ls[l]) + "," + num(t.planned_objective) + "," +
                       num(t.realized_total()) + "\n";
            }
        }
    }
    ctx.write("sweep.csv", csv);

    std::string matrix = "L_max";
    for (const auto& n : names) {
        matrix += "," + n;
    }
    matrix += "\n";
    for (std::size_t l = 0; l < Ls.size(); ++l) {
        matrix += num(Ls[l]);
        for (std::size_t v = 0; v < names.size(); ++v) {
            matrix += "," + num(median_of(realized[v][l]));
        }
        matrix += "\n";
    }
    ctx.write("sweep_matrix.csv", matrix);

    json monotone;
    json planned_monotone;
    for (std::size_t v = 0; v < names.size(); ++v) {
        bool up = true;
        bool pup = true;
        for (std::size_t l = 1; l < Ls.size(); ++l) {
            up = up && median_of(realized[v][l]) >= median_of(realized[v][l - 1]);
            pup = pup && median_of(planned[v][l]) >= median_of(planned[v][l - 1]);
        }
        monotone[names[v]] = up;
        planned_monotone[names[v]] = pup;
    }
    ctx.summary["scenarios"] = scenarios;
    ctx.summary["median_realized_monotone"] = monotone;
    ctx.summary["median_planned_monotone"] = planned_monotone;
    const auto g = std::find(names.begin(), names.end(), "global");
    const auto c = std::find(names.begin(), names.end(), "compressed");
    if (g != names.end() && c != names.end()) {
        json wins = json::array();
        const auto gi = static_cast<std::size_t>(g - names.begin());
        const auto ci = static_cast<std::size_t>(c - names.begin());
        for (std::size_t l = 0; l < Ls.size(); ++l) {
            int w = 0;
            for (int k = 0; k < scenarios; ++k) {
                w += realized[ci][l][static_cast<std::size_t>(k)] >= realized[gi][l][static_cast<std::size_t>(k)];
            }
            wins.push_back(w);
        }
        ctx.summary["compressed_ge_global"] = wins;
    }
}

void cmd_localize(Context& ctx)
{
    const auto map = scenario_city(ctx, ctx.seed);
    const auto& s = ctx.at("sensing");
    GroundNode truth;
    if (s["node"].is_null()) {
        truth = scenario_nodes(ctx, map, ctx.seed).front();
    } else {
        truth = {0, as_point(s["node"], kDefaultNodeHeight, "sensing.node")};
        require(map.contains(truth.position.x, truth.position.y), "sensing.node outside the map");
    }
    LocalizationOptions opt;
    opt.particles = as_int(s["particles"], "sensing.particles");
    opt.altitude = as_double(s["altitude"], "sensing.altitude");
    opt.ring_size = as_int(s["ring_size"], "sensing.ring_size");
    opt.ring_radius = as_double(s["ring_radius"], "sensing.ring_radius");
    opt.global = ctx.global;
    const int budget = as_int(s["budget"], "sensing.budget");
    require(budget >= 0, "sensing.budget must be >= 0");
    std::vector<SensingPolicy> policies;
    for (const auto& p : s["policies"]) {
        require(p.is_string(), "sensing.policies must be strings");
        policies.push_back(parse_policy(p.get<std::string>()));
    }
    opt.validate();

    json all;
    json finals;
    for (const auto policy : policies) {
        const auto r = run_localization(map, ctx.model, truth, budget, policy,
                                        stream_seed(ctx.seed, SeedStream::Sensing), opt);
        std::string csv = "step,uav_x,uav_y,uav_z,rssi,estimate_x,estimate_y,rmse\n";
        for (std::size_t k = 0; k < r.steps.size(); ++k) {
            const auto& st = r.steps[k];
            csv += std::to_string(k + 1) + "," + num(st.uav.x) + "," + num(st.uav.y) + "," + num(st.uav.z) + "," +
                   num(st.rssi) + "," + num(st.estimate.x) + "," + num(st.estimate.y) + "," + num(st.error) + "\n";
        }
        ctx.write(std::string("localize_") + policy_name(policy) + ".csv", csv);
        all[policy_name(policy)] = json::parse(localization_json(r));
        finals[policy_name(policy)] = r.rmse.back();
    }
    json j;
    j["truth"] = {truth.position.x, truth.position.y};
    j["policies"] = all;
    ctx.write_json("localize.json", j);
    ctx.summary["final_rmse_m"] = finals;
}

const std::map<std::string, std::function<void(Context&)>>& command_table()
{
    static const std::map<std::string, std::function<void(Context&)>> table{
        {"gen-city", cmd_gen_city},       {"simulate", cmd_simulate},     {"fit-channel", cmd_fit_channel},
        {"reconstruct", cmd_reconstruct}, {"infer-3d", cmd_infer_3d},     {"compress", cmd_compress},
        {"plan-relay", cmd_plan_relay},   {"plan-iot", cmd_plan_iot},     {"localize", cmd_localize},
        {"sweep", cmd_sweep},
    };
    return table;
}

json error_summary(const std::string& command, const std::string& message)
{
    return json{{"command", command}, {"status", "error"}, {"error", message}};
}

} // namespace

std::uint64_t stream_seed(std::uint64_t master, SeedStream stream, std::uint64_t index)
{
    return sub_seed(master, static_cast<std::uint64_t>(stream), index);
}

const std::vector<std::string>& cli_commands()
{
    static const std::vector<std::string> names{"gen-city", "simulate",   "fit-channel", "reconstruct", "infer-3d",
                                                "compress", "plan-relay", "plan-iot",    "localize",    "sweep"};
    return names;
}

std::string default_config_json() { return defaults().dump(2) + "\n"; }

std::string resolve_config_json(const std::string& config_text, const std::vector<std::string>& overrides,
                                std::optional<std::uint64_t> seed)
{
    json config = defaults();
    if (!config_text.empty()) {
        const json doc = json::parse(config_text, nullptr, false);
        require(!doc.is_discarded(), "config: not valid JSON");
        merge_checked(config, doc, "");
    }
    if (seed) {
        config["seed"] = *seed;
    }
    for (const auto& kv : overrides) {
        apply_override(config, kv);
    }
    require(config["seed"].is_number_unsigned() || (config["seed"].is_number_integer() && config["seed"].get<long long>() >= 0),
            "config: seed must be a nonnegative integer");
    return rounded(config).dump(2) + "\n";
}

std::string city_to_json(const CityMap& map)
{
    json j;
    j["nx"] = map.nx();
    j["ny"] = map.ny();
    j["cell_size"] = map.cell_size();
    j["origin"] = {map.origin_x(), map.origin_y()};
    json rows = json::array();
    for (int ix = 0; ix < map.nx(); ++ix) {
        json row = json::array();
        for (int iy = 0; iy < map.ny(); ++iy) {
            row.push_back(map.height(ix, iy));
        }
        rows.push_back(row);
    }
    j["heights"] = rows;
    return rounded(j).dump() + "\n";
}

CityMap city_from_json(const std::string& text)
{
    const json j = json::parse(text, nullptr, false);
    require(!j.is_discarded() && j.is_object(), "city file: not a JSON object");
    try {
        const auto o = as_doubles(j.at("origin"), "city.origin");
        require(o.size() == 2, "city file: origin must be [x, y]");
        CityMap map(as_int(j.at("nx"), "city.nx"), as_int(j.at("ny"), "city.ny"),
                    as_double(j.at("cell_size"), "city.cell_size"), o[0], o[1]);
        const auto& rows = j.at("heights");
        require(rows.is_array() && rows.size() == static_cast<std::size_t>(map.nx()), "city file: wrong row count");
        for (int ix = 0; ix < map.nx(); ++ix) {
            const auto row = as_doubles(rows[static_cast<std::size_t>(ix)], "city.heights");
            require(row.size() == static_cast<std::size_t>(map.ny()), "city file: wrong column count");
            for (int iy = 0; iy < map.ny(); ++iy) {
                map.set_height(ix, iy, row[static_cast<std::size_t>(iy)]);
            }
        }
        map.validate();
        return map;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("city file: ") + e.what());
    }
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Simulation, learning and planning for UAV-aided wireless networks"};
    app.set_version_flag("--version", "uavnet 1.0");
    std::string command;
    std::string config_path;
    std::uint64_t seed = 0;
    std::string out_dir = ".";
    std::vector<std::string> overrides;
    app.add_option("command", command, "Command to run")->required()->check(CLI::IsMember(cli_commands()));
    app.add_option("--config", config_path, "JSON config file");
    auto* seed_opt = app.add_option("--seed", seed, "Master seed (overrides the config)");
    app.add_option("--out-dir", out_dir, "Directory for artifacts")->capture_default_str();
    app.add_option("--override", overrides, "Dotted key=value config override; repeatable")->allow_extra_args(false);

    std::vector<std::string> rev(args.rbegin(), args.rend());
    if (!rev.empty()) {
        rev.pop_back();
    }
    try {
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << app.help();
            return kExitOk;
        }
        err << "error: " << e.what() << "\n";
        out << error_summary(command, e.what()).dump() << "\n";
        return kExitInvalidConfig;
    }

    Context ctx;
    try {
        std::string text;
        if (!config_path.empty()) {
            require(fs::exists(config_path), "config file does not exist: " + config_path);
            text = read_file(config_path);
        }
        ctx.config = json::parse(resolve_config_json(
            text, overrides, seed_opt->count() ? std::optional<std::uint64_t>(seed) : std::nullopt));
        ctx.seed = ctx.config["seed"].get<std::uint64_t>();
        load_common(ctx);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        out << error_summary(command, e.what()).dump() << "\n";
        return kExitInvalidConfig;
    }

    try {
        ctx.out_dir = out_dir;
        fs::create_directories(ctx.out_dir);
        ctx.write("resolved_config.json", ctx.config.dump(2) + "\n");
        command_table().at(command)(ctx);
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << "\n";
        out << error_summary(command, e.what()).dump() << "\n";
        return kExitInvalidConfig;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        out << error_summary(command, e.what()).dump() << "\n";
        return kExitRuntime;
    }

    json summary{{"command", command}, {"status", "ok"}, {"seed", ctx.seed}, {"artifacts", ctx.artifacts}};
    for (auto it = ctx.summary.begin(); it != ctx.summary.end(); ++it) {
        summary[it.key()] = it.value();
    }
    out << rounded(summary).dump() << "\n";
    return kExitOk;
}

} // namespace uavnet
