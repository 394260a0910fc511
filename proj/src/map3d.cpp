#include "uavnet/map3d.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace uavnet {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Per-cell minimum ray altitude for one link, endpoint cells excluded.
template <typename F>
void for_each_constraint(const CityMap& grid, const Pose3& uav, const Pose3& node, F&& f)
{
    if (!grid.contains(uav) || !grid.contains(node)) {
        return;
    }
    const CellIndex cu = grid.cell_of(uav.x, uav.y);
    const CellIndex cn = grid.cell_of(node.x, node.y);
    for_each_crossed_cell(grid, uav, node, [&](CellIndex c, double t0, double t1) {
        if (t1 - t0 < kMinInterval || c == cu || c == cn) {
            return;
        }
        const double z0 = uav.z + (node.z - uav.z) * t0;
        const double z1 = uav.z + (node.z - uav.z) * t1;
        f(grid.index(c.ix, c.iy), std::min(z0, z1));
    });
}

double midpoint_estimate(double lower, double upper, double hmax)
{
    const double top = std::min(upper, hmax);
    return std::clamp(0.5 * (lower + std::max(top, lower)), lower, upper);
}

} // namespace

CityMap grid_geometry(const CityMap& map)
{
    return CityMap(map.nx(), map.ny(), map.cell_size(), map.origin_x(), map.origin_y());
}

void HeightBounds::validate() const
{
    const std::size_t n = grid.heights().size();
    require(lower.size() == n && upper.size() == n && estimate.size() == n && ray_count.size() == n,
            "height bounds: size mismatch with grid");
    for (std::size_t i = 0; i < n; ++i) {
        require(lower[i] >= 0.0, "height bounds: negative lower bound");
        require(lower[i] <= estimate[i] && estimate[i] <= upper[i], "height bounds: estimate outside bounds");
    }
}

CityMap HeightBounds::estimate_map() const
{
    CityMap out = grid;
    for (int ix = 0; ix < grid.nx(); ++ix) {
        for (int iy = 0; iy < grid.ny(); ++iy) {
            out.set_height(ix, iy, estimate[grid.index(ix, iy)]);
        }
    }
    return out;
}

CityMap HeightBounds::upper_map(double cap) const
{
    CityMap out = grid;
    for (int ix = 0; ix < grid.nx(); ++ix) {
        for (int iy = 0; iy < grid.ny(); ++iy) {
            out.set_height(ix, iy, std::min(upper[grid.index(ix, iy)], cap));
        }
    }
    return out;
}

HeightBounds infer_bounds(const LabeledDataset& labeled, const NodeIndex& nodes, const CityMap& geometry,
                          const BoundsOptions& options)
{
    require(options.robust_rank >= 1, "infer_bounds: robust_rank must be >= 1");
    require(options.hmax_prior > 0.0, "infer_bounds: hmax_prior must be positive");
    require(labeled.labels.size() == labeled.measurements.size(), "infer_bounds: labels/measurements size mismatch");

    HeightBounds b;
    b.grid = grid_geometry(geometry);
    const std::size_t cells = b.grid.heights().size();
    const auto r = static_cast<std::size_t>(options.robust_rank);
    b.lower.assign(cells, 0.0);
    b.upper.assign(cells, kInf);
    b.ray_count.assign(cells, 0);

    // r smallest constraints per cell, kept sorted.
    std::vector<std::vector<double>> smallest(cells);
    for (std::size_t i = 0; i < labeled.measurements.size(); ++i) {
        if (labeled.labels[i] != 1) {
            continue;
        }
        const auto& m = labeled.measurements[i];
        for_each_constraint(b.grid, m.uav, nodes.at(m.node_id).position, [&](std::size_t c, double z) {
            ++b.ray_count[c];
            auto& keep = smallest[c];
            if (keep.size() < r) {
                keep.insert(std::upper_bound(keep.begin(), keep.end(), z), z);
            } else if (z < keep.back()) {
                keep.pop_back();
                keep.insert(std::upper_bound(keep.begin(), keep.end(), z), z);
            }
        });
    }
    for (std::size_t c = 0; c < cells; ++c) {
        if (smallest[c].size() == r) {
            b.upper[c] = std::max(0.0, smallest[c].back());
        }
    }

    b.estimate.resize(cells);
    for (std::size_t c = 0; c < cells; ++c) {
        b.estimate[c] = midpoint_estimate(b.lower[c], b.upper[c], options.hmax_prior);
    }

    if (options.nlos == NlosPolicy::RaiseHighest) {
        // Cells are chosen against the LoS-only estimate so the result does not
        // depend on link order.
        const auto los_only = b.estimate;
        for (std::size_t i = 0; i < labeled.measurements.size(); ++i) {
            if (labeled.labels[i] == 1) {
                continue;
            }
            const auto& m = labeled.measurements[i];
            std::size_t best = cells;
            double best_z = 0.0;
            for_each_constraint(b.grid, m.uav, nodes.at(m.node_id).position, [&](std::size_t c, double z) {
                if (best == cells || los_only[c] > los_only[best] || (los_only[c] == los_only[best] && c < best)) {
                    best = c;
                    best_z = z;
                }
            });
            if (best != cells) {
                b.lower[best] = std::max(b.lower[best], std::min(best_z, b.upper[best]));
            }
        }
        for (std::size_t c = 0; c < cells; ++c) {
            b.estimate[c] = midpoint_estimate(b.lower[c], b.upper[c], options.hmax_prior);
        }
    }
    if (options.nlos == NlosPolicy::SoleBlocker) {
        for (std::size_t i = 0; i < labeled.measurements.size(); ++i) {
            if (labeled.labels[i] == 1) {
                continue;
            }
            const auto& m = labeled.measurements[i];
            std::size_t only = cells;
            double only_z = 0.0;
            int candidates = 0;
            for_each_constraint(b.grid, m.uav, nodes.at(m.node_id).position, [&](std::size_t c, double z) {
                if (b.upper[c] > z) {
                    ++candidates;
                    only = c;
                    only_z = z;
                }
            });
            if (candidates == 1) {
                b.lower[only] = std::max(b.lower[only], only_z);
            }
        }
        for (std::size_t c = 0; c < cells; ++c) {
            b.estimate[c] = midpoint_estimate(b.lower[c], b.upper[c], options.hmax_prior);
        }
    }
    return b;
}

SegmentPredictor bounds_segment_predictor(const HeightBounds& bounds)
{
    auto surface = std::make_shared<const CityMap>(bounds.estimate_map());
    return [surface](const Pose3& uav, const GroundNode& node) {
        return line_of_sight(*surface, uav, node.position) ? 1 : 2;
    };
}

SegmentPredictor fused_segment_predictor(const HeightBounds& bounds, const LabeledDataset& labeled, double cap)
{
    auto upper = std::make_shared<const CityMap>(bounds.upper_map(cap));
    auto estimate = std::make_shared<const CityMap>(bounds.estimate_map());
    auto nearest = nearest_label_predictor(labeled, 1);
    return [upper, estimate, nearest](const Pose3& uav, const GroundNode& node) {
        if (line_of_sight(*upper, uav, node.position)) {
            return 1;
        }
        return nearest(uav, node) == 1 && line_of_sight(*estimate, uav, node.position) ? 1 : 2;
    };
}

JointResult joint_refine(std::span<const Measurement> measurements, const NodeIndex& nodes,
                         const CityMap& geometry, const SegmentedModel& radio, const JointOptions& options)
{
    require(options.outer_iters >= 1, "joint_refine: outer_iters must be >= 1");
    require(options.fit.K == 2, "joint_refine: LoS/NLoS semantics need K = 2");
    require(options.prior_confidence >= 0.5 && options.prior_confidence < 1.0,
            "joint_refine: prior_confidence must be in [0.5, 1)");
    require(options.max_nll_increase >= 0.0, "joint_refine: max_nll_increase must be >= 0");

    const std::size_t n = measurements.size();
    const bool has_truth = std::all_of(measurements.begin(), measurements.end(),
                                       [](const Measurement& m) { return m.true_segment.has_value(); });
    const double agree = std::log(options.prior_confidence);
    const double disagree = std::log1p(-options.prior_confidence);

    JointResult out;
    FitOptions fit_opt = options.fit;
    std::vector<int> previous;
    auto steer = [&](const HeightBounds& bounds) {
        const CityMap surface = bounds.estimate_map();
        fit_opt.log_prior.assign(n * 2, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto& m = measurements[i];
            const bool los = line_of_sight(surface, m.uav, nodes.at(m.node_id).position);
            fit_opt.log_prior[i * 2 + 0] = los ? agree : disagree;
            fit_opt.log_prior[i * 2 + 1] = los ? disagree : agree;
        }
        fit_opt.init = InitPolicy::Given;
        fit_opt.initial_labels = previous;
        fit_opt.multi_start = false;
    };
    if (options.fit.init == InitPolicy::Given) {
        LabeledDataset start{std::vector<Measurement>(measurements.begin(), measurements.end()),
                             options.fit.initial_labels};
        start.validate(2);
        previous = start.labels;
        steer(infer_bounds(start, nodes, geometry, options.bounds));
    }

    for (int it = 0; it < options.outer_iters; ++it) {
        auto fit = fit_segmented_model(measurements, nodes, radio, fit_opt);
        JointIteration rec;
        for (std::size_t i = 0; i < n; ++i) {
            const auto& m = measurements[i];
            rec.data_nll += segment_nll(fit.model, fit.labeled.labels[i], m.rssi,
                                        distance(m.uav, nodes.at(m.node_id).position));
        }
        rec.label_accuracy = has_truth ? label_accuracy(fit.labeled) : 0.0;
        rec.label_changes = static_cast<int>(n);
        if (!previous.empty()) {
            rec.label_changes = 0;
            for (std::size_t i = 0; i < n; ++i) {
                rec.label_changes += previous[i] != fit.labeled.labels[i];
            }
        }
        if (!out.trace.empty()) {
            double best = out.trace.front().data_nll;
            for (const auto& t : out.trace) {
                best = t.rejected ? best : std::min(best, t.data_nll);
            }
            if (rec.data_nll - best > options.max_nll_increase * std::abs(best)) {
                rec.rejected = true;
                out.trace.push_back(rec);
                break;
            }
        }
        out.trace.push_back(rec);

        out.model = fit.model;
        out.labeled = std::move(fit.labeled);
        out.bounds = infer_bounds(out.labeled, nodes, geometry, options.bounds);
        if (!previous.empty() && rec.label_changes == 0) {
            out.converged = true;
            break;
        }
        ++out.iterations;
        previous = out.labeled.labels;
        steer(out.bounds);
    }
    return out;
}

} // namespace uavnet
