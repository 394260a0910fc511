#pragma once

// Synthetic city, LoS ray tracing over a height raster, the segmented
// air-to-ground channel, and link/relay rates.

#include "uavnet/core.hpp"

#include <algorithm>
#include <limits>
#include <optional>
#include <span>
#include <vector>

namespace uavnet {

struct CellIndex {
    int ix = 0;
    int iy = 0;
    friend bool operator==(const CellIndex&, const CellIndex&) = default;
};

/// Raster of building heights. Cell (ix, iy) covers
/// [origin_x + ix*cell_size, origin_x + (ix+1)*cell_size) and likewise in y.
class CityMap {
public:
    CityMap() = default;
    CityMap(int nx, int ny, double cell_size, double origin_x = 0.0, double origin_y = 0.0);

    int nx() const { return nx_; }
    int ny() const { return ny_; }
    double cell_size() const { return cell_size_; }
    double origin_x() const { return origin_x_; }
    double origin_y() const { return origin_y_; }
    double max_x() const { return origin_x_ + nx_ * cell_size_; }
    double max_y() const { return origin_y_ + ny_ * cell_size_; }

    double height(int ix, int iy) const { return heights_[index(ix, iy)]; }
    double height(CellIndex c) const { return height(c.ix, c.iy); }
    void set_height(int ix, int iy, double h);

    /// Row-major storage, row = ix.
    const std::vector<double>& heights() const { return heights_; }
    std::size_t index(int ix, int iy) const { return static_cast<std::size_t>(ix) * ny_ + iy; }

    bool contains(double x, double y) const;
    bool contains(const Pose3& p) const { return contains(p.x, p.y); }
    /// Cell holding (x, y); points on the far edge map to the last cell.
    CellIndex cell_of(double x, double y) const;
    Pose3 cell_center(int ix, int iy, double z = 0.0) const;
    /// Height of the cell under p.
    double height_at(const Pose3& p) const { return height(cell_of(p.x, p.y)); }
    double max_height() const;

    /// Raises every cell whose center lies inside the box to `h`.
    void add_box(double xmin, double xmax, double ymin, double ymax, double h);

    void validate() const;

private:
    int nx_ = 1;
    int ny_ = 1;
    double cell_size_ = 1.0;
    double origin_x_ = 0.0;
    double origin_y_ = 0.0;
    std::vector<double> heights_ = std::vector<double>(1, 0.0);
};

/// Footprint in inclusive cell coordinates.
struct Footprint {
    int ix0 = 0;
    int iy0 = 0;
    int ix1 = 0;
    int iy1 = 0;
    double height = 0.0;
};

struct CitySpec {
    int nx = 100;
    int ny = 100;
    double cell_size = 5.0;
    double origin_x = 0.0;
    double origin_y = 0.0;
    /// Target fraction of built cells.
    double density = 0.3;
    double hmin = 10.0;
    double hmax = 40.0;
    int min_side = 2;
    int max_side = 8;
    /// Free cells kept between random buildings so each stays a separate box.
    int gap = 1;
    /// Open-ground cells kept free of random buildings along the map edges.
    int border = 0;
    int max_attempts = 200000;
    std::vector<Footprint> footprints;

    void validate() const;
};

/// Random axis-aligned rectangular buildings until the built fraction reaches
/// `density`, then explicit footprints on top. Heights are rounded to 1 cm.
CityMap generate_city(std::uint64_t seed, const CitySpec& spec);

/// Crossing intervals shorter than this (in ray parameter) touch a cell only
/// at a corner and never block.
inline constexpr double kMinInterval = 1e-12;

/// Calls f(cell, t0, t1) for every cell crossed by the ground projection of
/// a->b, where [t0, t1] is the parameter interval of the segment inside the cell.
template <typename F>
void for_each_crossed_cell(const CityMap& map, const Pose3& a, const Pose3& b, F&& f);

bool line_of_sight(const CityMap& map, const Pose3& a, const Pose3& b);

/// Ground-projected length (m) of the part of a->b that passes below roof level.
double blocked_length(const CityMap& map, const Pose3& a, const Pose3& b);

/// Axis-aligned flight area; unbounded by default.
struct FlightArea {
    double x0 = -std::numeric_limits<double>::infinity();
    double y0 = -std::numeric_limits<double>::infinity();
    double x1 = std::numeric_limits<double>::infinity();
    double y1 = std::numeric_limits<double>::infinity();

    bool contains(const Pose3& p) const { return p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1; }
};

/// The map footprint shrunk by `margin` meters.
FlightArea area_of(const CityMap& map, double margin = 1e-6);

struct GlobalLosParams {
    double slope = 0.1;      // per degree
    double midpoint = 20.0;  // degrees

    void validate() const;
};

struct SegmentParams {
    double alpha = 2.0;   // pathloss exponent
    double beta = -40.0;  // intercept at 1 m, dB
    double sigma = 2.0;   // shadowing std, dB
};

struct SegmentedModel {
    std::vector<SegmentParams> segments{{2.2, -40.0, 2.0}, {3.6, -45.0, 6.0}};
    double tx_power = 20.0;      // dBm
    double noise_floor = -90.0;  // dBm
    double bandwidth = 1.0e6;    // Hz

    int K() const { return static_cast<int>(segments.size()); }
    /// 1-based segment access.
    const SegmentParams& segment(int s) const;
    void validate() const;
};

/// Blocked-length thresholds for K > 2: s = 1 + #{i : blocked > thresholds[i]}.
/// Empty means thresholds[i] = 20 m * i.
struct SegmentRule {
    std::vector<double> thresholds;

    double threshold(int i) const;
};

int classify_segment(const CityMap& map, const Pose3& uav, const GroundNode& node, int K,
                     const SegmentRule& rule = {});

/// Degrees, in [-90, 90].
double elevation_angle(const Pose3& uav, const GroundNode& node);
double elevation_angle(const Pose3& uav, const Pose3& node);

double global_plos(const GlobalLosParams& params, double theta_deg);

double rssi_mean(const SegmentedModel& model, int s, double d);

struct Measurement {
    Pose3 uav;
    int node_id = 0;
    double rssi = 0.0;
    /// Simulation ground truth only.
    std::optional<int> true_segment;
};

Measurement sample_rssi(Rng& rng, const SegmentedModel& model, const CityMap& map, const Pose3& uav,
                        const GroundNode& node, const SegmentRule& rule = {});
Measurement sample_rssi(std::uint64_t seed, const SegmentedModel& model, const CityMap& map,
                        const Pose3& uav, const GroundNode& node, const SegmentRule& rule = {});

/// Shannon rate in bit/s at the given received power.
double link_rate(const SegmentedModel& model, double rssi);
/// d rate / d rssi.
double link_rate_slope(const SegmentedModel& model, double rssi);

/// Decode-and-forward end-to-end rate.
double relay_rate(double rate_bs_uav, double rate_uav_user);

/// Nodes at uniformly random positions on open ground (height-0 cells),
/// ids first_id, first_id+1, ...
std::vector<GroundNode> random_ground_nodes(const CityMap& map, int count, std::uint64_t seed, int first_id = 0,
                                            double margin = 0.0);

/// Uniform UAV positions at a fixed altitude.
std::vector<Pose3> random_uav_poses(const CityMap& map, int count, double altitude, std::uint64_t seed,
                                    double margin = 0.0);

/// One measurement per (pose, node) pair, pose-major order.
std::vector<Measurement> simulate_campaign(const SegmentedModel& model, const CityMap& map,
                                           std::span<const Pose3> poses, std::span<const GroundNode> nodes,
                                           std::uint64_t seed, const SegmentRule& rule = {});

// ---------------------------------------------------------------------------

template <typename F>
void for_each_crossed_cell(const CityMap& map, const Pose3& a, const Pose3& b, F&& f)
{
    const double dx = b.x - a.x;
    const double dy = b.y - a.y;
    const CellIndex start = map.cell_of(a.x, a.y);
    const CellIndex end = map.cell_of(b.x, b.y);
    if (start == end) {
        f(start, 0.0, 1.0);
        return;
    }

    const double cs = map.cell_size();
    int ix = start.ix;
    int iy = start.iy;
    const int step_x = dx > 0 ? 1 : (dx < 0 ? -1 : 0);
    const int step_y = dy > 0 ? 1 : (dy < 0 ? -1 : 0);
    const double inf = std::numeric_limits<double>::infinity();

    auto boundary_t = [](double origin, double cs_, int i, int step, double p, double dp) {
        if (step == 0) {
            return std::numeric_limits<double>::infinity();
        }
        const double edge = origin + (step > 0 ? (i + 1) : i) * cs_;
        return (edge - p) / dp;
    };
    double t_max_x = boundary_t(map.origin_x(), cs, ix, step_x, a.x, dx);
    double t_max_y = boundary_t(map.origin_y(), cs, iy, step_y, a.y, dy);
    const double t_delta_x = step_x != 0 ? cs / std::abs(dx) : inf;
    const double t_delta_y = step_y != 0 ? cs / std::abs(dy) : inf;

    double t_prev = 0.0;
    // Each iteration advances at least one index, so the bound is the Manhattan distance.
    const int max_steps = std::abs(end.ix - start.ix) + std::abs(end.iy - start.iy) + 2;
    for (int n = 0; n <= max_steps; ++n) {
        const bool at_end = ix == end.ix && iy == end.iy;
        const double t_next = at_end ? 1.0 : std::min({t_max_x, t_max_y, 1.0});
        f(CellIndex{ix, iy}, t_prev, t_next);
        if (t_next >= 1.0) {
            return;
        }
        const bool adv_x = t_max_x <= t_max_y;
        const bool adv_y = t_max_y <= t_max_x;
        if (adv_x) {
            ix += step_x;
            t_max_x += t_delta_x;
        }
        if (adv_y) {
            iy += step_y;
            t_max_y += t_delta_y;
        }
        if (ix < 0 || iy < 0 || ix >= map.nx() || iy >= map.ny()) {
            return;
        }
        t_prev = t_next;
    }
}

} // namespace uavnet
