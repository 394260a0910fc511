#include "uavnet/world.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace uavnet {

namespace {

constexpr double kBoundsTol = 1e-9;

double round_cm(double h) { return std::round(h * 100.0) / 100.0; }

void require_in_bounds(const CityMap& map, const Pose3& p, const char* which)
{
    if (!map.contains(p)) {
        std::ostringstream os;
        os << which << " endpoint (" << p.x << ", " << p.y << ") outside map bounds";
        throw ValidationError(os.str());
    }
}

// Whether cell c may block the a->b link. An endpoint standing below the roof
// of its own cell does not block itself.
bool cell_can_block(const CityMap& map, CellIndex c, const Pose3& a, CellIndex ca, const Pose3& b,
                    CellIndex cb)
{
    const double h = map.height(c);
    if (h <= 0.0) {
        return false;
    }
    if (c == ca && a.z < h) {
        return false;
    }
    if (c == cb && b.z < h) {
        return false;
    }
    return true;
}

} // namespace

CityMap::CityMap(int nx, int ny, double cell_size, double origin_x, double origin_y)
    : nx_(nx), ny_(ny), cell_size_(cell_size), origin_x_(origin_x), origin_y_(origin_y)
{
    require(nx >= 1 && ny >= 1, "CityMap requires nx, ny >= 1");
    require(cell_size > 0.0 && std::isfinite(cell_size), "CityMap requires cell_size > 0");
    heights_.assign(static_cast<std::size_t>(nx) * ny, 0.0);
}

void CityMap::set_height(int ix, int iy, double h)
{
    require(ix >= 0 && iy >= 0 && ix < nx_ && iy < ny_, "cell index out of range");
    require(std::isfinite(h) && h >= 0.0, "building heights must be finite and >= 0");
    heights_[index(ix, iy)] = h;
}

bool CityMap::contains(double x, double y) const
{
    return x >= origin_x_ - kBoundsTol && x <= max_x() + kBoundsTol && y >= origin_y_ - kBoundsTol &&
           y <= max_y() + kBoundsTol;
}

CellIndex CityMap::cell_of(double x, double y) const
{
    const int ix = static_cast<int>(std::floor((x - origin_x_) / cell_size_));
    const int iy = static_cast<int>(std::floor((y - origin_y_) / cell_size_));
    return {std::clamp(ix, 0, nx_ - 1), std::clamp(iy, 0, ny_ - 1)};
}

Pose3 CityMap::cell_center(int ix, int iy, double z) const
{
    return {origin_x_ + (ix + 0.5) * cell_size_, origin_y_ + (iy + 0.5) * cell_size_, z};
}

double CityMap::max_height() const { return *std::max_element(heights_.begin(), heights_.end()); }

void CityMap::add_box(double xmin, double xmax, double ymin, double ymax, double h)
{
    for (int ix = 0; ix < nx_; ++ix) {
        for (int iy = 0; iy < ny_; ++iy) {
            const Pose3 c = cell_center(ix, iy);
            if (c.x >= xmin && c.x <= xmax && c.y >= ymin && c.y <= ymax) {
                set_height(ix, iy, h);
            }
        }
    }
}

void CityMap::validate() const
{
    require(nx_ >= 1 && ny_ >= 1, "CityMap requires nx, ny >= 1");
    require(cell_size_ > 0.0, "CityMap requires cell_size > 0");
    require(heights_.size() == static_cast<std::size_t>(nx_) * ny_, "height matrix size mismatch");
    for (double h : heights_) {
        require(std::isfinite(h) && h >= 0.0, "building heights must be finite and >= 0");
    }
}

void CitySpec::validate() const
{
    require(nx >= 1 && ny >= 1, "city spec: nx, ny must be >= 1");
    require(cell_size > 0.0, "city spec: cell_size must be > 0");
    require(density >= 0.0 && density <= 1.0, "city spec: density must be in [0, 1]");
    require(hmin >= 0.0 && hmin <= hmax, "city spec: need 0 <= hmin <= hmax");
    require(min_side >= 1 && min_side <= max_side, "city spec: need 1 <= min_side <= max_side");
    require(gap >= 0, "city spec: gap must be >= 0");
    require(border >= 0, "city spec: border must be >= 0");
    for (const auto& fp : footprints) {
        require(fp.ix0 <= fp.ix1 && fp.iy0 <= fp.iy1, "city spec: footprint corners out of order");
        require(fp.ix0 >= 0 && fp.iy0 >= 0 && fp.ix1 < nx && fp.iy1 < ny,
                "city spec: footprint outside the grid");
        require(std::isfinite(fp.height) && fp.height >= 0.0, "city spec: footprint height must be >= 0");
    }
}

CityMap generate_city(std::uint64_t seed, const CitySpec& spec)
{
    spec.validate();
    CityMap map(spec.nx, spec.ny, spec.cell_size, spec.origin_x, spec.origin_y);
    Rng rng(seed);

    const std::size_t total = static_cast<std::size_t>(spec.nx) * spec.ny;
    const auto target = static_cast<std::size_t>(std::llround(spec.density * static_cast<double>(total)));
    // Occupancy including the keep-out ring around each building.
    std::vector<char> reserved(total, 0);
    for (int ix = 0; ix < spec.nx; ++ix) {
        for (int iy = 0; iy < spec.ny; ++iy) {
            const int edge = std::min({ix, iy, spec.nx - 1 - ix, spec.ny - 1 - iy});
            reserved[map.index(ix, iy)] = edge < spec.border;
        }
    }
    std::size_t built = 0;

    std::uniform_int_distribution<int> side(spec.min_side, spec.max_side);
    std::uniform_real_distribution<double> height(spec.hmin, spec.hmax);

    for (int attempt = 0; attempt < spec.max_attempts && built < target; ++attempt) {
        const int w = std::min(side(rng), spec.nx);
        const int h = std::min(side(rng), spec.ny);
        const int ix0 = std::uniform_int_distribution<int>(0, spec.nx - w)(rng);
        const int iy0 = std::uniform_int_distribution<int>(0, spec.ny - h)(rng);
        const double bh = round_cm(height(rng));

        bool free = true;
        for (int ix = ix0; ix < ix0 + w && free; ++ix) {
            for (int iy = iy0; iy < iy0 + h; ++iy) {
                if (reserved[map.index(ix, iy)]) {
                    free = false;
                    break;
                }
            }
        }
        if (!free) {
            continue;
        }
        for (int ix = std::max(0, ix0 - spec.gap); ix < std::min(spec.nx, ix0 + w + spec.gap); ++ix) {
            for (int iy = std::max(0, iy0 - spec.gap); iy < std::min(spec.ny, iy0 + h + spec.gap); ++iy) {
                reserved[map.index(ix, iy)] = 1;
            }
        }
        if (bh > 0.0) {
            for (int ix = ix0; ix < ix0 + w; ++ix) {
                for (int iy = iy0; iy < iy0 + h; ++iy) {
                    map.set_height(ix, iy, bh);
                }
            }
        }
        built += static_cast<std::size_t>(w) * h;
    }

    for (const auto& fp : spec.footprints) {
        for (int ix = fp.ix0; ix <= fp.ix1; ++ix) {
            for (int iy = fp.iy0; iy <= fp.iy1; ++iy) {
                map.set_height(ix, iy, round_cm(fp.height));
            }
        }
    }
    return map;
}

bool line_of_sight(const CityMap& map, const Pose3& a, const Pose3& b)
{
    require_in_bounds(map, a, "first");
    require_in_bounds(map, b, "second");
    const CellIndex ca = map.cell_of(a.x, a.y);
    const CellIndex cb = map.cell_of(b.x, b.y);
    bool clear = true;
    for_each_crossed_cell(map, a, b, [&](CellIndex c, double t0, double t1) {
        if (!clear || t1 - t0 < kMinInterval || !cell_can_block(map, c, a, ca, b, cb)) {
            return;
        }
        const double z0 = a.z + (b.z - a.z) * t0;
        const double z1 = a.z + (b.z - a.z) * t1;
        if (std::min(z0, z1) < map.height(c)) {
            clear = false;
        }
    });
    return clear;
}

double blocked_length(const CityMap& map, const Pose3& a, const Pose3& b)
{
    require_in_bounds(map, a, "first");
    require_in_bounds(map, b, "second");
    const CellIndex ca = map.cell_of(a.x, a.y);
    const CellIndex cb = map.cell_of(b.x, b.y);
    const double ground_len = horizontal_distance(a, b);
    double blocked_t = 0.0;
    for_each_crossed_cell(map, a, b, [&](CellIndex c, double t0, double t1) {
        if (t1 - t0 < kMinInterval || !cell_can_block(map, c, a, ca, b, cb)) {
            return;
        }
        const double h = map.height(c);
        const double dz = b.z - a.z;
        const double z0 = a.z + dz * t0;
        const double z1 = a.z + dz * t1;
        if (z0 >= h && z1 >= h) {
            return;
        }
        if (z0 < h && z1 < h) {
            blocked_t += t1 - t0;
            return;
        }
        // Exactly one end is below the roof; the crossing is where z(t) = h.
        const double tc = (h - a.z) / dz;
        blocked_t += z0 < h ? tc - t0 : t1 - tc;
    });
    return blocked_t * ground_len;
}

void GlobalLosParams::validate() const
{
    require(std::isfinite(slope) && slope > 0.0, "LoS slope must be > 0");
    require(std::isfinite(midpoint), "LoS midpoint must be finite");
}

const SegmentParams& SegmentedModel::segment(int s) const
{
    if (s < 1 || s > K()) {
        throw ValidationError("segment index " + std::to_string(s) + " outside 1.." + std::to_string(K()));
    }
    return segments[static_cast<std::size_t>(s - 1)];
}

void SegmentedModel::validate() const
{
    require(!segments.empty(), "segmented model needs at least one segment");
    for (std::size_t i = 0; i < segments.size(); ++i) {
        const auto& p = segments[i];
        require(std::isfinite(p.alpha) && std::isfinite(p.beta), "segment parameters must be finite");
        require(std::isfinite(p.sigma) && p.sigma > 0.0, "segment sigma must be > 0");
        if (i > 0) {
            require(segments[i - 1].alpha <= p.alpha, "segment exponents must be nondecreasing");
        }
    }
    require(std::isfinite(tx_power) && std::isfinite(noise_floor), "power levels must be finite");
    require(std::isfinite(bandwidth) && bandwidth > 0.0, "bandwidth must be > 0");
}

double SegmentRule::threshold(int i) const
{
    if (static_cast<std::size_t>(i) < thresholds.size()) {
        return thresholds[static_cast<std::size_t>(i)];
    }
    return 20.0 * i;
}

int classify_segment(const CityMap& map, const Pose3& uav, const GroundNode& node, int K,
                     const SegmentRule& rule)
{
    require(K >= 2, "segment classification needs K >= 2");
    if (K == 2) {
        return line_of_sight(map, uav, node.position) ? 1 : 2;
    }
    const double blocked = blocked_length(map, uav, node.position);
    int s = 1;
    for (int i = 0; i < K - 1; ++i) {
        if (blocked > rule.threshold(i)) {
            ++s;
        }
    }
    return s;
}

double elevation_angle(const Pose3& uav, const Pose3& node)
{
    const double dz = uav.z - node.z;
    const double h = horizontal_distance(uav, node);
    if (h == 0.0 && dz == 0.0) {
        throw ValidationError("elevation angle undefined for coincident positions");
    }
    return std::atan2(dz, h) * kRadToDeg;
}

double elevation_angle(const Pose3& uav, const GroundNode& node) { return elevation_angle(uav, node.position); }

double global_plos(const GlobalLosParams& params, double theta_deg)
{
    return 1.0 / (1.0 + std::exp(-params.slope * (theta_deg - params.midpoint)));
}

double rssi_mean(const SegmentedModel& model, int s, double d)
{
    if (!(d > 0.0)) {
        throw ValidationError("rssi_mean requires a positive distance");
    }
    const auto& p = model.segment(s);
    return model.tx_power + p.beta - 10.0 * p.alpha * std::log10(d);
}

Measurement sample_rssi(Rng& rng, const SegmentedModel& model, const CityMap& map, const Pose3& uav,
                        const GroundNode& node, const SegmentRule& rule)
{
    const int s = model.K() >= 2 ? classify_segment(map, uav, node, model.K(), rule) : 1;
    const double mean = rssi_mean(model, s, distance(uav, node.position));
    const double sigma = model.segment(s).sigma;
    double rssi = mean;
    if (sigma > 0.0) {
        rssi += std::normal_distribution<double>(0.0, sigma)(rng);
    }
    return Measurement{uav, node.id, rssi, s};
}

Measurement sample_rssi(std::uint64_t seed, const SegmentedModel& model, const CityMap& map,
                        const Pose3& uav, const GroundNode& node, const SegmentRule& rule)
{
    Rng rng(seed);
    return sample_rssi(rng, model, map, uav, node, rule);
}

double link_rate(const SegmentedModel& model, double rssi)
{
    const double snr = std::pow(10.0, (rssi - model.noise_floor) / 10.0);
    return model.bandwidth * std::log2(1.0 + snr);
}

double link_rate_slope(const SegmentedModel& model, double rssi)
{
    const double snr = std::pow(10.0, (rssi - model.noise_floor) / 10.0);
    return model.bandwidth / std::log(2.0) * (snr * std::log(10.0) / 10.0) / (1.0 + snr);
}

double relay_rate(double rate_bs_uav, double rate_uav_user) { return std::min(rate_bs_uav, rate_uav_user); }

std::vector<GroundNode> random_ground_nodes(const CityMap& map, int count, std::uint64_t seed, int first_id,
                                            double margin)
{
    require(count >= 0, "node count must be >= 0");
    Rng rng(seed);
    std::uniform_real_distribution<double> ux(map.origin_x() + margin, map.max_x() - margin);
    std::uniform_real_distribution<double> uy(map.origin_y() + margin, map.max_y() - margin);
    std::vector<GroundNode> nodes;
    const int max_draws = 1000 * std::max(count, 1);
    for (int draw = 0; static_cast<int>(nodes.size()) < count; ++draw) {
        if (draw >= max_draws) {
            throw ValidationError("could not place nodes: not enough open ground");
        }
        const Pose3 p{ux(rng), uy(rng), kDefaultNodeHeight};
        if (map.height_at(p) > 0.0) {
            continue;
        }
        nodes.push_back({first_id + static_cast<int>(nodes.size()), p});
    }
    return nodes;
}

std::vector<Pose3> random_uav_poses(const CityMap& map, int count, double altitude, std::uint64_t seed,
                                    double margin)
{
    Rng rng(seed);
    std::uniform_real_distribution<double> ux(map.origin_x() + margin, map.max_x() - margin);
    std::uniform_real_distribution<double> uy(map.origin_y() + margin, map.max_y() - margin);
    std::vector<Pose3> poses(static_cast<std::size_t>(std::max(count, 0)));
    for (auto& p : poses) {
        p.x = ux(rng);
        p.y = uy(rng);
        p.z = altitude;
    }
    return poses;
}

std::vector<Measurement> simulate_campaign(const SegmentedModel& model, const CityMap& map,
                                           std::span<const Pose3> poses, std::span<const GroundNode> nodes,
                                           std::uint64_t seed, const SegmentRule& rule)
{
    Rng rng(seed);
    std::vector<Measurement> out;
    out.reserve(poses.size() * nodes.size());
    for (const auto& p : poses) {
        for (const auto& n : nodes) {
            out.push_back(sample_rssi(rng, model, map, p, n, rule));
        }
    }
    return out;
}

} // namespace uavnet
