#pragma once

// Scenario builders shared by unit and acceptance tests.

#include "uavnet/world.hpp"

#include <vector>

namespace uavnet::scenes {

/// 500 m x 500 m city, 5 m cells, 30% built, 10-40 m buildings.
inline CitySpec downtown_spec()
{
    CitySpec spec;
    spec.nx = 100;
    spec.ny = 100;
    spec.cell_size = 5.0;
    spec.density = 0.3;
    spec.hmin = 10.0;
    spec.hmax = 40.0;
    return spec;
}

struct Campaign {
    CityMap map;
    std::vector<GroundNode> nodes;
    std::vector<Pose3> poses;
    std::vector<Measurement> measurements;
};

/// Measurement campaign: `n_poses` random UAV positions at `altitude`, each
/// measuring every node.
inline Campaign campaign(std::uint64_t seed, int n_nodes, int n_poses, double altitude = 50.0,
                         const SegmentedModel& model = {}, const CitySpec& spec = downtown_spec())
{
    Campaign c;
    c.map = generate_city(sub_seed(seed, 1), spec);
    c.nodes = random_ground_nodes(c.map, n_nodes, sub_seed(seed, 2));
    c.poses = random_uav_poses(c.map, n_poses, altitude, sub_seed(seed, 3));
    c.measurements = simulate_campaign(model, c.map, c.poses, c.nodes, sub_seed(seed, 4));
    return c;
}

/// 200 m x 200 m city with a 30 m open ring and 10 m streets.
inline CitySpec survey_spec()
{
    CitySpec spec;
    spec.nx = 40;
    spec.ny = 40;
    spec.cell_size = 5.0;
    spec.density = 0.2;
    spec.min_side = 2;
    spec.max_side = 4;
    spec.gap = 2;
    spec.border = 6;
    return spec;
}

/// Dense survey: a node at every open cell center and `per_altitude` random
/// UAV positions at each of `altitudes` levels between 3 m and 103 m.
struct Survey {
    CityMap map;
    std::vector<GroundNode> nodes;
    std::vector<Measurement> links;  // rssi unused; true_segment = LoS/NLoS
};

inline Survey dense_survey(std::uint64_t seed, int per_altitude = 100, int altitudes = 10)
{
    Survey s;
    s.map = generate_city(sub_seed(seed, 1), survey_spec());
    for (int ix = 0; ix < s.map.nx(); ++ix) {
        for (int iy = 0; iy < s.map.ny(); ++iy) {
            if (s.map.height(ix, iy) == 0.0) {
                s.nodes.push_back({static_cast<int>(s.nodes.size()), s.map.cell_center(ix, iy, kDefaultNodeHeight)});
            }
        }
    }
    for (int a = 0; a < altitudes; ++a) {
        const double u = altitudes > 1 ? static_cast<double>(a) / (altitudes - 1) : 0.5;
        const double alt = 3.0 + 100.0 * u * u;
        for (const auto& p : random_uav_poses(s.map, per_altitude, alt, sub_seed(seed, 3, static_cast<std::uint64_t>(a)))) {
            for (const auto& n : s.nodes) {
                s.links.push_back({p, n.id, 0.0, line_of_sight(s.map, p, n.position) ? 1 : 2});
            }
        }
    }
    return s;
}

struct RelayScene {
    CityMap map;
    Pose3 bs;
    GroundNode user;
};

/// Downtown city with a 30 m base station and a user on open ground, both at
/// random positions.
inline RelayScene relay_scene(std::uint64_t seed)
{
    RelayScene s;
    s.map = generate_city(sub_seed(seed, 1), downtown_spec());
    const auto ends = random_ground_nodes(s.map, 2, sub_seed(seed, 2));
    s.bs = ends[0].position;
    s.bs.z = 30.0;
    s.user = ends[1];
    return s;
}

/// 1 km x 1 km city, 10 m cells: tall blocks (30-60 m) on the west half and
/// low blocks (5-15 m) on the east half, with `n_nodes` nodes on open ground.
struct HarvestScene {
    CityMap map;
    std::vector<GroundNode> nodes;
};

inline HarvestScene harvest_scene(std::uint64_t seed, int n_nodes = 6)
{
    CitySpec tall = downtown_spec();
    tall.cell_size = 10.0;
    tall.density = 0.35;
    tall.hmin = 30.0;
    tall.hmax = 60.0;
    CitySpec low = tall;
    low.density = 0.2;
    low.hmin = 5.0;
    low.hmax = 15.0;
    HarvestScene s;
    s.map = generate_city(sub_seed(seed, 1), tall);
    const auto east = generate_city(sub_seed(seed, 7), low);
    for (int ix = tall.nx / 2; ix < tall.nx; ++ix) {
        for (int iy = 0; iy < tall.ny; ++iy) {
            s.map.set_height(ix, iy, east.height(ix, iy));
        }
    }
    s.nodes = random_ground_nodes(s.map, n_nodes, sub_seed(seed, 2));
    return s;
}

} // namespace uavnet::scenes
