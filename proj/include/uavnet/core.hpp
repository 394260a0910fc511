#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace uavnet {

/// Raised when an input violates a documented precondition or type invariant.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a computation cannot produce a finite result.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kRadToDeg = 180.0 / kPi;
inline constexpr double kDegToRad = kPi / 180.0;

struct Pose3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    friend bool operator==(const Pose3&, const Pose3&) = default;
};

inline double distance(const Pose3& a, const Pose3& b)
{
    return std::hypot(a.x - b.x, a.y - b.y, a.z - b.z);
}

inline double horizontal_distance(const Pose3& a, const Pose3& b)
{
    return std::hypot(a.x - b.x, a.y - b.y);
}

inline constexpr double kDefaultNodeHeight = 1.5;

struct GroundNode {
    int id = 0;
    Pose3 position{0.0, 0.0, kDefaultNodeHeight};
};

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent sub-seeds.
inline std::uint64_t mix_seed(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Sub-seed for stream `stream` of a master seed. Streams are fixed per
/// consumer so adding a new consumer never shifts an existing one.
inline std::uint64_t sub_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index = 0)
{
    return mix_seed(mix_seed(master ^ mix_seed(stream)) + index);
}

inline void require(bool cond, const std::string& what)
{
    if (!cond) {
        throw ValidationError(what);
    }
}

} // namespace uavnet
