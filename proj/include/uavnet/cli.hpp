#pragma once

// Scenario-driven command line: one JSON config, seeded sub-streams, and
// CSV/JSON artifacts written atomically into an output directory.

#include "uavnet/world.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace uavnet {

/// Exit codes of run_cli.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalidConfig = 1;
inline constexpr int kExitRuntime = 2;

/// Seed streams derived from the master seed with sub_seed(master, stream).
/// New consumers take new numbers; existing numbers never change.
enum class SeedStream : std::uint64_t {
    City = 1,
    Nodes = 2,
    Poses = 3,
    Measurements = 4,
    Compress = 5,
    HarvestPlan = 6,
    HarvestEval = 7,
    Sensing = 8,
    Sweep = 9,
    Holdout = 10,
};

std::uint64_t stream_seed(std::uint64_t master, SeedStream stream, std::uint64_t index = 0);

const std::vector<std::string>& cli_commands();

/// The full default configuration as pretty-printed JSON.
std::string default_config_json();

/// Defaults, then the config document, then `--seed`, then each dotted
/// `key=value` override (value parsed as JSON, else taken as a string).
/// Unknown keys and type mismatches throw ValidationError.
std::string resolve_config_json(const std::string& config_text, const std::vector<std::string>& overrides = {},
                                std::optional<std::uint64_t> seed = std::nullopt);

std::string city_to_json(const CityMap& map);
CityMap city_from_json(const std::string& text);

/// argv-style entry point; args[0] is the program name. Prints a one-line
/// JSON summary to `out` and diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace uavnet
