#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rmfg/convergence.hpp"

namespace rmfg {

/// A full run description. JSON sections: "model", "grid", "experiment"
/// (with nested "tolerances" and "budgets") and "output". Every key is
/// optional; unknown keys are rejected.
struct RunConfig {
    ExperimentConfig experiment;
    /// Start time of solve-mfg and eval-master.
    double t0 = 0.0;
    std::string output_dir = "out";
    std::vector<std::string> formats{"csv", "json", "binary"};
    /// U-slice cache directory; REFLECTED_MFG_CACHE takes precedence.
    std::string cache_dir;

    bool wants(const std::string& format) const;
};

/// Reads and validates a config file; throws ConfigError naming the offending field.
RunConfig parse_config(const std::filesystem::path& path);
RunConfig parse_config_text(const std::string& text);
/// Canonical JSON of the config, used in manifests and for hashing.
std::string config_json(const RunConfig& config);
std::uint64_t config_hash(const RunConfig& config);

enum ExitCode : int { exit_ok = 0, exit_config = 1, exit_numerical = 2, exit_budget = 3, exit_invariant = 4 };

struct RunOverrides {
    std::optional<std::string> output_dir;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> jobs;
    bool expensive = false;
};

inline const std::vector<std::string>& run_commands() {
    static const std::vector<std::string> names{"solve-mfg", "solve-nash", "eval-master", "simulate", "converge",
                                                "check"};
    return names;
}

/// Runs one command, writes outputs plus manifest.json into the output
/// directory and maps module errors to exit codes. Messages go to `log`.
int run_command(const std::string& command, const RunConfig& config, const RunOverrides& overrides,
                std::ostream& log);
/// Same, reading the config from a path first (missing file gives exit_config).
int run_command(const std::string& command, const std::filesystem::path& config_path,
                const RunOverrides& overrides, std::ostream& log);

struct CompareReport {
    bool pass = true;
    std::size_t compared_values = 0;
    std::vector<std::string> failures;
};

/// Field-wise comparison of every CSV, JSON and binary output of two run
/// directories. Deterministic values use relative tolerance rtol; CSV rows
/// carrying a stderr column are compared within 3 combined standard errors.
/// Wall-clock entries are ignored.
CompareReport golden_compare(const std::filesystem::path& run_dir, const std::filesystem::path& golden_dir,
                             double rtol = 1e-9);

}  // namespace rmfg
