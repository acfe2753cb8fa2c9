// Command-line front end: one subcommand per harness command plus `compare`.

#include <CLI11.hpp>
#include <iostream>

#include "rmfg/errors.hpp"
#include "rmfg/harness.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Reflected mean field games: MFG, master equation and N-player Nash solvers"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::string out;
    std::uint64_t seed = 0;
    std::size_t jobs = 0;
    bool expensive = false;
    app.add_option("--config", config_path, "JSON run config; omitted means all defaults");
    app.add_option("--out", out, "output directory (overrides output.directory)");
    app.add_option("--seed", seed, "RNG seed (overrides experiment.seed)");
    app.add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
    app.add_flag("--expensive", expensive, "enable coarse N = 4 and the full D_mU kernel");

    const std::vector<std::pair<std::string, std::string>> commands{
        {"solve-mfg", "solve the MFG system from t0 and write u, m"},
        {"solve-nash", "solve the N-player Nash system for each N in N_list"},
        {"eval-master", "evaluate U(t0, ., m0), and with --expensive the D_mU kernel"},
        {"simulate", "simulate coupled Nash and mean-field particle systems"},
        {"converge", "run every convergence experiment and write report.json"},
        {"check", "run the fast invariant suite"},
    };
    for (const auto& [name, help] : commands) app.add_subcommand(name, help);

    auto* compare = app.add_subcommand("compare", "compare a run directory against a golden directory");
    std::string run_dir, golden_dir;
    double rtol = 1e-9;
    compare->add_option("run_dir", run_dir)->required();
    compare->add_option("golden_dir", golden_dir)->required();
    compare->add_option("--rtol", rtol, "relative tolerance for deterministic values");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : rmfg::exit_config;
    }

    if (compare->parsed()) {
        try {
            const auto report = rmfg::golden_compare(run_dir, golden_dir, rtol);
            for (const auto& f : report.failures) std::cout << "FAIL " << f << '\n';
            std::cout << (report.pass ? "PASS" : "FAIL") << ": " << report.compared_values << " values compared, "
                      << report.failures.size() << " failures\n";
            return report.pass ? rmfg::exit_ok : rmfg::exit_invariant;
        } catch (const rmfg::InvalidArgument& e) {
            std::cerr << e.what() << '\n';
            return rmfg::exit_config;
        }
    }

    rmfg::RunOverrides overrides;
    if (app.count("--out")) overrides.output_dir = out;
    if (app.count("--seed")) overrides.seed = seed;
    if (app.count("--jobs")) overrides.jobs = jobs;
    overrides.expensive = expensive;

    const std::string command = app.get_subcommands().front()->get_name();
    if (config_path.empty()) return rmfg::run_command(command, rmfg::RunConfig{}, overrides, std::cerr);
    return rmfg::run_command(command, std::filesystem::path(config_path), overrides, std::cerr);
}
