#include "rmfg/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <ostream>
#include <set>
#include <sstream>

#include "rmfg/cache.hpp"
#include "rmfg/errors.hpp"
#include "rmfg/io.hpp"

namespace rmfg {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

constexpr const char* library_version = "1.0.0";

// One JSON object of the config with the keys it accepts.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(label() + ": expected an object");
    }

    void number(const char* key, double& target) {
        if (const json* v = take(key)) {
            if (!v->is_number()) fail(key, "expected a number");
            target = v->get<double>();
        }
    }
    template <class T>
    void count(const char* key, T& target) {
        if (const json* v = take(key)) {
            if (!v->is_number_unsigned()) fail(key, "expected a nonnegative integer");
            target = static_cast<T>(v->get<std::uint64_t>());
        }
    }
    void integer(const char* key, int& target) {
        if (const json* v = take(key)) {
            if (!v->is_number_integer()) fail(key, "expected an integer");
            target = v->get<int>();
        }
    }
    void flag(const char* key, bool& target) {
        if (const json* v = take(key)) {
            if (!v->is_boolean()) fail(key, "expected true or false");
            target = v->get<bool>();
        }
    }
    void text(const char* key, std::string& target) {
        if (const json* v = take(key)) {
            if (!v->is_string()) fail(key, "expected a string");
            target = v->get<std::string>();
        }
    }
    void counts(const char* key, std::vector<std::size_t>& target) {
        if (const json* v = take(key)) {
            if (!v->is_array()) fail(key, "expected an array of integers");
            target.clear();
            for (const auto& e : *v) {
                if (!e.is_number_unsigned()) fail(key, "expected an array of nonnegative integers");
                target.push_back(e.get<std::size_t>());
            }
        }
    }
    void texts(const char* key, std::vector<std::string>& target) {
        if (const json* v = take(key)) {
            if (!v->is_array()) fail(key, "expected an array of strings");
            target.clear();
            for (const auto& e : *v) {
                if (!e.is_string()) fail(key, "expected an array of strings");
                target.push_back(e.get<std::string>());
            }
        }
    }
    const json* raw(const char* key) { return take(key); }
    Section sub(const char* key) {
        static const json empty = json::object();
        const json* v = take(key);
        return Section(v ? *v : empty, field(key));
    }
    /// Rejects every key that no reader asked for.
    void finish() const {
        for (const auto& [k, v] : j_.items()) {
            if (!known_.count(k)) throw ConfigError(field(k) + ": unknown key \"" + k + "\"");
        }
    }
    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
    [[noreturn]] void fail(const std::string& key, const std::string& what) const {
        throw ConfigError(field(key) + ": " + what);
    }

private:
    std::string label() const { return path_.empty() ? "config" : path_; }
    const json* take(const char* key) {
        known_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    const json& j_;
    std::string path_;
    std::set<std::string> known_;
};

void read_model(Section s, ModelConfig& m) {
    s.number("domain_lo", m.domain_lo);
    s.number("domain_hi", m.domain_hi);
    s.number("horizon_T", m.horizon_T);
    {
        Section d = s.sub("diffusion");
        std::string kind = m.diffusion.kind == DiffusionSpec::Kind::constant ? "constant" : "profile";
        d.text("kind", kind);
        if (kind == "constant") {
            m.diffusion.kind = DiffusionSpec::Kind::constant;
        } else if (kind == "profile") {
            m.diffusion.kind = DiffusionSpec::Kind::profile;
        } else {
            d.fail("kind", "expected \"constant\" or \"profile\", got \"" + kind + "\"");
        }
        d.number("value", m.diffusion.value);
        d.number("amplitude", m.diffusion.amplitude);
        d.finish();
    }
    {
        Section h = s.sub("hamiltonian");
        h.number("scale", m.hamiltonian.scale);
        h.number("amplitude", m.hamiltonian.amplitude);
        h.finish();
    }
    s.number("smoothing_eps", m.smoothing_eps);
    s.integer("smoothing_steps", m.smoothing_steps);
    s.number("c_F", m.c_F);
    s.number("c_G", m.c_G);
    s.number("min_ellipticity", m.min_ellipticity);
    s.finish();
}

void read_experiment(Section s, RunConfig& c) {
    ExperimentConfig& e = c.experiment;
    s.counts("N_list", e.N_list);
    s.count("seed", e.seed);
    s.count("jobs", e.jobs);
    s.number("t0", c.t0);
    if (const json* m0 = s.raw("m0")) {
        if (m0->is_string() && m0->get<std::string>() == "uniform") {
            e.m0.clear();
        } else if (m0->is_array()) {
            e.m0.clear();
            for (const auto& w : *m0) {
                if (!w.is_number()) s.fail("m0", "expected \"uniform\" or an array of weights");
                e.m0.push_back(w.get<double>());
            }
        } else {
            s.fail("m0", "expected \"uniform\" or an array of weights");
        }
    }
    s.count("value_samples", e.value_samples);
    s.count("time_stride", e.time_stride);
    s.count("w_cells", e.w_cells);
    s.count("mc_budget", e.mc_budget);
    s.count("residual_samples", e.residual_samples);
    s.count("n_paths", e.n_paths);
    s.count("sim_steps", e.sim_steps);
    {
        Section t = s.sub("tolerances");
        t.number("picard_tol", e.mfg.tol);
        t.integer("picard_max_iter", e.mfg.max_iter);
        t.number("damping", e.mfg.damping);
        t.number("min_damping", e.mfg.min_damping);
        int depth = static_cast<int>(e.mfg.anderson_depth);
        t.integer("anderson_depth", depth);
        if (depth < 0) t.fail("anderson_depth", "must be >= 0");
        e.mfg.anderson_depth = depth;
        t.number("nash_tol", e.nash.tol);
        t.integer("nash_max_inner", e.nash.max_inner);
        t.finish();
    }
    {
        Section b = s.sub("budgets");
        b.count("memory_bytes", e.nash.memory_budget_bytes);
        b.count("coarse_cells", e.nash.coarse_cells);
        b.flag("allow_coarse", e.nash.allow_coarse);
        b.count("max_ensemble_entries", e.max_ensemble_entries);
        b.finish();
    }
    s.finish();
}

void validate(const RunConfig& c) {
    const ExperimentConfig& e = c.experiment;
    try {
        e.model.validate();
    } catch (const InvalidArgument& err) {
        throw ConfigError(std::string("model: ") + err.what());
    }
    if (e.n_cells < Grid1D::min_cells) throw ConfigError("grid.n_cells: must be at least 8");
    if (e.w_cells < Grid1D::min_cells) throw ConfigError("experiment.w_cells: must be at least 8");
    if (e.n_steps < 2) throw ConfigError("grid.n_steps: must be at least 2");
    if (e.N_list.empty()) throw ConfigError("experiment.N_list: must not be empty");
    for (std::size_t k = 0; k < e.N_list.size(); ++k) {
        const std::size_t N = e.N_list[k];
        if (N < 2 || N > 4) throw ConfigError("experiment.N_list: entries must be 2, 3 or 4, got " + std::to_string(N));
        if (k > 0 && N <= e.N_list[k - 1]) throw ConfigError("experiment.N_list: must be strictly increasing");
    }
    if (!(e.mfg.tol > 0.0)) throw ConfigError("experiment.tolerances.picard_tol: must be > 0");
    if (!(e.nash.tol > 0.0)) throw ConfigError("experiment.tolerances.nash_tol: must be > 0");
    if (e.mfg.max_iter < 1) throw ConfigError("experiment.tolerances.picard_max_iter: must be >= 1");
    if (e.nash.max_inner < 1) throw ConfigError("experiment.tolerances.nash_max_inner: must be >= 1");
    if (!(e.mfg.damping > 0.0 && e.mfg.damping <= 1.0)) {
        throw ConfigError("experiment.tolerances.damping: must lie in (0, 1]");
    }
    if (!(e.mfg.min_damping > 0.0 && e.mfg.min_damping <= e.mfg.damping)) {
        throw ConfigError("experiment.tolerances.min_damping: must lie in (0, damping]");
    }
    if (e.n_paths < 2) throw ConfigError("experiment.n_paths: must be at least 2");
    if (e.sim_steps < 1) throw ConfigError("experiment.sim_steps: must be at least 1");
    if (e.time_stride < 1) throw ConfigError("experiment.time_stride: must be at least 1");
    if (e.mc_budget < 1) throw ConfigError("experiment.mc_budget: must be at least 1");
    if (!(c.t0 >= 0.0) || !(c.t0 < e.model.horizon_T)) {
        throw ConfigError("experiment.t0: must lie in [0, horizon_T)");
    }
    for (const auto& f : c.formats) {
        if (f != "csv" && f != "json" && f != "binary") {
            throw ConfigError("output.formats: unknown format \"" + f + "\"");
        }
    }
    if (!e.m0.empty()) {
        try {
            validate_probability(e.m0, 1e-9);
        } catch (const InvariantViolation& err) {
            throw ConfigError(std::string("experiment.m0: ") + err.what());
        }
    }
}

}  // namespace

bool RunConfig::wants(const std::string& format) const {
    return std::find(formats.begin(), formats.end(), format) != formats.end();
}

RunConfig parse_config_text(const std::string& text) {
    json j;
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
        j = json::object();
    } else {
        try {
            j = json::parse(text);
        } catch (const json::parse_error& e) {
            throw ConfigError(std::string("config is not valid JSON: ") + e.what());
        }
    }
    RunConfig c;
    Section root(j, "");
    read_model(root.sub("model"), c.experiment.model);
    {
        Section g = root.sub("grid");
        g.count("n_cells", c.experiment.n_cells);
        g.count("n_steps", c.experiment.n_steps);
        g.finish();
    }
    read_experiment(root.sub("experiment"), c);
    {
        Section o = root.sub("output");
        o.text("directory", c.output_dir);
        o.texts("formats", c.formats);
        o.text("cache_dir", c.cache_dir);
        o.finish();
    }
    root.finish();
    validate(c);
    return c;
}

RunConfig parse_config(const fs::path& path) {
    if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

std::string config_json(const RunConfig& c) {
    const ExperimentConfig& e = c.experiment;
    const ModelConfig& m = e.model;
    json j;
    j["model"] = {{"domain_lo", m.domain_lo},
                  {"domain_hi", m.domain_hi},
                  {"horizon_T", m.horizon_T},
                  {"diffusion",
                   {{"kind", m.diffusion.kind == DiffusionSpec::Kind::constant ? "constant" : "profile"},
                    {"value", m.diffusion.value},
                    {"amplitude", m.diffusion.amplitude}}},
                  {"hamiltonian", {{"scale", m.hamiltonian.scale}, {"amplitude", m.hamiltonian.amplitude}}},
                  {"smoothing_eps", m.smoothing_eps},
                  {"smoothing_steps", m.smoothing_steps},
                  {"c_F", m.c_F},
                  {"c_G", m.c_G},
                  {"min_ellipticity", m.min_ellipticity}};
    j["grid"] = {{"n_cells", e.n_cells}, {"n_steps", e.n_steps}};
    json ex = {{"N_list", e.N_list},
               {"seed", e.seed},
               {"jobs", e.jobs},
               {"t0", c.t0},
               {"value_samples", e.value_samples},
               {"time_stride", e.time_stride},
               {"w_cells", e.w_cells},
               {"mc_budget", e.mc_budget},
               {"residual_samples", e.residual_samples},
               {"n_paths", e.n_paths},
               {"sim_steps", e.sim_steps}};
    if (e.m0.empty()) {
        ex["m0"] = "uniform";
    } else {
        ex["m0"] = e.m0;
    }
    ex["tolerances"] = {{"picard_tol", e.mfg.tol},
                        {"picard_max_iter", e.mfg.max_iter},
                        {"damping", e.mfg.damping},
                        {"min_damping", e.mfg.min_damping},
                        {"anderson_depth", e.mfg.anderson_depth},
                        {"nash_tol", e.nash.tol},
                        {"nash_max_inner", e.nash.max_inner}};
    ex["budgets"] = {{"memory_bytes", e.nash.memory_budget_bytes},
                     {"coarse_cells", e.nash.coarse_cells},
                     {"allow_coarse", e.nash.allow_coarse},
                     {"max_ensemble_entries", e.max_ensemble_entries}};
    j["experiment"] = ex;
    j["output"] = {{"directory", c.output_dir}, {"formats", c.formats}, {"cache_dir", c.cache_dir}};
    return j.dump(2);
}

std::uint64_t config_hash(const RunConfig& config) {
    // jobs and the output location never change results
    RunConfig canonical = config;
    canonical.experiment.jobs = 1;
    canonical.output_dir.clear();
    canonical.cache_dir.clear();
    return hash_string(config_json(canonical));
}

namespace {

std::string hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

struct Context {
    RunConfig config;
    fs::path out;
    bool expensive = false;
    std::ostream& log;
    std::vector<std::string> outputs;

    void produced(const fs::path& p) { outputs.push_back(fs::relative(p, out).generic_string()); }
};

std::size_t cells_for(const Context& ctx, std::size_t N) {
    const auto& e = ctx.config.experiment;
    return N == 4 ? std::min(e.n_cells, e.nash.coarse_cells) : e.n_cells;
}

json cmd_solve_mfg(Context& ctx) {
    const auto& e = ctx.config.experiment;
    const Model model = experiment_model(e, e.n_cells);
    const MasterEvaluator master(model, e.time(), e.mfg, e.cache);
    const auto sol = master.solve(ctx.config.t0, e.initial_measure(e.n_cells));
    for (std::size_t s = 0; s < sol->m.n_times(); ++s) validate_probability(sol->m.row(s), 1e-10);
    io::write_solution(ctx.out, *sol);
    for (const char* f : {"u.csv", "m.csv", "solution.json"}) ctx.produced(ctx.out / f);
    ctx.log << "solve-mfg: converged in " << sol->iterations_used << " iterations, gap " << sol->final_gap << '\n';
    return {{"iterations_used", sol->iterations_used}, {"final_gap", sol->final_gap}};
}

json cmd_solve_nash(Context& ctx) {
    const auto& e = ctx.config.experiment;
    json summary = json::object();
    for (std::size_t N : e.N_list) {
        const std::size_t n = cells_for(ctx, N);
        const Model model = experiment_model(e, n);
        NashOptions opt = e.nash;
        opt.jobs = e.jobs;
        const auto v = solve_nash(N, model, e.time(), opt);
        const std::string stem = "nash_N" + std::to_string(N);
        json meta = {{"N", N},
                     {"n_cells", n},
                     {"n_steps", e.n_steps},
                     {"T", e.model.horizon_T},
                     {"coarse", N == 4},
                     {"symmetry_defect", v.symmetry_defect()}};
        if (ctx.config.wants("binary")) {
            io::write_tensor_binary(ctx.out / (stem + ".bin"), v);
            ctx.produced(ctx.out / (stem + ".bin"));
        }
        if (N == 2 && ctx.config.wants("csv")) {
            io::write_tensor_slice_csv(ctx.out / (stem + "_t0.csv"), v, 0);
            ctx.produced(ctx.out / (stem + "_t0.csv"));
        }
        io::write_text(ctx.out / (stem + ".json"), meta.dump(2) + "\n");
        ctx.produced(ctx.out / (stem + ".json"));
        ctx.log << "solve-nash: N = " << N << " on " << n << " cells done\n";
        summary[std::to_string(N)] = meta;
    }
    return summary;
}

json cmd_eval_master(Context& ctx) {
    const auto& e = ctx.config.experiment;
    const Model model = experiment_model(e, e.n_cells);
    const MasterEvaluator master(model, e.time(), e.mfg, e.cache);
    const GridMeasure m0 = e.initial_measure(e.n_cells);
    const auto ev = master.eval_U(ctx.config.t0, m0);
    io::write_field_csv(ctx.out / "u_slice.csv", model.grid(), ev.u_slice);
    ctx.produced(ctx.out / "u_slice.csv");
    json summary = {{"t0", ctx.config.t0}, {"kernel", false}};
    if (ctx.expensive && ev.provenance) {
        // full D_mU kernel: one linearized solve per node
        const std::size_t n = model.grid().size();
        std::vector<double> kernel(n * n);
        for (std::size_t y = 0; y < n; ++y) {
            const Field row = master.dm_U(*ev.provenance, y);
            std::copy(row.begin(), row.end(), kernel.begin() + static_cast<std::ptrdiff_t>(y * n));
        }
        io::write_matrix_csv(ctx.out / "dm_kernel.csv", n, n, kernel);
        ctx.produced(ctx.out / "dm_kernel.csv");
        summary["kernel"] = true;
    }
    ctx.log << "eval-master: U(" << ctx.config.t0 << ", ., m0) written\n";
    return summary;
}

json cmd_simulate(Context& ctx) {
    const auto& e = ctx.config.experiment;
    std::ostringstream csv;
    csv.precision(17);
    csv << "metric,N,value,stderr\n";
    json summary = json::object();
    for (std::size_t N : e.N_list) {
        const std::size_t n = cells_for(ctx, N);
        const Model model = experiment_model(e, n);
        NashOptions opt = e.nash;
        opt.jobs = e.jobs;
        const auto v = solve_nash(N, model, e.time(), opt);
        const MasterEvaluator master(model, e.time(), e.mfg, e.cache);
        const auto u = projection_field(N, master, opt);
        SimulationOptions sim;
        sim.n_paths = e.n_paths;
        sim.n_steps = e.sim_steps;
        sim.seed = e.seed;
        sim.jobs = e.jobs;
        sim.max_entries = e.max_ensemble_entries;
        const auto ens = simulate_coupled(v, u, model, e.initial_measure(n), sim);
        const auto tg = trajectory_gap(ens);
        const auto fg = feedback_gap(ens, v, u);
        const std::string stem = "ensemble_N" + std::to_string(N);
        if (ctx.config.wants("binary")) {
            io::write_ensemble_binary(ctx.out / (stem + ".bin"), ens);
            ctx.produced(ctx.out / (stem + ".bin"));
        }
        const json meta = {{"seed", ens.seed},     {"N", N},         {"n_paths", ens.n_paths},
                           {"n_steps", ens.n_steps}, {"dt", ens.dt}, {"t0", ens.t0}};
        io::write_text(ctx.out / (stem + ".json"), meta.dump(2) + "\n");
        ctx.produced(ctx.out / (stem + ".json"));
        csv << "trajectory_gap," << N << ',' << tg.pooled.value << ',' << tg.pooled.std_error << '\n';
        csv << "feedback_gap," << N << ',' << fg.integral.value << ',' << fg.integral.std_error << '\n';
        csv << "t0_gap," << N << ',' << fg.t0_gap.value << ',' << fg.t0_gap.std_error << '\n';
        summary[std::to_string(N)] = {{"trajectory_gap", tg.pooled.value}, {"feedback_gap", fg.integral.value}};
        ctx.log << "simulate: N = " << N << ", " << ens.n_paths << " paths\n";
    }
    io::write_text(ctx.out / "summary.csv", csv.str());
    ctx.produced(ctx.out / "summary.csv");
    return summary;
}

json cmd_converge(Context& ctx) {
    ExperimentConfig e = ctx.config.experiment;
    const auto report = run_all_experiments(e);
    io::write_text(ctx.out / "report.json", report.to_json() + "\n");
    ctx.produced(ctx.out / "report.json");
    if (ctx.config.wants("csv")) {
        report.write_csv(ctx.out.string());
        for (const auto& [name, points] : report.metrics) ctx.produced(ctx.out / (name + ".csv"));
    }
    json summary = json::object();
    for (const auto& [name, fit] : report.slopes) {
        if (!fit.degenerate) summary[name + "_slope"] = fit.slope;
    }
    ctx.log << "converge: report with " << report.metrics.size() << " metrics\n";
    return summary;
}

json cmd_check(Context& ctx) {
    const auto& base = ctx.config.experiment;
    json checks = json::array();
    bool ok = true;
    auto record = [&](const std::string& name, double value, double tol) {
        const bool pass = std::isfinite(value) && value <= tol;
        ok = ok && pass;
        checks.push_back({{"name", name}, {"value", value}, {"tolerance", tol}, {"pass", pass}});
        ctx.log << (pass ? "ok   " : "FAIL ") << name << " = " << value << " (tol " << tol << ")\n";
    };

    // null-model pipeline on a small lattice
    ExperimentConfig null = base;
    null.model.c_F = 0.0;
    null.model.c_G = 0.0;
    null.model.hamiltonian.scale = 0.0;
    null.nash.allow_coarse = false;
    null.n_cells = 15;
    null.w_cells = 15;
    null.n_steps = 40;
    null.N_list = {2, 3};
    null.m0.clear();
    null.value_samples = 40;
    null.residual_samples = 10;
    null.n_paths = 200;
    null.sim_steps = 40;
    null.cache = nullptr;
    const auto report = run_all_experiments(null);
    for (const auto& [name, points] : report.metrics) {
        double worst = 0.0;
        for (const auto& p : points) worst = std::max(worst, p.value);
        record("null_" + name, worst, 1e-6);
    }
    {
        const Model model = experiment_model(null, null.n_cells);
        const auto sol = solve_mfg(GridMeasure::uniform(null.n_cells), model, null.time(), null.mfg);
        record("null_mfg_residual", sol.final_gap, 1e-6);
    }

    // mass conservation on the configured instance
    {
        const Model model = experiment_model(base, base.n_cells);
        const auto sol = solve_mfg(base.initial_measure(base.n_cells), model, base.time(), base.mfg);
        double mass = 0.0, negative = 0.0;
        for (std::size_t s = 0; s < sol.m.n_times(); ++s) {
            const auto row = sol.m.row(s);
            double total = 0.0;
            for (double w : row) {
                total += w;
                negative = std::max(negative, -w);
            }
            mass = std::max(mass, std::abs(total - 1.0));
        }
        record("mass_error", mass, 1e-10);
        record("negative_mass", negative, 0.0);
    }

    // exchangeability and reflection symmetry of the Nash tensor
    {
        ExperimentConfig small = base;
        small.n_cells = 15;
        small.n_steps = 40;
        const Model model = experiment_model(small, small.n_cells);
        const auto v3 = solve_nash(3, model, small.time(), small.nash);
        record("nash_exchangeability", v3.symmetry_defect(), 1e-10);
        const auto v2 = solve_nash(2, model, small.time(), small.nash);
        const std::size_t n = small.n_cells;
        double sym = 0.0;
        const auto s0 = v2.slice(0);
        for (std::size_t a = 0; a < n; ++a) {
            for (std::size_t b = 0; b < n; ++b) {
                sym = std::max(sym, std::abs(s0[a * n + b] - s0[(n - 1 - a) * n + (n - 1 - b)]));
            }
        }
        record("nash_reflection_symmetry", sym, 1e-8);
    }

    io::write_text(ctx.out / "check.json", json{{"checks", checks}, {"pass", ok}}.dump(2) + "\n");
    ctx.produced(ctx.out / "check.json");
    if (!ok) throw InvariantViolation("invariant suite failed, see check.json");
    return {{"pass", ok}};
}

}  // namespace

int run_command(const std::string& command, const RunConfig& config, const RunOverrides& overrides,
                std::ostream& log) {
    const auto start = std::chrono::steady_clock::now();
    try {
        Context ctx{config, {}, overrides.expensive, log, {}};
        RunConfig& c = ctx.config;
        if (overrides.output_dir) c.output_dir = *overrides.output_dir;
        if (overrides.seed) c.experiment.seed = *overrides.seed;
        if (overrides.jobs) c.experiment.jobs = *overrides.jobs;
        if (overrides.expensive) c.experiment.nash.allow_coarse = true;
        validate(c);
        const auto& names = run_commands();
        if (std::find(names.begin(), names.end(), command) == names.end()) {
            throw ConfigError("unknown command \"" + command + "\"");
        }
        ctx.out = c.output_dir;
        fs::create_directories(ctx.out);
        const fs::path cache_dir = EvaluationCache::directory_from_env(c.cache_dir);
        if (!cache_dir.empty()) c.experiment.cache = std::make_shared<EvaluationCache>(cache_dir);

        json summary;
        if (command == "solve-mfg") summary = cmd_solve_mfg(ctx);
        if (command == "solve-nash") summary = cmd_solve_nash(ctx);
        if (command == "eval-master") summary = cmd_eval_master(ctx);
        if (command == "simulate") summary = cmd_simulate(ctx);
        if (command == "converge") summary = cmd_converge(ctx);
        if (command == "check") summary = cmd_check(ctx);
        if (c.experiment.cache) c.experiment.cache->flush();

        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        json manifest = {{"command", command},
                         {"config", json::parse(config_json(c))},
                         {"config_hash", hex(config_hash(c))},
                         {"seed", c.experiment.seed},
                         {"jobs", c.experiment.jobs},
                         {"expensive", overrides.expensive},
                         {"versions",
                          {{"rmfg", library_version},
                           {"compiler", __VERSION__},
                           {"cplusplus", __cplusplus},
                           {"nlohmann_json",
                            std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)}}},
                         {"wall_time_seconds", wall},
                         {"outputs", ctx.outputs},
                         {"summary", summary}};
        io::write_text(ctx.out / "manifest.json", manifest.dump(2) + "\n");
        return exit_ok;
    } catch (const ConfigError& e) {
        log << "config error: " << e.what() << '\n';
        return exit_config;
    } catch (const InvalidArgument& e) {
        log << "invalid argument: " << e.what() << '\n';
        return exit_config;
    } catch (const BudgetExceeded& e) {
        log << "budget exceeded: " << e.what() << '\n';
        return exit_budget;
    } catch (const InvariantViolation& e) {
        log << "invariant violated: " << e.what() << '\n';
        return exit_invariant;
    } catch (const NumericalError& e) {
        log << "numerical error: " << e.what() << '\n';
        return exit_numerical;
    } catch (const NonConvergence& e) {
        log << "no convergence: " << e.what() << '\n';
        return exit_numerical;
    } catch (const std::exception& e) {
        log << "error: " << e.what() << '\n';
        return exit_numerical;
    }
}

int run_command(const std::string& command, const fs::path& config_path, const RunOverrides& overrides,
                std::ostream& log) {
    RunConfig config;
    try {
        config = parse_config(config_path);
    } catch (const ConfigError& e) {
        log << "config error: " << e.what() << '\n';
        return exit_config;
    }
    return run_command(command, config, overrides, log);
}

// ---------------------------------------------------------------------------
// golden comparison

namespace {

// wall-clock and location entries that legitimately differ between runs
const std::set<std::string> volatile_keys{"wall_time_seconds", "runtime_seconds", "versions", "directory",
                                          "cache_dir"};

bool close(double a, double b, double rtol) {
    if (std::isnan(a) || std::isnan(b)) return std::isnan(a) && std::isnan(b);
    return std::abs(a - b) <= rtol * std::max(std::abs(a), std::abs(b));
}

std::optional<double> as_number(const std::string& cell) {
    if (cell.empty()) return std::nullopt;
    char* end = nullptr;
    const double v = std::strtod(cell.c_str(), &end);
    if (end != cell.c_str() + cell.size()) return std::nullopt;
    return v;
}

std::vector<std::vector<std::string>> split_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::stringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::vector<std::string> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(cell);
        if (!line.empty() && line.back() == ',') row.emplace_back();
        rows.push_back(std::move(row));
    }
    return rows;
}

void compare_csv(const std::string& name, const std::string& a, const std::string& b, double rtol,
                 CompareReport& r) {
    const auto ra = split_csv(a), rb = split_csv(b);
    if (ra.size() != rb.size()) {
        r.failures.push_back(name + ": " + std::to_string(ra.size()) + " rows vs " + std::to_string(rb.size()));
        return;
    }
    std::optional<std::size_t> value_col, stderr_col;
    for (std::size_t row = 0; row < ra.size(); ++row) {
        if (ra[row].size() != rb[row].size()) {
            r.failures.push_back(name + ": row " + std::to_string(row) + " differs in width");
            continue;
        }
        if (row == 0) {
            for (std::size_t c = 0; c < ra[0].size(); ++c) {
                if (ra[0][c] == "value") value_col = c;
                if (ra[0][c] == "stderr") stderr_col = c;
            }
        }
        for (std::size_t c = 0; c < ra[row].size(); ++c) {
            const auto x = as_number(ra[row][c]), y = as_number(rb[row][c]);
            const std::string where = name + ": row " + std::to_string(row) + " column " + std::to_string(c);
            if (!x || !y) {
                if (ra[row][c] != rb[row][c]) r.failures.push_back(where + ": \"" + ra[row][c] + "\" vs \"" + rb[row][c] + "\"");
                continue;
            }
            ++r.compared_values;
            if (value_col && stderr_col && c == *value_col) {
                const auto sa = as_number(ra[row][*stderr_col]), sb = as_number(rb[row][*stderr_col]);
                const double band = 3.0 * std::hypot(sa.value_or(0.0), sb.value_or(0.0));
                if (band > 0.0) {
                    if (std::abs(*x - *y) > band && !close(*x, *y, rtol)) {
                        r.failures.push_back(where + ": " + std::to_string(*x) + " vs " + std::to_string(*y) +
                                             " outside the 3 sigma band");
                    }
                    continue;
                }
            }
            if (value_col && stderr_col && c == *stderr_col) continue;
            if (!close(*x, *y, rtol)) {
                std::ostringstream os;
                os.precision(17);
                os << where << ": " << *x << " vs " << *y;
                r.failures.push_back(os.str());
            }
        }
    }
}

void compare_json(const std::string& where, const json& a, const json& b, double rtol, CompareReport& r) {
    if (a.is_number() && b.is_number()) {
        ++r.compared_values;
        if (!close(a.get<double>(), b.get<double>(), rtol)) {
            r.failures.push_back(where + ": " + a.dump() + " vs " + b.dump());
        }
        return;
    }
    if (a.type() != b.type()) {
        r.failures.push_back(where + ": type differs");
        return;
    }
    if (a.is_object()) {
        const bool banded = a.contains("value") && a.contains("stderr") && b.contains("stderr") &&
                            a["value"].is_number() && b["value"].is_number();
        for (const auto& [k, v] : a.items()) {
            if (volatile_keys.count(k)) continue;
            if (!b.contains(k)) {
                r.failures.push_back(where + "." + k + ": missing");
                continue;
            }
            if (banded && k == "value") {
                const double band = 3.0 * std::hypot(a["stderr"].get<double>(), b["stderr"].get<double>());
                const double x = v.get<double>(), y = b["value"].get<double>();
                ++r.compared_values;
                if (band > 0.0 ? std::abs(x - y) > band && !close(x, y, rtol) : !close(x, y, rtol)) {
                    r.failures.push_back(where + ".value: " + v.dump() + " vs " + b["value"].dump());
                }
                continue;
            }
            if (banded && k == "stderr") continue;
            compare_json(where + "." + k, v, b.at(k), rtol, r);
        }
        for (const auto& [k, v] : b.items()) {
            if (!volatile_keys.count(k) && !a.contains(k)) r.failures.push_back(where + "." + k + ": unexpected");
        }
        return;
    }
    if (a.is_array()) {
        if (a.size() != b.size()) {
            r.failures.push_back(where + ": array length differs");
            return;
        }
        for (std::size_t k = 0; k < a.size(); ++k) compare_json(where + "[" + std::to_string(k) + "]", a[k], b[k], rtol, r);
        return;
    }
    if (a != b) r.failures.push_back(where + ": " + a.dump() + " vs " + b.dump());
}

void compare_binary(const std::string& name, const std::string& a, const std::string& b, double rtol,
                    CompareReport& r) {
    if (a.size() != b.size() || a.size() < 24 || (a.size() - 24) % sizeof(double) != 0) {
        if (a != b) r.failures.push_back(name + ": binary layout differs");
        return;
    }
    if (a.compare(0, 24, b, 0, 24) != 0) {
        r.failures.push_back(name + ": header differs");
        return;
    }
    const std::size_t count = (a.size() - 24) / sizeof(double);
    std::size_t bad = 0;
    for (std::size_t k = 0; k < count; ++k) {
        double x, y;
        std::memcpy(&x, a.data() + 24 + k * sizeof(double), sizeof(double));
        std::memcpy(&y, b.data() + 24 + k * sizeof(double), sizeof(double));
        ++r.compared_values;
        if (!close(x, y, rtol)) ++bad;
    }
    if (bad > 0) r.failures.push_back(name + ": " + std::to_string(bad) + " of " + std::to_string(count) + " values differ");
}

}  // namespace

CompareReport golden_compare(const fs::path& run_dir, const fs::path& golden_dir, double rtol) {
    CompareReport r;
    if (!fs::is_directory(golden_dir)) throw InvalidArgument("golden directory not found: " + golden_dir.string());
    if (!fs::is_directory(run_dir)) throw InvalidArgument("run directory not found: " + run_dir.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(golden_dir)) {
        if (entry.is_regular_file()) files.push_back(fs::relative(entry.path(), golden_dir));
    }
    std::sort(files.begin(), files.end());
    for (const auto& rel : files) {
        const std::string name = rel.generic_string();
        const fs::path mine = run_dir / rel;
        if (!fs::exists(mine)) {
            r.failures.push_back(name + ": missing from the run directory");
            continue;
        }
        const std::string a = io::read_text(mine), b = io::read_text(golden_dir / rel);
        const auto ext = rel.extension().string();
        if (ext == ".csv") {
            compare_csv(name, a, b, rtol, r);
        } else if (ext == ".json") {
            try {
                compare_json(name, json::parse(a), json::parse(b), rtol, r);
            } catch (const json::parse_error&) {
                r.failures.push_back(name + ": not valid JSON");
            }
        } else if (ext == ".bin") {
            compare_binary(name, a, b, rtol, r);
        } else if (a != b) {
            r.failures.push_back(name + ": contents differ");
        }
    }
    r.pass = r.failures.empty();
    return r;
}

}  // namespace rmfg
