#include "rmfg/convergence.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <random>

#include "rmfg/errors.hpp"
#include "rmfg/parallel.hpp"

namespace rmfg {

RateFit rate_fit(std::span<const double> Ns, std::span<const double> errors) {
    RateFit fit;
    if (Ns.size() != errors.size() || Ns.size() < 2) return fit;
    for (std::size_t k = 0; k < Ns.size(); ++k) {
        if (!(Ns[k] > 0.0) || !(errors[k] > 0.0)) return fit;
    }
    const double m = static_cast<double>(Ns.size());
    double sx = 0.0, sy = 0.0;
    for (std::size_t k = 0; k < Ns.size(); ++k) {
        sx += std::log(Ns[k]);
        sy += std::log(errors[k]);
    }
    const double mx = sx / m, my = sy / m;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t k = 0; k < Ns.size(); ++k) {
        const double dx = std::log(Ns[k]) - mx, dy = std::log(errors[k]) - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if (sxx == 0.0) return fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    fit.r2 = syy == 0.0 ? 1.0 : sxy * sxy / (sxx * syy);
    fit.degenerate = false;
    return fit;
}

GridMeasure ExperimentConfig::initial_measure(std::size_t n) const {
    if (m0.empty()) return GridMeasure::uniform(n);
    if (m0.size() != n) {
        throw InvalidArgument("initial measure has " + std::to_string(m0.size()) + " weights, grid has " +
                              std::to_string(n) + " nodes");
    }
    return GridMeasure(m0);
}

Model experiment_model(const ExperimentConfig& config, std::size_t n_cells) {
    return Model(config.model, build_grid(n_cells, config.model.domain()));
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::size_t cells_for(std::size_t N, std::size_t n, const ExperimentConfig& config) {
    return N == 4 ? std::min(n, config.nash.coarse_cells) : n;
}

void check_N_list(const ExperimentConfig& config) {
    if (config.N_list.empty()) throw InvalidArgument("N_list is empty");
    for (std::size_t k = 0; k < config.N_list.size(); ++k) {
        const std::size_t N = config.N_list[k];
        if (N < 2 || N > 4) throw InvalidArgument("N_list entries must be 2, 3 or 4");
        if (k > 0 && N <= config.N_list[k - 1]) throw InvalidArgument("N_list must be strictly increasing");
        if (N == 4 && !config.nash.allow_coarse) throw BudgetExceeded("N = 4 requires the coarse (expensive) mode");
    }
}

std::shared_ptr<EvaluationCache> cache_for(const ExperimentConfig& config) {
    return config.cache ? config.cache : std::make_shared<EvaluationCache>();
}

NashOptions nash_options(const ExperimentConfig& config) {
    NashOptions o = config.nash;
    o.jobs = config.jobs;
    return o;
}

ConvergenceReport empty_report(const ExperimentConfig& config) {
    check_N_list(config);
    ConvergenceReport r;
    r.instance_hash = instance_hash(config.model, config.n_cells, config.time(), config.mfg);
    r.N_list = config.N_list;
    return r;
}

void merge(ConvergenceReport& into, const ConvergenceReport& from) {
    for (const auto& [k, v] : from.metrics) into.metrics[k] = v;
    for (const auto& [k, v] : from.runtime_seconds) into.runtime_seconds[k] += v;
}

}  // namespace

double value_gap(const NashTensorField& nash, const MasterEvaluator& master, const ExperimentConfig& config) {
    const std::size_t N = nash.N();
    const std::size_t n = nash.shape().n;
    if (master.grid().size() != n) throw InvalidArgument("value_gap: grid mismatch");
    std::vector<std::vector<std::size_t>> samples;
    for (std::size_t corner = 0; corner < (std::size_t{1} << N); ++corner) {
        std::vector<std::size_t> idx(N);
        for (std::size_t d = 0; d < N; ++d) idx[d] = ((corner >> d) & 1U) ? n - 1 : 0;
        samples.push_back(idx);
    }
    std::mt19937_64 rng(config.seed);
    std::uniform_int_distribution<std::size_t> node(0, n - 1);
    for (std::size_t q = 0; q < config.value_samples; ++q) {
        std::vector<std::size_t> idx(N);
        for (auto& k : idx) k = node(rng);
        samples.push_back(idx);
    }
    const std::size_t steps = nash.time().n_steps();
    const std::size_t stride = std::max<std::size_t>(config.time_stride, 1);
    std::vector<std::size_t> slices;
    for (std::size_t s = 0; s <= steps; s += stride) slices.push_back(s);
    if (slices.back() != steps) slices.push_back(steps);

    std::vector<double> worst(samples.size(), 0.0);
    parallel_for(samples.size(), config.jobs, [&](std::size_t q) {
        const auto& idx = samples[q];
        std::vector<double> w(n, 0.0);
        for (std::size_t k : idx) w[k] += 1.0 / static_cast<double>(N);
        const GridMeasure m(std::move(w));
        for (std::size_t s : slices) {
            const Field u = master.u_slice(master.time().time(s), m);
            for (std::size_t i = 0; i < N; ++i) {
                worst[q] = std::max(worst[q], std::abs(nash.player_value(s, i, idx) - u[idx[i]]));
            }
        }
    });
    return *std::max_element(worst.begin(), worst.end());
}

MetricPoint w_gap(const NashTensorField& nash, const MasterEvaluator& master, const GridMeasure& m0,
                  const ExperimentConfig& config) {
    const std::size_t N = nash.N();
    const std::size_t n = nash.shape().n;
    if (master.grid().size() != n || m0.size() != n) throw InvalidArgument("w_gap: grid mismatch");
    const auto v = nash.slice(0);
    const TensorShape& shape = nash.shape();
    std::vector<double> w(n, 0.0), w2(n, 0.0);
    double draws = 0.0;
    bool exact = true;
    double rest_count = 1.0;
    for (std::size_t d = 1; d < N; ++d) rest_count *= static_cast<double>(n);
    if (rest_count <= static_cast<double>(config.mc_budget)) {
        // exact expectation over the product measure of the other players
        std::vector<std::size_t> idx(N);
        for (std::size_t flat = 0; flat < shape.size(); ++flat) {
            shape.unflatten(flat, idx);
            double p = 1.0;
            for (std::size_t d = 1; d < N; ++d) p *= m0[idx[d]];
            w[idx[0]] += p * v[flat];
        }
    } else {
        exact = false;
        const std::size_t M = config.mc_budget;
        const auto Z = sample_initial(N - 1, M, m0, master.grid(), config.seed);
        std::vector<std::size_t> idx(N);
        for (std::size_t q = 0; q < M; ++q) {
            for (std::size_t d = 1; d < N; ++d) {
                // sampled positions are nodes, so locate returns them or their left neighbour with weight 1
                const auto [k, f] = master.grid().locate(Z[q * (N - 1) + d - 1]);
                idx[d] = f > 0.5 ? k + 1 : k;
            }
            for (std::size_t k = 0; k < n; ++k) {
                idx[0] = k;
                const double val = v[shape.flat(idx)];
                w[k] += val;
                w2[k] += val * val;
            }
        }
        draws = static_cast<double>(M);
        for (std::size_t k = 0; k < n; ++k) {
            w[k] /= draws;
            w2[k] /= draws;
        }
    }
    const Field u = master.u_slice(master.time().t0(), m0);
    MetricPoint out;
    out.N = N;
    for (std::size_t k = 0; k < n; ++k) {
        out.value += m0[k] * std::abs(w[k] - u[k]);
        // triangle bound on the error of the weighted sum
        if (!exact) out.std_error += m0[k] * std::sqrt(std::max(w2[k] - w[k] * w[k], 0.0) / draws);
    }
    return out;
}

ConvergenceReport experiment_value_convergence(const ExperimentConfig& config) {
    ConvergenceReport report = empty_report(config);
    for (std::size_t N : config.N_list) {
        const auto start = Clock::now();
        const std::size_t n = cells_for(N, config.n_cells, config);
        const Model model = experiment_model(config, n);
        const NashTensorField v = solve_nash(N, model, config.time(), nash_options(config));
        const MasterEvaluator master(model, config.time(), config.mfg, cache_for(config));
        report.metrics["value_gap"].push_back({N, value_gap(v, master, config), 0.0, N == 4});
        report.runtime_seconds["value_gap"] += seconds_since(start);
    }
    report.fit_slopes();
    return report;
}

ConvergenceReport experiment_w_convergence(const ExperimentConfig& config) {
    ConvergenceReport report = empty_report(config);
    for (std::size_t N : config.N_list) {
        const auto start = Clock::now();
        const std::size_t n = cells_for(N, config.w_cells, config);
        const Model model = experiment_model(config, n);
        const NashTensorField v = solve_nash(N, model, config.time(), nash_options(config));
        const MasterEvaluator master(model, config.time(), config.mfg, cache_for(config));
        MetricPoint p = w_gap(v, master, config.initial_measure(n), config);
        p.coarse = N == 4;
        report.metrics["w_gap"].push_back(p);
        report.runtime_seconds["w_gap"] += seconds_since(start);
    }
    report.fit_slopes();
    return report;
}

ConvergenceReport experiment_residual(const ExperimentConfig& config) {
    ConvergenceReport report = empty_report(config);
    for (std::size_t N : config.N_list) {
        const auto start = Clock::now();
        const std::size_t n = cells_for(N, config.n_cells, config);
        const Model model = experiment_model(config, n);
        const MasterEvaluator master(model, config.time(), config.mfg, cache_for(config));
        const auto samples = residual_samples(N, model.grid(), config.time(), config.residual_samples, config.seed);
        const auto r = nash_residual(master, samples, 0, config.jobs);
        report.metrics["residual"].push_back({N, r.sup, 0.0, N == 4});
        report.runtime_seconds["residual"] += seconds_since(start);
    }
    report.fit_slopes();
    return report;
}

ConvergenceReport experiment_trajectories(const ExperimentConfig& config) {
    ConvergenceReport report = empty_report(config);
    for (std::size_t N : config.N_list) {
        const auto start = Clock::now();
        const std::size_t n = cells_for(N, config.n_cells, config);
        const Model model = experiment_model(config, n);
        const NashTensorField v = solve_nash(N, model, config.time(), nash_options(config));
        const MasterEvaluator master(model, config.time(), config.mfg, cache_for(config));
        const NashTensorField u = projection_field(N, master, nash_options(config));
        SimulationOptions sim;
        sim.n_paths = config.n_paths;
        sim.n_steps = config.sim_steps;
        sim.seed = config.seed;
        sim.jobs = config.jobs;
        sim.max_entries = config.max_ensemble_entries;
        const auto ens = simulate_coupled(v, u, model, config.initial_measure(n), sim);
        const auto tg = trajectory_gap(ens);
        const auto fg = feedback_gap(ens, v, u);
        const bool coarse = N == 4;
        report.metrics["trajectory_gap"].push_back({N, tg.pooled.value, tg.pooled.std_error, coarse});
        report.metrics["feedback_gap"].push_back({N, fg.integral.value, fg.integral.std_error, coarse});
        report.metrics["t0_gap"].push_back({N, fg.t0_gap.value, fg.t0_gap.std_error, coarse});
        report.runtime_seconds["trajectories"] += seconds_since(start);
    }
    report.fit_slopes();
    return report;
}

ConvergenceReport run_all_experiments(const ExperimentConfig& config) {
    ConvergenceReport report = empty_report(config);
    merge(report, experiment_value_convergence(config));
    merge(report, experiment_w_convergence(config));
    merge(report, experiment_residual(config));
    merge(report, experiment_trajectories(config));
    report.fit_slopes();
    report.validate();
    return report;
}

void ConvergenceReport::fit_slopes() {
    slopes.clear();
    for (const auto& [name, points] : metrics) {
        std::vector<double> Ns, values;
        for (const auto& p : points) {
            Ns.push_back(static_cast<double>(p.N));
            values.push_back(p.value);
        }
        slopes[name] = rate_fit(Ns, values);
    }
}

void ConvergenceReport::validate() const {
    for (std::size_t k = 1; k < N_list.size(); ++k) {
        if (N_list[k] <= N_list[k - 1]) throw InvariantViolation("N_list is not strictly increasing");
    }
    for (const auto& [name, points] : metrics) {
        for (const auto& p : points) {
            if (!(p.value >= 0.0) || !(p.std_error >= 0.0)) {
                throw InvariantViolation("metric " + name + " is negative or not a number at N = " +
                                         std::to_string(p.N));
            }
        }
    }
}

std::string ConvergenceReport::to_json() const {
    nlohmann::json j;
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(instance_hash));
    j["instance_hash"] = hash;
    j["N_list"] = N_list;
    for (const auto& [name, points] : metrics) {
        auto& arr = j["metrics"][name];
        arr = nlohmann::json::array();
        for (const auto& p : points) {
            arr.push_back({{"N", p.N}, {"value", p.value}, {"stderr", p.std_error}, {"coarse", p.coarse}});
        }
    }
    for (const auto& [name, fit] : slopes) {
        if (fit.degenerate) {
            j["slopes"][name] = {{"degenerate", true}};
        } else {
            j["slopes"][name] = {
                {"slope", fit.slope}, {"intercept", fit.intercept}, {"r2", fit.r2}, {"degenerate", false}};
        }
    }
    j["runtime_seconds"] = runtime_seconds;
    // rates in d >= 2 are part of the schema but never computed here
    j["rates_by_dimension"] = {{"d1", "N^-1/2"}, {"d2", nullptr}, {"d3_plus", nullptr}};
    return j.dump(2);
}

void ConvergenceReport::write_csv(const std::string& directory) const {
    std::filesystem::create_directories(directory);
    for (const auto& [name, points] : metrics) {
        std::ofstream out(std::filesystem::path(directory) / (name + ".csv"));
        if (!out) throw InvalidArgument("cannot write " + name + ".csv in " + directory);
        out.precision(17);
        out << "N,value,stderr,coarse\n";
        for (const auto& p : points) out << p.N << ',' << p.value << ',' << p.std_error << ',' << p.coarse << '\n';
    }
}

}  // namespace rmfg
