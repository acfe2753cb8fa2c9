#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rmfg/master.hpp"
#include "rmfg/mfg.hpp"
#include "rmfg/model.hpp"
#include "rmfg/nash.hpp"
#include "rmfg/particles.hpp"

namespace rmfg {

struct RateFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
    /// Set when fewer than two points or a non-positive error was given.
    bool degenerate = true;
};

/// Ordinary least squares of log(error) on log(N).
RateFit rate_fit(std::span<const double> Ns, std::span<const double> errors);

/// Everything an experiment needs; defaults are the reference instance.
struct ExperimentConfig {
    ModelConfig model;
    std::size_t n_cells = 41;
    std::size_t n_steps = 100;
    MfgOptions mfg;
    NashOptions nash;
    std::vector<std::size_t> N_list{2, 3};
    /// Initial measure for the w-gap and the simulations; empty means uniform.
    std::vector<double> m0;
    std::uint64_t seed = 1;
    std::size_t jobs = 1;
    /// Shared U-slice cache; a private in-memory cache is used when null.
    std::shared_ptr<EvaluationCache> cache;

    std::size_t value_samples = 500;
    std::size_t time_stride = 10;
    /// Grid of the w-gap experiment, shared by every N so coarse N = 4 compares like with like.
    std::size_t w_cells = 21;
    /// Exact enumeration of the other players when n^(N-1) stays within this, Monte Carlo otherwise.
    std::size_t mc_budget = 200000;
    std::size_t residual_samples = 1000;
    std::size_t n_paths = 2000;
    std::size_t sim_steps = 200;
    std::size_t max_ensemble_entries = std::size_t{1} << 27;

    TimeGrid time() const { return TimeGrid(0.0, model.horizon_T, n_steps); }
    GridMeasure initial_measure(std::size_t n) const;
};

struct MetricPoint {
    std::size_t N = 0;
    double value = 0.0;
    double std_error = 0.0;
    bool coarse = false;
};

struct ConvergenceReport {
    std::uint64_t instance_hash = 0;
    std::vector<std::size_t> N_list;
    /// value_gap, w_gap, residual, trajectory_gap, feedback_gap, t0_gap.
    std::map<std::string, std::vector<MetricPoint>> metrics;
    std::map<std::string, RateFit> slopes;
    std::map<std::string, double> runtime_seconds;

    std::string to_json() const;
    /// One CSV per metric: N,value,stderr,coarse.
    void write_csv(const std::string& directory) const;
    /// Fits every metric with at least two positive points.
    void fit_slopes();
    /// Throws InvariantViolation on negative metrics or a non-increasing N_list.
    void validate() const;
};

/// sup over samples, players and stored slices (every time_stride-th) of
/// |v_i(t, x) - U(t, x_i, m^N_x)| with weights 1/N. Samples are the lattice
/// corners plus value_samples random lattice configurations.
double value_gap(const NashTensorField& nash, const MasterEvaluator& master, const ExperimentConfig& config);

/// ||w_1(t0, ., m0) - U(t0, ., m0)||_{L1(m0)} where w_1 averages v_1 over the
/// other players drawn from m0.
MetricPoint w_gap(const NashTensorField& nash, const MasterEvaluator& master, const GridMeasure& m0,
                  const ExperimentConfig& config);

/// Model, evaluator and grid of one experiment cell.
Model experiment_model(const ExperimentConfig& config, std::size_t n_cells);

ConvergenceReport experiment_value_convergence(const ExperimentConfig& config);
ConvergenceReport experiment_w_convergence(const ExperimentConfig& config);
ConvergenceReport experiment_residual(const ExperimentConfig& config);
ConvergenceReport experiment_trajectories(const ExperimentConfig& config);
/// All of the above merged into one report.
ConvergenceReport run_all_experiments(const ExperimentConfig& config);

}  // namespace rmfg
