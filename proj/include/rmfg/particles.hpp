#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rmfg/grid.hpp"
#include "rmfg/model.hpp"
#include "rmfg/nash.hpp"

namespace rmfg {

struct ReflectedStep {
    double x = 0.0;
    /// |proposal - x|, the reflection increment of this step.
    double dk = 0.0;
};

/// Euler-Maruyama proposal x + drift dt + sqrt(2) sigma dW folded back into
/// the domain by repeated mirroring at the endpoints.
ReflectedStep reflect_step(double x, double drift, double sigma, double dt, double dW, Interval domain);

/// Counter-based streams: every draw is a pure function of its key.
namespace rng {
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t bits(std::uint64_t seed, std::uint64_t path, std::uint64_t player, std::uint64_t step,
                   std::uint64_t lane);
/// Uniform on (0, 1).
double uniform(std::uint64_t seed, std::uint64_t path, std::uint64_t player, std::uint64_t step,
               std::uint64_t lane = 0);
/// Standard normal via Box-Muller on lanes 0 and 1.
double normal(std::uint64_t seed, std::uint64_t path, std::uint64_t player, std::uint64_t step);
}  // namespace rng

/// Inverse-CDF draws of node positions from m0, laid out [path][player].
std::vector<double> sample_initial(std::size_t N, std::size_t n_paths, const GridMeasure& m0, const Grid1D& grid,
                                   std::uint64_t seed);

/// Coupled X (projection feedback) and Y (Nash feedback) paths. Arrays are
/// laid out [path][step][player] with n_steps + 1 time levels. Drifts hold
/// the value used on the step leaving each level (zero at the last level).
struct PathEnsemble {
    std::size_t N = 0;
    std::size_t n_paths = 0;
    std::size_t n_steps = 0;
    double t0 = 0.0;
    double dt = 0.0;
    std::uint64_t seed = 0;
    std::vector<double> X, Y;
    std::vector<double> kX, kY;
    std::vector<double> bX, bY;

    std::size_t at(std::size_t path, std::size_t step, std::size_t player) const {
        return (path * (n_steps + 1) + step) * N + player;
    }
    double time(std::size_t step) const { return t0 + dt * static_cast<double>(step); }
};

struct SimulationOptions {
    std::size_t n_paths = 2000;
    std::size_t n_steps = 200;
    std::uint64_t seed = 1;
    std::size_t jobs = 1;
    /// Refuses ensembles with more stored doubles than this.
    std::size_t max_entries = std::size_t{1} << 27;
};

/// Advances X and Y with shared initial data and Brownian increments. The
/// X drift reads D_{x_i} of the lattice projection field, the Y drift the
/// Nash field; both fields must live on the model grid and span the same horizon.
PathEnsemble simulate_coupled(const NashTensorField& nash, const NashTensorField& projection, const Model& model,
                              const GridMeasure& m0, const SimulationOptions& options = {});

struct Estimate {
    double value = 0.0;
    double std_error = 0.0;
};

struct TrajectoryGap {
    /// sup_t E|X^i_t - Y^i_t|^2 for each player.
    std::vector<Estimate> per_player;
    /// sup_t E[(1/N) sum_i |X^i_t - Y^i_t|^2].
    Estimate pooled;
};

/// Plain means over paths with jackknife error bars.
TrajectoryGap trajectory_gap(const PathEnsemble& ens);

struct FeedbackGap {
    /// E int (1/N) sum_i |D_{x_i} v_i - D_{x_i} u_i|^2 (t, Y_t) dt, trapezoidal in time.
    Estimate integral;
    /// E (1/N) sum_i |u_i(t0, Z) - v_i(t0, Z)| and its largest sample.
    Estimate t0_gap;
    double t0_gap_max = 0.0;
};

FeedbackGap feedback_gap(const PathEnsemble& ens, const NashTensorField& nash, const NashTensorField& projection);

/// phi(t, x) with its derivatives, for the generator identity.
struct TestFunction {
    std::string name;
    std::function<double(double, double)> phi, phi_t, phi_x, phi_xx;
};

/// cos(k pi x) for k = 1, 2, 3, the smoothstep 3x^2 - 2x^3 and
/// exp(-t) cos(pi x), mapped to the domain. All have zero slope at the walls.
std::vector<TestFunction> neumann_test_functions(Interval domain);
/// x^2 mapped to the domain: zero slope at the left wall only.
TestFunction boundary_violating_function(Interval domain);

struct ItoCheck {
    /// E phi(T, X_T) - E phi(t0, X_t0).
    double lhs = 0.0;
    /// E sum_k (phi_t + a phi_xx + b phi_x)(t_k, X_k) dt, left point rule.
    double rhs = 0.0;
    double defect = 0.0;
    /// Monte Carlo standard error of the per-path defect.
    double std_error = 0.0;
};

/// Generator identity along the X paths of player `player`, without boundary term.
ItoCheck ito_consistency_check(const TestFunction& f, const PathEnsemble& ens, const Model& model,
                               std::size_t player = 0);

}  // namespace rmfg
