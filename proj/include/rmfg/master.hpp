#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>

#include "rmfg/cache.hpp"
#include "rmfg/grid.hpp"
#include "rmfg/mfg.hpp"
#include "rmfg/model.hpp"

namespace rmfg {

/// U(t0, ., m0) together with the MFG solve it was read from. provenance is
/// null only for the terminal case t0 = T, where U = G(., m0).
struct MasterEvaluation {
    double t0 = 0.0;
    GridMeasure m0;
    Field u_slice;
    std::shared_ptr<const MfgSolution> provenance;
};

/// Optional data of the linearized system. Empty members mean zero.
/// h has one row per time slice and enters the z equation like F. c has one
/// row per step with n+1 face entries (wall entries ignored) and enters the
/// rho equation as +div(c). z_T is added to the terminal condition.
struct LinearizedSources {
    TimeField h;
    TimeField c;
    Field z_T;
};

struct LinearizedSolution {
    TimeField z;
    TimeField rho;
    int iterations_used = 0;
    double final_gap = 0.0;
};

/// Linearization of the MFG system about a converged base solution, solved
/// by the same damped Picard structure as solve_mfg with iteration on rho only.
LinearizedSolution solve_linearized(const MfgSolution& base, std::span<const double> rho0, const Model& model,
                                    const LinearizedSources& sources = {}, const MfgOptions& options = {});

/// Image of the piecewise-constant density of m under x -> x + phi(x).
/// Each cell's mass is spread uniformly over the image of the cell. Throws
/// InvalidArgument when the map leaves the domain or is not increasing.
GridMeasure pushforward(const GridMeasure& m, const std::function<double(double)>& phi, const Grid1D& grid);

/// w = G^T c for the mirrored central-difference gradient G.
Field gradient_transpose(std::span<const double> c, double h);

struct PushforwardDefect {
    double defect = 0.0;
    /// ||phi||_{L^2(m0)} evaluated at the nodes.
    double phi_norm = 0.0;
};

/// Evaluates U and its measure derivatives through MFG trajectories on the
/// tail of a fixed time grid. Const members are safe to call concurrently;
/// the optional cache is shared and internally locked.
class MasterEvaluator {
public:
    MasterEvaluator(Model model, TimeGrid full_time, MfgOptions options = {},
                    std::shared_ptr<EvaluationCache> cache = nullptr);

    const Model& model() const { return model_; }
    const Grid1D& grid() const { return model_.grid(); }
    const TimeGrid& time() const { return time_; }
    const MfgOptions& options() const { return options_; }
    std::uint64_t config_hash() const { return config_hash_; }

    /// Heat-smoothing time applied to Dirac directions; 0 keeps node indicators.
    double mollification() const { return mollification_; }
    void set_mollification(double tau);

    /// Full solve from the lattice time t0; throws NonConvergence.
    std::shared_ptr<const MfgSolution> solve(double t0, const GridMeasure& m0,
                                             const TimeField* guess = nullptr) const;
    MasterEvaluation eval_U(double t0, const GridMeasure& m0) const;
    /// u(t0, .) only, served from the cache when possible.
    Field u_slice(double t0, const GridMeasure& m0) const;

    /// <dU/dm(t0, ., m0, .), delta_y - m0> as a field over x.
    Field measure_derivative(const MfgSolution& base, std::size_t y) const;
    Field measure_derivative(double t0, const GridMeasure& m0, std::size_t y) const;

    /// D_y of the measure derivative at node y (mirrored central difference).
    Field dm_U(const MfgSolution& base, std::size_t y) const;
    Field dm_U(double t0, const GridMeasure& m0, std::size_t y) const;
    /// D_mU at an arbitrary y, linear between the two nearest nodes.
    Field dm_U_at(const MfgSolution& base, double y) const;

    /// sup_x |U((id+phi)#m0) - U(m0) - int D_mU phi dm0| at t0.
    PushforwardDefect pushforward_expansion_check(double t0, const GridMeasure& m0,
                                                  const std::function<double(double)>& phi) const;

private:
    Field dirac_direction(std::size_t y, const GridMeasure& m0) const;
    EvaluationCache::Key key(double t0, const GridMeasure& m0) const;

    Model model_;
    TimeGrid time_;
    MfgOptions options_;
    std::shared_ptr<EvaluationCache> cache_;
    std::uint64_t config_hash_ = 0;
    double mollification_ = 0.0;
};

/// Stable hash of every parameter that affects a solve.
std::uint64_t instance_hash(const ModelConfig& config, std::size_t n_cells, const TimeGrid& time,
                            const MfgOptions& options);

}  // namespace rmfg
