#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "rmfg/grid.hpp"
#include "rmfg/master.hpp"
#include "rmfg/model.hpp"

namespace rmfg {

/// Values over (time slice, node_1, ..., node_N) of the representative
/// function of player 1 (slot 0). Player i is read through the swap of slots
/// 0 and i-1; storage is kept symmetric in slots 1..N-1.
class NashTensorField {
public:
    NashTensorField() = default;
    NashTensorField(std::size_t N, Grid1D grid, TimeGrid time);

    std::size_t N() const { return shape_.dims; }
    const Grid1D& grid() const { return grid_; }
    const TimeGrid& time() const { return time_; }
    const TensorShape& shape() const { return shape_; }
    std::size_t slice_size() const { return shape_.size(); }

    std::span<double> slice(std::size_t s) { return {values_.data() + s * slice_size(), slice_size()}; }
    std::span<const double> slice(std::size_t s) const { return {values_.data() + s * slice_size(), slice_size()}; }
    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }

    /// v_i at a lattice point: slot-0 function at the configuration with
    /// slots 0 and i exchanged.
    double player_value(std::size_t s, std::size_t i, std::span<const std::size_t> idx) const;
    /// Multilinear interpolation of v_i at arbitrary positions, linear in time.
    double player_value_at(double t, std::size_t i, std::span<const double> x) const;
    /// D_{x_i} v_i at arbitrary positions: mirrored central differences of
    /// slot 0 at the lattice corners, interpolated like player_value_at.
    double player_gradient_at(double t, std::size_t i, std::span<const double> x) const;

    /// Largest deviation from symmetry in slots 1..N-1 over all slices.
    double symmetry_defect() const;

private:
    double slot0_gradient(std::size_t s, std::span<const std::size_t> idx) const;

    Grid1D grid_{Grid1D::min_cells, {0.0, 1.0}};
    TimeGrid time_{0.0, 1.0, 1};
    TensorShape shape_;
    std::vector<double> values_;
};

struct NashOptions {
    /// Inner feedback iteration stops when the step update changes by at most tol.
    double tol = 1e-10;
    int max_inner = 50;
    /// Allows N = 4, which is accepted only on grids with at most coarse_cells cells.
    bool allow_coarse = false;
    std::size_t coarse_cells = 21;
    std::size_t memory_budget_bytes = std::size_t{1} << 30;
    std::size_t jobs = 1;
};

/// Bytes needed to hold one (time, Omega^N) field.
std::size_t tensor_bytes(std::size_t N, std::size_t n_cells, std::size_t n_steps);

/// Throws BudgetExceeded unless a tensor field of this size is admissible.
void check_nash_budget(std::size_t N, std::size_t n_cells, std::size_t n_steps, const NashOptions& options,
                       std::size_t fields = 1);

/// Backward semi-implicit sweep of the Nash system. Per step: explicit
/// Hamiltonian, coupling and transport terms at the later slice, with the
/// other players' feedback gradients taken from the current iterate of the
/// earlier slice (Jacobi), then implicit Neumann diffusion one dimension at a
/// time. Throws NonConvergence when the feedback iteration stalls.
NashTensorField solve_nash(std::size_t N, const Model& model, const TimeGrid& time, const NashOptions& options = {});

/// F(x_0, m^{N,0}) at a lattice configuration: others deposited at their nodes.
double nash_source(const Model& model, std::span<const std::size_t> idx, double weight);

/// u^N_i(t, x) = U(t, x_i, m^{N,i}_x) with cloud-in-cell deposition of the
/// other players. Time t must be a lattice time of the evaluator.
double project_uNi(const MasterEvaluator& master, double t, std::span<const double> x, std::size_t i);

/// u^N_1 on every lattice configuration and time slice. One MFG solve per
/// slice and multiset of the other players' nodes; each multiset is swept
/// backward in time with warm starts.
NashTensorField projection_field(std::size_t N, const MasterEvaluator& master, const NashOptions& options = {});

struct ResidualReport {
    double sup = 0.0;
    double mean = 0.0;
    std::size_t samples = 0;
};

/// A lattice configuration at an interior time slice.
struct ResidualSample {
    std::size_t step = 0;
    std::vector<std::size_t> nodes;
};

/// count configurations at interior nodes and slices 1..n_steps-1, drawn
/// uniformly from a seeded stream.
std::vector<ResidualSample> residual_samples(std::size_t N, const Grid1D& grid, const TimeGrid& time,
                                             std::size_t count, std::uint64_t seed);

/// Residual of the projection u^N_i in the Nash equation of player i,
///   -d_t u - sum_j a(x_j) D2_j u + H(x_i, D_i u) + sum_{j != i} H_p(x_j, D_j u^N_j) D_j u
///   - F(x_i, m^{N,i}),
/// with central differences of project values on the lattice: step dt in
/// time and h in every position. Each sample costs a few MFG solves.
ResidualReport nash_residual(const MasterEvaluator& master, std::span<const ResidualSample> samples,
                             std::size_t i = 0, std::size_t jobs = 1);

struct DerivativeCheck {
    double lhs = 0.0;
    double rhs = 0.0;
    double gap = 0.0;
    /// Same comparison with the prefactor 1/N in place of 1/(N-1).
    double rhs_wrong = 0.0;
    double gap_wrong = 0.0;
};

/// Central difference of u^N_i in x_j with step fd_step against
/// (1/(N-1)) D_mU(t, x_i, m^{N,i}_x, x_j).
DerivativeCheck derivative_formula_check(const MasterEvaluator& master, double t, std::span<const double> x,
                                         std::size_t i, std::size_t j, double fd_step);

/// Enumerates the multisets (sorted index tuples) of size k over n nodes.
std::vector<std::vector<std::size_t>> sorted_tuples(std::size_t n, std::size_t k);

}  // namespace rmfg
