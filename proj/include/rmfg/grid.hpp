#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace rmfg {

using Field = std::vector<double>;

struct Interval {
    double lo = 0.0;
    double hi = 1.0;

    double length() const { return hi - lo; }
    bool contains(double x) const { return x >= lo && x <= hi; }
};

/// Cell-centered uniform grid on [lo, hi]. Nodes sit at cell centers, faces
/// at cell edges; the two outer faces coincide with the domain walls.
class Grid1D {
public:
    static constexpr std::size_t min_cells = 8;

    Grid1D(std::size_t n_cells, Interval domain);

    std::size_t size() const { return nodes_.size(); }
    double h() const { return h_; }
    Interval domain() const { return domain_; }
    double node(std::size_t k) const { return nodes_[k]; }
    const std::vector<double>& nodes() const { return nodes_; }
    double face(std::size_t k) const { return domain_.lo + static_cast<double>(k) * h_; }

    /// Left node index k in [0, n-2] and fraction f in [0,1] such that x lies
    /// between node k and node k+1; positions outside [node_0, node_{n-1}]
    /// clamp to the boundary cell.
    std::pair<std::size_t, double> locate(double x) const;

private:
    Interval domain_;
    double h_;
    std::vector<double> nodes_;
};

Grid1D build_grid(std::size_t n_cells, Interval domain);

class TimeGrid {
public:
    TimeGrid(double t0, double T, std::size_t n_steps);

    double t0() const { return t0_; }
    double T() const { return T_; }
    std::size_t n_steps() const { return n_steps_; }
    double dt() const { return dt_; }
    double time(std::size_t n) const { return t0_ + static_cast<double>(n) * dt_; }

    /// Index of the slice at time t; throws unless t lies on the lattice.
    std::size_t index_of(double t) const;
    /// Sub-grid covering [time(n), T] with the same step.
    TimeGrid tail_from(std::size_t n) const;

private:
    double t0_;
    double T_;
    std::size_t n_steps_;
    double dt_;
};

/// Probability measure stored as node weights (not densities).
class GridMeasure {
public:
    static constexpr double mass_tolerance = 1e-12;

    GridMeasure() = default;
    /// Validates nonnegativity and unit mass.
    explicit GridMeasure(std::vector<double> weights);

    static GridMeasure uniform(std::size_t n);
    static GridMeasure point_mass(std::size_t n, std::size_t node);
    /// Normalizes a nonnegative density sampled at the nodes.
    static GridMeasure from_density(const Grid1D& grid, std::span<const double> density);

    std::size_t size() const { return weights_.size(); }
    double operator[](std::size_t k) const { return weights_[k]; }
    const std::vector<double>& weights() const { return weights_; }
    std::vector<double> density(const Grid1D& grid) const;
    double mean(const Grid1D& grid) const;

private:
    std::vector<double> weights_;
};

/// Checks the probability invariants; throws InvariantViolation.
void validate_probability(std::span<const double> weights, double tol = GridMeasure::mass_tolerance);

/// Dense (time, node) array, row-major by time slice.
class TimeField {
public:
    TimeField() = default;
    TimeField(std::size_t n_times, std::size_t n_nodes, double fill = 0.0)
        : n_times_(n_times), n_nodes_(n_nodes), data_(n_times * n_nodes, fill) {}

    std::size_t n_times() const { return n_times_; }
    std::size_t n_nodes() const { return n_nodes_; }
    std::span<double> row(std::size_t n) { return {data_.data() + n * n_nodes_, n_nodes_}; }
    std::span<const double> row(std::size_t n) const { return {data_.data() + n * n_nodes_, n_nodes_}; }
    double& operator()(std::size_t n, std::size_t k) { return data_[n * n_nodes_ + k]; }
    double operator()(std::size_t n, std::size_t k) const { return data_[n * n_nodes_ + k]; }
    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

private:
    std::size_t n_times_ = 0;
    std::size_t n_nodes_ = 0;
    std::vector<double> data_;
};

/// Tridiagonal operator: (M u)_k = lower_k u_{k-1} + diag_k u_k + upper_k u_{k+1}.
/// lower_0 and upper_{n-1} are unused and kept at zero.
struct Tridiagonal {
    std::vector<double> lower;
    std::vector<double> diag;
    std::vector<double> upper;

    std::size_t size() const { return diag.size(); }
    void apply(std::span<const double> u, std::span<double> out) const;
    Tridiagonal transpose() const;
    /// I - tau * M
    Tridiagonal implicit_step(double tau) const;
};

/// Thomas factorization, reusable across right-hand sides.
class TridiagonalLU {
public:
    TridiagonalLU() = default;
    explicit TridiagonalLU(const Tridiagonal& m);

    /// In-place solve on a contiguous vector.
    void solve(std::span<double> rhs) const;
    /// In-place solve on a strided line of a larger array.
    void solve_strided(double* data, std::size_t stride) const;
    std::size_t size() const { return inv_pivot_.size(); }

private:
    std::vector<double> lower_;
    std::vector<double> upper_mod_;
    std::vector<double> inv_pivot_;
};

/// Central differences; at the two boundary nodes the ghost value is mirrored
/// (u_{-1} = u_0, u_n = u_{n-1}).
Field gradient(std::span<const double> field, const Grid1D& grid);
void gradient_into(std::span<const double> field, double h, std::span<double> out);

/// a_k (u_{k+1} - 2 u_k + u_{k-1}) / h^2 with mirrored ghosts. Row sums vanish,
/// so the transpose conserves total mass when applied to node weights.
Tridiagonal neumann_diffusion_matrix(const Grid1D& grid, std::span<const double> a_values);

/// Divergence-form (a u_x)_x with zero flux through both walls and face
/// coefficients averaged from the nodes. Symmetric with vanishing row sums.
Tridiagonal neumann_heat_operator(const Grid1D& grid, std::span<const double> a_values);

/// d1 between two node-supported probability measures via the CDF formula.
double wasserstein1(const GridMeasure& m1, const GridMeasure& m2, const Grid1D& grid);
/// Same formula on raw weights: sum_k |C1_k - C2_k| h plus |total mass difference|.
/// Used for signed perturbations and unvalidated iterates.
double cdf_distance(std::span<const double> w1, std::span<const double> w2, double h);

/// Cloud-in-cell deposition onto the two nearest nodes. Each retained particle
/// carries 1/(N-1) when exclude_index is set, 1/N otherwise.
GridMeasure empirical_measure(std::span<const double> positions, std::optional<std::size_t> exclude_index,
                              const Grid1D& grid);
/// Accumulates mass * (CIC weights of x) into weights without validation.
void deposit(std::vector<double>& weights, double x, double mass, const Grid1D& grid);

double interpolate(std::span<const double> field, const Grid1D& grid, double x);

/// Shape of a field over Omega^N on an n-node grid; slot 0 is the slowest index.
struct TensorShape {
    std::size_t dims = 1;
    std::size_t n = 0;

    std::size_t size() const;
    std::size_t stride(std::size_t slot) const;
    std::size_t flat(std::span<const std::size_t> idx) const;
    void unflatten(std::size_t flat_index, std::span<std::size_t> idx) const;
};

/// Multilinear interpolation of a field over Omega^N; clamps like interpolate.
double interpolate_tensor(std::span<const double> field, const TensorShape& shape, const Grid1D& grid,
                          std::span<const double> point);

}  // namespace rmfg
