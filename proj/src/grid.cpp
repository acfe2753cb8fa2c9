#include "rmfg/grid.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "rmfg/errors.hpp"

namespace rmfg {

Grid1D::Grid1D(std::size_t n_cells, Interval domain) : domain_(domain) {
    if (n_cells < min_cells) {
        throw InvalidArgument("grid needs at least " + std::to_string(min_cells) + " cells, got " +
                              std::to_string(n_cells));
    }
    if (!(domain.lo < domain.hi) || !std::isfinite(domain.lo) || !std::isfinite(domain.hi)) {
        throw InvalidArgument("grid domain must satisfy lo < hi");
    }
    h_ = domain.length() / static_cast<double>(n_cells);
    nodes_.resize(n_cells);
    for (std::size_t k = 0; k < n_cells; ++k) {
        nodes_[k] = domain.lo + (static_cast<double>(k) + 0.5) * h_;
    }
}

std::pair<std::size_t, double> Grid1D::locate(double x) const {
    const std::size_t n = nodes_.size();
    const double s = (x - nodes_.front()) / h_;
    if (!(s > 0.0)) {
        return {0, 0.0};
    }
    if (s >= static_cast<double>(n - 1)) {
        return {n - 2, 1.0};
    }
    auto k = static_cast<std::size_t>(s);
    k = std::min(k, n - 2);
    return {k, s - static_cast<double>(k)};
}

Grid1D build_grid(std::size_t n_cells, Interval domain) { return Grid1D(n_cells, domain); }

TimeGrid::TimeGrid(double t0, double T, std::size_t n_steps) : t0_(t0), T_(T), n_steps_(n_steps) {
    if (!(t0 < T) || !std::isfinite(t0) || !std::isfinite(T)) {
        throw InvalidArgument("time grid needs t0 < T");
    }
    if (n_steps == 0) {
        throw InvalidArgument("time grid needs at least one step");
    }
    dt_ = (T - t0) / static_cast<double>(n_steps);
}

std::size_t TimeGrid::index_of(double t) const {
    const double s = (t - t0_) / dt_;
    const double r = std::round(s);
    if (std::abs(s - r) > 1e-7 || r < 0.0 || r > static_cast<double>(n_steps_)) {
        throw InvalidArgument("time " + std::to_string(t) + " is not a slice of the time grid");
    }
    return static_cast<std::size_t>(r);
}

TimeGrid TimeGrid::tail_from(std::size_t n) const {
    if (n >= n_steps_) {
        throw InvalidArgument("tail_from needs at least one remaining step");
    }
    TimeGrid tail = *this;
    tail.t0_ = time(n);
    tail.n_steps_ = n_steps_ - n;
    return tail;
}

void validate_probability(std::span<const double> weights, double tol) {
    double total = 0.0;
    for (double w : weights) {
        if (!std::isfinite(w) || w < 0.0) {
            throw InvariantViolation("measure has a negative or non-finite weight");
        }
        total += w;
    }
    if (std::abs(total - 1.0) > tol) {
        throw InvariantViolation("measure mass " + std::to_string(total) + " differs from 1");
    }
}

GridMeasure::GridMeasure(std::vector<double> weights) : weights_(std::move(weights)) {
    validate_probability(weights_);
}

GridMeasure GridMeasure::uniform(std::size_t n) {
    return GridMeasure(std::vector<double>(n, 1.0 / static_cast<double>(n)));
}

GridMeasure GridMeasure::point_mass(std::size_t n, std::size_t node) {
    if (node >= n) {
        throw InvalidArgument("point mass node out of range");
    }
    std::vector<double> w(n, 0.0);
    w[node] = 1.0;
    return GridMeasure(std::move(w));
}

GridMeasure GridMeasure::from_density(const Grid1D& grid, std::span<const double> density) {
    if (density.size() != grid.size()) {
        throw InvalidArgument("density size does not match grid");
    }
    std::vector<double> w(density.begin(), density.end());
    double total = 0.0;
    for (double& x : w) {
        if (!(x >= 0.0) || !std::isfinite(x)) {
            throw InvalidArgument("density must be finite and nonnegative");
        }
        total += x;
    }
    if (!(total > 0.0)) {
        throw InvalidArgument("density has zero mass");
    }
    for (double& x : w) {
        x /= total;
    }
    return GridMeasure(std::move(w));
}

std::vector<double> GridMeasure::density(const Grid1D& grid) const {
    std::vector<double> d(weights_);
    for (double& x : d) {
        x /= grid.h();
    }
    return d;
}

double GridMeasure::mean(const Grid1D& grid) const {
    double s = 0.0;
    for (std::size_t k = 0; k < weights_.size(); ++k) {
        s += weights_[k] * grid.node(k);
    }
    return s;
}

void Tridiagonal::apply(std::span<const double> u, std::span<double> out) const {
    const std::size_t n = size();
    for (std::size_t k = 0; k < n; ++k) {
        double v = diag[k] * u[k];
        if (k > 0) v += lower[k] * u[k - 1];
        if (k + 1 < n) v += upper[k] * u[k + 1];
        out[k] = v;
    }
}

Tridiagonal Tridiagonal::transpose() const {
    const std::size_t n = size();
    Tridiagonal t{std::vector<double>(n, 0.0), diag, std::vector<double>(n, 0.0)};
    for (std::size_t k = 0; k + 1 < n; ++k) {
        t.upper[k] = lower[k + 1];
        t.lower[k + 1] = upper[k];
    }
    return t;
}

Tridiagonal Tridiagonal::implicit_step(double tau) const {
    Tridiagonal m = *this;
    for (std::size_t k = 0; k < size(); ++k) {
        m.lower[k] = -tau * lower[k];
        m.upper[k] = -tau * upper[k];
        m.diag[k] = 1.0 - tau * diag[k];
    }
    return m;
}

TridiagonalLU::TridiagonalLU(const Tridiagonal& m)
    : lower_(m.lower), upper_mod_(m.size(), 0.0), inv_pivot_(m.size(), 0.0) {
    const std::size_t n = m.size();
    double pivot = m.diag[0];
    for (std::size_t k = 0; k < n; ++k) {
        if (k > 0) {
            pivot = m.diag[k] - lower_[k] * upper_mod_[k - 1];
        }
        if (std::abs(pivot) < 1e-300 || !std::isfinite(pivot)) {
            throw NumericalError("singular tridiagonal system at row " + std::to_string(k));
        }
        inv_pivot_[k] = 1.0 / pivot;
        upper_mod_[k] = (k + 1 < n) ? m.upper[k] * inv_pivot_[k] : 0.0;
    }
}

void TridiagonalLU::solve(std::span<double> rhs) const { solve_strided(rhs.data(), 1); }

void TridiagonalLU::solve_strided(double* data, std::size_t stride) const {
    const std::size_t n = inv_pivot_.size();
    data[0] *= inv_pivot_[0];
    for (std::size_t k = 1; k < n; ++k) {
        double& x = data[k * stride];
        x = (x - lower_[k] * data[(k - 1) * stride]) * inv_pivot_[k];
    }
    for (std::size_t k = n - 1; k-- > 0;) {
        data[k * stride] -= upper_mod_[k] * data[(k + 1) * stride];
    }
}

void gradient_into(std::span<const double> field, double h, std::span<double> out) {
    const std::size_t n = field.size();
    const double inv = 0.5 / h;
    out[0] = (field[1] - field[0]) * inv;
    for (std::size_t k = 1; k + 1 < n; ++k) {
        out[k] = (field[k + 1] - field[k - 1]) * inv;
    }
    out[n - 1] = (field[n - 1] - field[n - 2]) * inv;
}

Field gradient(std::span<const double> field, const Grid1D& grid) {
    if (field.size() != grid.size()) {
        throw InvalidArgument("gradient: field size does not match grid");
    }
    Field out(field.size());
    gradient_into(field, grid.h(), out);
    return out;
}

Tridiagonal neumann_diffusion_matrix(const Grid1D& grid, std::span<const double> a_values) {
    const std::size_t n = grid.size();
    if (a_values.size() != n) {
        throw InvalidArgument("diffusion coefficients do not match grid");
    }
    const double ih2 = 1.0 / (grid.h() * grid.h());
    Tridiagonal m{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
    for (std::size_t k = 0; k < n; ++k) {
        const double c = a_values[k] * ih2;
        // mirrored ghosts fold the missing neighbour back onto the node itself
        if (k > 0) m.lower[k] = c;
        if (k + 1 < n) m.upper[k] = c;
        m.diag[k] = -m.lower[k] - m.upper[k];
    }
    return m;
}

Tridiagonal neumann_heat_operator(const Grid1D& grid, std::span<const double> a_values) {
    const std::size_t n = grid.size();
    if (a_values.size() != n) {
        throw InvalidArgument("diffusion coefficients do not match grid");
    }
    const double ih2 = 1.0 / (grid.h() * grid.h());
    Tridiagonal m{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
    for (std::size_t k = 0; k + 1 < n; ++k) {
        const double face = 0.5 * (a_values[k] + a_values[k + 1]) * ih2;
        m.upper[k] = face;
        m.lower[k + 1] = face;
        m.diag[k] -= face;
        m.diag[k + 1] -= face;
    }
    return m;
}

double cdf_distance(std::span<const double> w1, std::span<const double> w2, double h) {
    double c1 = 0.0;
    double c2 = 0.0;
    double d = 0.0;
    const std::size_t n = w1.size();
    for (std::size_t k = 0; k + 1 < n; ++k) {
        c1 += w1[k];
        c2 += w2[k];
        d += std::abs(c1 - c2);
    }
    c1 += w1[n - 1];
    c2 += w2[n - 1];
    return d * h + std::abs(c1 - c2);
}

double wasserstein1(const GridMeasure& m1, const GridMeasure& m2, const Grid1D& grid) {
    if (m1.size() != grid.size() || m2.size() != grid.size()) {
        throw InvalidArgument("wasserstein1: measure size does not match grid");
    }
    return cdf_distance(m1.weights(), m2.weights(), grid.h());
}

void deposit(std::vector<double>& weights, double x, double mass, const Grid1D& grid) {
    const auto [k, f] = grid.locate(x);
    weights[k] += (1.0 - f) * mass;
    weights[k + 1] += f * mass;
}

GridMeasure empirical_measure(std::span<const double> positions, std::optional<std::size_t> exclude_index,
                              const Grid1D& grid) {
    const std::size_t count = positions.size();
    if (exclude_index && *exclude_index >= count) {
        throw InvalidArgument("empirical_measure: excluded index out of range");
    }
    const std::size_t retained = exclude_index ? count - 1 : count;
    if (retained == 0) {
        throw InvalidArgument("empirical_measure: no particles retained");
    }
    const double mass = 1.0 / static_cast<double>(retained);
    std::vector<double> w(grid.size(), 0.0);
    for (std::size_t j = 0; j < count; ++j) {
        if (exclude_index && j == *exclude_index) continue;
        if (!std::isfinite(positions[j]) || !grid.domain().contains(positions[j])) {
            throw InvalidArgument("empirical_measure: particle outside the domain");
        }
        deposit(w, positions[j], mass, grid);
    }
    // summation order leaves the total within a few ulps of one
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    for (double& x : w) x /= total;
    return GridMeasure(std::move(w));
}

double interpolate(std::span<const double> field, const Grid1D& grid, double x) {
    if (field.size() != grid.size()) {
        throw InvalidArgument("interpolate: field size does not match grid");
    }
    const auto [k, f] = grid.locate(x);
    return (1.0 - f) * field[k] + f * field[k + 1];
}

std::size_t TensorShape::size() const {
    std::size_t s = 1;
    for (std::size_t d = 0; d < dims; ++d) s *= n;
    return s;
}

std::size_t TensorShape::stride(std::size_t slot) const {
    std::size_t s = 1;
    for (std::size_t d = slot + 1; d < dims; ++d) s *= n;
    return s;
}

std::size_t TensorShape::flat(std::span<const std::size_t> idx) const {
    std::size_t f = 0;
    for (std::size_t d = 0; d < dims; ++d) f = f * n + idx[d];
    return f;
}

void TensorShape::unflatten(std::size_t flat_index, std::span<std::size_t> idx) const {
    for (std::size_t d = dims; d-- > 0;) {
        idx[d] = flat_index % n;
        flat_index /= n;
    }
}

double interpolate_tensor(std::span<const double> field, const TensorShape& shape, const Grid1D& grid,
                          std::span<const double> point) {
    if (field.size() != shape.size() || point.size() != shape.dims || shape.n != grid.size()) {
        throw InvalidArgument("interpolate_tensor: shape mismatch");
    }
    constexpr std::size_t max_dims = 8;
    if (shape.dims > max_dims) {
        throw InvalidArgument("interpolate_tensor: too many dimensions");
    }
    std::size_t base[max_dims];
    double frac[max_dims];
    for (std::size_t d = 0; d < shape.dims; ++d) {
        const auto [k, f] = grid.locate(point[d]);
        base[d] = k;
        frac[d] = f;
    }
    double result = 0.0;
    const std::size_t corners = std::size_t{1} << shape.dims;
    for (std::size_t c = 0; c < corners; ++c) {
        double weight = 1.0;
        std::size_t flat = 0;
        for (std::size_t d = 0; d < shape.dims; ++d) {
            const bool up = (c >> (shape.dims - 1 - d)) & 1U;
            weight *= up ? frac[d] : 1.0 - frac[d];
            flat = flat * shape.n + base[d] + (up ? 1 : 0);
        }
        if (weight != 0.0) result += weight * field[flat];
    }
    return result;
}

}  // namespace rmfg
