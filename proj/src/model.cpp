#include "rmfg/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "rmfg/errors.hpp"

namespace rmfg {

void ModelConfig::validate() const {
    if (!(domain_lo < domain_hi)) throw InvalidArgument("domain_lo must be < domain_hi");
    if (!(horizon_T > 0.0)) throw InvalidArgument("horizon_T must be > 0");
    if (!(smoothing_eps > 0.0)) throw InvalidArgument("smoothing_eps must be > 0");
    if (smoothing_steps < 1) throw InvalidArgument("smoothing_steps must be >= 1");
    if (!(c_F >= 0.0) || !(c_G >= 0.0)) throw InvalidArgument("coupling weights must be >= 0");
    if (!(hamiltonian.scale >= 0.0)) throw InvalidArgument("hamiltonian scale must be >= 0");
    if (!(std::abs(hamiltonian.amplitude) < 1.0)) {
        throw InvalidArgument("hamiltonian amplitude must lie in (-1, 1)");
    }
    if (!(diffusion.value > 0.0)) throw InvalidArgument("diffusion value must be > 0");
    if (!(min_ellipticity > 0.0)) throw InvalidArgument("min_ellipticity must be > 0");
}

Model::Model(ModelConfig config, Grid1D grid) : config_(config), grid_(std::move(grid)) {
    config_.validate();
    if (std::abs(grid_.domain().lo - config_.domain_lo) > 1e-14 ||
        std::abs(grid_.domain().hi - config_.domain_hi) > 1e-14) {
        throw InvalidArgument("grid domain does not match model domain");
    }
    two_pi_over_l_ = 2.0 * std::numbers::pi / (config_.domain_hi - config_.domain_lo);

    const std::size_t n = grid_.size();
    a_nodes_.resize(n);
    for (std::size_t k = 0; k < n; ++k) a_nodes_[k] = diffusion(grid_.node(k));
    c_nodes_.resize(n);
    c_faces_.resize(n + 1);
    for (std::size_t k = 0; k < n; ++k) c_nodes_[k] = hamiltonian_scale(grid_.node(k));
    for (std::size_t k = 0; k <= n; ++k) c_faces_[k] = hamiltonian_scale(grid_.face(k));
    lambda_ = *std::min_element(a_nodes_.begin(), a_nodes_.end());
    mu_ = *std::max_element(a_nodes_.begin(), a_nodes_.end());
    if (lambda_ < config_.min_ellipticity) {
        throw InvariantViolation("diffusion a(x) = " + std::to_string(lambda_) + " below ellipticity bound " +
                                 std::to_string(config_.min_ellipticity));
    }

    // k = (S S e_l) / h with S = (I - tau L)^{-K}, tau = eps / K
    const Tridiagonal heat = neumann_heat_operator(grid_, a_nodes_);
    const int steps = config_.smoothing_steps;
    const TridiagonalLU lu(heat.implicit_step(config_.smoothing_eps / steps));
    kernel_.assign(n * n, 0.0);
    std::vector<double> col(n);
    for (std::size_t l = 0; l < n; ++l) {
        std::fill(col.begin(), col.end(), 0.0);
        col[l] = 1.0;
        for (int s = 0; s < 2 * steps; ++s) lu.solve(col);
        for (std::size_t k = 0; k < n; ++k) kernel_[k * n + l] = col[k] / grid_.h();
    }
}

double Model::diffusion(double x) const {
    const auto& d = config_.diffusion;
    if (d.kind == DiffusionSpec::Kind::constant) return d.value;
    return d.value * (1.0 + d.amplitude * std::cos(two_pi_over_l_ * (x - config_.domain_lo)));
}

double Model::sigma(double x) const { return std::sqrt(diffusion(x)); }

double Model::hamiltonian_scale(double x) const {
    const auto& hs = config_.hamiltonian;
    if (hs.amplitude == 0.0) return hs.scale;
    return hs.scale * (1.0 + hs.amplitude * std::cos(two_pi_over_l_ * (x - config_.domain_lo)));
}

double Model::hamiltonian_scale_max() const {
    return config_.hamiltonian.scale * (1.0 + std::abs(config_.hamiltonian.amplitude));
}

double Model::H(double x, double p) const { return hamiltonian::value(hamiltonian_scale(x), p); }

double Model::H_p(double x, double p) const { return hamiltonian::slope(hamiltonian_scale(x), p); }

double Model::H_pp(double x, double p) const { return hamiltonian::curvature(hamiltonian_scale(x), p); }

HamiltonianValue Model::hamiltonian_eval(double x, double p) const {
    if (!std::isfinite(x) || !std::isfinite(p)) {
        throw InvalidArgument("hamiltonian_eval: non-finite input");
    }
    if (!grid_.domain().contains(x)) {
        throw InvalidArgument("hamiltonian_eval: position outside the domain");
    }
    const double c = hamiltonian_scale(x);
    // sqrt(1 + p^2) - 1 loses digits for small p, so value() uses p^2 / (sqrt(1 + p^2) + 1)
    return {hamiltonian::value(c, p), hamiltonian::slope(c, p), hamiltonian::curvature(c, p)};
}

void Model::apply_kernel(std::span<const double> m, std::span<double> out, double weight) const {
    const std::size_t n = grid_.size();
    for (std::size_t k = 0; k < n; ++k) {
        const double* row = kernel_.data() + k * n;
        double s = 0.0;
        for (std::size_t l = 0; l < n; ++l) s += row[l] * m[l];
        out[k] = weight * s;
    }
}

Field Model::coupling_F(const GridMeasure& m) const {
    if (m.size() != grid_.size()) throw InvalidArgument("coupling_F: measure size does not match grid");
    validate_probability(m.weights());
    Field out(grid_.size());
    apply_kernel(m.weights(), out, config_.c_F);
    return out;
}

Field Model::coupling_G(const GridMeasure& m) const {
    if (m.size() != grid_.size()) throw InvalidArgument("coupling_G: measure size does not match grid");
    validate_probability(m.weights());
    Field out(grid_.size());
    apply_kernel(m.weights(), out, config_.c_G);
    return out;
}

namespace {

double normalized_derivative(const Model& model, std::size_t k, std::size_t l, const GridMeasure& m,
                             double weight) {
    const std::size_t n = model.grid().size();
    if (k >= n || l >= n || m.size() != n) throw InvalidArgument("coupling_derivative: invalid node");
    double mean = 0.0;
    for (std::size_t z = 0; z < n; ++z) mean += model.kernel(k, z) * m[z];
    return weight * (model.kernel(k, l) - mean);
}

}  // namespace

double Model::coupling_derivative(std::size_t k, std::size_t l, const GridMeasure& m) const {
    return normalized_derivative(*this, k, l, m, config_.c_F);
}

double Model::coupling_derivative_G(std::size_t k, std::size_t l, const GridMeasure& m) const {
    return normalized_derivative(*this, k, l, m, config_.c_G);
}

std::vector<double> Model::heat_smooth(std::span<const double> weights, double tau) const {
    std::vector<double> out(weights.begin(), weights.end());
    if (tau <= 0.0) return out;
    const int steps = config_.smoothing_steps;
    const TridiagonalLU lu(neumann_heat_operator(grid_, a_nodes_).implicit_step(tau / steps));
    for (int s = 0; s < steps; ++s) lu.solve(out);
    return out;
}

}  // namespace rmfg
