#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "rmfg/grid.hpp"

namespace rmfg {

/// a(x) = value * (1 + amplitude * cos(2 pi (x - lo) / L)). Constant when
/// amplitude is zero; the profile is even about the midpoint and flat at the walls.
struct DiffusionSpec {
    enum class Kind { constant, profile };
    Kind kind = Kind::constant;
    double value = 0.1;
    double amplitude = 0.0;
};

/// H(x, p) = c_H(x) (sqrt(1 + p^2) - 1) with c_H(x) = scale * (1 + amplitude * cos(2 pi (x - lo) / L)).
struct HamiltonianSpec {
    double scale = 1.0;
    double amplitude = 0.0;
};

struct ModelConfig {
    double domain_lo = 0.0;
    double domain_hi = 1.0;
    double horizon_T = 0.5;
    DiffusionSpec diffusion;
    HamiltonianSpec hamiltonian;
    double smoothing_eps = 0.05;
    int smoothing_steps = 4;
    double c_F = 1.0;
    double c_G = 1.0;
    double min_ellipticity = 0.05;

    Interval domain() const { return {domain_lo, domain_hi}; }
    /// Throws InvalidArgument on malformed parameters.
    void validate() const;
};

/// Closed forms of c (sqrt(1 + p^2) - 1) and its p-derivatives for a given scale c.
namespace hamiltonian {
inline double value(double c, double p) { return c * (p * p / (std::sqrt(1.0 + p * p) + 1.0)); }
inline double slope(double c, double p) { return c * p / std::sqrt(1.0 + p * p); }
inline double curvature(double c, double p) {
    const double q = 1.0 + p * p;
    return c / (q * std::sqrt(q));
}
}  // namespace hamiltonian

struct HamiltonianValue {
    double H;
    double H_p;
    double H_pp;
};

/// A validated problem instance bound to a spatial grid. Immutable after
/// construction; all members are safe for concurrent reads.
class Model {
public:
    Model(ModelConfig config, Grid1D grid);

    const ModelConfig& config() const { return config_; }
    const Grid1D& grid() const { return grid_; }

    double diffusion(double x) const;
    double sigma(double x) const;
    const std::vector<double>& diffusion_nodes() const { return a_nodes_; }
    double lambda() const { return lambda_; }
    double mu() const { return mu_; }

    double hamiltonian_scale(double x) const;
    double hamiltonian_scale_max() const;
    /// c_H at the nodes and at the n+1 faces.
    const std::vector<double>& hamiltonian_scale_nodes() const { return c_nodes_; }
    const std::vector<double>& hamiltonian_scale_faces() const { return c_faces_; }
    HamiltonianValue hamiltonian_eval(double x, double p) const;
    /// Unchecked hot-path variants.
    double H(double x, double p) const;
    double H_p(double x, double p) const;
    double H_pp(double x, double p) const;

    /// F(., m) = c_F * k * m evaluated at every node.
    Field coupling_F(const GridMeasure& m) const;
    Field coupling_G(const GridMeasure& m) const;
    /// weight * k * m on raw weights; no validation.
    void apply_kernel(std::span<const double> m, std::span<double> out, double weight) const;

    /// Normalized flat derivative dF/dm(x_k, m, y_l).
    double coupling_derivative(std::size_t k, std::size_t l, const GridMeasure& m) const;
    double coupling_derivative_G(std::size_t k, std::size_t l, const GridMeasure& m) const;

    /// Smoothing kernel k(x_k, y_l): density at x_k after running the twice
    /// applied Neumann heat smoothing from unit mass at y_l.
    double kernel(std::size_t k, std::size_t l) const { return kernel_[k * grid_.size() + l]; }
    const std::vector<double>& kernel_matrix() const { return kernel_; }

    /// Runs the Neumann heat smoothing for time tau on node weights.
    std::vector<double> heat_smooth(std::span<const double> weights, double tau) const;

private:
    ModelConfig config_;
    Grid1D grid_;
    std::vector<double> a_nodes_;
    double lambda_ = 0.0;
    double mu_ = 0.0;
    double two_pi_over_l_ = 0.0;
    std::vector<double> c_nodes_;
    std::vector<double> c_faces_;
    std::vector<double> kernel_;
};

}  // namespace rmfg
