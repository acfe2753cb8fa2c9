#pragma once

// Single-step kernels shared by the nonlinear MFG solver and its linearization.
// Keeping both on the same code path makes the linearized sweep the exact
// Jacobian of the discrete nonlinear sweep.

#include <cstddef>
#include <deque>
#include <span>
#include <vector>

#include "rmfg/grid.hpp"
#include "rmfg/mfg.hpp"
#include "rmfg/model.hpp"

namespace rmfg::detail {

class Stepper {
public:
    Stepper(const Model& model, double dt);

    const Model& model() const { return model_; }
    double dt() const { return dt_; }
    std::size_t n() const { return n_; }

    /// out = (I - dt A)^{-1} (u_next - dt H(x, D u_next) + dt src)
    void hjb_step(std::span<const double> u_next, std::span<const double> src, std::span<double> out);

    /// Face drift b_f = -H_p(x_f, (u_f - u_{f-1}) / h) on the n+1 faces; walls carry zero.
    void face_drift(std::span<const double> u_slice, std::span<double> b) const;

    /// One forward FP step with the given face drift; returns the substep count.
    int fp_step(std::span<const double> m_in, std::span<const double> b, std::span<double> out);

    /// out = (I - dt A)^{-1} (z_next - dt H_p(x, D u_next) D z_next + dt src)
    void hjb_linear_step(std::span<const double> z_next, std::span<const double> u_next,
                         std::span<const double> src, std::span<double> out);

    /// Linearized FP step about (m_in, u_slice): drift perturbation from z_slice,
    /// extra face flux c_flux (n+1 entries, walls ignored) or empty.
    void fp_linear_step(std::span<const double> rho_in, std::span<const double> m_in,
                        std::span<const double> u_slice, std::span<const double> z_slice,
                        std::span<const double> c_flux, std::span<double> out);

private:
    const TridiagonalLU& fp_lu(int substeps);
    void drift_divergence(std::span<const double> m, std::span<const double> b, double tau,
                          std::span<double> out) const;

    const Model& model_;
    double dt_;
    double h_;
    std::size_t n_;
    Tridiagonal fp_operator_;
    TridiagonalLU hjb_lu_;
    TridiagonalLU fp_lu_;
    int cached_substeps_ = 0;
    TridiagonalLU fp_lu_sub_;
    std::vector<double> grad_;
    std::vector<double> grad2_;
    std::vector<double> b_;
    std::vector<double> db_;
    std::vector<double> m_sub_;
    std::vector<double> m_tmp_;
};

/// Damping schedule for the Picard loops. The first sweep is undamped. Later
/// the factor is halved (down to the floor) when the gap grows after the third
/// iteration or when two successive updates point in opposite directions, and
/// recovers towards the configured value while updates stay aligned.
class DampingController {
public:
    DampingController(const MfgOptions& options, std::size_t size);

    double weight(int iteration) const { return iteration == 1 ? 1.0 : theta_; }
    /// Buffer for the flattened update of the current iteration.
    std::span<double> update() { return delta_; }
    void observe(int iteration, double gap);
    double theta() const { return theta_; }

private:
    double theta_;
    double floor_;
    double ceiling_;
    double prev_gap_;
    std::vector<double> delta_;
    std::vector<double> prev_delta_;
    bool has_prev_ = false;
};

/// Fixed-point update for the Picard loops: x <- next iterate given the
/// response Phi(x). Depth 0 applies the damped update with the controller
/// above; otherwise Anderson mixing over the last `depth` residuals, restarted
/// with half the mixing factor whenever the gap exceeds twice the best gap seen.
class PicardMixer {
public:
    PicardMixer(const MfgOptions& options, std::size_t size);

    void advance(int iteration, std::span<double> x, std::span<const double> fx, double gap);

private:
    DampingController damping_;
    double beta_;
    double floor_;
    std::size_t depth_;
    double best_gap_;
    std::deque<std::vector<double>> dx_;
    std::deque<std::vector<double>> df_;
    std::vector<double> f_;
    std::vector<double> prev_x_;
    std::vector<double> prev_f_;
    bool has_prev_ = false;
};

/// sup over rows 1..n_times-1 of cdf_distance(a.row(s), b.row(s)).
double path_gap(const TimeField& a, const TimeField& b, double h);

}  // namespace rmfg::detail
