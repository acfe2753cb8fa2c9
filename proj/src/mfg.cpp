#include "rmfg/mfg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mfg_kernels.hpp"
#include "rmfg/errors.hpp"

namespace rmfg {

namespace detail {

Stepper::Stepper(const Model& model, double dt)
    : model_(model),
      dt_(dt),
      h_(model.grid().h()),
      n_(model.grid().size()),
      grad_(n_),
      grad2_(n_),
      b_(n_ + 1, 0.0),
      db_(n_ + 1, 0.0),
      m_sub_(n_),
      m_tmp_(n_) {
    const Tridiagonal a = neumann_diffusion_matrix(model.grid(), model.diffusion_nodes());
    hjb_lu_ = TridiagonalLU(a.implicit_step(dt));
    fp_operator_ = a.transpose();
    fp_lu_ = TridiagonalLU(fp_operator_.implicit_step(dt));
}

const TridiagonalLU& Stepper::fp_lu(int substeps) {
    if (substeps == 1) return fp_lu_;
    if (substeps != cached_substeps_) {
        fp_lu_sub_ = TridiagonalLU(fp_operator_.implicit_step(dt_ / substeps));
        cached_substeps_ = substeps;
    }
    return fp_lu_sub_;
}

void Stepper::hjb_step(std::span<const double> u_next, std::span<const double> src, std::span<double> out) {
    const auto& c = model_.hamiltonian_scale_nodes();
    gradient_into(u_next, h_, grad_);
    for (std::size_t k = 0; k < n_; ++k) {
        out[k] = u_next[k] - dt_ * hamiltonian::value(c[k], grad_[k]) + dt_ * src[k];
    }
    hjb_lu_.solve(out);
}

void Stepper::face_drift(std::span<const double> u_slice, std::span<double> b) const {
    const auto& c = model_.hamiltonian_scale_faces();
    b[0] = 0.0;
    b[n_] = 0.0;
    for (std::size_t f = 1; f < n_; ++f) {
        b[f] = -hamiltonian::slope(c[f], (u_slice[f] - u_slice[f - 1]) / h_);
    }
}

void Stepper::drift_divergence(std::span<const double> m, std::span<const double> b, double tau,
                               std::span<double> out) const {
    // out_k = m_k - tau (flux_{k+1/2} - flux_{k-1/2}); upwind face flux, zero at walls
    const double scale = tau / h_;
    double left = 0.0;
    for (std::size_t k = 0; k < n_; ++k) {
        double right = 0.0;
        if (k + 1 < n_) {
            const double v = b[k + 1];
            right = v > 0.0 ? v * m[k] : v * m[k + 1];
        }
        out[k] = m[k] - scale * (right - left);
        left = right;
    }
}

int Stepper::fp_step(std::span<const double> m_in, std::span<const double> b, std::span<double> out) {
    const int substeps = cfl_substeps(b, dt_, h_);
    const double tau = dt_ / substeps;
    const TridiagonalLU& lu = fp_lu(substeps);
    std::copy(m_in.begin(), m_in.end(), m_sub_.begin());
    for (int s = 0; s < substeps; ++s) {
        drift_divergence(m_sub_, b, tau, out);
        lu.solve(out);
        if (s + 1 < substeps) std::copy(out.begin(), out.end(), m_sub_.begin());
    }
    bool clipped = false;
    for (std::size_t k = 0; k < n_; ++k) {
        if (out[k] < 0.0) {
            out[k] = 0.0;
            clipped = true;
        }
    }
    if (clipped) {
        double total = 0.0;
        for (double w : out) total += w;
        for (double& w : out) w /= total;
    }
    return substeps;
}

void Stepper::hjb_linear_step(std::span<const double> z_next, std::span<const double> u_next,
                              std::span<const double> src, std::span<double> out) {
    const auto& c = model_.hamiltonian_scale_nodes();
    gradient_into(u_next, h_, grad_);
    gradient_into(z_next, h_, grad2_);
    for (std::size_t k = 0; k < n_; ++k) {
        out[k] = z_next[k] - dt_ * hamiltonian::slope(c[k], grad_[k]) * grad2_[k] + dt_ * src[k];
    }
    hjb_lu_.solve(out);
}

void Stepper::fp_linear_step(std::span<const double> rho_in, std::span<const double> m_in,
                             std::span<const double> u_slice, std::span<const double> z_slice,
                             std::span<const double> c_flux, std::span<double> out) {
    const auto& c = model_.hamiltonian_scale_faces();
    face_drift(u_slice, b_);
    db_[0] = 0.0;
    db_[n_] = 0.0;
    for (std::size_t f = 1; f < n_; ++f) {
        const double p = (u_slice[f] - u_slice[f - 1]) / h_;
        db_[f] = -hamiltonian::curvature(c[f], p) * (z_slice[f] - z_slice[f - 1]) / h_;
    }
    const int substeps = cfl_substeps(b_, dt_, h_);
    const double tau = dt_ / substeps;
    const double scale = tau / h_;
    const TridiagonalLU& lu = fp_lu(substeps);
    // base measure at each substep, recomputed exactly as the nonlinear sweep does
    std::copy(m_in.begin(), m_in.end(), m_sub_.begin());
    std::vector<double> rho(rho_in.begin(), rho_in.end());
    for (int s = 0; s < substeps; ++s) {
        double left = 0.0;
        for (std::size_t k = 0; k < n_; ++k) {
            double right = 0.0;
            if (k + 1 < n_) {
                const std::size_t f = k + 1;
                const double v = b_[f];
                double base_up;
                if (v > 0.0) {
                    right = v * rho[k];
                    base_up = m_sub_[k];
                } else if (v < 0.0) {
                    right = v * rho[k + 1];
                    base_up = m_sub_[k + 1];
                } else {
                    base_up = 0.5 * (m_sub_[k] + m_sub_[k + 1]);
                }
                right += db_[f] * base_up;
                if (!c_flux.empty()) right -= c_flux[f] * h_;
            }
            out[k] = rho[k] - scale * (right - left);
            left = right;
        }
        lu.solve(out);
        if (s + 1 < substeps) {
            std::copy(out.begin(), out.end(), rho.begin());
            drift_divergence(m_sub_, b_, tau, m_tmp_);
            lu.solve(m_tmp_);
            std::copy(m_tmp_.begin(), m_tmp_.end(), m_sub_.begin());
        }
    }
}

DampingController::DampingController(const MfgOptions& options, std::size_t size)
    : theta_(options.damping),
      floor_(std::min(options.min_damping, options.damping)),
      ceiling_(options.damping),
      prev_gap_(std::numeric_limits<double>::infinity()),
      delta_(size, 0.0),
      prev_delta_(size, 0.0) {}

void DampingController::observe(int iteration, double gap) {
    bool reduce = iteration > 3 && gap > prev_gap_;
    bool aligned = false;
    if (has_prev_ && iteration > 2) {
        double dot = 0.0, a = 0.0, b = 0.0;
        for (std::size_t i = 0; i < delta_.size(); ++i) {
            dot += delta_[i] * prev_delta_[i];
            a += delta_[i] * delta_[i];
            b += prev_delta_[i] * prev_delta_[i];
        }
        if (a > 0.0 && b > 0.0) {
            const double cosine = dot / std::sqrt(a * b);
            if (cosine < -0.5) reduce = true;
            aligned = cosine > 0.9 && gap < prev_gap_;
        }
    }
    if (reduce) {
        theta_ = std::max(0.5 * theta_, floor_);
    } else if (aligned) {
        theta_ = std::min(1.25 * theta_, ceiling_);
    }
    prev_gap_ = gap;
    // rescale to the undamped update so the direction test ignores theta
    const double w = weight(iteration);
    for (std::size_t i = 0; i < delta_.size(); ++i) prev_delta_[i] = delta_[i] / w;
    has_prev_ = iteration > 1;
}

PicardMixer::PicardMixer(const MfgOptions& options, std::size_t size)
    : damping_(options, size),
      beta_(options.damping),
      floor_(std::min(options.min_damping, options.damping)),
      depth_(static_cast<std::size_t>(std::max(options.anderson_depth, 0))),
      best_gap_(std::numeric_limits<double>::infinity()),
      f_(size) {}

void PicardMixer::advance(int iteration, std::span<double> x, std::span<const double> fx, double gap) {
    const std::size_t size = x.size();
    for (std::size_t i = 0; i < size; ++i) f_[i] = fx[i] - x[i];
    if (depth_ == 0) {
        const double w = damping_.weight(iteration);
        auto delta = damping_.update();
        for (std::size_t i = 0; i < size; ++i) {
            delta[i] = w * f_[i];
            x[i] += delta[i];
        }
        damping_.observe(iteration, gap);
        return;
    }

    if (gap > 2.0 * best_gap_) {
        dx_.clear();
        df_.clear();
        has_prev_ = false;
        beta_ = std::max(0.5 * beta_, floor_);
        best_gap_ = gap;
    }
    best_gap_ = std::min(best_gap_, gap);
    if (has_prev_) {
        std::vector<double> dx(size), df(size);
        for (std::size_t i = 0; i < size; ++i) {
            dx[i] = x[i] - prev_x_[i];
            df[i] = f_[i] - prev_f_[i];
        }
        dx_.push_back(std::move(dx));
        df_.push_back(std::move(df));
        if (dx_.size() > depth_) {
            dx_.pop_front();
            df_.pop_front();
        }
    }
    prev_x_.assign(x.begin(), x.end());
    prev_f_ = f_;
    has_prev_ = true;

    const double beta = iteration == 1 ? 1.0 : beta_;
    const std::size_t m = df_.size();
    std::vector<double> gamma(m, 0.0);
    if (m > 0) {
        // least squares min |f - DF gamma| through regularized normal equations
        std::vector<double> a(m * m), b(m);
        double trace = 0.0;
        for (std::size_t p = 0; p < m; ++p) {
            for (std::size_t q = 0; q <= p; ++q) {
                double s = 0.0;
                for (std::size_t i = 0; i < size; ++i) s += df_[p][i] * df_[q][i];
                a[p * m + q] = a[q * m + p] = s;
            }
            double s = 0.0;
            for (std::size_t i = 0; i < size; ++i) s += df_[p][i] * f_[i];
            b[p] = s;
            trace += a[p * m + p];
        }
        for (std::size_t p = 0; p < m; ++p) a[p * m + p] += 1e-10 * trace / static_cast<double>(m) + 1e-300;
        for (std::size_t c = 0; c < m; ++c) {
            std::size_t piv = c;
            for (std::size_t r = c + 1; r < m; ++r) {
                if (std::abs(a[r * m + c]) > std::abs(a[piv * m + c])) piv = r;
            }
            if (piv != c) {
                for (std::size_t k = 0; k < m; ++k) std::swap(a[c * m + k], a[piv * m + k]);
                std::swap(b[c], b[piv]);
            }
            for (std::size_t r = c + 1; r < m; ++r) {
                const double factor = a[r * m + c] / a[c * m + c];
                for (std::size_t k = c; k < m; ++k) a[r * m + k] -= factor * a[c * m + k];
                b[r] -= factor * b[c];
            }
        }
        for (std::size_t c = m; c-- > 0;) {
            double s = b[c];
            for (std::size_t k = c + 1; k < m; ++k) s -= a[c * m + k] * gamma[k];
            gamma[c] = s / a[c * m + c];
        }
        for (double g : gamma) {
            if (!std::isfinite(g)) std::fill(gamma.begin(), gamma.end(), 0.0);
        }
    }
    for (std::size_t i = 0; i < size; ++i) {
        double v = x[i] + beta * f_[i];
        for (std::size_t p = 0; p < m; ++p) v -= gamma[p] * (dx_[p][i] + beta * df_[p][i]);
        x[i] = v;
    }
}

double path_gap(const TimeField& a, const TimeField& b, double h) {
    double gap = 0.0;
    for (std::size_t s = 1; s < a.n_times(); ++s) gap = std::max(gap, cdf_distance(a.row(s), b.row(s), h));
    return gap;
}

}  // namespace detail

int cfl_substeps(std::span<const double> face_drift, double dt, double h) {
    double vmax = 0.0;
    for (double v : face_drift) vmax = std::max(vmax, std::abs(v));
    const double courant = dt * vmax / h;
    if (!std::isfinite(courant)) throw NumericalError("non-finite drift in Fokker-Planck step");
    return courant <= 1.0 ? 1 : static_cast<int>(std::ceil(courant));
}

GridMeasure MfgSolution::measure(std::size_t n) const {
    const auto row = m.row(n);
    return GridMeasure(std::vector<double>(row.begin(), row.end()));
}

TimeField solve_hjb(const Model& model, const TimeGrid& time, std::span<const double> terminal,
                    const SliceSource& source) {
    const std::size_t n = model.grid().size();
    const std::size_t steps = time.n_steps();
    if (terminal.size() != n) throw InvalidArgument("solve_hjb: terminal size does not match grid");
    TimeField u(steps + 1, n);
    std::copy(terminal.begin(), terminal.end(), u.row(steps).begin());
    detail::Stepper stepper(model, time.dt());
    std::vector<double> src(n);
    for (std::size_t s = steps; s-- > 0;) {
        source(s + 1, src);
        stepper.hjb_step(u.row(s + 1), src, u.row(s));
        for (double v : u.row(s)) {
            if (!std::isfinite(v)) throw NumericalError("non-finite value in HJB sweep", s);
        }
    }
    return u;
}

TimeField solve_hjb_backward(const TimeField& m_path, const Model& model, const TimeGrid& time) {
    const std::size_t n = model.grid().size();
    const std::size_t steps = time.n_steps();
    if (m_path.n_times() != steps + 1 || m_path.n_nodes() != n) {
        throw InvalidArgument("solve_hjb_backward: measure path shape mismatch");
    }
    const double c_F = model.config().c_F;
    std::vector<double> terminal(n);
    model.apply_kernel(m_path.row(steps), terminal, model.config().c_G);
    return solve_hjb(model, time, terminal,
                     [&](std::size_t s, std::span<double> out) { model.apply_kernel(m_path.row(s), out, c_F); });
}

TimeField solve_fp_forward(const TimeField& u, const GridMeasure& m0, const Model& model, const TimeGrid& time) {
    const std::size_t n = model.grid().size();
    const std::size_t steps = time.n_steps();
    if (u.n_times() != steps + 1 || u.n_nodes() != n || m0.size() != n) {
        throw InvalidArgument("solve_fp_forward: shape mismatch");
    }
    TimeField m(steps + 1, n);
    std::copy(m0.weights().begin(), m0.weights().end(), m.row(0).begin());
    detail::Stepper stepper(model, time.dt());
    std::vector<double> b(n + 1);
    for (std::size_t s = 0; s < steps; ++s) {
        stepper.face_drift(u.row(s), b);
        stepper.fp_step(m.row(s), b, m.row(s + 1));
    }
    return m;
}

MfgSolution solve_mfg(const GridMeasure& m0, const Model& model, const TimeGrid& time, const MfgOptions& options,
                      const TimeField* initial_guess) {
    const std::size_t n = model.grid().size();
    const std::size_t steps = time.n_steps();
    if (m0.size() != n) throw InvalidArgument("solve_mfg: initial measure does not match grid");
    if (!(options.damping > 0.0 && options.damping <= 1.0)) {
        throw InvalidArgument("solve_mfg: damping must lie in (0, 1]");
    }
    if (!(options.tol > 0.0) || options.max_iter < 1) throw InvalidArgument("solve_mfg: bad tolerance");

    TimeField path(steps + 1, n);
    if (initial_guess) {
        if (initial_guess->n_times() != steps + 1 || initial_guess->n_nodes() != n) {
            throw InvalidArgument("solve_mfg: initial guess shape mismatch");
        }
        path = *initial_guess;
    } else {
        for (std::size_t s = 0; s <= steps; ++s) std::copy(m0.weights().begin(), m0.weights().end(), path.row(s).begin());
    }
    std::copy(m0.weights().begin(), m0.weights().end(), path.row(0).begin());

    MfgSolution sol{time, TimeField(), TimeField(), 0, 0.0, {}};
    const double h = model.grid().h();
    detail::PicardMixer mixer(options, steps * n);
    for (int it = 1; it <= options.max_iter; ++it) {
        const TimeField u = solve_hjb_backward(path, model, time);
        TimeField response = solve_fp_forward(u, m0, model, time);
        const double gap = detail::path_gap(response, path, h);
        sol.gap_history.push_back(gap);
        if (!std::isfinite(gap)) throw NumericalError("non-finite Picard gap", static_cast<std::size_t>(it));
        if (gap <= options.tol) {
            sol.iterations_used = it;
            sol.final_gap = gap;
            sol.u = solve_hjb_backward(response, model, time);
            sol.m = std::move(response);
            return sol;
        }
        mixer.advance(it, std::span<double>(path.data()).subspan(n),
                      std::span<const double>(response.data()).subspan(n), gap);
    }
    throw NonConvergence("MFG Picard iteration did not converge", sol.gap_history.back(), options.max_iter);
}

MfgSolution solve_mfg(const GridMeasure& m0, double t0, const Model& model, const TimeGrid& full_time,
                      const MfgOptions& options) {
    const std::size_t start = full_time.index_of(t0);
    return solve_mfg(m0, model, full_time.tail_from(start), options);
}

}  // namespace rmfg
