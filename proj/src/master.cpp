#include "rmfg/master.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "mfg_kernels.hpp"
#include "rmfg/errors.hpp"

namespace rmfg {

namespace {

// Normalized flat derivative of weight * k * m at m, applied to rho.
void coupling_direction(const Model& model, std::span<const double> m, std::span<const double> rho, double weight,
                        std::span<double> out, std::span<double> scratch) {
    double mass = 0.0;
    for (double r : rho) mass += r;
    model.apply_kernel(rho, out, weight);
    if (mass == 0.0) return;
    model.apply_kernel(m, scratch, weight);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] -= scratch[k] * mass;
}

void check_finite(std::span<const double> v, const char* what) {
    for (double x : v) {
        if (!std::isfinite(x)) throw InvalidArgument(std::string(what) + ": non-finite entry");
    }
}

}  // namespace

LinearizedSolution solve_linearized(const MfgSolution& base, std::span<const double> rho0, const Model& model,
                                    const LinearizedSources& sources, const MfgOptions& options) {
    const std::size_t n = model.grid().size();
    const std::size_t steps = base.time.n_steps();
    if (rho0.size() != n) throw InvalidArgument("solve_linearized: rho0 size does not match grid");
    check_finite(rho0, "solve_linearized");
    if (base.u.n_times() != steps + 1 || base.m.n_times() != steps + 1 || base.u.n_nodes() != n) {
        throw InvalidArgument("solve_linearized: base solution shape mismatch");
    }
    const bool has_h = sources.h.n_times() > 0;
    const bool has_c = sources.c.n_times() > 0;
    if (has_h && (sources.h.n_times() != steps + 1 || sources.h.n_nodes() != n)) {
        throw InvalidArgument("solve_linearized: h source shape mismatch");
    }
    if (has_c && (sources.c.n_times() < steps || sources.c.n_nodes() != n + 1)) {
        throw InvalidArgument("solve_linearized: c source shape mismatch");
    }
    if (!sources.z_T.empty() && sources.z_T.size() != n) {
        throw InvalidArgument("solve_linearized: terminal datum size mismatch");
    }

    const double h = model.grid().h();
    const double c_F = model.config().c_F;
    const double c_G = model.config().c_G;
    detail::Stepper stepper(model, base.time.dt());
    std::vector<double> src(n), scratch(n);

    auto backward = [&](const TimeField& path) {
        TimeField z(steps + 1, n);
        auto zT = z.row(steps);
        coupling_direction(model, base.m.row(steps), path.row(steps), c_G, zT, scratch);
        if (!sources.z_T.empty()) {
            for (std::size_t k = 0; k < n; ++k) zT[k] += sources.z_T[k];
        }
        for (std::size_t s = steps; s-- > 0;) {
            coupling_direction(model, base.m.row(s + 1), path.row(s + 1), c_F, src, scratch);
            if (has_h) {
                const auto hs = sources.h.row(s + 1);
                for (std::size_t k = 0; k < n; ++k) src[k] += hs[k];
            }
            stepper.hjb_linear_step(z.row(s + 1), base.u.row(s + 1), src, z.row(s));
        }
        return z;
    };

    TimeField path(steps + 1, n);
    for (std::size_t s = 0; s <= steps; ++s) std::copy(rho0.begin(), rho0.end(), path.row(s).begin());

    LinearizedSolution sol;
    detail::PicardMixer mixer(options, steps * n);
    double last_gap = 0.0;
    TimeField response(steps + 1, n);
    std::copy(rho0.begin(), rho0.end(), response.row(0).begin());
    for (int it = 1; it <= options.max_iter; ++it) {
        const TimeField z = backward(path);
        for (std::size_t s = 0; s < steps; ++s) {
            std::span<const double> c_row;
            if (has_c) c_row = sources.c.row(s);
            stepper.fp_linear_step(response.row(s), base.m.row(s), base.u.row(s), z.row(s), c_row,
                                   response.row(s + 1));
        }
        const double gap = detail::path_gap(response, path, h);
        if (!std::isfinite(gap)) throw NumericalError("non-finite linearized Picard gap", static_cast<std::size_t>(it));
        if (gap <= options.tol) {
            sol.iterations_used = it;
            sol.final_gap = gap;
            sol.z = backward(response);
            sol.rho = std::move(response);
            return sol;
        }
        mixer.advance(it, std::span<double>(path.data()).subspan(n),
                      std::span<const double>(response.data()).subspan(n), gap);
        last_gap = gap;
    }
    throw NonConvergence("linearized Picard iteration did not converge", last_gap, options.max_iter);
}

GridMeasure pushforward(const GridMeasure& m, const std::function<double(double)>& phi, const Grid1D& grid) {
    const std::size_t n = grid.size();
    if (m.size() != n) throw InvalidArgument("pushforward: measure does not match grid");
    const Interval dom = grid.domain();
    const double h = grid.h();
    const double slack = 1e-12 * dom.length();
    std::vector<double> image(n + 1);
    for (std::size_t f = 0; f <= n; ++f) {
        const double e = grid.face(f);
        const double g = e + phi(e);
        if (!std::isfinite(g)) throw InvalidArgument("pushforward: non-finite displacement");
        if (g < dom.lo - slack || g > dom.hi + slack) {
            throw InvalidArgument("pushforward: displaced point leaves the domain");
        }
        image[f] = std::clamp(g, dom.lo, dom.hi);
        if (f > 0 && !(image[f] > image[f - 1])) throw InvalidArgument("pushforward: map is not increasing");
    }
    std::vector<double> out(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        if (m[k] == 0.0) continue;
        const double a = image[k];
        const double b = image[k + 1];
        const double density = m[k] / (b - a);
        auto j = static_cast<std::size_t>(std::clamp(std::floor((a - dom.lo) / h), 0.0, static_cast<double>(n - 1)));
        for (; j < n; ++j) {
            const double lo = std::max(a, grid.face(j));
            const double hi = std::min(b, grid.face(j + 1));
            if (hi > lo) out[j] += density * (hi - lo);
            if (grid.face(j + 1) >= b) break;
        }
    }
    double total = 0.0;
    for (double w : out) total += w;
    for (double& w : out) w /= total;
    return GridMeasure(std::move(out));
}

Field gradient_transpose(std::span<const double> c, double h) {
    const std::size_t n = c.size();
    Field w(n, 0.0);
    const double s = 0.5 / h;
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t up = (k + 1 < n) ? k + 1 : k;
        const std::size_t down = (k > 0) ? k - 1 : k;
        w[up] += s * c[k];
        w[down] -= s * c[k];
    }
    return w;
}

std::uint64_t instance_hash(const ModelConfig& c, std::size_t n_cells, const TimeGrid& time,
                            const MfgOptions& options) {
    std::ostringstream os;
    os << std::setprecision(17) << c.domain_lo << ' ' << c.domain_hi << ' ' << c.horizon_T << ' '
       << static_cast<int>(c.diffusion.kind) << ' ' << c.diffusion.value << ' ' << c.diffusion.amplitude << ' '
       << c.hamiltonian.scale << ' ' << c.hamiltonian.amplitude << ' ' << c.smoothing_eps << ' '
       << c.smoothing_steps << ' ' << c.c_F << ' ' << c.c_G << ' ' << n_cells << ' ' << time.t0() << ' '
       << time.T() << ' ' << time.n_steps() << ' ' << options.damping << ' ' << options.tol << ' '
       << options.max_iter << ' ' << options.min_damping << ' ' << options.anderson_depth;
    return hash_string(os.str());
}

MasterEvaluator::MasterEvaluator(Model model, TimeGrid full_time, MfgOptions options,
                                 std::shared_ptr<EvaluationCache> cache)
    : model_(std::move(model)), time_(full_time), options_(options), cache_(std::move(cache)) {
    config_hash_ = instance_hash(model_.config(), model_.grid().size(), time_, options_);
}

void MasterEvaluator::set_mollification(double tau) {
    if (!(tau >= 0.0) || !std::isfinite(tau)) throw InvalidArgument("mollification time must be >= 0");
    mollification_ = tau;
    config_hash_ = hash_doubles(std::span<const double>(&mollification_, 1),
                                instance_hash(model_.config(), model_.grid().size(), time_, options_));
}

std::shared_ptr<const MfgSolution> MasterEvaluator::solve(double t0, const GridMeasure& m0,
                                                          const TimeField* guess) const {
    const std::size_t start = time_.index_of(t0);
    if (start >= time_.n_steps()) throw InvalidArgument("solve: t0 must lie before the horizon");
    return std::make_shared<const MfgSolution>(solve_mfg(m0, model_, time_.tail_from(start), options_, guess));
}

MasterEvaluation MasterEvaluator::eval_U(double t0, const GridMeasure& m0) const {
    MasterEvaluation ev{t0, m0, {}, nullptr};
    if (time_.index_of(t0) == time_.n_steps()) {
        ev.u_slice = model_.coupling_G(m0);
        return ev;
    }
    ev.provenance = solve(t0, m0);
    const auto row = ev.provenance->u.row(0);
    ev.u_slice.assign(row.begin(), row.end());
    return ev;
}

EvaluationCache::Key MasterEvaluator::key(double t0, const GridMeasure& m0) const {
    return {t0, hash_doubles(m0.weights()), config_hash_};
}

Field MasterEvaluator::u_slice(double t0, const GridMeasure& m0) const {
    if (cache_) {
        if (auto hit = cache_->find(key(t0, m0))) return *hit;
    }
    Field u = eval_U(t0, m0).u_slice;
    if (cache_) cache_->insert(key(t0, m0), u);
    return u;
}

Field MasterEvaluator::dirac_direction(std::size_t y, const GridMeasure& m0) const {
    const std::size_t n = grid().size();
    if (y >= n) throw InvalidArgument("measure_derivative: node index out of range");
    std::vector<double> e(n, 0.0);
    e[y] = 1.0;
    if (mollification_ > 0.0) e = model_.heat_smooth(e, mollification_);
    for (std::size_t k = 0; k < n; ++k) e[k] -= m0[k];
    return e;
}

namespace {

// z(t0) for the direction sum_l coef_l (smoothed delta_l - m0).
Field combined_direction(const MasterEvaluator& ev, const MfgSolution& base, std::vector<double> coef) {
    const std::size_t n = coef.size();
    double total = 0.0;
    for (double c : coef) total += c;
    if (ev.mollification() > 0.0) coef = ev.model().heat_smooth(coef, ev.mollification());
    const auto m0 = base.m.row(0);
    for (std::size_t k = 0; k < n; ++k) coef[k] -= total * m0[k];
    const LinearizedSolution lin = solve_linearized(base, coef, ev.model(), {}, ev.options());
    const auto row = lin.z.row(0);
    return Field(row.begin(), row.end());
}

std::vector<double> gradient_row(std::size_t y, std::size_t n, double h) {
    std::vector<double> coef(n, 0.0);
    const std::size_t up = (y + 1 < n) ? y + 1 : y;
    const std::size_t down = (y > 0) ? y - 1 : y;
    coef[up] += 0.5 / h;
    coef[down] -= 0.5 / h;
    return coef;
}

}  // namespace

Field MasterEvaluator::measure_derivative(const MfgSolution& base, std::size_t y) const {
    const auto m0 = base.measure(0);
    const LinearizedSolution lin = solve_linearized(base, dirac_direction(y, m0), model_, {}, options_);
    const auto row = lin.z.row(0);
    return Field(row.begin(), row.end());
}

Field MasterEvaluator::measure_derivative(double t0, const GridMeasure& m0, std::size_t y) const {
    return measure_derivative(*solve(t0, m0), y);
}

Field MasterEvaluator::dm_U(const MfgSolution& base, std::size_t y) const {
    const std::size_t n = grid().size();
    if (y >= n) throw InvalidArgument("dm_U: node index out of range");
    return combined_direction(*this, base, gradient_row(y, n, grid().h()));
}

Field MasterEvaluator::dm_U(double t0, const GridMeasure& m0, std::size_t y) const {
    return dm_U(*solve(t0, m0), y);
}

Field MasterEvaluator::dm_U_at(const MfgSolution& base, double y) const {
    if (!std::isfinite(y) || !grid().domain().contains(y)) throw InvalidArgument("dm_U_at: y outside the domain");
    const std::size_t n = grid().size();
    const auto [k, f] = grid().locate(y);
    auto coef = gradient_row(k, n, grid().h());
    const auto right = gradient_row(k + 1, n, grid().h());
    for (std::size_t l = 0; l < n; ++l) coef[l] = (1.0 - f) * coef[l] + f * right[l];
    return combined_direction(*this, base, std::move(coef));
}

PushforwardDefect MasterEvaluator::pushforward_expansion_check(double t0, const GridMeasure& m0,
                                                               const std::function<double(double)>& phi) const {
    const std::size_t n = grid().size();
    const GridMeasure moved = pushforward(m0, phi, grid());
    const auto base = solve(t0, m0);
    const auto shifted = solve(t0, moved, &base->m);
    std::vector<double> c(n);
    PushforwardDefect out;
    for (std::size_t k = 0; k < n; ++k) {
        const double p = phi(grid().node(k));
        c[k] = m0[k] * p;
        out.phi_norm += m0[k] * p * p;
    }
    out.phi_norm = std::sqrt(out.phi_norm);
    const Field linear = combined_direction(*this, *base, gradient_transpose(c, grid().h()));
    const auto u0 = base->u.row(0);
    const auto u1 = shifted->u.row(0);
    for (std::size_t k = 0; k < n; ++k) out.defect = std::max(out.defect, std::abs(u1[k] - u0[k] - linear[k]));
    return out;
}

}  // namespace rmfg
