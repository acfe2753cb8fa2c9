#include "rmfg/particles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>

#include "rmfg/errors.hpp"
#include "rmfg/parallel.hpp"

namespace rmfg {

ReflectedStep reflect_step(double x, double drift, double sigma, double dt, double dW, Interval domain) {
    const double proposal = x + drift * dt + std::sqrt(2.0) * sigma * dW;
    if (domain.contains(proposal)) return {proposal, 0.0};
    const double L = domain.hi - domain.lo;
    double y = std::fmod(proposal - domain.lo, 2.0 * L);
    if (y < 0.0) y += 2.0 * L;
    if (y > L) y = 2.0 * L - y;
    const double folded = std::clamp(domain.lo + y, domain.lo, domain.hi);
    return {folded, std::abs(proposal - folded)};
}

namespace rng {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t bits(std::uint64_t seed, std::uint64_t path, std::uint64_t player, std::uint64_t step,
                   std::uint64_t lane) {
    std::uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ path);
    h = splitmix64(h ^ (player << 32 | lane));
    return splitmix64(h ^ step);
}

double uniform(std::uint64_t seed, std::uint64_t path, std::uint64_t player, std::uint64_t step, std::uint64_t lane) {
    return (static_cast<double>(bits(seed, path, player, step, lane) >> 11) + 0.5) * 0x1.0p-53;
}

double normal(std::uint64_t seed, std::uint64_t path, std::uint64_t player, std::uint64_t step) {
    const double u1 = uniform(seed, path, player, step, 0);
    const double u2 = uniform(seed, path, player, step, 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace rng

namespace {

// lane reserved for initial draws so they never collide with increments
constexpr std::uint64_t initial_lane = 7;

}  // namespace

std::vector<double> sample_initial(std::size_t N, std::size_t n_paths, const GridMeasure& m0, const Grid1D& grid,
                                   std::uint64_t seed) {
    if (m0.size() != grid.size()) throw InvalidArgument("sample_initial: measure and grid differ in size");
    std::vector<double> cdf(m0.size());
    std::partial_sum(m0.weights().begin(), m0.weights().end(), cdf.begin());
    std::vector<double> out(N * n_paths);
    for (std::size_t p = 0; p < n_paths; ++p) {
        for (std::size_t i = 0; i < N; ++i) {
            const double u = rng::uniform(seed, p, i, 0, initial_lane) * cdf.back();
            auto k = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
            k = std::min(k, cdf.size() - 1);
            while (k > 0 && m0[k] == 0.0) --k;
            out[p * N + i] = grid.node(k);
        }
    }
    return out;
}

namespace {

void check_compatible(const NashTensorField& f, const Model& model, const char* what) {
    if (f.shape().n != model.grid().size() || f.grid().h() != model.grid().h()) {
        throw InvalidArgument(std::string(what) + " field lives on a different grid");
    }
}

}  // namespace

PathEnsemble simulate_coupled(const NashTensorField& nash, const NashTensorField& projection, const Model& model,
                              const GridMeasure& m0, const SimulationOptions& options) {
    const std::size_t N = nash.N();
    if (projection.N() != N) throw InvalidArgument("simulate_coupled: Nash and projection fields differ in N");
    check_compatible(nash, model, "Nash");
    check_compatible(projection, model, "projection");
    const TimeGrid& time = nash.time();
    if (std::abs(projection.time().t0() - time.t0()) > 1e-12 || std::abs(projection.time().T() - time.T()) > 1e-12) {
        throw InvalidArgument("simulate_coupled: fields span different horizons");
    }
    if (options.n_paths == 0 || options.n_steps == 0) throw InvalidArgument("simulate_coupled: empty ensemble");
    const double entries =
        6.0 * static_cast<double>(N) * static_cast<double>(options.n_paths) * static_cast<double>(options.n_steps + 1);
    if (entries > static_cast<double>(options.max_entries)) {
        throw BudgetExceeded("ensemble needs " + std::to_string(static_cast<long long>(entries)) +
                             " stored values, budget is " + std::to_string(options.max_entries));
    }

    PathEnsemble ens;
    ens.N = N;
    ens.n_paths = options.n_paths;
    ens.n_steps = options.n_steps;
    ens.t0 = time.t0();
    ens.dt = (time.T() - time.t0()) / static_cast<double>(options.n_steps);
    ens.seed = options.seed;
    const std::size_t total = N * options.n_paths * (options.n_steps + 1);
    for (auto* v : {&ens.X, &ens.Y, &ens.kX, &ens.kY, &ens.bX, &ens.bY}) v->assign(total, 0.0);

    const auto Z = sample_initial(N, options.n_paths, m0, model.grid(), options.seed);
    const Interval dom = model.grid().domain();
    const double sqdt = std::sqrt(ens.dt);

    parallel_for(options.n_paths, options.jobs, [&](std::size_t p) {
        std::vector<double> x(Z.begin() + p * N, Z.begin() + (p + 1) * N), y = x;
        std::vector<double> bx(N), by(N);
        for (std::size_t i = 0; i < N; ++i) {
            ens.X[ens.at(p, 0, i)] = x[i];
            ens.Y[ens.at(p, 0, i)] = y[i];
        }
        for (std::size_t s = 0; s < options.n_steps; ++s) {
            const double t = ens.time(s);
            for (std::size_t i = 0; i < N; ++i) {
                bx[i] = -model.H_p(x[i], projection.player_gradient_at(t, i, x));
                by[i] = -model.H_p(y[i], nash.player_gradient_at(t, i, y));
            }
            for (std::size_t i = 0; i < N; ++i) {
                const double dW = sqdt * rng::normal(options.seed, p, i, s + 1);
                const auto rx = reflect_step(x[i], bx[i], model.sigma(x[i]), ens.dt, dW, dom);
                const auto ry = reflect_step(y[i], by[i], model.sigma(y[i]), ens.dt, dW, dom);
                const std::size_t here = ens.at(p, s, i), next = ens.at(p, s + 1, i);
                ens.bX[here] = bx[i];
                ens.bY[here] = by[i];
                x[i] = rx.x;
                y[i] = ry.x;
                ens.X[next] = rx.x;
                ens.Y[next] = ry.x;
                ens.kX[next] = ens.kX[here] + rx.dk;
                ens.kY[next] = ens.kY[here] + ry.dk;
            }
        }
    });
    for (std::size_t k = 0; k < total; ++k) {
        if (!dom.contains(ens.X[k]) || !dom.contains(ens.Y[k])) {
            throw InvariantViolation("simulated position left the domain");
        }
    }
    return ens;
}

namespace {

// Jackknife of theta = sup_t mean_p d(p, t), given d laid out [path][time].
Estimate jackknife_sup_mean(const std::vector<double>& d, std::size_t n_paths, std::size_t n_times) {
    std::vector<double> sum(n_times, 0.0);
    for (std::size_t p = 0; p < n_paths; ++p) {
        for (std::size_t t = 0; t < n_times; ++t) sum[t] += d[p * n_times + t];
    }
    const double n = static_cast<double>(n_paths);
    Estimate e;
    e.value = *std::max_element(sum.begin(), sum.end()) / n;
    if (n_paths < 2) return e;
    std::vector<double> loo(n_paths);
    for (std::size_t p = 0; p < n_paths; ++p) {
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t < n_times; ++t) best = std::max(best, (sum[t] - d[p * n_times + t]) / (n - 1.0));
        loo[p] = best;
    }
    const double mean = std::accumulate(loo.begin(), loo.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : loo) ss += (v - mean) * (v - mean);
    e.std_error = std::sqrt((n - 1.0) / n * ss);
    return e;
}

Estimate mean_estimate(const std::vector<double>& v) {
    const double n = static_cast<double>(v.size());
    Estimate e;
    if (v.empty()) return e;
    e.value = std::accumulate(v.begin(), v.end(), 0.0) / n;
    if (v.size() < 2) return e;
    double ss = 0.0;
    for (double x : v) ss += (x - e.value) * (x - e.value);
    e.std_error = std::sqrt(ss / (n - 1.0) / n);
    return e;
}

}  // namespace

TrajectoryGap trajectory_gap(const PathEnsemble& ens) {
    const std::size_t T = ens.n_steps + 1;
    TrajectoryGap out;
    std::vector<double> d(ens.n_paths * T), pooled(ens.n_paths * T, 0.0);
    for (std::size_t i = 0; i < ens.N; ++i) {
        for (std::size_t p = 0; p < ens.n_paths; ++p) {
            for (std::size_t s = 0; s < T; ++s) {
                const double diff = ens.X[ens.at(p, s, i)] - ens.Y[ens.at(p, s, i)];
                d[p * T + s] = diff * diff;
                pooled[p * T + s] += diff * diff / static_cast<double>(ens.N);
            }
        }
        out.per_player.push_back(jackknife_sup_mean(d, ens.n_paths, T));
    }
    out.pooled = jackknife_sup_mean(pooled, ens.n_paths, T);
    return out;
}

FeedbackGap feedback_gap(const PathEnsemble& ens, const NashTensorField& nash, const NashTensorField& projection) {
    const std::size_t N = ens.N;
    if (nash.N() != N || projection.N() != N) throw InvalidArgument("feedback_gap: N mismatch");
    std::vector<double> integral(ens.n_paths), initial(ens.n_paths);
    for (std::size_t p = 0; p < ens.n_paths; ++p) {
        std::vector<double> y(N);
        double acc = 0.0;
        for (std::size_t s = 0; s <= ens.n_steps; ++s) {
            for (std::size_t i = 0; i < N; ++i) y[i] = ens.Y[ens.at(p, s, i)];
            const double t = ens.time(s);
            double g = 0.0;
            for (std::size_t i = 0; i < N; ++i) {
                const double diff = nash.player_gradient_at(t, i, y) - projection.player_gradient_at(t, i, y);
                g += diff * diff / static_cast<double>(N);
            }
            const double w = (s == 0 || s == ens.n_steps) ? 0.5 : 1.0;
            acc += w * ens.dt * g;
            if (s == 0) {
                double v = 0.0;
                for (std::size_t i = 0; i < N; ++i) {
                    v += std::abs(projection.player_value_at(t, i, y) - nash.player_value_at(t, i, y));
                }
                initial[p] = v / static_cast<double>(N);
            }
        }
        integral[p] = acc;
    }
    FeedbackGap out;
    out.integral = mean_estimate(integral);
    out.t0_gap = mean_estimate(initial);
    out.t0_gap_max = initial.empty() ? 0.0 : *std::max_element(initial.begin(), initial.end());
    return out;
}

std::vector<TestFunction> neumann_test_functions(Interval domain) {
    const double lo = domain.lo, L = domain.hi - domain.lo;
    const double pi = std::numbers::pi;
    std::vector<TestFunction> out;
    for (int k = 1; k <= 3; ++k) {
        const double w = k * pi / L;
        out.push_back({"cos" + std::to_string(k), [=](double, double x) { return std::cos(w * (x - lo)); },
                       [](double, double) { return 0.0; },
                       [=](double, double x) { return -w * std::sin(w * (x - lo)); },
                       [=](double, double x) { return -w * w * std::cos(w * (x - lo)); }});
    }
    out.push_back({"smoothstep",
                   [=](double, double x) {
                       const double z = (x - lo) / L;
                       return z * z * (3.0 - 2.0 * z);
                   },
                   [](double, double) { return 0.0; },
                   [=](double, double x) {
                       const double z = (x - lo) / L;
                       return 6.0 * z * (1.0 - z) / L;
                   },
                   [=](double, double x) {
                       const double z = (x - lo) / L;
                       return (6.0 - 12.0 * z) / (L * L);
                   }});
    const double w = pi / L;
    out.push_back({"decaying_cos1", [=](double t, double x) { return std::exp(-t) * std::cos(w * (x - lo)); },
                   [=](double t, double x) { return -std::exp(-t) * std::cos(w * (x - lo)); },
                   [=](double t, double x) { return -w * std::exp(-t) * std::sin(w * (x - lo)); },
                   [=](double t, double x) { return -w * w * std::exp(-t) * std::cos(w * (x - lo)); }});
    return out;
}

TestFunction boundary_violating_function(Interval domain) {
    const double lo = domain.lo, L = domain.hi - domain.lo;
    return {"square",
            [=](double, double x) {
                const double z = (x - lo) / L;
                return z * z;
            },
            [](double, double) { return 0.0; }, [=](double, double x) { return 2.0 * (x - lo) / (L * L); },
            [=](double, double) { return 2.0 / (L * L); }};
}

ItoCheck ito_consistency_check(const TestFunction& f, const PathEnsemble& ens, const Model& model,
                               std::size_t player) {
    if (player >= ens.N) throw InvalidArgument("ito_consistency_check: player out of range");
    if (ens.n_paths < 2) throw InvalidArgument("ito_consistency_check: need at least two paths");
    std::vector<double> lhs(ens.n_paths), rhs(ens.n_paths), defect(ens.n_paths);
    for (std::size_t p = 0; p < ens.n_paths; ++p) {
        double acc = 0.0;
        for (std::size_t s = 0; s < ens.n_steps; ++s) {
            const double t = ens.time(s);
            const double x = ens.X[ens.at(p, s, player)];
            const double b = ens.bX[ens.at(p, s, player)];
            acc += ens.dt * (f.phi_t(t, x) + model.diffusion(x) * f.phi_xx(t, x) + b * f.phi_x(t, x));
        }
        const double end = f.phi(ens.time(ens.n_steps), ens.X[ens.at(p, ens.n_steps, player)]);
        const double start = f.phi(ens.t0, ens.X[ens.at(p, 0, player)]);
        lhs[p] = end - start;
        rhs[p] = acc;
        defect[p] = lhs[p] - rhs[p];
    }
    ItoCheck out;
    out.lhs = mean_estimate(lhs).value;
    out.rhs = mean_estimate(rhs).value;
    const Estimate d = mean_estimate(defect);
    out.defect = d.value;
    out.std_error = d.std_error;
    return out;
}

}  // namespace rmfg
