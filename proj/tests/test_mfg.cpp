#include <doctest.h>

#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "rmfg/errors.hpp"
#include "rmfg/mfg.hpp"
#include "support.hpp"

using namespace rmfg;

namespace {

double sup_abs(const TimeField& f) {
    double s = 0.0;
    for (double v : f.data()) s = std::max(s, std::abs(v));
    return s;
}

double path_distance(const TimeField& a, const TimeField& b, double h, std::size_t first = 0) {
    double d = 0.0;
    for (std::size_t s = first; s < a.n_times(); ++s) d = std::max(d, cdf_distance(a.row(s), b.row(s), h));
    return d;
}

}  // namespace

TEST_CASE("hjb with zero or constant data") {
    const Model model = testing::default_model(20, testing::null_config());
    const TimeGrid time = testing::default_time(50);
    const std::vector<double> zero(20, 0.0);
    auto no_source = [](std::size_t, std::span<double> out) { std::fill(out.begin(), out.end(), 0.0); };
    CHECK(sup_abs(solve_hjb(model, time, zero, no_source)) == 0.0);

    const Model with_h = testing::default_model(20);
    const std::vector<double> g0(20, 0.7);
    const TimeField u = solve_hjb(with_h, time, g0, no_source);
    for (double v : u.data()) CHECK(v == doctest::Approx(0.7).epsilon(1e-13));
}

TEST_CASE("hjb manufactured solution converges at second order in h") {
    // u = exp(-t) cos(pi x) with the matching source
    ModelConfig cfg;
    cfg.hamiltonian.amplitude = 0.2;
    const double T = 0.25;
    auto error = [&](std::size_t n) {
        const Model model = testing::default_model(n, cfg);
        const Grid1D& g = model.grid();
        const TimeGrid time(0.0, T, 10000);
        const double a = model.config().diffusion.value;
        const double pi = std::numbers::pi;
        std::vector<double> terminal(n);
        for (std::size_t k = 0; k < n; ++k) terminal[k] = std::exp(-T) * std::cos(pi * g.node(k));
        const TimeField u = solve_hjb(model, time, terminal, [&](std::size_t s, std::span<double> out) {
            const double t = time.time(s);
            for (std::size_t k = 0; k < n; ++k) {
                const double x = g.node(k);
                const double v = std::exp(-t) * std::cos(pi * x);
                const double p = -pi * std::exp(-t) * std::sin(pi * x);
                out[k] = v + a * pi * pi * v + model.H(x, p);
            }
        });
        double e = 0.0;
        for (std::size_t s = 0; s <= time.n_steps(); s += 100) {
            for (std::size_t k = 0; k < n; ++k) {
                e = std::max(e, std::abs(u(s, k) - std::exp(-time.time(s)) * std::cos(pi * g.node(k))));
            }
        }
        return e;
    };
    const double e10 = error(10), e20 = error(20), e40 = error(40);
    MESSAGE("hjb errors " << e10 << " " << e20 << " " << e40);
    CHECK(std::log2(e10 / e20) >= 1.5);
    CHECK(std::log2(e20 / e40) >= 1.5);
}

TEST_CASE("fp keeps the uniform state and conserves mass") {
    const Model null_model = testing::default_model(30, testing::null_config());
    const TimeGrid time = testing::default_time(40);
    const TimeField zero_u(41, 30, 0.0);
    const TimeField m = solve_fp_forward(zero_u, GridMeasure::uniform(30), null_model, time);
    for (double v : m.data()) CHECK(v == doctest::Approx(1.0 / 30.0).epsilon(1e-13));

    const Model model = testing::default_model(30);
    TimeField u(41, 30);
    for (std::size_t s = 0; s <= 40; ++s) {
        for (std::size_t k = 0; k < 30; ++k) u(s, k) = 3.0 * std::sin(4.0 * model.grid().node(k) + 0.1 * s);
    }
    const TimeField m2 = solve_fp_forward(u, testing::bump_measure(model.grid(), 0.2, 0.1), model, time);
    for (std::size_t s = 0; s <= 40; ++s) {
        const auto row = m2.row(s);
        CHECK(std::abs(std::accumulate(row.begin(), row.end(), 0.0) - 1.0) <= 1e-12);
        for (double v : row) CHECK(v >= 0.0);
    }
}

TEST_CASE("fp matches the Neumann eigen-series") {
    const double a = 0.1, T = 0.1, c = 0.3, w = 0.08;
    const double pi = std::numbers::pi;
    // cosine coefficients of the initial bump by fine quadrature
    const int terms = 60, fine = 20000;
    std::vector<double> coef(terms, 0.0);
    double mass = 0.0;
    for (int q = 0; q < fine; ++q) {
        const double x = (q + 0.5) / fine;
        const double z = (x - c) / w;
        mass += std::exp(-z * z) / fine;
    }
    for (int j = 0; j < terms; ++j) {
        for (int q = 0; q < fine; ++q) {
            const double x = (q + 0.5) / fine;
            const double z = (x - c) / w;
            coef[j] += std::exp(-z * z) / mass * std::cos(j * pi * x) / fine;
        }
        if (j > 0) coef[j] *= 2.0;
    }
    auto exact = [&](double t, double x) {
        double s = 0.0;
        for (int j = 0; j < terms; ++j) s += coef[j] * std::exp(-a * pi * pi * j * j * t) * std::cos(j * pi * x);
        return s;
    };
    auto error = [&](std::size_t n, std::size_t steps) {
        const Model model = testing::default_model(n, testing::null_config());
        const Grid1D& g = model.grid();
        std::vector<double> d(n);
        for (std::size_t k = 0; k < n; ++k) d[k] = std::max(exact(0.0, g.node(k)), 0.0);
        const TimeGrid time(0.0, T, steps);
        const TimeField m = solve_fp_forward(TimeField(steps + 1, n), GridMeasure::from_density(g, d), model, time);
        double e = 0.0;
        for (std::size_t k = 0; k < n; ++k) e = std::max(e, std::abs(m(steps, k) / g.h() - exact(T, g.node(k))));
        return e;
    };
    const double e1 = error(20, 10), e2 = error(40, 20), e3 = error(80, 40);
    MESSAGE("fp errors " << e1 << " " << e2 << " " << e3);
    CHECK(std::log2(e1 / e2) >= 1.0);
    CHECK(std::log2(e2 / e3) >= 1.0);
}

TEST_CASE("null model converges in two iterations with zero value") {
    const Model model = testing::default_model(41, testing::null_config());
    std::mt19937_64 rng(1);
    const MfgSolution sol = solve_mfg(testing::random_measure(41, rng), model, testing::default_time());
    CHECK(sol.iterations_used <= 2);
    CHECK(sup_abs(sol.u) == 0.0);
}

TEST_CASE("default instance: invariants, monotone gap, uniqueness proxy") {
    const Model model = testing::default_model();
    const TimeGrid time = testing::default_time();
    const auto m0 = testing::bump_measure(model.grid(), 0.3, 0.1);
    const auto start = std::chrono::steady_clock::now();
    const MfgSolution sol = solve_mfg(m0, model, time);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    MESSAGE("default solve: " << sol.iterations_used << " iterations, " << secs << " s");
    CHECK(sol.iterations_used < 50);
    CHECK(sol.final_gap <= 1e-8);
    MfgOptions plain;
    plain.anderson_depth = 0;
    const MfgSolution damped = solve_mfg(m0, model, time, plain);
    MESSAGE("plain damped Picard: " << damped.iterations_used << " iterations");
    CHECK(path_distance(sol.m, damped.m, model.grid().h()) <= 10.0 * 1e-8);

    // fixed damping 0.3 without adaptation: residual decreases monotonically after iteration 3
    MfgOptions fixed;
    fixed.anderson_depth = 0;
    fixed.damping = 0.3;
    fixed.min_damping = 0.3;
    const MfgSolution steady = solve_mfg(m0, model, time, fixed);
    for (std::size_t i = 3; i + 1 < steady.gap_history.size(); ++i) {
        CHECK(steady.gap_history[i + 1] < steady.gap_history[i]);
    }

    const std::size_t n = model.grid().size();
    for (std::size_t s = 0; s <= time.n_steps(); ++s) {
        const auto row = sol.m.row(s);
        CHECK(std::abs(std::accumulate(row.begin(), row.end(), 0.0) - 1.0) <= 1e-10);
        for (double v : row) CHECK(v >= 0.0);
    }
    const Field g = model.coupling_G(sol.measure(time.n_steps()));
    for (std::size_t k = 0; k < n; ++k) CHECK(sol.u(time.n_steps(), k) == doctest::Approx(g[k]).epsilon(1e-14));

    TimeField uniform_guess(time.n_steps() + 1, n, 1.0 / static_cast<double>(n));
    const MfgSolution other = solve_mfg(m0, model, time, {}, &uniform_guess);
    CHECK(path_distance(sol.m, other.m, model.grid().h()) <= 10.0 * 1e-8);
}

TEST_CASE("symmetric instance gives symmetric solution") {
    ModelConfig cfg;
    cfg.diffusion.kind = DiffusionSpec::Kind::profile;
    cfg.diffusion.amplitude = 0.3;
    cfg.hamiltonian.amplitude = 0.2;
    const Model model = testing::default_model(41, cfg);
    const MfgSolution sol = solve_mfg(testing::bump_measure(model.grid(), 0.5, 0.15), model, testing::default_time());
    const std::size_t n = 41;
    double asym = 0.0;
    for (std::size_t s = 0; s < sol.u.n_times(); ++s) {
        for (std::size_t k = 0; k < n; ++k) {
            asym = std::max(asym, std::abs(sol.u(s, k) - sol.u(s, n - 1 - k)));
            asym = std::max(asym, std::abs(sol.m(s, k) - sol.m(s, n - 1 - k)));
        }
    }
    CHECK(asym <= 1e-8);
}

TEST_CASE("stability in the initial measure is refinement stable") {
    auto ratio = [](std::size_t n) {
        const Model model = testing::default_model(n);
        const TimeGrid time = testing::default_time();
        const auto m1 = testing::bump_measure(model.grid(), 0.3, 0.1);
        const auto m2 = testing::bump_measure(model.grid(), 0.6, 0.15);
        const MfgSolution a = solve_mfg(m1, model, time), b = solve_mfg(m2, model, time);
        return path_distance(a.m, b.m, model.grid().h(), 1) / wasserstein1(m1, m2, model.grid());
    };
    const double r1 = ratio(41), r2 = ratio(81);
    MESSAGE("stability constants " << r1 << " " << r2);
    CHECK(r1 <= 2.0);
    CHECK(std::abs(r1 - r2) <= 0.1 * r1);
}

TEST_CASE("half-Hoelder time regularity under refinement") {
    auto holder = [](std::size_t steps) {
        const Model model = testing::default_model(41);
        const TimeGrid time(0.0, 0.5, steps);
        const MfgSolution sol = solve_mfg(GridMeasure::point_mass(41, 10), model, time);
        double c = 0.0;
        for (std::size_t s = 0; s < steps; ++s) {
            c = std::max(c, cdf_distance(sol.m.row(s), sol.m.row(s + 1), model.grid().h()) / std::sqrt(time.dt()));
        }
        return c;
    };
    const double c1 = holder(50), c4 = holder(200);
    MESSAGE("Hoelder constants " << c1 << " " << c4);
    CHECK(c4 <= 2.0 * c1);
}

TEST_CASE("solve_mfg input errors") {
    const Model model = testing::default_model(20);
    const TimeGrid time = testing::default_time(10);
    MfgOptions bad;
    bad.damping = 0.0;
    CHECK_THROWS_AS(solve_mfg(GridMeasure::uniform(20), model, time, bad), InvalidArgument);
    CHECK_THROWS_AS(solve_mfg(GridMeasure::uniform(21), model, time), InvalidArgument);
    MfgOptions short_run;
    short_run.max_iter = 1;
    short_run.tol = 1e-14;
    CHECK_THROWS_AS(solve_mfg(GridMeasure::point_mass(20, 0), model, time, short_run), NonConvergence);
}
