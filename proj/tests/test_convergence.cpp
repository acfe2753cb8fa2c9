#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "rmfg/convergence.hpp"
#include "rmfg/errors.hpp"
#include "support.hpp"

using namespace rmfg;

namespace {

ExperimentConfig small_config(ModelConfig model = {}) {
    ExperimentConfig c;
    c.model = model;
    c.n_cells = 15;
    c.n_steps = 40;
    c.w_cells = 15;
    c.value_samples = 30;
    c.residual_samples = 10;
    c.n_paths = 100;
    c.sim_steps = 40;
    return c;
}

}  // namespace

TEST_CASE("rate_fit") {
    const std::vector<double> Ns{2, 3, 4};
    const std::vector<double> inv{0.5 / 2, 0.5 / 3, 0.5 / 4};
    auto f = rate_fit(Ns, inv);
    CHECK_FALSE(f.degenerate);
    CHECK(f.slope == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(f.r2 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::exp(f.intercept) == doctest::Approx(0.5).epsilon(1e-12));
    const std::vector<double> inv2{1.0 / 4, 1.0 / 9, 1.0 / 16};
    CHECK(rate_fit(Ns, inv2).slope == doctest::Approx(-2.0).epsilon(1e-12));
    CHECK(rate_fit(std::vector<double>{2}, std::vector<double>{1.0}).degenerate);
    CHECK(rate_fit(Ns, std::vector<double>{1.0, 0.0, 0.5}).degenerate);
    CHECK(rate_fit(std::vector<double>{2, 2}, std::vector<double>{1.0, 0.5}).degenerate);
}

TEST_CASE("null model: every experiment metric vanishes") {
    ExperimentConfig c = small_config(testing::null_config());
    const auto report = run_all_experiments(c);
    for (const auto& [name, points] : report.metrics) {
        REQUIRE(points.size() == 2);
        for (const auto& p : points) {
            INFO(name << " N=" << p.N);
            CHECK(p.value <= 1e-6);
        }
    }
    CHECK(report.metrics.count("value_gap") == 1);
    CHECK(report.metrics.count("w_gap") == 1);
    CHECK(report.metrics.count("residual") == 1);
    CHECK(report.metrics.count("trajectory_gap") == 1);
    CHECK(report.metrics.count("feedback_gap") == 1);
}

TEST_CASE("value gap uses 1/N weights") {
    ExperimentConfig c = small_config();
    c.value_samples = 0;
    const Model model = experiment_model(c, c.n_cells);
    const auto v = solve_nash(2, model, c.time());
    const MasterEvaluator master(model, c.time());
    const double gap = value_gap(v, master, c);
    // at T and the corner (0, n-1): |G(x_0, delta_{x_1}) - G(x_0, (delta_{x_0} + delta_{x_1}) / 2)|
    const std::size_t n = c.n_cells;
    const double terminal = 0.5 * std::abs(model.kernel(0, n - 1) - model.kernel(0, 0));
    CHECK(gap >= terminal - 1e-12);
    ExperimentConfig only_ends = c;
    only_ends.time_stride = c.n_steps;
    CHECK(value_gap(v, master, only_ends) <= gap + 1e-15);
}

TEST_CASE("w gap with a point mass reduces to one configuration") {
    ExperimentConfig c = small_config();
    const Model model = experiment_model(c, c.w_cells);
    const MasterEvaluator master(model, c.time());
    const std::size_t z0 = 4;
    const auto m0 = GridMeasure::point_mass(c.w_cells, z0);
    for (std::size_t N : {2, 3}) {
        const auto v = solve_nash(N, model, c.time());
        const std::vector<std::size_t> idx(N, z0);
        const double expected = std::abs(v.player_value(0, 0, idx) - master.u_slice(0.0, m0)[z0]);
        const auto exact = w_gap(v, master, m0, c);
        CHECK(exact.value == doctest::Approx(expected).epsilon(1e-12));
        CHECK(exact.std_error == 0.0);
        ExperimentConfig mc = c;
        mc.mc_budget = 3;
        const auto sampled = w_gap(v, master, m0, mc);
        CHECK(sampled.value == doctest::Approx(expected).epsilon(1e-12));
        CHECK(sampled.std_error == doctest::Approx(0.0).scale(1.0).epsilon(1e-9));
    }
}

TEST_CASE("report schema, CSV output and validation") {
    ExperimentConfig c = small_config();
    CHECK_THROWS_AS(experiment_value_convergence([&] {
                        auto bad = c;
                        bad.N_list = {3, 2};
                        return bad;
                    }()),
                    InvalidArgument);
    CHECK_THROWS_AS(experiment_value_convergence([&] {
                        auto bad = c;
                        bad.N_list = {2, 4};
                        return bad;
                    }()),
                    BudgetExceeded);
    const auto r = experiment_w_convergence(c);
    const auto j = nlohmann::json::parse(r.to_json());
    CHECK(j.at("metrics").contains("w_gap"));
    CHECK(j.at("N_list") == nlohmann::json::array({2, 3}));
    CHECK(j.at("slopes").at("w_gap").at("degenerate") == false);
    const auto dir = std::filesystem::temp_directory_path() / "rmfg_report_test";
    std::filesystem::remove_all(dir);
    r.write_csv(dir.string());
    std::ifstream in(dir / "w_gap.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "N,value,stderr,coarse");
    std::filesystem::remove_all(dir);

    ConvergenceReport bad = r;
    bad.metrics["w_gap"][0].value = -1.0;
    CHECK_THROWS_AS(bad.validate(), InvariantViolation);
    ConvergenceReport unordered = r;
    unordered.N_list = {3, 2};
    CHECK_THROWS_AS(unordered.validate(), InvariantViolation);
}
