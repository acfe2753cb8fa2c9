#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "rmfg/grid.hpp"
#include "rmfg/model.hpp"

namespace rmfg::testing {

inline Model default_model(std::size_t n_cells = 41, ModelConfig config = {}) {
    return Model(config, build_grid(n_cells, config.domain()));
}

inline ModelConfig null_config() {
    ModelConfig c;
    c.c_F = 0.0;
    c.c_G = 0.0;
    c.hamiltonian.scale = 0.0;
    return c;
}

inline TimeGrid default_time(std::size_t n_steps = 100, double T = 0.5) { return TimeGrid(0.0, T, n_steps); }

inline GridMeasure random_measure(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> w(n);
    double total = 0.0;
    for (double& x : w) {
        x = u(rng);
        total += x;
    }
    for (double& x : w) x /= total;
    return GridMeasure(std::move(w));
}

/// Smooth bump centred at c, symmetric when c = 0.5.
inline GridMeasure bump_measure(const Grid1D& grid, double c, double width) {
    std::vector<double> d(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) {
        const double z = (grid.node(k) - c) / width;
        d[k] = 0.2 + std::exp(-z * z);
    }
    return GridMeasure::from_density(grid, d);
}

}  // namespace rmfg::testing
