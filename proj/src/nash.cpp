#include "rmfg/nash.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <string>

#include "rmfg/errors.hpp"
#include "rmfg/parallel.hpp"

namespace rmfg {

namespace {

constexpr std::size_t block = 4096;

std::size_t swap_flat(std::size_t flat, std::span<const std::size_t> idx, const TensorShape& shape, std::size_t j) {
    if (j == 0) return flat;
    const std::size_t s0 = shape.stride(0), sj = shape.stride(j);
    return flat + idx[j] * s0 + idx[0] * sj - idx[0] * s0 - idx[j] * sj;
}

double axis_gradient(std::span<const double> v, std::size_t flat, std::size_t k, std::size_t stride, std::size_t n,
                     double h) {
    const std::size_t up = k + 1 < n ? flat + stride : flat;
    const std::size_t down = k > 0 ? flat - stride : flat;
    return (v[up] - v[down]) / (2.0 * h);
}

void validate_N(std::size_t N, std::size_t n, const NashOptions& options) {
    if (N < 2 || N > 4) throw InvalidArgument("N must be 2, 3 or 4, got " + std::to_string(N));
    if (N == 4) {
        if (!options.allow_coarse) throw BudgetExceeded("N = 4 requires the coarse (expensive) mode");
        if (n > options.coarse_cells) {
            throw BudgetExceeded("N = 4 is limited to " + std::to_string(options.coarse_cells) + " cells, got " +
                                 std::to_string(n));
        }
    }
}

// Average over permutations of slots 1..N-1; src and dst must differ.
void symmetrize(std::span<const double> src, std::span<double> dst, const TensorShape& shape, std::size_t jobs) {
    const std::size_t N = shape.dims;
    if (N <= 2) {
        std::copy(src.begin(), src.end(), dst.begin());
        return;
    }
    const std::size_t size = shape.size();
    parallel_for((size + block - 1) / block, jobs, [&](std::size_t b) {
        std::vector<std::size_t> idx(N), perm(N - 1), moved(N);
        const std::size_t end = std::min(size, (b + 1) * block);
        for (std::size_t flat = b * block; flat < end; ++flat) {
            shape.unflatten(flat, idx);
            std::iota(perm.begin(), perm.end(), std::size_t{1});
            double total = 0.0;
            int count = 0;
            do {
                moved[0] = idx[0];
                for (std::size_t j = 1; j < N; ++j) moved[j] = idx[perm[j - 1]];
                total += src[shape.flat(moved)];
                ++count;
            } while (std::next_permutation(perm.begin(), perm.end()));
            dst[flat] = total / count;
        }
    });
}

}  // namespace

NashTensorField::NashTensorField(std::size_t N, Grid1D grid, TimeGrid time)
    : grid_(std::move(grid)), time_(time), shape_{N, grid_.size()} {
    values_.assign((time_.n_steps() + 1) * shape_.size(), 0.0);
}

double NashTensorField::player_value(std::size_t s, std::size_t i, std::span<const std::size_t> idx) const {
    if (i >= N()) throw InvalidArgument("player index out of range");
    return slice(s)[swap_flat(shape_.flat(idx), idx, shape_, i)];
}

namespace {

std::pair<std::size_t, double> time_locate(const TimeGrid& time, double t) {
    const double u = (t - time.t0()) / time.dt();
    if (!(u >= -1e-9) || u > static_cast<double>(time.n_steps()) + 1e-9) {
        throw InvalidArgument("time outside the tensor field horizon");
    }
    const auto s = static_cast<std::size_t>(
        std::clamp(std::floor(u), 0.0, static_cast<double>(time.n_steps() - 1)));
    return {s, std::clamp(u - static_cast<double>(s), 0.0, 1.0)};
}

std::vector<double> swapped_point(std::span<const double> x, std::size_t i) {
    std::vector<double> y(x.begin(), x.end());
    std::swap(y[0], y[i]);
    return y;
}

}  // namespace

double NashTensorField::player_value_at(double t, std::size_t i, std::span<const double> x) const {
    if (x.size() != N() || i >= N()) throw InvalidArgument("player_value_at: bad configuration");
    const auto [s, f] = time_locate(time_, t);
    const auto y = swapped_point(x, i);
    const double a = interpolate_tensor(slice(s), shape_, grid_, y);
    const double b = interpolate_tensor(slice(s + 1), shape_, grid_, y);
    return (1.0 - f) * a + f * b;
}

double NashTensorField::slot0_gradient(std::size_t s, std::span<const std::size_t> idx) const {
    return axis_gradient(slice(s), shape_.flat(idx), idx[0], shape_.stride(0), shape_.n, grid_.h());
}

double NashTensorField::player_gradient_at(double t, std::size_t i, std::span<const double> x) const {
    const std::size_t N = this->N();
    if (x.size() != N || i >= N) throw InvalidArgument("player_gradient_at: bad configuration");
    const auto [s, f] = time_locate(time_, t);
    const auto y = swapped_point(x, i);
    std::vector<std::size_t> base(N), idx(N);
    std::vector<double> frac(N);
    for (std::size_t d = 0; d < N; ++d) {
        if (!grid_.domain().contains(y[d])) throw InvalidArgument("player_gradient_at: position outside the domain");
        const auto [k, fr] = grid_.locate(y[d]);
        base[d] = k;
        frac[d] = fr;
    }
    double value = 0.0;
    for (std::size_t corner = 0; corner < (std::size_t{1} << N); ++corner) {
        double w = 1.0;
        for (std::size_t d = 0; d < N; ++d) {
            const bool up = (corner >> d) & 1U;
            idx[d] = base[d] + (up ? 1 : 0);
            w *= up ? frac[d] : 1.0 - frac[d];
        }
        if (w == 0.0) continue;
        value += w * ((1.0 - f) * slot0_gradient(s, idx) + f * slot0_gradient(s + 1, idx));
    }
    return value;
}

double NashTensorField::symmetry_defect() const {
    const std::size_t N = this->N();
    if (N <= 2) return 0.0;
    double worst = 0.0;
    std::vector<std::size_t> idx(N);
    for (std::size_t s = 0; s <= time_.n_steps(); ++s) {
        const auto v = slice(s);
        for (std::size_t flat = 0; flat < shape_.size(); ++flat) {
            shape_.unflatten(flat, idx);
            for (std::size_t j = 2; j < N; ++j) {
                std::swap(idx[1], idx[j]);
                worst = std::max(worst, std::abs(v[flat] - v[shape_.flat(idx)]));
                std::swap(idx[1], idx[j]);
            }
        }
    }
    return worst;
}

std::size_t tensor_bytes(std::size_t N, std::size_t n_cells, std::size_t n_steps) {
    double points = 1.0;
    for (std::size_t d = 0; d < N; ++d) points *= static_cast<double>(n_cells);
    const double bytes = points * static_cast<double>(n_steps + 1) * sizeof(double);
    if (bytes > static_cast<double>(std::numeric_limits<std::size_t>::max())) {
        return std::numeric_limits<std::size_t>::max();
    }
    return static_cast<std::size_t>(bytes);
}

void check_nash_budget(std::size_t N, std::size_t n_cells, std::size_t n_steps, const NashOptions& options,
                       std::size_t fields) {
    const std::size_t bytes = tensor_bytes(N, n_cells, n_steps);
    if (bytes / sizeof(double) > 0 && bytes > options.memory_budget_bytes / std::max<std::size_t>(fields, 1)) {
        throw BudgetExceeded("tensor field of " + std::to_string(bytes) + " bytes (x" + std::to_string(fields) +
                             ") exceeds the memory budget of " + std::to_string(options.memory_budget_bytes));
    }
}

double nash_source(const Model& model, std::span<const std::size_t> idx, double weight) {
    const std::size_t N = idx.size();
    double s = 0.0;
    for (std::size_t j = 1; j < N; ++j) s += model.kernel(idx[0], idx[j]);
    return weight * s / static_cast<double>(N - 1);
}

NashTensorField solve_nash(std::size_t N, const Model& model, const TimeGrid& time, const NashOptions& options) {
    const Grid1D& grid = model.grid();
    const std::size_t n = grid.size();
    validate_N(N, n, options);
    check_nash_budget(N, n, time.n_steps(), options);
    if (!(options.tol > 0.0) || options.max_inner < 1) throw InvalidArgument("solve_nash: bad inner tolerance");

    NashTensorField field(N, grid, time);
    const TensorShape shape = field.shape();
    const std::size_t size = shape.size();
    const std::size_t steps = time.n_steps();
    const double dt = time.dt();
    const double h = grid.h();
    const std::size_t blocks = (size + block - 1) / block;
    const auto& c = model.hamiltonian_scale_nodes();

    std::vector<double> source(size);
    {
        auto terminal = field.slice(steps);
        std::vector<std::size_t> idx(N);
        for (std::size_t flat = 0; flat < size; ++flat) {
            shape.unflatten(flat, idx);
            source[flat] = nash_source(model, idx, model.config().c_F);
            terminal[flat] = nash_source(model, idx, model.config().c_G);
        }
    }

    const TridiagonalLU lu(neumann_diffusion_matrix(grid, model.diffusion_nodes()).implicit_step(dt));
    std::vector<double> grad_next(size), grad_w(size), rhs(size), w(size);

    auto slot0_gradient_into = [&](std::span<const double> v, std::vector<double>& out) {
        parallel_for(blocks, options.jobs, [&](std::size_t b) {
            const std::size_t end = std::min(size, (b + 1) * block);
            const std::size_t s0 = shape.stride(0);
            for (std::size_t flat = b * block; flat < end; ++flat) {
                out[flat] = axis_gradient(v, flat, flat / s0, s0, n, h);
            }
        });
    };

    for (std::size_t s = steps; s-- > 0;) {
        const auto next = field.slice(s + 1);
        slot0_gradient_into(next, grad_next);
        std::copy(next.begin(), next.end(), w.begin());
        bool converged = false;
        for (int inner = 1; inner <= options.max_inner; ++inner) {
            slot0_gradient_into(w, grad_w);
            parallel_for(blocks, options.jobs, [&](std::size_t b) {
                std::vector<std::size_t> idx(N);
                const std::size_t end = std::min(size, (b + 1) * block);
                for (std::size_t flat = b * block; flat < end; ++flat) {
                    shape.unflatten(flat, idx);
                    double e = -hamiltonian::value(c[idx[0]], grad_next[flat]) + source[flat];
                    for (std::size_t j = 1; j < N; ++j) {
                        const double own = grad_w[swap_flat(flat, idx, shape, j)];
                        const double dj = axis_gradient(next, flat, idx[j], shape.stride(j), n, h);
                        e -= hamiltonian::slope(c[idx[j]], own) * dj;
                    }
                    rhs[flat] = next[flat] + dt * e;
                }
            });
            for (std::size_t d = 0; d < N; ++d) {
                const std::size_t stride = shape.stride(d);
                const std::size_t lines = size / n;
                parallel_for((lines + block - 1) / block, options.jobs, [&](std::size_t b) {
                    const std::size_t end = std::min(lines, (b + 1) * block);
                    for (std::size_t line = b * block; line < end; ++line) {
                        // line enumerates all index tuples with slot d removed
                        const std::size_t hi = line / stride, lo = line % stride;
                        lu.solve_strided(rhs.data() + hi * stride * n + lo, stride);
                    }
                });
            }
            auto target = field.slice(s);
            symmetrize(rhs, target, shape, options.jobs);
            double change = 0.0;
            for (std::size_t flat = 0; flat < size; ++flat) {
                if (!std::isfinite(target[flat])) throw NumericalError("non-finite value in Nash sweep", s);
                change = std::max(change, std::abs(target[flat] - w[flat]));
            }
            std::copy(target.begin(), target.end(), w.begin());
            if (change <= options.tol) {
                converged = true;
                break;
            }
        }
        if (!converged) {
            throw NonConvergence("Nash feedback iteration did not converge at step " + std::to_string(s), 0.0,
                                 options.max_inner);
        }
    }
    return field;
}

double project_uNi(const MasterEvaluator& master, double t, std::span<const double> x, std::size_t i) {
    if (i >= x.size() || x.size() < 2) throw InvalidArgument("project_uNi: bad player index");
    const GridMeasure m = empirical_measure(x, i, master.grid());
    const Field u = master.u_slice(t, m);
    return interpolate(u, master.grid(), x[i]);
}

std::vector<std::vector<std::size_t>> sorted_tuples(std::size_t n, std::size_t k) {
    std::vector<std::vector<std::size_t>> out;
    std::vector<std::size_t> cur(k, 0);
    if (k == 0) return {{}};
    for (;;) {
        out.push_back(cur);
        std::size_t pos = k;
        while (pos > 0 && cur[pos - 1] == n - 1) --pos;
        if (pos == 0) break;
        ++cur[pos - 1];
        for (std::size_t q = pos; q < k; ++q) cur[q] = cur[pos - 1];
    }
    return out;
}

NashTensorField projection_field(std::size_t N, const MasterEvaluator& master, const NashOptions& options) {
    const Grid1D& grid = master.grid();
    const TimeGrid& time = master.time();
    const std::size_t n = grid.size();
    validate_N(N, n, options);
    check_nash_budget(N, n, time.n_steps(), options);
    NashTensorField field(N, grid, time);
    const TensorShape shape = field.shape();
    const std::size_t steps = time.n_steps();
    const auto tuples = sorted_tuples(n, N - 1);
    const Model& model = master.model();

    parallel_for(tuples.size(), options.jobs, [&](std::size_t t_index) {
        const auto& tuple = tuples[t_index];
        std::vector<double> weights(n, 0.0);
        for (std::size_t k : tuple) weights[k] += 1.0 / static_cast<double>(N - 1);
        const GridMeasure m(weights);
        std::vector<std::vector<std::size_t>> perms;
        {
            std::vector<std::size_t> p = tuple;
            do perms.push_back(p);
            while (std::next_permutation(p.begin(), p.end()));
        }
        std::vector<std::size_t> idx(N);
        auto store = [&](std::size_t s, std::span<const double> u) {
            auto slice = field.slice(s);
            for (const auto& p : perms) {
                for (std::size_t j = 1; j < N; ++j) idx[j] = p[j - 1];
                for (std::size_t x0 = 0; x0 < n; ++x0) {
                    idx[0] = x0;
                    slice[shape.flat(idx)] = u[x0];
                }
            }
        };
        store(steps, model.coupling_G(m));
        std::shared_ptr<const MfgSolution> prev;
        for (std::size_t s = steps; s-- > 0;) {
            std::shared_ptr<const MfgSolution> sol;
            if (prev) {
                TimeField guess(steps - s + 1, n);
                std::copy(weights.begin(), weights.end(), guess.row(0).begin());
                std::copy(weights.begin(), weights.end(), guess.row(1).begin());
                for (std::size_t r = 2; r <= steps - s; ++r) {
                    const auto src = prev->m.row(r - 1);
                    std::copy(src.begin(), src.end(), guess.row(r).begin());
                }
                sol = master.solve(time.time(s), m, &guess);
            } else {
                sol = master.solve(time.time(s), m);
            }
            store(s, sol->u.row(0));
            prev = std::move(sol);
        }
    });
    return field;
}

std::vector<ResidualSample> residual_samples(std::size_t N, const Grid1D& grid, const TimeGrid& time,
                                             std::size_t count, std::uint64_t seed) {
    if (N < 2) throw InvalidArgument("residual_samples: N must be at least 2");
    if (grid.size() < 3 || time.n_steps() < 2) throw InvalidArgument("residual_samples: no interior points");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> node(1, grid.size() - 2);
    std::uniform_int_distribution<std::size_t> step(1, time.n_steps() - 1);
    std::vector<ResidualSample> out(count);
    for (auto& sample : out) {
        sample.step = step(rng);
        sample.nodes.resize(N);
        for (auto& k : sample.nodes) k = node(rng);
    }
    return out;
}

namespace {

// u^N_p on the lattice: the slice of U at step s for the others' node measure.
Field lattice_projection(const MasterEvaluator& master, std::size_t s, std::span<const std::size_t> nodes,
                         std::size_t p) {
    const std::size_t N = nodes.size();
    std::vector<double> w(master.grid().size(), 0.0);
    for (std::size_t j = 0; j < N; ++j) {
        if (j != p) w[nodes[j]] += 1.0 / static_cast<double>(N - 1);
    }
    return master.u_slice(master.time().time(s), GridMeasure(std::move(w)));
}

}  // namespace

ResidualReport nash_residual(const MasterEvaluator& master, std::span<const ResidualSample> samples, std::size_t i,
                             std::size_t jobs) {
    const Model& model = master.model();
    const std::size_t n = master.grid().size();
    const double h = master.grid().h();
    const double dt = master.time().dt();
    const auto& a = model.diffusion_nodes();
    const auto& c = model.hamiltonian_scale_nodes();
    for (const auto& sample : samples) {
        const std::size_t N = sample.nodes.size();
        if (N < 2 || i >= N) throw InvalidArgument("nash_residual: bad player index");
        if (sample.step < 1 || sample.step + 1 > master.time().n_steps()) {
            throw InvalidArgument("nash_residual: sample time must be interior");
        }
        for (std::size_t k : sample.nodes) {
            if (k < 1 || k + 2 > n) throw InvalidArgument("nash_residual: sample nodes must be interior");
        }
    }
    std::vector<double> r(samples.size());
    parallel_for(samples.size(), jobs, [&](std::size_t q) {
        const auto& sample = samples[q];
        const std::size_t N = sample.nodes.size();
        const std::size_t s = sample.step;
        const std::size_t ki = sample.nodes[i];
        const Field u = lattice_projection(master, s, sample.nodes, i);
        const Field later = lattice_projection(master, s + 1, sample.nodes, i);
        const Field earlier = lattice_projection(master, s - 1, sample.nodes, i);
        const double Di = (u[ki + 1] - u[ki - 1]) / (2.0 * h);
        double res = -(later[ki] - earlier[ki]) / (2.0 * dt);
        res -= a[ki] * (u[ki + 1] - 2.0 * u[ki] + u[ki - 1]) / (h * h);
        res += hamiltonian::value(c[ki], Di);
        std::vector<std::size_t> moved(sample.nodes);
        for (std::size_t j = 0; j < N; ++j) {
            if (j == i) continue;
            const std::size_t kj = sample.nodes[j];
            moved[j] = kj + 1;
            const double up = lattice_projection(master, s, moved, i)[ki];
            moved[j] = kj - 1;
            const double down = lattice_projection(master, s, moved, i)[ki];
            moved[j] = kj;
            const Field own = lattice_projection(master, s, sample.nodes, j);
            const double Dj_own = (own[kj + 1] - own[kj - 1]) / (2.0 * h);
            res -= a[kj] * (up - 2.0 * u[ki] + down) / (h * h);
            res += hamiltonian::slope(c[kj], Dj_own) * (up - down) / (2.0 * h);
        }
        double f = 0.0;
        for (std::size_t j = 0; j < N; ++j) {
            if (j != i) f += model.kernel(ki, sample.nodes[j]);
        }
        res -= model.config().c_F * f / static_cast<double>(N - 1);
        r[q] = std::abs(res);
    });
    ResidualReport report;
    report.samples = r.size();
    for (double v : r) {
        report.sup = std::max(report.sup, v);
        report.mean += v;
    }
    if (!r.empty()) report.mean /= static_cast<double>(r.size());
    return report;
}

DerivativeCheck derivative_formula_check(const MasterEvaluator& master, double t, std::span<const double> x,
                                         std::size_t i, std::size_t j, double fd_step) {
    const std::size_t N = x.size();
    if (N < 2 || i >= N || j >= N || i == j) throw InvalidArgument("derivative_formula_check: bad players");
    if (!(fd_step > 0.0)) throw InvalidArgument("derivative_formula_check: step must be > 0");
    const Interval dom = master.grid().domain();
    if (x[j] - fd_step < dom.lo || x[j] + fd_step > dom.hi) {
        throw InvalidArgument("derivative_formula_check: difference stencil leaves the domain");
    }
    std::vector<double> plus(x.begin(), x.end()), minus(x.begin(), x.end());
    plus[j] += fd_step;
    minus[j] -= fd_step;
    DerivativeCheck out;
    out.lhs = (project_uNi(master, t, plus, i) - project_uNi(master, t, minus, i)) / (2.0 * fd_step);
    const auto base = master.solve(t, empirical_measure(x, i, master.grid()));
    const Field dm = master.dm_U_at(*base, x[j]);
    const double d = interpolate(dm, master.grid(), x[i]);
    out.rhs = d / static_cast<double>(N - 1);
    out.rhs_wrong = d / static_cast<double>(N);
    out.gap = std::abs(out.lhs - out.rhs);
    out.gap_wrong = std::abs(out.lhs - out.rhs_wrong);
    return out;
}

}  // namespace rmfg
