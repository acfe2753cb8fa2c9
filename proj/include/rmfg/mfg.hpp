#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "rmfg/grid.hpp"
#include "rmfg/model.hpp"

namespace rmfg {

struct MfgOptions {
    double damping = 0.5;
    double tol = 1e-8;
    int max_iter = 200;
    /// Floor for the geometric damping reduction applied when the gap grows.
    double min_damping = 1.0 / 64.0;
    /// Anderson mixing depth on top of the damped update; 0 is plain damped Picard.
    int anderson_depth = 5;
};

/// Converged (u, m) pair on [t0, T]. Row n of u and m is the slice at time(n);
/// m row 0 is the initial measure.
struct MfgSolution {
    TimeGrid time;
    TimeField u;
    TimeField m;
    int iterations_used = 0;
    double final_gap = 0.0;
    std::vector<double> gap_history;

    double t0() const { return time.t0(); }
    GridMeasure measure(std::size_t n) const;
};

/// Source callback: fills the node values of the right-hand side at slice n.
using SliceSource = std::function<void(std::size_t n, std::span<double> out)>;

/// Backward semi-implicit HJB sweep from a given terminal slice: implicit
/// Neumann diffusion, Hamiltonian and source explicit at the later slice.
TimeField solve_hjb(const Model& model, const TimeGrid& time, std::span<const double> terminal,
                    const SliceSource& source);

/// HJB with terminal G(., m(T)) and source F(., m(t)) read from the measure path.
TimeField solve_hjb_backward(const TimeField& m_path, const Model& model, const TimeGrid& time);

/// Forward finite-volume Fokker-Planck sweep with upwind drift -H_p(x, Du)
/// and zero flux through both walls. Drift for step n -> n+1 comes from u row n.
TimeField solve_fp_forward(const TimeField& u, const GridMeasure& m0, const Model& model, const TimeGrid& time);

/// Damped Picard iteration on the measure path, optionally Anderson-mixed.
/// The first sweep is undamped. The gap is sup_t d1(Phi(m), m) for the
/// best-response path Phi(m); on convergence the returned m is that response
/// and u is recomputed from it. Throws NonConvergence past max_iter.
MfgSolution solve_mfg(const GridMeasure& m0, const Model& model, const TimeGrid& time,
                      const MfgOptions& options = {}, const TimeField* initial_guess = nullptr);

/// Solve on the tail of a full time grid starting at the lattice time t0.
MfgSolution solve_mfg(const GridMeasure& m0, double t0, const Model& model, const TimeGrid& full_time,
                      const MfgOptions& options = {});

/// Number of explicit drift substeps needed so that dt max|b| / h <= 1.
int cfl_substeps(std::span<const double> face_drift, double dt, double h);

}  // namespace rmfg
