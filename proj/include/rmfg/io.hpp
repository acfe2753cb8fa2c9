#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rmfg/grid.hpp"
#include "rmfg/mfg.hpp"
#include "rmfg/nash.hpp"
#include "rmfg/particles.hpp"

namespace rmfg::io {

namespace fs = std::filesystem;

/// "node,value" with the node coordinate, 17 significant digits.
void write_field_csv(const fs::path& path, const Grid1D& grid, std::span<const double> values);
std::vector<double> read_field_csv(const fs::path& path);
/// Rows are time slices, columns nodes; no header.
void write_matrix_csv(const fs::path& path, std::size_t rows, std::size_t cols, std::span<const double> values);
std::vector<std::vector<double>> read_matrix_csv(const fs::path& path);

/// u.csv, m.csv and solution.json (iterations_used, final_gap, t0, T, n_steps).
void write_solution(const fs::path& directory, const MfgSolution& solution);

/// Header of three little-endian int64 (N, n_cells, n_steps) then row-major doubles.
void write_tensor_binary(const fs::path& path, const NashTensorField& field);
/// Rebuilds the field on the given grid and time grid; throws on a size mismatch.
NashTensorField read_tensor_binary(const fs::path& path, const Grid1D& grid, const TimeGrid& time);
/// Slice s of an N = 2 field as a matrix over (x_1, x_2).
void write_tensor_slice_csv(const fs::path& path, const NashTensorField& field, std::size_t s);

/// Header (N, n_paths, n_steps) then X, Y, kX, kY, each [path][step][player].
void write_ensemble_binary(const fs::path& path, const PathEnsemble& ens);
PathEnsemble read_ensemble_binary(const fs::path& path, double t0, double dt, std::uint64_t seed);

/// Writes text through a temporary file and a rename.
void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

}  // namespace rmfg::io
