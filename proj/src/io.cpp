#include "rmfg/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <sstream>

#include "rmfg/errors.hpp"

namespace rmfg::io {

static_assert(std::endian::native == std::endian::little, "binary layout assumes a little-endian host");

namespace {

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, mode);
    if (!out) throw InvalidArgument("cannot write " + path.string());
    out << std::setprecision(17);
    return out;
}

std::ifstream open_in(const fs::path& path, std::ios::openmode mode = std::ios::in) {
    std::ifstream in(path, mode);
    if (!in) throw InvalidArgument("cannot read " + path.string());
    return in;
}

void write_header(std::ofstream& out, std::int64_t a, std::int64_t b, std::int64_t c) {
    const std::int64_t h[3] = {a, b, c};
    out.write(reinterpret_cast<const char*>(h), sizeof h);
}

void write_doubles(std::ofstream& out, std::span<const double> v) {
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size_bytes()));
}

std::vector<double> read_doubles(std::ifstream& in, std::size_t count, const fs::path& path) {
    std::vector<double> v(count);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) throw InvalidArgument(path.string() + " is truncated");
    return v;
}

}  // namespace

void write_field_csv(const fs::path& path, const Grid1D& grid, std::span<const double> values) {
    if (values.size() != grid.size()) throw InvalidArgument("write_field_csv: size mismatch");
    auto out = open_out(path);
    out << "node,value\n";
    for (std::size_t k = 0; k < values.size(); ++k) out << grid.node(k) << ',' << values[k] << '\n';
}

std::vector<double> read_field_csv(const fs::path& path) {
    auto in = open_in(path);
    std::string line;
    std::getline(in, line);
    std::vector<double> values;
    while (std::getline(in, line)) {
        const auto comma = line.find(',');
        if (comma == std::string::npos) continue;
        values.push_back(std::stod(line.substr(comma + 1)));
    }
    return values;
}

void write_matrix_csv(const fs::path& path, std::size_t rows, std::size_t cols, std::span<const double> values) {
    if (values.size() != rows * cols) throw InvalidArgument("write_matrix_csv: size mismatch");
    auto out = open_out(path);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) out << (c ? "," : "") << values[r * cols + c];
        out << '\n';
    }
}

std::vector<std::vector<double>> read_matrix_csv(const fs::path& path) {
    auto in = open_in(path);
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_solution(const fs::path& directory, const MfgSolution& solution) {
    const std::size_t rows = solution.u.n_times(), cols = solution.u.n_nodes();
    write_matrix_csv(directory / "u.csv", rows, cols, solution.u.data());
    write_matrix_csv(directory / "m.csv", rows, cols, solution.m.data());
    nlohmann::json j{{"iterations_used", solution.iterations_used},
                     {"final_gap", solution.final_gap},
                     {"t0", solution.time.t0()},
                     {"T", solution.time.T()},
                     {"n_steps", solution.time.n_steps()},
                     {"gap_history", solution.gap_history}};
    write_text(directory / "solution.json", j.dump(2) + "\n");
}

void write_tensor_binary(const fs::path& path, const NashTensorField& field) {
    auto out = open_out(path, std::ios::binary);
    write_header(out, static_cast<std::int64_t>(field.N()), static_cast<std::int64_t>(field.shape().n),
                 static_cast<std::int64_t>(field.time().n_steps()));
    write_doubles(out, field.values());
}

NashTensorField read_tensor_binary(const fs::path& path, const Grid1D& grid, const TimeGrid& time) {
    auto in = open_in(path, std::ios::binary);
    std::int64_t h[3];
    in.read(reinterpret_cast<char*>(h), sizeof h);
    if (!in) throw InvalidArgument(path.string() + " has no header");
    if (h[0] < 1 || static_cast<std::size_t>(h[1]) != grid.size() ||
        static_cast<std::size_t>(h[2]) != time.n_steps()) {
        throw InvalidArgument(path.string() + " does not match the requested grid");
    }
    NashTensorField field(static_cast<std::size_t>(h[0]), grid, time);
    field.values() = read_doubles(in, field.values().size(), path);
    return field;
}

void write_tensor_slice_csv(const fs::path& path, const NashTensorField& field, std::size_t s) {
    if (field.N() != 2) throw InvalidArgument("CSV export is available for N = 2 only");
    write_matrix_csv(path, field.shape().n, field.shape().n, field.slice(s));
}

void write_ensemble_binary(const fs::path& path, const PathEnsemble& ens) {
    auto out = open_out(path, std::ios::binary);
    write_header(out, static_cast<std::int64_t>(ens.N), static_cast<std::int64_t>(ens.n_paths),
                 static_cast<std::int64_t>(ens.n_steps));
    for (const auto* v : {&ens.X, &ens.Y, &ens.kX, &ens.kY}) write_doubles(out, *v);
}

PathEnsemble read_ensemble_binary(const fs::path& path, double t0, double dt, std::uint64_t seed) {
    auto in = open_in(path, std::ios::binary);
    std::int64_t h[3];
    in.read(reinterpret_cast<char*>(h), sizeof h);
    if (!in || h[0] < 1 || h[1] < 0 || h[2] < 0) throw InvalidArgument(path.string() + " has a bad header");
    PathEnsemble ens;
    ens.N = static_cast<std::size_t>(h[0]);
    ens.n_paths = static_cast<std::size_t>(h[1]);
    ens.n_steps = static_cast<std::size_t>(h[2]);
    ens.t0 = t0;
    ens.dt = dt;
    ens.seed = seed;
    const std::size_t count = ens.N * ens.n_paths * (ens.n_steps + 1);
    for (auto* v : {&ens.X, &ens.Y, &ens.kX, &ens.kY}) *v = read_doubles(in, count, path);
    return ens;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw InvalidArgument("cannot write " + path.string());
        out << text;
    }
    fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
    auto in = open_in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace rmfg::io
