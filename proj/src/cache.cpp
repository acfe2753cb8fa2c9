#include "rmfg/cache.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "rmfg/errors.hpp"

namespace rmfg {

std::uint64_t fnv1a(std::span<const unsigned char> bytes, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ULL;
    }
    return h;
}

std::uint64_t hash_doubles(std::span<const double> values, std::uint64_t seed) {
    return fnv1a({reinterpret_cast<const unsigned char*>(values.data()), values.size_bytes()}, seed);
}

std::uint64_t hash_string(const std::string& s, std::uint64_t seed) {
    return fnv1a({reinterpret_cast<const unsigned char*>(s.data()), s.size()}, seed);
}

std::string EvaluationCache::Key::str() const {
    std::ostringstream os;
    os << std::setprecision(17) << t0 << '_' << std::hex << std::setw(16) << std::setfill('0') << measure_hash
       << '_' << std::setw(16) << config_hash;
    return os.str();
}

EvaluationCache::EvaluationCache(std::filesystem::path directory) : directory_(std::move(directory)) {
    std::filesystem::create_directories(*directory_);
    load_index();
}

std::filesystem::path EvaluationCache::directory_from_env(const std::filesystem::path& fallback) {
    if (const char* env = std::getenv("REFLECTED_MFG_CACHE"); env && *env) return env;
    return fallback;
}

std::optional<std::vector<double>> EvaluationCache::find(const Key& key) const {
    std::shared_lock lock(mutex_);
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

void EvaluationCache::insert(const Key& key, std::span<const double> values) {
    std::unique_lock lock(mutex_);
    auto [it, inserted] = entries_.insert_or_assign(key, std::vector<double>(values.begin(), values.end()));
    if (!directory_) return;
    const auto file = *directory_ / (key.str() + ".csv");
    std::ofstream out(file);
    out << "node,value\n" << std::setprecision(17);
    for (std::size_t k = 0; k < it->second.size(); ++k) out << k << ',' << it->second[k] << '\n';
    if (++unindexed_ >= index_batch) {
        write_index();
        unindexed_ = 0;
    }
}

void EvaluationCache::flush() {
    std::unique_lock lock(mutex_);
    if (directory_ && unindexed_ > 0) write_index();
    unindexed_ = 0;
}

EvaluationCache::~EvaluationCache() {
    try {
        flush();
    } catch (...) {
        // a failed index write only loses reuse, never results
    }
}

std::size_t EvaluationCache::size() const {
    std::shared_lock lock(mutex_);
    return entries_.size();
}

void EvaluationCache::load_index() {
    const auto index = *directory_ / "index.json";
    if (!std::filesystem::exists(index)) return;
    nlohmann::json j;
    try {
        std::ifstream in(index);
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("unreadable cache index " + index.string() + ": " + e.what());
    }
    for (const auto& e : j.at("entries")) {
        Key key{e.at("t0").get<double>(), e.at("measure_hash").get<std::uint64_t>(),
                e.at("config_hash").get<std::uint64_t>()};
        std::ifstream payload(*directory_ / e.at("file").get<std::string>());
        if (!payload) continue;
        std::string line;
        std::getline(payload, line);
        std::vector<double> values;
        while (std::getline(payload, line)) {
            const auto comma = line.find(',');
            if (comma == std::string::npos) continue;
            values.push_back(std::stod(line.substr(comma + 1)));
        }
        entries_.emplace(key, std::move(values));
    }
}

void EvaluationCache::write_index() const {
    nlohmann::json j;
    j["entries"] = nlohmann::json::array();
    for (const auto& [key, values] : entries_) {
        j["entries"].push_back({{"t0", key.t0},
                                {"measure_hash", key.measure_hash},
                                {"config_hash", key.config_hash},
                                {"file", key.str() + ".csv"},
                                {"n_nodes", values.size()}});
    }
    const auto tmp = *directory_ / "index.json.tmp";
    {
        std::ofstream out(tmp);
        out << j.dump(2) << '\n';
    }
    std::filesystem::rename(tmp, *directory_ / "index.json");
}

}  // namespace rmfg
