#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

namespace rmfg {

/// FNV-1a over raw bytes; stable across runs and platforms of equal endianness.
std::uint64_t fnv1a(std::span<const unsigned char> bytes, std::uint64_t seed = 14695981039346656037ULL);
std::uint64_t hash_doubles(std::span<const double> values, std::uint64_t seed = 14695981039346656037ULL);
std::uint64_t hash_string(const std::string& s, std::uint64_t seed = 14695981039346656037ULL);

/// Cache of U(t0, ., m0) slices keyed by (t0, hash of m0 weights, config hash).
/// Concurrent lookups share a lock; inserts are exclusive. When a directory is
/// set, entries persist as CSV payloads listed in index.json.
class EvaluationCache {
public:
    struct Key {
        double t0;
        std::uint64_t measure_hash;
        std::uint64_t config_hash;

        std::string str() const;
        auto operator<=>(const Key&) const = default;
    };

    EvaluationCache() = default;
    explicit EvaluationCache(std::filesystem::path directory);
    EvaluationCache(const EvaluationCache&) = delete;
    EvaluationCache& operator=(const EvaluationCache&) = delete;
    /// Writes any pending index entries.
    ~EvaluationCache();

    /// Directory from REFLECTED_MFG_CACHE when set, otherwise `fallback`.
    static std::filesystem::path directory_from_env(const std::filesystem::path& fallback);

    std::optional<std::vector<double>> find(const Key& key) const;
    void insert(const Key& key, std::span<const double> values);
    std::size_t size() const;
    /// Rewrites index.json; inserts only do so every index_batch entries.
    void flush();
    const std::optional<std::filesystem::path>& directory() const { return directory_; }

private:
    void load_index();
    void write_index() const;

    mutable std::shared_mutex mutex_;
    std::map<Key, std::vector<double>> entries_;
    std::optional<std::filesystem::path> directory_;
    static constexpr std::size_t index_batch = 256;
    std::size_t unindexed_ = 0;
};

}  // namespace rmfg
