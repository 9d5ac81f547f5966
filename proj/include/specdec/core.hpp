// Copyright 2026 The specdec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace specdec {

using TokenId = int32_t;
using TokenSeq = std::vector<TokenId>;

// Reserved id fed to embedding maps when a context window slot is empty.
inline constexpr TokenId kPadToken = -1;

struct InvalidDistribution : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct InvalidK : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Vocabulary of V token ids {0, ..., V-1}, with optional display strings.
class Vocabulary {
public:
    explicit Vocabulary(int32_t size, std::vector<std::string> names = {})
        : size_(size), names_(std::move(names)) {
        if (size_ < 2) {
            throw std::invalid_argument("Vocabulary: size must be >= 2");
        }
        if (!names_.empty() && static_cast<int32_t>(names_.size()) != size_) {
            throw std::invalid_argument("Vocabulary: name table size mismatch");
        }
    }

    int32_t size() const { return size_; }

    bool contains(TokenId id) const { return id >= 0 && id < size_; }

    std::string display(TokenId id) const {
        if (!contains(id)) return "<invalid:" + std::to_string(id) + ">";
        if (names_.empty()) return std::to_string(id);
        return names_[static_cast<size_t>(id)];
    }

    void check(TokenId id) const {
        if (!contains(id)) {
            throw std::out_of_range("token id " + std::to_string(id) +
                                    " outside vocabulary of size " + std::to_string(size_));
        }
    }

    void check(std::span<const TokenId> seq) const {
        for (TokenId id : seq) check(id);
    }

private:
    int32_t size_;
    std::vector<std::string> names_;
};

namespace detail {

// splitmix64 finalizer; the backbone of every deterministic stream here.
inline uint64_t mix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

inline uint64_t hash_combine(uint64_t a, uint64_t b) {
    return mix64(a ^ (mix64(b) + 0x9E3779B97F4A7C15ull + (a << 6) + (a >> 2)));
}

// Hexfloat formatting for the text serialization formats; round-trips exactly.
inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%a", v);
    return buf;
}

inline double parse_double(const std::string& s) {
    return std::strtod(s.c_str(), nullptr);
}

}  // namespace detail

/// Counter-based deterministic RNG: draw i of a stream is mix(key, i), so
/// sequences are identical across platforms and the number of draws consumed
/// by an operation is auditable. fork() derives an independent stream keyed
/// by (key, stream-id) without consuming draws from the parent.
class SeededRng {
public:
    explicit SeededRng(uint64_t seed) : key_(detail::mix64(seed)) {}

    uint64_t next_u64() {
        ++counter_;
        return detail::mix64(key_ + counter_ * 0x9E3779B97F4A7C15ull);
    }

    /// Uniform double in [0, 1), 53-bit resolution.
    double next_uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Integer in [0, n), n > 0. Modulo bias is irrelevant at our scales.
    uint64_t next_below(uint64_t n) { return next_u64() % n; }

    uint64_t draws_used() const { return counter_; }

    SeededRng fork(uint64_t stream) const {
        SeededRng child(0);
        child.key_ = detail::hash_combine(key_, stream);
        return child;
    }

private:
    uint64_t key_;
    uint64_t counter_ = 0;
};

/// Normalized probability vector over a vocabulary. Entries are non-negative
/// and sum to 1 within 1e-9; construction validates both.
class ProbDist {
public:
    static constexpr double kSumTolerance = 1e-9;

    explicit ProbDist(std::vector<double> probs) : probs_(std::move(probs)) {
        if (probs_.size() < 2) {
            throw InvalidDistribution("distribution needs at least 2 entries");
        }
        double sum = 0.0;
        for (double p : probs_) {
            if (p < 0.0 || !std::isfinite(p)) {
                throw InvalidDistribution("negative or non-finite probability entry");
            }
            sum += p;
        }
        if (std::abs(sum - 1.0) > kSumTolerance) {
            throw InvalidDistribution("probabilities sum to " + std::to_string(sum));
        }
    }

    static ProbDist point_mass(size_t index, size_t size) {
        std::vector<double> p(size, 0.0);
        p.at(index) = 1.0;
        return ProbDist(std::move(p));
    }

    static ProbDist uniform(size_t size) {
        return ProbDist(std::vector<double>(size, 1.0 / static_cast<double>(size)));
    }

    size_t size() const { return probs_.size(); }
    double operator[](size_t i) const { return probs_[i]; }
    double at(size_t i) const { return probs_.at(i); }
    const std::vector<double>& values() const { return probs_; }

private:
    std::vector<double> probs_;
};

/// Rescale a non-negative vector to sum to 1. At least one entry must be
/// positive and none negative.
inline ProbDist normalize(const std::vector<double>& raw) {
    double sum = 0.0;
    for (double v : raw) {
        if (v < 0.0 || !std::isfinite(v)) {
            throw InvalidDistribution("normalize: negative or non-finite entry");
        }
        sum += v;
    }
    if (sum <= 0.0) {
        throw InvalidDistribution("normalize: all entries are zero");
    }
    std::vector<double> out(raw.size());
    for (size_t i = 0; i < raw.size(); ++i) out[i] = raw[i] / sum;
    return ProbDist(std::move(out));
}

/// Draw one token: the smallest index i with u < CDF(i). Consumes exactly one
/// uniform draw. Deterministic given the rng state.
inline TokenId sample(const ProbDist& dist, SeededRng& rng) {
    const double u = rng.next_uniform();
    double cum = 0.0;
    TokenId last_positive = -1;
    for (size_t i = 0; i < dist.size(); ++i) {
        const double p = dist[i];
        if (p > 0.0) last_positive = static_cast<TokenId>(i);
        cum += p;
        if (u < cum) return static_cast<TokenId>(i);
    }
    // Rounding can leave cum fractionally below 1; fall back to the last
    // index that carries mass.
    return last_positive;
}

/// Index of the largest probability; ties resolve to the lowest index.
inline TokenId argmax(const ProbDist& dist) {
    size_t best = 0;
    for (size_t i = 1; i < dist.size(); ++i) {
        if (dist[i] > dist[best]) best = i;
    }
    return static_cast<TokenId>(best);
}

/// The k most probable token ids, ties resolving to lower indices. Returned
/// sorted ascending by id.
inline std::vector<TokenId> top_k_set(const ProbDist& dist, int32_t k) {
    if (k < 1 || static_cast<size_t>(k) > dist.size()) {
        throw InvalidK("top_k_set: k=" + std::to_string(k) + " out of range for V=" +
                       std::to_string(dist.size()));
    }
    std::vector<TokenId> ids(dist.size());
    std::iota(ids.begin(), ids.end(), 0);
    std::stable_sort(ids.begin(), ids.end(), [&](TokenId a, TokenId b) {
        return dist[static_cast<size_t>(a)] > dist[static_cast<size_t>(b)];
    });
    ids.resize(static_cast<size_t>(k));
    std::sort(ids.begin(), ids.end());
    return ids;
}

inline bool contains_token(const std::vector<TokenId>& sorted_ids, TokenId id) {
    return std::binary_search(sorted_ids.begin(), sorted_ids.end(), id);
}

}  // namespace specdec
