// Copyright 2026 The specdec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "specdec/core.hpp"
#include "specdec/judge.hpp"
#include "specdec/model.hpp"

namespace specdec {

struct InvalidDraft : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DegenerateResidual : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Per-candidate accept bits plus the resolved accepted-prefix length.
/// accepted_len is always the length of the longest all-ones prefix of bits;
/// bits past the first zero may be individually set (e.g. in a combined OR
/// mask) but are rejected by the prefix rule regardless.
struct VerdictMask {
    std::vector<uint8_t> bits;
    int accepted_len = 0;

    static int ones_prefix(std::span<const uint8_t> bits) {
        int n = 0;
        for (uint8_t b : bits) {
            if (!b) break;
            ++n;
        }
        return n;
    }

    static VerdictMask from_bits(std::vector<uint8_t> bits) {
        VerdictMask m;
        m.accepted_len = ones_prefix(bits);
        m.bits = std::move(bits);
        return m;
    }
};

/// Result of one verification pass over M candidates. Exactly one of
/// correction (token emitted at the first rejected position) and bonus (extra
/// token emitted when all M candidates were accepted) is present.
struct VerifyOutcome {
    VerdictMask mask;
    std::optional<TokenId> correction;
    std::optional<TokenId> bonus;
    uint64_t rng_draws_used = 0;

    TokenId tail_token() const { return correction ? *correction : *bonus; }
};

/// Elementwise OR of the standard and judge masks, resolved by the longest
/// all-ones prefix: once both masks reject a position, everything after it is
/// rejected no matter what the individual bits say.
inline VerdictMask combine_masks(std::span<const uint8_t> z_stand,
                                 std::span<const uint8_t> z_judge) {
    if (z_stand.size() != z_judge.size()) {
        throw DimensionError("combine_masks: mask lengths differ");
    }
    std::vector<uint8_t> bits(z_stand.size());
    for (size_t i = 0; i < bits.size(); ++i) {
        bits[i] = (z_stand[i] || z_judge[i]) ? 1 : 0;
    }
    return VerdictMask::from_bits(std::move(bits));
}

/// The distribution a rejected candidate is replaced from:
/// norm(max(0, p - q)). p = q exactly leaves nothing to renormalize; that
/// cannot be reached from a genuine rejection (rejection probability is zero
/// there) but is guarded anyway.
inline ProbDist residual_distribution(const ProbDist& p, const ProbDist& q) {
    if (p.size() != q.size()) throw DimensionError("residual: vocabulary sizes differ");
    std::vector<double> r(p.size());
    double sum = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        r[i] = std::max(0.0, p[i] - q[i]);
        sum += r[i];
    }
    if (sum <= 0.0) {
        throw DegenerateResidual("residual: p equals q, nothing to resample from");
    }
    for (double& v : r) v /= sum;
    return ProbDist(std::move(r));
}

namespace detail {

// Dedicated sub-stream for the correction/bonus draw, independent of how many
// epsilon draws were consumed, so every policy resamples identically.
inline constexpr uint64_t kResampleStream = 0x7e5a;

// In greedy target mode the target emits its argmax, so verification sees a
// point mass there. Acceptance/rejection against that point mass is what
// makes greedy lossless decoding reproduce standard greedy decoding exactly.
struct EffectiveTarget {
    const ProbDist* original;
    std::optional<ProbDist> point;

    const ProbDist& dist() const { return point ? *point : *original; }
};

inline EffectiveTarget effective_target(const ProbDist& p, SampleMode mode) {
    EffectiveTarget t{&p, std::nullopt};
    if (mode == SampleMode::greedy) {
        t.point = ProbDist::point_mass(static_cast<size_t>(argmax(p)), p.size());
    }
    return t;
}

// Eq.-style ratio test for one candidate: accept iff eps < p_eff[c] / q[c].
// q[c] = 0 with p[c] = 0 means the candidate is impossible under both models.
inline bool standard_accept(const ProbDist& p_eff, const ProbDist& p_orig, const ProbDist& q,
                            TokenId c, double eps) {
    const auto ci = static_cast<size_t>(c);
    const double qc = q[ci];
    const double pc = p_eff[ci];
    if (qc <= 0.0) {
        if (p_orig[ci] <= 0.0) {
            throw InvalidDraft("candidate token has zero probability under both models");
        }
        return pc > 0.0;  // ratio is +inf when the target carries mass, else reject
    }
    return eps < pc / qc;
}

}  // namespace detail

/// The standard accept bit for every one of the M positions, each with its
/// own epsilon (draw i of `rng` belongs to position i). Used where a full
/// mask is needed, e.g. to OR with a judge mask; the values at a prefix are
/// identical to what lossless_verify would have drawn.
inline std::vector<uint8_t> standard_mask_bits(std::span<const TokenId> candidates,
                                               std::span<const ProbDist> q,
                                               std::span<const ProbDist> p, SeededRng& rng,
                                               SampleMode mode) {
    if (candidates.size() != q.size() || p.size() != candidates.size() + 1) {
        throw std::invalid_argument("standard_mask_bits: need M candidates, M q, M+1 p");
    }
    std::vector<uint8_t> bits(candidates.size());
    for (size_t i = 0; i < candidates.size(); ++i) {
        const double eps = rng.next_uniform();
        const auto eff = detail::effective_target(p[i], mode);
        bits[i] = detail::standard_accept(eff.dist(), p[i], q[i], candidates[i], eps) ? 1 : 0;
    }
    return bits;
}

/// Lossless verification: scan candidates in order, accepting while
/// eps_i < p_i[c_i] / q_i[c_i] with one fresh epsilon per inspected candidate.
/// The first rejection stops the scan (later candidates consume no
/// randomness) and is replaced from the residual distribution; full
/// acceptance yields a bonus token from p_{M+1}. The correction/bonus draw
/// comes from a forked sub-stream so it does not depend on where the scan
/// stopped.
inline VerifyOutcome lossless_verify(std::span<const TokenId> candidates,
                                     std::span<const ProbDist> q, std::span<const ProbDist> p,
                                     SeededRng& rng, SampleMode mode) {
    if (candidates.size() != q.size() || p.size() != candidates.size() + 1) {
        throw std::invalid_argument("lossless_verify: need M candidates, M q, M+1 p");
    }
    const size_t M = candidates.size();
    VerifyOutcome out;
    out.mask.bits.assign(M, 0);

    SeededRng resample_rng = rng.fork(detail::kResampleStream);
    const uint64_t eps_before = rng.draws_used();

    for (size_t i = 0; i < M; ++i) {
        const double eps = rng.next_uniform();
        const auto eff = detail::effective_target(p[i], mode);
        if (detail::standard_accept(eff.dist(), p[i], q[i], candidates[i], eps)) {
            out.mask.bits[i] = 1;
            continue;
        }
        out.mask.accepted_len = static_cast<int>(i);
        const ProbDist residual = residual_distribution(eff.dist(), q[i]);
        if (mode == SampleMode::sampled) {
            out.correction = sample(residual, resample_rng);
        } else {
            out.correction = argmax(residual);
        }
        out.rng_draws_used = (rng.draws_used() - eps_before) + resample_rng.draws_used();
        return out;
    }

    out.mask.accepted_len = static_cast<int>(M);
    if (mode == SampleMode::sampled) {
        out.bonus = sample(p[M], resample_rng);
    } else {
        out.bonus = argmax(p[M]);
    }
    out.rng_draws_used = (rng.draws_used() - eps_before) + resample_rng.draws_used();
    return out;
}

/// Greedy matching: accept a candidate only if it is the target argmax at its
/// position. Correction and bonus are the target argmax at the decision
/// position. Consumes no randomness.
inline VerifyOutcome greedy_match_verify(std::span<const TokenId> candidates,
                                         std::span<const ProbDist> p) {
    if (p.size() != candidates.size() + 1) {
        throw std::invalid_argument("greedy_match_verify: need M candidates, M+1 p");
    }
    const size_t M = candidates.size();
    VerifyOutcome out;
    out.mask.bits.assign(M, 0);
    for (size_t i = 0; i < M; ++i) {
        const TokenId target_token = argmax(p[i]);
        if (candidates[i] != target_token) {
            out.mask.accepted_len = static_cast<int>(i);
            out.correction = target_token;
            return out;
        }
        out.mask.bits[i] = 1;
    }
    out.mask.accepted_len = static_cast<int>(M);
    out.bonus = argmax(p[M]);
    return out;
}

/// Training-free top-K relaxation: accept a candidate that ranks within the
/// target's K most probable tokens. K = 1 is greedy matching; K = V accepts
/// everything the draft proposes.
inline VerifyOutcome topk_verify(std::span<const TokenId> candidates, std::span<const ProbDist> p,
                                 int32_t k) {
    if (p.size() != candidates.size() + 1) {
        throw std::invalid_argument("topk_verify: need M candidates, M+1 p");
    }
    const size_t M = candidates.size();
    VerifyOutcome out;
    out.mask.bits.assign(M, 0);
    for (size_t i = 0; i < M; ++i) {
        const std::vector<TokenId> top = top_k_set(p[i], k);
        if (!contains_token(top, candidates[i])) {
            out.mask.accepted_len = static_cast<int>(i);
            out.correction = argmax(p[i]);
            return out;
        }
        out.mask.bits[i] = 1;
    }
    out.mask.accepted_len = static_cast<int>(M);
    out.bonus = argmax(p[M]);
    return out;
}

/// Judge bits for all M positions, each evaluated independently (the prefix
/// rule is applied later, by combine_masks or the caller).
inline std::vector<uint8_t> judge_verify(std::span<const std::vector<double>> embeddings,
                                         const JudgeHead& head) {
    std::vector<uint8_t> bits(embeddings.size());
    for (size_t i = 0; i < embeddings.size(); ++i) {
        bits[i] = accepts(head, embeddings[i]) ? 1 : 0;
    }
    return bits;
}

}  // namespace specdec
