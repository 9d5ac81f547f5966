// Copyright 2026 The specdec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <nlohmann/json.hpp>

#include "specdec/core.hpp"
#include "specdec/judge.hpp"
#include "specdec/model.hpp"
#include "specdec/verify.hpp"

namespace specdec {

enum class PolicyKind { lossless, greedy_match, topk, judge, judge_or_standard };

inline const char* policy_name(PolicyKind k) {
    switch (k) {
        case PolicyKind::lossless: return "lossless";
        case PolicyKind::greedy_match: return "greedy_match";
        case PolicyKind::topk: return "topk";
        case PolicyKind::judge: return "judge";
        case PolicyKind::judge_or_standard: return "judge_or_standard";
    }
    return "?";
}

struct PolicyConfig {
    PolicyKind kind = PolicyKind::lossless;
    int32_t top_k = 1;                 // topk only
    std::optional<JudgeHead> head;     // judge policies only

    static PolicyConfig lossless() { return {PolicyKind::lossless, 1, std::nullopt}; }
    static PolicyConfig greedy_match() { return {PolicyKind::greedy_match, 1, std::nullopt}; }
    static PolicyConfig topk(int32_t k) { return {PolicyKind::topk, k, std::nullopt}; }
    static PolicyConfig judge(JudgeHead head) {
        return {PolicyKind::judge, 1, std::move(head)};
    }
    static PolicyConfig judge_or_standard(JudgeHead head) {
        return {PolicyKind::judge_or_standard, 1, std::move(head)};
    }

    bool uses_judge() const {
        return kind == PolicyKind::judge || kind == PolicyKind::judge_or_standard;
    }
};

struct EngineConfig {
    int M = 5;
    PolicyConfig policy;
    SampleMode target_mode = SampleMode::greedy;
    SampleMode draft_mode = SampleMode::greedy;
    int max_new_tokens = 128;
    TokenSeq stop_tokens;
    uint64_t seed = 0;

    void validate(const Model& target) const {
        if (M < 1) throw std::invalid_argument("EngineConfig: M must be >= 1");
        if (max_new_tokens < 0) throw std::invalid_argument("EngineConfig: negative budget");
        if (policy.uses_judge()) {
            if (!policy.head) throw std::invalid_argument("EngineConfig: judge policy needs a head");
            if (policy.head->dim() != target.embedding_dim()) {
                throw DimensionError("EngineConfig: judge head dim " +
                                     std::to_string(policy.head->dim()) +
                                     " != target embedding dim " +
                                     std::to_string(target.embedding_dim()));
            }
        }
        if (policy.kind == PolicyKind::topk &&
            (policy.top_k < 1 || policy.top_k > target.vocab().size())) {
            throw InvalidK("EngineConfig: top_k out of range");
        }
    }
};

/// One round of the decode trace. `accepted_len` is the mask-resolved m*;
/// `emitted` is what actually entered the output (smaller only in the final
/// round, when the token budget or a stop token truncates the emission).
struct RoundRecord {
    int round = 0;
    TokenSeq candidates;
    std::vector<uint8_t> z_stand;    // empty when the policy never formed it
    std::vector<uint8_t> z_judge;    // empty for non-judge policies
    std::vector<uint8_t> combined;   // the mask the prefix rule was applied to
    int accepted_len = 0;
    TokenId tail_token = 0;
    bool tail_is_bonus = false;
    int emitted = 0;
    uint64_t cumulative_tokens = 0;
};

struct DecodeTrace {
    std::vector<RoundRecord> rounds;
};

struct DecodeStats {
    uint64_t total_tokens = 0;
    uint64_t rounds = 0;
    double mean_accepted_per_round = 0.0;  // mean of mask-resolved m*
    uint64_t draft_calls = 0;
    uint64_t target_calls = 0;
};

struct DecodeResult {
    TokenSeq tokens;
    DecodeTrace trace;
    DecodeStats stats;
};

namespace detail {

inline constexpr uint64_t kDraftStream = 1;
inline constexpr uint64_t kVerifyStream = 2;
inline constexpr uint64_t kStandardStream = 3;

// Correction for a position where the standard rule rejected: the residual
// draw in sampled mode, the target argmax in greedy mode (where the residual
// of the point mass is that same argmax).
inline TokenId standard_correction(const ProbDist& p, const ProbDist& q, SampleMode mode,
                                   SeededRng& resample_rng) {
    if (mode == SampleMode::sampled) {
        return sample(residual_distribution(p, q), resample_rng);
    }
    return argmax(p);
}

inline TokenId target_mode_token(const ProbDist& p, SampleMode mode, SeededRng& resample_rng) {
    return mode == SampleMode::sampled ? sample(p, resample_rng) : argmax(p);
}

}  // namespace detail

/// One draft-verify-emit round. `rng` is this round's private stream: the
/// drafting draws, the per-position epsilons and the correction/bonus draw
/// all come from fixed sub-streams of it, so policies that inspect different
/// numbers of positions still see identical randomness at identical
/// positions. Returns the emitted tokens (accepted prefix plus exactly one
/// correction-or-bonus token) and the trace record.
inline std::pair<TokenSeq, RoundRecord> decode_round(const TokenSeq& context, const Model& draft,
                                                     const Model& target,
                                                     const EngineConfig& config, SeededRng& rng) {
    if (context.empty()) throw std::invalid_argument("decode_round: context must be non-empty");

    SeededRng draft_rng = rng.fork(detail::kDraftStream);
    SeededRng verify_rng = rng.fork(detail::kVerifyStream);

    const auto drafted =
        autoregressive_sample(draft, context, config.M, config.draft_mode, draft_rng);
    TokenSeq candidates;
    std::vector<ProbDist> q;
    candidates.reserve(drafted.size());
    q.reserve(drafted.size());
    for (const auto& [token, step] : drafted) {
        candidates.push_back(token);
        q.push_back(step.dist);
    }

    const std::vector<StepOutput> forward = parallel_forward(target, candidates, context);
    std::vector<ProbDist> p;
    p.reserve(forward.size());
    for (const StepOutput& s : forward) p.push_back(s.dist);

    RoundRecord rec;
    rec.candidates = candidates;

    VerifyOutcome outcome;
    switch (config.policy.kind) {
        case PolicyKind::lossless: {
            outcome = lossless_verify(candidates, q, p, verify_rng, config.target_mode);
            rec.z_stand = outcome.mask.bits;
            rec.combined = outcome.mask.bits;
            break;
        }
        case PolicyKind::greedy_match: {
            outcome = greedy_match_verify(candidates, p);
            rec.z_stand = outcome.mask.bits;
            rec.combined = outcome.mask.bits;
            break;
        }
        case PolicyKind::topk: {
            outcome = topk_verify(candidates, p, config.policy.top_k);
            rec.combined = outcome.mask.bits;
            break;
        }
        case PolicyKind::judge: {
            // Embedding of candidate i is carried by forward output i+1 (the
            // state that has just processed that token).
            std::vector<std::vector<double>> embeddings;
            embeddings.reserve(candidates.size());
            for (size_t i = 1; i < forward.size(); ++i) embeddings.push_back(forward[i].embedding);
            rec.z_judge = judge_verify(embeddings, *config.policy.head);
            outcome.mask = VerdictMask::from_bits(rec.z_judge);
            SeededRng resample_rng = verify_rng.fork(detail::kResampleStream);
            const size_t r = static_cast<size_t>(outcome.mask.accepted_len);
            if (r < candidates.size()) {
                outcome.correction =
                    detail::target_mode_token(p[r], config.target_mode, resample_rng);
            } else {
                outcome.bonus = detail::target_mode_token(p[r], config.target_mode, resample_rng);
            }
            rec.combined = outcome.mask.bits;
            break;
        }
        case PolicyKind::judge_or_standard: {
            std::vector<std::vector<double>> embeddings;
            embeddings.reserve(candidates.size());
            for (size_t i = 1; i < forward.size(); ++i) embeddings.push_back(forward[i].embedding);
            rec.z_stand = standard_mask_bits(candidates, q, p, verify_rng, config.target_mode);
            rec.z_judge = judge_verify(embeddings, *config.policy.head);
            outcome.mask = combine_masks(rec.z_stand, rec.z_judge);
            SeededRng resample_rng = verify_rng.fork(detail::kResampleStream);
            const size_t r = static_cast<size_t>(outcome.mask.accepted_len);
            if (r < candidates.size()) {
                // A combined rejection implies the standard rule rejected
                // there too, so the replacement follows the standard rule.
                outcome.correction =
                    detail::standard_correction(p[r], q[r], config.target_mode, resample_rng);
            } else {
                outcome.bonus = detail::target_mode_token(p[r], config.target_mode, resample_rng);
            }
            rec.combined = outcome.mask.bits;
            break;
        }
    }

    rec.accepted_len = outcome.mask.accepted_len;
    rec.tail_token = outcome.tail_token();
    rec.tail_is_bonus = outcome.bonus.has_value();

    TokenSeq emitted(candidates.begin(), candidates.begin() + outcome.mask.accepted_len);
    emitted.push_back(rec.tail_token);
    rec.emitted = static_cast<int>(emitted.size());
    return {std::move(emitted), std::move(rec)};
}

/// Full decode: repeat rounds until the token budget is spent or a stop token
/// is emitted. Nothing is ever emitted past a stop token; the round that hits
/// one (or the budget) has its emission truncated.
inline DecodeResult decode(const TokenSeq& prompt, const Model& draft, const Model& target,
                           const EngineConfig& config) {
    config.validate(target);
    if (prompt.empty()) throw std::invalid_argument("decode: prompt must be non-empty");
    target.vocab().check(prompt);

    DecodeResult result;
    if (config.max_new_tokens == 0) return result;

    const SeededRng session(config.seed);
    TokenSeq context = prompt;
    uint64_t accepted_sum = 0;
    bool done = false;

    for (int round = 0; !done; ++round) {
        SeededRng round_rng = session.fork(static_cast<uint64_t>(round));
        auto [emitted, rec] = decode_round(context, draft, target, config, round_rng);
        rec.round = round;

        const size_t budget_left = static_cast<size_t>(config.max_new_tokens) - result.tokens.size();
        if (emitted.size() >= budget_left) {
            emitted.resize(budget_left);
            done = true;
        }
        for (size_t i = 0; i < emitted.size(); ++i) {
            if (std::find(config.stop_tokens.begin(), config.stop_tokens.end(), emitted[i]) !=
                config.stop_tokens.end()) {
                emitted.resize(i + 1);
                done = true;
                break;
            }
        }

        rec.emitted = static_cast<int>(emitted.size());
        context.insert(context.end(), emitted.begin(), emitted.end());
        result.tokens.insert(result.tokens.end(), emitted.begin(), emitted.end());
        accepted_sum += static_cast<uint64_t>(rec.accepted_len);
        rec.cumulative_tokens = result.tokens.size();
        result.trace.rounds.push_back(std::move(rec));

        result.stats.rounds += 1;
        result.stats.draft_calls += static_cast<uint64_t>(config.M);
        result.stats.target_calls += 1;
    }

    result.stats.total_tokens = result.tokens.size();
    result.stats.mean_accepted_per_round =
        static_cast<double>(accepted_sum) / static_cast<double>(result.stats.rounds);
    return result;
}

/// One round per line, for the bench module and external analysis.
inline void write_trace(const DecodeTrace& trace, std::ostream& os) {
    for (const RoundRecord& r : trace.rounds) {
        nlohmann::json j{{"round", r.round},
                         {"candidates", r.candidates},
                         {"combined", r.combined},
                         {"m_star", r.accepted_len},
                         {"tail_token", r.tail_token},
                         {"tail_is_bonus", r.tail_is_bonus},
                         {"emitted", r.emitted},
                         {"cumulative_tokens", r.cumulative_tokens}};
        if (!r.z_stand.empty()) j["z_stand"] = r.z_stand;
        if (!r.z_judge.empty()) j["z_judge"] = r.z_judge;
        os << j.dump() << "\n";
    }
}

/// Plain autoregressive generation from the target alone; the baseline the
/// speedup accounting and the lossless-equality tests compare against.
inline TokenSeq standard_decode(const TokenSeq& prompt, const Model& target,
                                const EngineConfig& config) {
    if (prompt.empty()) throw std::invalid_argument("standard_decode: prompt must be non-empty");
    target.vocab().check(prompt);
    TokenSeq out;
    if (config.max_new_tokens == 0) return out;
    SeededRng rng = SeededRng(config.seed).fork(detail::kStandardStream);
    TokenSeq context = prompt;
    for (int i = 0; i < config.max_new_tokens; ++i) {
        const ProbDist dist = target.next_dist(context);
        const TokenId t =
            config.target_mode == SampleMode::greedy ? argmax(dist) : sample(dist, rng);
        out.push_back(t);
        context.push_back(t);
        if (std::find(config.stop_tokens.begin(), config.stop_tokens.end(), t) !=
            config.stop_tokens.end()) {
            break;
        }
    }
    return out;
}

}  // namespace specdec
