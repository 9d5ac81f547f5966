// Copyright 2026 The specdec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <iomanip>
#include <thread>

#include "specdec/dataset.hpp"
#include "specdec/engine.hpp"

namespace specdec {

/// Two-parameter latency model: drafting costs c_draft per token, one target
/// forward pass costs c_target regardless of how many candidates it verifies
/// (the memory-bound premise), plus a fixed per-round overhead. An optional
/// per-candidate target term is available for sensitivity studies.
struct LatencyModel {
    double c_draft_ms = 1.0;
    double c_target_ms = 10.0;
    double overhead_ms = 0.0;
    double c_target_per_tok_ms = 0.0;

    void validate() const {
        if (!(c_target_ms > 0.0)) throw std::invalid_argument("LatencyModel: c_target must be > 0");
        if (c_draft_ms < 0.0 || overhead_ms < 0.0 || c_target_per_tok_ms < 0.0) {
            throw std::invalid_argument("LatencyModel: negative latency");
        }
    }
};

struct SpeedupResult {
    double speedup = 0.0;
    double tokens_per_second = 0.0;
};

/// Table-style accounting: SD time is rounds * (M*c_draft + c_target +
/// overhead) where rounds*M = stats.draft_calls; the baseline spends one
/// target pass per token.
inline SpeedupResult simulate_speedup(const DecodeStats& stats, const LatencyModel& lat) {
    lat.validate();
    if (stats.rounds == 0) {
        throw std::invalid_argument("simulate_speedup: stats from zero rounds are undefined");
    }
    const double draft_time =
        static_cast<double>(stats.draft_calls) * (lat.c_draft_ms + lat.c_target_per_tok_ms);
    const double sd_time = draft_time + static_cast<double>(stats.rounds) *
                                            (lat.c_target_ms + lat.overhead_ms);
    const double baseline = static_cast<double>(stats.total_tokens) * lat.c_target_ms;
    SpeedupResult r;
    r.speedup = baseline / sd_time;
    r.tokens_per_second = static_cast<double>(stats.total_tokens) / sd_time * 1000.0;
    return r;
}

struct BenchRow {
    std::string policy;
    int M = 0;
    double m_star_mean = 0.0;
    double tokens_per_round = 0.0;
    double c_draft_ms = 0.0;
    double c_target_ms = 0.0;
    double c_target_per_tok_ms = 0.0;
    double overhead_ms = 0.0;
    double speedup = 0.0;
    double tokens_per_sec = 0.0;
    std::optional<double> accuracy;
};

struct BenchReport {
    std::vector<BenchRow> rows;
};

/// speedup as implied by the row's own fields; rows are self-consistent when
/// this matches the stored column.
inline double recompute_row_speedup(const BenchRow& row) {
    return row.tokens_per_round * row.c_target_ms /
           (static_cast<double>(row.M) * (row.c_draft_ms + row.c_target_per_tok_ms) +
            row.c_target_ms + row.overhead_ms);
}

/// Number of emitted tokens that equal the target's greedy choice given the
/// prefix actually emitted before them.
inline size_t greedy_match_count(const TokenSeq& prompt, const TokenSeq& emitted,
                                 const Model& target) {
    TokenSeq ctx = prompt;
    size_t matches = 0;
    for (TokenId t : emitted) {
        if (t == argmax(target.next_dist(ctx))) ++matches;
        ctx.push_back(t);
    }
    return matches;
}

/// Fraction of emitted tokens that equal the target's greedy choice given the
/// prefix actually emitted before them; the desk-scale quality proxy.
inline double greedy_match_fraction(const TokenSeq& prompt, const TokenSeq& emitted,
                                    const Model& target) {
    if (emitted.empty()) return 1.0;
    return static_cast<double>(greedy_match_count(prompt, emitted, target)) /
           static_cast<double>(emitted.size());
}

struct BenchOptions {
    int max_new_tokens = 256;
    SampleMode target_mode = SampleMode::greedy;
    SampleMode draft_mode = SampleMode::greedy;
    int jobs = 1;
};

struct CurvePoint {
    int M = 0;
    double m_star_mean = 0.0;
};

namespace detail {

struct PromptTotals {
    uint64_t accepted = 0;
    uint64_t rounds = 0;
    uint64_t tokens = 0;
    uint64_t matches = 0;
    uint64_t draft_calls = 0;
};

template <typename Fn>
inline void parallel_over(size_t n, int jobs, Fn&& fn) {
    const int workers = std::max(1, jobs);
    if (workers == 1 || n <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::atomic<size_t> next{0};
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace detail

/// Measured decode behaviour of one policy at one draft length, aggregated
/// over prompts. Per-prompt seeds derive from (seed, prompt index) only, so
/// the same seed schedule is replayed for every M.
struct PolicyRunStats {
    DecodeStats stats;
    double greedy_match_frac = 1.0;
};

inline PolicyRunStats run_policy(const Model& draft, const Model& target,
                                 std::span<const TokenSeq> prompts, const PolicyConfig& policy,
                                 int M, uint64_t seed, const BenchOptions& opts = {}) {
    if (prompts.empty()) throw std::invalid_argument("run_policy: no prompts");
    std::vector<detail::PromptTotals> totals(prompts.size());
    detail::parallel_over(prompts.size(), opts.jobs, [&](size_t i) {
        EngineConfig config;
        config.M = M;
        config.policy = policy;
        config.target_mode = opts.target_mode;
        config.draft_mode = opts.draft_mode;
        config.max_new_tokens = opts.max_new_tokens;
        config.seed = detail::hash_combine(seed, i);
        const DecodeResult res = decode(prompts[i], draft, target, config);
        detail::PromptTotals t;
        t.rounds = res.stats.rounds;
        t.tokens = res.stats.total_tokens;
        t.draft_calls = res.stats.draft_calls;
        for (const RoundRecord& r : res.trace.rounds) {
            t.accepted += static_cast<uint64_t>(r.accepted_len);
        }
        t.matches = greedy_match_count(prompts[i], res.tokens, target);
        totals[i] = t;
    });

    PolicyRunStats out;
    uint64_t accepted = 0, matches = 0;
    for (const auto& t : totals) {
        accepted += t.accepted;
        out.stats.rounds += t.rounds;
        out.stats.total_tokens += t.tokens;
        out.stats.draft_calls += t.draft_calls;
        matches += t.matches;
    }
    out.stats.target_calls = out.stats.rounds;
    out.stats.mean_accepted_per_round =
        static_cast<double>(accepted) / static_cast<double>(out.stats.rounds);
    out.greedy_match_frac =
        out.stats.total_tokens == 0
            ? 1.0
            : static_cast<double>(matches) / static_cast<double>(out.stats.total_tokens);
    return out;
}

/// Mean accepted tokens per round as a function of the draft length M.
inline std::vector<CurvePoint> acceptance_curve(const Model& draft, const Model& target,
                                                std::span<const TokenSeq> prompts,
                                                const PolicyConfig& policy,
                                                std::span<const int> m_list, uint64_t seed,
                                                const BenchOptions& opts = {}) {
    if (m_list.empty()) throw std::invalid_argument("acceptance_curve: empty M list");
    std::vector<CurvePoint> curve;
    curve.reserve(m_list.size());
    for (int M : m_list) {
        const PolicyRunStats run = run_policy(draft, target, prompts, policy, M, seed, opts);
        curve.push_back({M, run.stats.mean_accepted_per_round});
    }
    return curve;
}

inline BenchRow make_bench_row(const PolicyConfig& policy, int M, const PolicyRunStats& run,
                               const LatencyModel& lat, bool with_accuracy = true) {
    BenchRow row;
    row.policy = policy_name(policy.kind);
    if (policy.kind == PolicyKind::topk) row.policy += "@" + std::to_string(policy.top_k);
    row.M = M;
    row.m_star_mean = run.stats.mean_accepted_per_round;
    row.tokens_per_round = static_cast<double>(run.stats.total_tokens) /
                           static_cast<double>(run.stats.rounds);
    row.c_draft_ms = lat.c_draft_ms;
    row.c_target_ms = lat.c_target_ms;
    row.c_target_per_tok_ms = lat.c_target_per_tok_ms;
    row.overhead_ms = lat.overhead_ms;
    const SpeedupResult sp = simulate_speedup(run.stats, lat);
    row.speedup = sp.speedup;
    row.tokens_per_sec = sp.tokens_per_second;
    if (with_accuracy) row.accuracy = run.greedy_match_frac;
    return row;
}

// --- external-draft replay ---------------------------------------------------

struct ReplayItem {
    TokenSeq prompt;
    TokenSeq continuation;
};

struct ReplayResult {
    std::vector<int> accepted_lengths;
    double mean_accepted = 0.0;
};

/// Feed a pre-existing token stream as candidates and count how many tokens
/// the target accepts before the first rejection. The standard side is greedy
/// matching (an external drafter exposes no draft distribution); judge
/// policies OR their mask with it. `window_m` > 0 merely chunks the forward
/// pass; the verdict is identical to whole-sequence processing.
inline ReplayResult replay_external_draft(std::span<const ReplayItem> items, const Model& target,
                                          const PolicyConfig& policy, int window_m = 0) {
    if (items.empty()) throw std::invalid_argument("replay: no items");
    if (policy.kind == PolicyKind::lossless) {
        throw std::invalid_argument("replay: lossless needs draft distributions; use greedy_match");
    }
    if (policy.uses_judge()) {
        if (!policy.head) throw std::invalid_argument("replay: judge policy needs a head");
        if (policy.head->dim() != target.embedding_dim()) {
            throw DimensionError("replay: judge head dim != target embedding dim");
        }
    }

    ReplayResult result;
    uint64_t total = 0;
    for (size_t n = 0; n < items.size(); ++n) {
        const ReplayItem& item = items[n];
        for (size_t j = 0; j < item.continuation.size(); ++j) {
            if (!target.vocab().contains(item.continuation[j])) {
                throw std::out_of_range("replay: item " + std::to_string(n) + " token " +
                                        std::to_string(item.continuation[j]) + " at position " +
                                        std::to_string(j) + " outside the target vocabulary");
            }
        }
        target.vocab().check(item.prompt);

        std::vector<uint8_t> bits(item.continuation.size(), 0);
        TokenSeq ctx = item.prompt;
        size_t pos = 0;
        const size_t chunk = window_m > 0 ? static_cast<size_t>(window_m)
                                          : std::max<size_t>(item.continuation.size(), 1);
        while (pos < item.continuation.size()) {
            const size_t len = std::min(chunk, item.continuation.size() - pos);
            TokenSeq tokens(item.continuation.begin() + static_cast<ptrdiff_t>(pos),
                            item.continuation.begin() + static_cast<ptrdiff_t>(pos + len));
            const std::vector<StepOutput> fwd = parallel_forward(target, tokens, ctx);
            for (size_t i = 0; i < len; ++i) {
                uint8_t stand = 0;
                switch (policy.kind) {
                    case PolicyKind::greedy_match:
                    case PolicyKind::judge:
                    case PolicyKind::judge_or_standard:
                        stand = tokens[i] == argmax(fwd[i].dist) ? 1 : 0;
                        break;
                    case PolicyKind::topk:
                        stand = contains_token(top_k_set(fwd[i].dist, policy.top_k), tokens[i]) ? 1 : 0;
                        break;
                    default:
                        break;
                }
                uint8_t bit = stand;
                if (policy.uses_judge()) {
                    const uint8_t jbit = accepts(*policy.head, fwd[i + 1].embedding) ? 1 : 0;
                    bit = policy.kind == PolicyKind::judge ? jbit : (stand | jbit);
                }
                bits[pos + i] = bit;
            }
            ctx.insert(ctx.end(), tokens.begin(), tokens.end());
            pos += len;
        }
        const int accepted = VerdictMask::ones_prefix(bits);
        result.accepted_lengths.push_back(accepted);
        total += static_cast<uint64_t>(accepted);
    }
    result.mean_accepted = static_cast<double>(total) / static_cast<double>(items.size());
    return result;
}

// --- out-of-distribution protocol --------------------------------------------

struct OodResult {
    JudgeHead head;
    MetricsRecord in_distribution;
    MetricsRecord held_out;
};

/// Train the head with one category removed, then evaluate on the held-out
/// category next to the in-distribution validation slice.
inline OodResult ood_eval(std::span<const AnnotatedExample> examples,
                          const std::string& holdout_category, const Model& target,
                          const TrainConfig& config) {
    std::vector<AnnotatedExample> train_set, holdout_set;
    for (const AnnotatedExample& ex : examples) {
        (ex.category == holdout_category ? holdout_set : train_set).push_back(ex);
    }
    if (holdout_set.empty()) {
        throw std::invalid_argument("ood_eval: no examples in holdout category '" +
                                    holdout_category + "'");
    }
    if (train_set.empty()) {
        throw std::invalid_argument("ood_eval: nothing left to train on");
    }

    const std::vector<LabeledToken> train_labels = derive_labels(train_set, target);
    TrainResult trained = train(train_labels, config);

    OodResult result;
    result.in_distribution = trained.report.validation_metrics;
    const std::vector<LabeledToken> holdout_labels = derive_labels(holdout_set, target);
    result.held_out = evaluate(trained.head, holdout_labels);
    result.head = std::move(trained.head);
    return result;
}

// --- report emission ----------------------------------------------------------

namespace detail {

inline std::string csv_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

inline void emit_report_csv(const BenchReport& report, std::ostream& os) {
    os << "policy,M,m_star_mean,tokens_per_round,c_draft_ms,c_target_ms,c_target_per_tok_ms,"
          "overhead_ms,speedup,tokens_per_sec,accuracy\n";
    for (const BenchRow& r : report.rows) {
        os << r.policy << "," << r.M << "," << detail::csv_double(r.m_star_mean) << ","
           << detail::csv_double(r.tokens_per_round) << "," << detail::csv_double(r.c_draft_ms)
           << "," << detail::csv_double(r.c_target_ms) << ","
           << detail::csv_double(r.c_target_per_tok_ms) << ","
           << detail::csv_double(r.overhead_ms) << "," << detail::csv_double(r.speedup) << ","
           << detail::csv_double(r.tokens_per_sec) << ",";
        if (r.accuracy) os << detail::csv_double(*r.accuracy);
        os << "\n";
    }
}

inline BenchReport parse_report_csv(std::istream& is) {
    BenchReport report;
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("parse_report: empty input");
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        // A trailing empty accuracy cell is eaten by getline; restore it.
        if (cells.size() == 10 && !line.empty() && line.back() == ',') cells.push_back("");
        if (cells.size() != 11) throw std::runtime_error("parse_report: bad row: " + line);
        BenchRow r;
        r.policy = cells[0];
        r.M = std::stoi(cells[1]);
        r.m_star_mean = std::stod(cells[2]);
        r.tokens_per_round = std::stod(cells[3]);
        r.c_draft_ms = std::stod(cells[4]);
        r.c_target_ms = std::stod(cells[5]);
        r.c_target_per_tok_ms = std::stod(cells[6]);
        r.overhead_ms = std::stod(cells[7]);
        r.speedup = std::stod(cells[8]);
        r.tokens_per_sec = std::stod(cells[9]);
        if (!cells[10].empty()) r.accuracy = std::stod(cells[10]);
        report.rows.push_back(std::move(r));
    }
    return report;
}

/// Plot-data series: a one-line header naming the curve, then "x y" rows.
inline void emit_plot_series(const std::string& name, std::span<const CurvePoint> points,
                             std::ostream& os) {
    os << "# " << name << "\n";
    for (const CurvePoint& p : points) {
        os << p.M << " " << detail::csv_double(p.m_star_mean) << "\n";
    }
}

}  // namespace specdec
