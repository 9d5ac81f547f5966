// Copyright 2026 The specdec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdio>
#include <istream>
#include <memory>
#include <ostream>
#include <sstream>
#include <unordered_map>
#include <utility>

#include "specdec/core.hpp"

namespace specdec {

struct EmptyCorpus : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// One forward position: the next-token distribution predicted from a prefix,
/// plus the feature vector of the state that produced it (i.e. the embedding
/// of the last token the model processed).
struct StepOutput {
    ProbDist dist;
    std::vector<double> embedding;
};

/// How a model turns (preceding window, current token) into a feature vector.
///   hashed: pure signed hash features of the window and token.
///   scored: hash features plus leading coordinates derived from the model's
///           own conditional at the current token (probability, log-prob,
///           entropy, rank). These carry the "model's reaction" signal that
///           a judge head can threshold.
enum class EmbedKind { hashed, scored };

struct EmbedConfig {
    EmbedKind kind = EmbedKind::hashed;
    int dim = 64;
    int window = 2;
};

namespace detail {

inline double signed_unit(uint64_t h) {
    return static_cast<double>(h >> 11) * 0x1.0p-53 * 2.0 - 1.0;
}

inline double hash_feature(std::span<const TokenId> window, TokenId current, int coord) {
    uint64_t base = hash_combine(0x5eedFeedull, static_cast<uint64_t>(coord));
    double acc = signed_unit(mix64(base ^ hash_combine(0, static_cast<uint64_t>(static_cast<int64_t>(current)))));
    for (size_t j = 0; j < window.size(); ++j) {
        uint64_t slot = hash_combine(base, j + 1);
        acc += signed_unit(mix64(slot ^ hash_combine(1, static_cast<uint64_t>(static_cast<int64_t>(window[j])))));
    }
    return acc / std::sqrt(static_cast<double>(window.size() + 1));
}

struct TokenSeqHash {
    size_t operator()(const TokenSeq& seq) const {
        uint64_t h = 0x9E3779B97F4A7C15ull;
        for (TokenId t : seq) h = hash_combine(h, static_cast<uint64_t>(static_cast<int64_t>(t)));
        return static_cast<size_t>(h);
    }
};

}  // namespace detail

/// Deterministic hash embedding of (window, current token) into D signed
/// coordinates. Identical inputs give identical vectors; D must be >= 8.
inline std::vector<double> default_embed_map(std::span<const TokenId> window, TokenId current, int dim) {
    if (dim < 8) throw std::invalid_argument("embedding dim must be >= 8");
    std::vector<double> v(static_cast<size_t>(dim));
    for (int d = 0; d < dim; ++d) {
        v[static_cast<size_t>(d)] = detail::hash_feature(window, current, d);
    }
    return v;
}

/// Shared interface of the desk-scale language models: a next-token
/// distribution per context plus a per-position embedding. Models are
/// immutable after construction and safe to share across threads.
class Model {
public:
    virtual ~Model() = default;

    virtual const Vocabulary& vocab() const = 0;
    virtual ProbDist next_dist(std::span<const TokenId> context) const = 0;

    const EmbedConfig& embed_config() const { return embed_; }
    int embedding_dim() const { return embed_.dim; }

    /// Feature vector for `current` given everything before it. The hash part
    /// sees only the trailing `window` tokens; the scored part (when enabled)
    /// evaluates the model's own conditional at `current`.
    std::vector<double> embed_at(std::span<const TokenId> preceding, TokenId current) const {
        const size_t w = std::min<size_t>(preceding.size(), static_cast<size_t>(embed_.window));
        std::span<const TokenId> window = preceding.subspan(preceding.size() - w, w);
        if (embed_.kind == EmbedKind::hashed) {
            return default_embed_map(window, current, embed_.dim);
        }
        std::vector<double> v(static_cast<size_t>(embed_.dim));
        const ProbDist cond = next_dist(preceding);
        const double V = static_cast<double>(cond.size());
        double p = 0.0;
        double rank = V;
        if (current >= 0 && static_cast<size_t>(current) < cond.size()) {
            p = cond[static_cast<size_t>(current)];
            rank = 0.0;
            for (size_t t = 0; t < cond.size(); ++t) {
                if (cond[t] > p || (cond[t] == p && static_cast<TokenId>(t) < current)) rank += 1.0;
            }
        }
        double entropy = 0.0;
        for (size_t t = 0; t < cond.size(); ++t) {
            if (cond[t] > 0.0) entropy -= cond[t] * std::log(cond[t]);
        }
        v[0] = p;
        v[1] = std::log10(std::max(p, 1e-9)) / 9.0 + 1.0;
        v[2] = entropy / std::log(V);
        v[3] = 1.0 - rank / V;
        for (int d = 4; d < embed_.dim; ++d) {
            v[static_cast<size_t>(d)] = detail::hash_feature(window, current, d);
        }
        return v;
    }

    /// Next-token distribution plus the embedding of the context's last token.
    StepOutput step(std::span<const TokenId> context) const {
        const TokenId current = context.empty() ? kPadToken : context.back();
        std::span<const TokenId> preceding =
            context.empty() ? context : context.subspan(0, context.size() - 1);
        return StepOutput{next_dist(context), embed_at(preceding, current)};
    }

protected:
    explicit Model(EmbedConfig embed) : embed_(std::move(embed)) {
        if (embed_.dim < 8) throw std::invalid_argument("embedding dim must be >= 8");
        if (embed_.window < 0) throw std::invalid_argument("embedding window must be >= 0");
    }

private:
    EmbedConfig embed_;
};

/// Explicit context -> distribution lookup table with a fallback default.
/// The desk-scale stand-in for a "large" model whose behaviour tests need to
/// control exactly.
class TableModel : public Model {
public:
    TableModel(Vocabulary vocab, int order, ProbDist default_dist, EmbedConfig embed = {})
        : Model(std::move(embed)),
          vocab_(std::move(vocab)),
          order_(order),
          default_dist_(std::move(default_dist)) {
        if (order_ < 0) throw std::invalid_argument("TableModel: order must be >= 0");
        check_dist(default_dist_);
    }

    const Vocabulary& vocab() const override { return vocab_; }
    int order() const { return order_; }
    const ProbDist& default_dist() const { return default_dist_; }

    void set_entry(TokenSeq context, ProbDist dist) {
        if (static_cast<int>(context.size()) != order_) {
            throw std::invalid_argument("TableModel: context length must equal order");
        }
        vocab_.check(context);
        check_dist(dist);
        table_.insert_or_assign(std::move(context), std::move(dist));
    }

    ProbDist next_dist(std::span<const TokenId> context) const override {
        if (static_cast<int>(context.size()) < order_) return default_dist_;
        TokenSeq key(context.end() - order_, context.end());
        auto it = table_.find(key);
        if (it == table_.end()) return default_dist_;
        return it->second;
    }

    const std::unordered_map<TokenSeq, ProbDist, detail::TokenSeqHash>& table() const {
        return table_;
    }

private:
    void check_dist(const ProbDist& d) const {
        if (d.size() != static_cast<size_t>(vocab_.size())) {
            throw std::invalid_argument("TableModel: distribution size != vocabulary size");
        }
    }

    Vocabulary vocab_;
    int order_;
    ProbDist default_dist_;
    std::unordered_map<TokenSeq, ProbDist, detail::TokenSeqHash> table_;
};

/// Additively smoothed n-gram model. Conditional of token t after a seen
/// context g is (count(g,t) + alpha) / (count(g) + alpha*V); a context with no
/// observed continuation yields the uniform distribution through the same
/// formula. Contexts shorter than the order use the count table of their own
/// length, so the model is defined for every context.
class NgramModel : public Model {
public:
    struct ContextCounts {
        std::vector<uint32_t> counts;
        uint64_t total = 0;
    };
    using CountTable = std::unordered_map<TokenSeq, ContextCounts, detail::TokenSeqHash>;

    NgramModel(Vocabulary vocab, int order, double alpha, std::vector<CountTable> tables,
               EmbedConfig embed = {})
        : Model(std::move(embed)),
          vocab_(std::move(vocab)),
          order_(order),
          alpha_(alpha),
          tables_(std::move(tables)) {
        if (order_ < 0) throw std::invalid_argument("NgramModel: order must be >= 0");
        if (!(alpha_ > 0.0)) throw std::invalid_argument("NgramModel: alpha must be > 0");
        if (tables_.size() != static_cast<size_t>(order_) + 1) {
            throw std::invalid_argument("NgramModel: need one count table per context length");
        }
    }

    const Vocabulary& vocab() const override { return vocab_; }
    int order() const { return order_; }
    double alpha() const { return alpha_; }
    const std::vector<CountTable>& tables() const { return tables_; }

    ProbDist next_dist(std::span<const TokenId> context) const override {
        const size_t k = std::min<size_t>(context.size(), static_cast<size_t>(order_));
        TokenSeq key(context.end() - static_cast<ptrdiff_t>(k), context.end());
        const size_t V = static_cast<size_t>(vocab_.size());
        const auto& table = tables_[k];
        auto it = table.find(key);
        std::vector<double> probs(V);
        if (it == table.end()) {
            std::fill(probs.begin(), probs.end(), 1.0 / static_cast<double>(V));
        } else {
            const double denom =
                static_cast<double>(it->second.total) + alpha_ * static_cast<double>(V);
            for (size_t t = 0; t < V; ++t) {
                probs[t] = (static_cast<double>(it->second.counts[t]) + alpha_) / denom;
            }
        }
        return ProbDist(std::move(probs));
    }

private:
    Vocabulary vocab_;
    int order_;
    double alpha_;
    std::vector<CountTable> tables_;
};

/// Count n-gram statistics from corpus segments. Transitions never cross a
/// segment boundary and the final token of a segment contributes no
/// transition of its own (it only appears as context). Vocabulary size is
/// inferred as max id + 1 when not given.
inline NgramModel fit_ngram(const std::vector<TokenSeq>& segments, int order, double alpha,
                            int32_t vocab_size = 0, EmbedConfig embed = {}) {
    if (order < 0) throw std::invalid_argument("fit_ngram: order must be >= 0");
    if (!(alpha > 0.0)) throw std::invalid_argument("fit_ngram: alpha must be > 0");

    TokenId max_id = -1;
    size_t usable = 0;
    for (const TokenSeq& seg : segments) {
        for (TokenId t : seg) {
            if (t < 0) throw std::invalid_argument("fit_ngram: negative token id");
            max_id = std::max(max_id, t);
        }
        if (static_cast<int>(seg.size()) > order) usable += seg.size() - static_cast<size_t>(order);
    }
    if (usable == 0) {
        throw EmptyCorpus("fit_ngram: no segment longer than the model order");
    }
    const int32_t V = vocab_size > 0 ? vocab_size : std::max<int32_t>(max_id + 1, 2);
    if (max_id >= V) throw std::invalid_argument("fit_ngram: token id outside vocabulary");

    std::vector<NgramModel::CountTable> tables(static_cast<size_t>(order) + 1);
    for (size_t k = 0; k <= static_cast<size_t>(order); ++k) {
        for (const TokenSeq& seg : segments) {
            for (size_t i = k; i < seg.size(); ++i) {
                TokenSeq ctx(seg.begin() + static_cast<ptrdiff_t>(i - k),
                             seg.begin() + static_cast<ptrdiff_t>(i));
                auto& entry = tables[k][std::move(ctx)];
                if (entry.counts.empty()) entry.counts.assign(static_cast<size_t>(V), 0);
                ++entry.counts[static_cast<size_t>(seg[i])];
                ++entry.total;
            }
        }
    }
    return NgramModel(Vocabulary(V), order, alpha, std::move(tables), embed);
}

inline NgramModel fit_ngram(const TokenSeq& corpus, int order, double alpha,
                            int32_t vocab_size = 0, EmbedConfig embed = {}) {
    return fit_ngram(std::vector<TokenSeq>{corpus}, order, alpha, vocab_size, embed);
}

/// Draw m tokens autoregressively. Each returned StepOutput carries the
/// distribution the token was drawn from (argmaxed in greedy mode) and the
/// embedding at that position.
enum class SampleMode { greedy, sampled };

inline std::vector<std::pair<TokenId, StepOutput>> autoregressive_sample(
    const Model& model, const TokenSeq& context, int m, SampleMode mode, SeededRng& rng) {
    if (m < 1) throw std::invalid_argument("autoregressive_sample: m must be >= 1");
    model.vocab().check(context);
    std::vector<std::pair<TokenId, StepOutput>> out;
    out.reserve(static_cast<size_t>(m));
    TokenSeq ctx = context;
    for (int j = 0; j < m; ++j) {
        StepOutput step = model.step(ctx);
        const TokenId t = mode == SampleMode::greedy ? argmax(step.dist) : sample(step.dist, rng);
        out.emplace_back(t, std::move(step));
        ctx.push_back(t);
    }
    return out;
}

/// Forward pass over `tokens` appended to `context`: m+1 outputs, where
/// output i predicts position i from tokens t_1..t_{i-1} and the final output
/// conditions on all m tokens. Models here are pure functions, so this is
/// defined as (and bit-identical to) m+1 sequential single-step calls.
inline std::vector<StepOutput> parallel_forward(const Model& model, const TokenSeq& tokens,
                                                const TokenSeq& context) {
    model.vocab().check(context);
    model.vocab().check(tokens);
    std::vector<StepOutput> out;
    out.reserve(tokens.size() + 1);
    TokenSeq ctx = context;
    ctx.reserve(context.size() + tokens.size());
    out.push_back(model.step(ctx));
    for (TokenId t : tokens) {
        ctx.push_back(t);
        out.push_back(model.step(ctx));
    }
    return out;
}

// --- serialization ----------------------------------------------------------
//
// Models serialize to a line-oriented text format, version tagged, with
// doubles printed as hexfloats so round-trips are exact.

namespace detail {

inline const char* embed_kind_name(EmbedKind k) {
    return k == EmbedKind::hashed ? "hashed" : "scored";
}

inline EmbedKind embed_kind_from(const std::string& s) {
    if (s == "hashed") return EmbedKind::hashed;
    if (s == "scored") return EmbedKind::scored;
    throw std::runtime_error("unknown embedding kind: " + s);
}

}  // namespace detail

inline void save_model(const NgramModel& model, std::ostream& os) {
    os << "specdec-model v1 ngram\n";
    os << "vocab " << model.vocab().size() << "\n";
    os << "order " << model.order() << "\n";
    os << "alpha " << detail::fmt_double(model.alpha()) << "\n";
    os << "embed " << detail::embed_kind_name(model.embed_config().kind) << " "
       << model.embed_config().dim << " " << model.embed_config().window << "\n";
    for (size_t k = 0; k < model.tables().size(); ++k) {
        os << "table " << k << " " << model.tables()[k].size() << "\n";
        for (const auto& [ctx, entry] : model.tables()[k]) {
            for (TokenId t : ctx) os << t << " ";
            os << ":";
            for (size_t t = 0; t < entry.counts.size(); ++t) {
                if (entry.counts[t] > 0) os << " " << t << "=" << entry.counts[t];
            }
            os << "\n";
        }
    }
    os << "end\n";
}

inline void save_model(const TableModel& model, std::ostream& os) {
    os << "specdec-model v1 table\n";
    os << "vocab " << model.vocab().size() << "\n";
    os << "order " << model.order() << "\n";
    os << "embed " << detail::embed_kind_name(model.embed_config().kind) << " "
       << model.embed_config().dim << " " << model.embed_config().window << "\n";
    os << "default";
    for (size_t t = 0; t < model.default_dist().size(); ++t) {
        os << " " << detail::fmt_double(model.default_dist()[t]);
    }
    os << "\n";
    os << "entries " << model.table().size() << "\n";
    for (const auto& [ctx, dist] : model.table()) {
        for (TokenId t : ctx) os << t << " ";
        os << ":";
        for (size_t t = 0; t < dist.size(); ++t) os << " " << detail::fmt_double(dist[t]);
        os << "\n";
    }
    os << "end\n";
}

inline std::unique_ptr<Model> load_model(std::istream& is) {
    std::string magic, version, kind;
    if (!(is >> magic >> version >> kind) || magic != "specdec-model" || version != "v1") {
        throw std::runtime_error("load_model: not a specdec v1 model file");
    }
    auto expect = [&](const char* word) {
        std::string s;
        if (!(is >> s) || s != word) {
            throw std::runtime_error("load_model: expected '" + std::string(word) + "'");
        }
    };
    expect("vocab");
    int32_t V;
    is >> V;
    expect("order");
    int order;
    is >> order;

    if (kind == "ngram") {
        expect("alpha");
        std::string alpha_s;
        is >> alpha_s;
        expect("embed");
        EmbedConfig embed;
        std::string ek;
        is >> ek >> embed.dim >> embed.window;
        embed.kind = detail::embed_kind_from(ek);
        std::vector<NgramModel::CountTable> tables(static_cast<size_t>(order) + 1);
        for (size_t k = 0; k <= static_cast<size_t>(order); ++k) {
            expect("table");
            size_t kk, n;
            is >> kk >> n;
            if (kk != k) throw std::runtime_error("load_model: table order mismatch");
            is.ignore();
            for (size_t e = 0; e < n; ++e) {
                std::string line;
                std::getline(is, line);
                std::istringstream ls(line);
                TokenSeq ctx;
                std::string tok;
                while (ls >> tok && tok != ":") ctx.push_back(std::stoi(tok));
                if (ctx.size() != k) throw std::runtime_error("load_model: bad context length");
                NgramModel::ContextCounts entry;
                entry.counts.assign(static_cast<size_t>(V), 0);
                while (ls >> tok) {
                    const size_t eq = tok.find('=');
                    if (eq == std::string::npos) throw std::runtime_error("load_model: bad count");
                    const auto t = static_cast<size_t>(std::stoi(tok.substr(0, eq)));
                    const auto c = static_cast<uint32_t>(std::stoul(tok.substr(eq + 1)));
                    entry.counts.at(t) = c;
                    entry.total += c;
                }
                tables[k].insert_or_assign(std::move(ctx), std::move(entry));
            }
        }
        expect("end");
        return std::make_unique<NgramModel>(Vocabulary(V), order,
                                            detail::parse_double(alpha_s), std::move(tables),
                                            embed);
    }
    if (kind == "table") {
        expect("embed");
        EmbedConfig embed;
        std::string ek;
        is >> ek >> embed.dim >> embed.window;
        embed.kind = detail::embed_kind_from(ek);
        expect("default");
        std::vector<double> def(static_cast<size_t>(V));
        for (auto& v : def) {
            std::string s;
            is >> s;
            v = detail::parse_double(s);
        }
        expect("entries");
        size_t n;
        is >> n;
        is.ignore();
        auto model = std::make_unique<TableModel>(Vocabulary(V), order, ProbDist(std::move(def)),
                                                  embed);
        for (size_t e = 0; e < n; ++e) {
            std::string line;
            std::getline(is, line);
            std::istringstream ls(line);
            TokenSeq ctx;
            std::string tok;
            while (ls >> tok && tok != ":") ctx.push_back(std::stoi(tok));
            std::vector<double> probs(static_cast<size_t>(V));
            for (auto& v : probs) {
                ls >> tok;
                v = detail::parse_double(tok);
            }
            model->set_entry(std::move(ctx), ProbDist(std::move(probs)));
        }
        expect("end");
        return model;
    }
    throw std::runtime_error("load_model: unknown model kind: " + kind);
}

/// Corpus files: in "ids" form every line is one segment of whitespace
/// separated token ids; in "bytes" form every line is one segment of its raw
/// byte values (V = 256).
enum class CorpusFormat { ids, bytes };

inline std::vector<TokenSeq> read_corpus_segments(std::istream& is, CorpusFormat format) {
    std::vector<TokenSeq> segments;
    std::string line;
    while (std::getline(is, line)) {
        TokenSeq seg;
        if (format == CorpusFormat::ids) {
            std::istringstream ls(line);
            long long v;
            while (ls >> v) seg.push_back(static_cast<TokenId>(v));
        } else {
            seg.reserve(line.size());
            for (unsigned char c : line) seg.push_back(static_cast<TokenId>(c));
        }
        if (!seg.empty()) segments.push_back(std::move(seg));
    }
    return segments;
}

}  // namespace specdec
