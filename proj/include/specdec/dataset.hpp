// Copyright 2026 The specdec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <nlohmann/json.hpp>

#include "specdec/core.hpp"
#include "specdec/judge.hpp"
#include "specdec/model.hpp"

namespace specdec {

struct SpanBoundsError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CannotCorrupt : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// [start, end) token-index interval into a wrong answer.
struct ErrorSpan {
    int start = 0;
    int end = 0;
};

/// One annotated record: a prompt with a correct answer, a wrong answer and
/// the exact token spans where the wrong answer goes wrong.
struct AnnotatedExample {
    std::string id;
    TokenSeq prompt;
    TokenSeq correct_answer;
    TokenSeq wrong_answer;
    std::vector<ErrorSpan> error_spans;
    std::string category;
};

struct DatasetHeader {
    int schema_version = 1;
    std::string tokenizer_id = "ids";
};

/// Structured per-record diagnostic; validation never aborts the stream on
/// these.
struct RecordError {
    size_t line = 0;
    std::string field;
    std::string reason;
};

struct ValidationResult {
    DatasetHeader header;
    std::vector<AnnotatedExample> examples;
    std::vector<RecordError> errors;
};

namespace detail {

// "ids" fields are arrays of token ids; "bytes" fields are UTF-8 strings
// tokenized one byte per token (V = 256).
inline bool tokenize_field(const nlohmann::json& value, const std::string& tokenizer_id,
                           TokenSeq* out, std::string* reason) {
    out->clear();
    if (value.is_array()) {
        for (const auto& v : value) {
            if (!v.is_number_integer() || v.get<int64_t>() < 0) {
                *reason = "token ids must be non-negative integers";
                return false;
            }
            out->push_back(static_cast<TokenId>(v.get<int64_t>()));
        }
        return true;
    }
    if (value.is_string()) {
        if (tokenizer_id != "bytes") {
            *reason = "string field requires tokenizer_id \"bytes\"";
            return false;
        }
        for (unsigned char c : value.get<std::string>()) out->push_back(static_cast<TokenId>(c));
        return true;
    }
    *reason = "expected a token-id array or a string";
    return false;
}

inline bool check_spans(const std::vector<ErrorSpan>& spans, size_t wrong_len,
                        std::string* reason) {
    if (spans.empty()) {
        *reason = "error_spans must be non-empty";
        return false;
    }
    int prev_end = 0;
    bool first = true;
    for (const ErrorSpan& s : spans) {
        if (s.start >= s.end) {
            *reason = "SpanOrderError: span start " + std::to_string(s.start) +
                      " >= end " + std::to_string(s.end);
            return false;
        }
        if (s.start < 0 || static_cast<size_t>(s.end) > wrong_len) {
            *reason = "SpanBoundsError: span [" + std::to_string(s.start) + "," +
                      std::to_string(s.end) + ") outside wrong_answer of length " +
                      std::to_string(wrong_len);
            return false;
        }
        if (!first && s.start < prev_end) {
            *reason = "SpanOverlapError: span starting at " + std::to_string(s.start) +
                      " overlaps previous span ending at " + std::to_string(prev_end);
            return false;
        }
        prev_end = s.end;
        first = false;
    }
    return true;
}

}  // namespace detail

/// Parse a line-delimited dataset: a header record followed by one example
/// per line. A missing or malformed header is fatal; anything wrong with an
/// individual record becomes a structured error and the stream continues.
inline ValidationResult validate(std::istream& is) {
    ValidationResult result;
    std::string line;
    size_t line_no = 0;

    // Header record.
    while (std::getline(is, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json h = nlohmann::json::parse(line, nullptr, false);
        if (h.is_discarded() || !h.contains("schema_version")) {
            throw std::runtime_error("dataset: first record must be a header with schema_version");
        }
        result.header.schema_version = h["schema_version"].get<int>();
        if (result.header.schema_version != 1) {
            throw std::runtime_error("dataset: unsupported schema_version " +
                                     std::to_string(result.header.schema_version));
        }
        result.header.tokenizer_id = h.value("tokenizer_id", "ids");
        break;
    }

    while (std::getline(is, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            result.errors.push_back({line_no, "", "not a valid JSON record"});
            continue;
        }
        AnnotatedExample ex;
        std::string reason;
        bool ok = true;
        const auto need = [&](const char* field) {
            if (!j.contains(field)) {
                result.errors.push_back({line_no, field, "missing field"});
                ok = false;
                return false;
            }
            return true;
        };
        if (need("id")) ex.id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
        for (const auto& [field, dst] : std::initializer_list<std::pair<const char*, TokenSeq*>>{
                 {"prompt", &ex.prompt},
                 {"correct_answer", &ex.correct_answer},
                 {"wrong_answer", &ex.wrong_answer}}) {
            if (!need(field)) continue;
            if (!detail::tokenize_field(j[field], result.header.tokenizer_id, dst, &reason)) {
                result.errors.push_back({line_no, field, reason});
                ok = false;
            }
        }
        if (need("error_spans")) {
            if (!j["error_spans"].is_array()) {
                result.errors.push_back({line_no, "error_spans", "expected an array of [start,end) pairs"});
                ok = false;
            } else {
                for (const auto& s : j["error_spans"]) {
                    if (!s.is_array() || s.size() != 2 || !s[0].is_number_integer() ||
                        !s[1].is_number_integer()) {
                        result.errors.push_back(
                            {line_no, "error_spans", "each span must be an integer pair"});
                        ok = false;
                        break;
                    }
                    ex.error_spans.push_back({s[0].get<int>(), s[1].get<int>()});
                }
            }
        }
        ex.category = j.value("category", "general");
        if (!ok) continue;

        if (ex.correct_answer.empty()) {
            result.errors.push_back({line_no, "correct_answer", "must be non-empty"});
            continue;
        }
        if (!detail::check_spans(ex.error_spans, ex.wrong_answer.size(), &reason)) {
            result.errors.push_back({line_no, "error_spans", reason});
            continue;
        }
        result.examples.push_back(std::move(ex));
    }
    return result;
}

inline void write_dataset(std::span<const AnnotatedExample> examples, const DatasetHeader& header,
                          std::ostream& os) {
    nlohmann::json h{{"schema_version", header.schema_version},
                     {"tokenizer_id", header.tokenizer_id}};
    os << h.dump() << "\n";
    for (const AnnotatedExample& ex : examples) {
        nlohmann::json spans = nlohmann::json::array();
        for (const ErrorSpan& s : ex.error_spans) spans.push_back({s.start, s.end});
        nlohmann::json j{{"id", ex.id},
                         {"prompt", ex.prompt},
                         {"correct_answer", ex.correct_answer},
                         {"wrong_answer", ex.wrong_answer},
                         {"error_spans", spans},
                         {"category", ex.category}};
        os << j.dump() << "\n";
    }
}

/// Token labels for judge training. Correct-answer tokens are positive;
/// wrong-answer tokens before the first error span are positive; tokens
/// inside an error span are negative; wrong-answer tokens after a span but
/// outside all spans are excluded (their quality is undefined). Embeddings
/// come from the model processing (prompt, answer).
inline std::vector<LabeledToken> derive_labels(const AnnotatedExample& example,
                                               const Model& model) {
    for (const ErrorSpan& s : example.error_spans) {
        if (s.start < 0 || static_cast<size_t>(s.end) > example.wrong_answer.size() ||
            s.start >= s.end) {
            throw SpanBoundsError("derive_labels: span [" + std::to_string(s.start) + "," +
                                  std::to_string(s.end) + ") invalid for wrong_answer length " +
                                  std::to_string(example.wrong_answer.size()));
        }
    }

    std::vector<LabeledToken> out;

    const std::vector<StepOutput> correct_fwd =
        parallel_forward(model, example.correct_answer, example.prompt);
    for (size_t j = 0; j < example.correct_answer.size(); ++j) {
        out.push_back(LabeledToken::make(correct_fwd[j + 1].embedding,
                                         LabelSource::correct_answer, static_cast<int>(j)));
    }

    const std::vector<StepOutput> wrong_fwd =
        parallel_forward(model, example.wrong_answer, example.prompt);
    const int first_error = example.error_spans.front().start;
    for (size_t j = 0; j < example.wrong_answer.size(); ++j) {
        const int pos = static_cast<int>(j);
        bool in_span = false;
        for (const ErrorSpan& s : example.error_spans) {
            if (pos >= s.start && pos < s.end) {
                in_span = true;
                break;
            }
        }
        if (in_span) {
            out.push_back(LabeledToken::make(wrong_fwd[j + 1].embedding, LabelSource::wrong_error,
                                             pos));
        } else if (pos < first_error) {
            out.push_back(LabeledToken::make(wrong_fwd[j + 1].embedding, LabelSource::wrong_prefix,
                                             pos));
        }
        // Tokens past the first span but outside all spans train nothing.
    }
    return out;
}

inline std::vector<LabeledToken> derive_labels(std::span<const AnnotatedExample> examples,
                                               const Model& model) {
    std::vector<LabeledToken> out;
    for (const AnnotatedExample& ex : examples) {
        auto labels = derive_labels(ex, model);
        out.insert(out.end(), std::make_move_iterator(labels.begin()),
                   std::make_move_iterator(labels.end()));
    }
    return out;
}

/// How corruption substitutes are chosen among tokens that are neither the
/// model's greedy choice nor the correct token: least_likely picks the lowest
/// conditional probability (ties to the highest index), uniform picks at
/// random.
enum class CorruptionPick { least_likely, uniform };

struct SynthConfig {
    int answer_len = 40;
    int prompt_len = 8;
    // Desired (#positive labels / #negative labels); drives the span length.
    double target_pos_neg_ratio = 20.0;
    // > 0 forces an exact corruption span length instead of deriving it.
    int span_len_override = -1;
    CorruptionPick pick = CorruptionPick::least_likely;
    std::string category = "general";
    std::string id_prefix = "synth";
    // When non-empty, prompts are drawn from this pool instead of sampled
    // from the model.
    std::vector<TokenSeq> prompt_pool;
};

/// Generate annotated examples with known ground truth: the correct answer is
/// the model's greedy continuation, the wrong answer replaces one contiguous
/// span with tokens that are not the greedy choice at their position, and the
/// error span marks exactly the replaced tokens.
inline std::vector<AnnotatedExample> synthesize(const Model& target_model, int count,
                                                const SynthConfig& config, SeededRng& rng) {
    if (count < 1) throw std::invalid_argument("synthesize: count must be >= 1");
    if (config.answer_len < 1) throw std::invalid_argument("synthesize: answer_len must be >= 1");
    if (config.span_len_override == 0) {
        throw std::invalid_argument(
            "synthesize: corruption span of length 0 would leave wrong_answer equal to "
            "correct_answer");
    }
    if (!(config.target_pos_neg_ratio > 0.0)) {
        throw std::invalid_argument("synthesize: target_pos_neg_ratio must be > 0");
    }
    const int32_t V = target_model.vocab().size();
    if (V < 3) {
        throw CannotCorrupt("synthesize: vocabulary too small to pick a non-greedy substitute");
    }

    const int ell = config.answer_len;
    int span_len = config.span_len_override;
    if (span_len < 0) {
        // E[#pos]/#neg = (ell + (ell - span)/2) / span ~= target ratio.
        span_len = static_cast<int>(std::lround(1.5 * ell / (config.target_pos_neg_ratio + 0.5)));
    }
    span_len = std::clamp(span_len, 1, ell);

    std::vector<AnnotatedExample> out;
    out.reserve(static_cast<size_t>(count));
    for (int n = 0; n < count; ++n) {
        SeededRng ex_rng = rng.fork(static_cast<uint64_t>(n) + 1);
        AnnotatedExample ex;
        ex.id = config.id_prefix + "-" + std::to_string(n);
        ex.category = config.category;

        if (!config.prompt_pool.empty()) {
            ex.prompt = config.prompt_pool[ex_rng.next_below(config.prompt_pool.size())];
        } else {
            for (const auto& [t, step] : autoregressive_sample(target_model, {}, config.prompt_len,
                                                               SampleMode::sampled, ex_rng)) {
                (void)step;
                ex.prompt.push_back(t);
            }
        }

        for (const auto& [t, step] :
             autoregressive_sample(target_model, ex.prompt, ell, SampleMode::greedy, ex_rng)) {
            (void)step;
            ex.correct_answer.push_back(t);
        }

        const int span_start = static_cast<int>(ex_rng.next_below(
            static_cast<uint64_t>(ell - span_len) + 1));
        ex.wrong_answer = ex.correct_answer;
        TokenSeq prefix = ex.prompt;
        prefix.insert(prefix.end(), ex.wrong_answer.begin(),
                      ex.wrong_answer.begin() + span_start);
        for (int k = span_start; k < span_start + span_len; ++k) {
            const ProbDist cond = target_model.next_dist(prefix);
            const TokenId greedy_tok = argmax(cond);
            const TokenId correct_tok = ex.correct_answer[static_cast<size_t>(k)];
            TokenId substitute = -1;
            if (config.pick == CorruptionPick::least_likely) {
                double best_p = std::numeric_limits<double>::infinity();
                for (int32_t t = 0; t < V; ++t) {
                    if (t == greedy_tok || t == correct_tok) continue;
                    if (cond[static_cast<size_t>(t)] <= best_p) {
                        best_p = cond[static_cast<size_t>(t)];
                        substitute = t;
                    }
                }
            } else {
                TokenSeq allowed;
                for (int32_t t = 0; t < V; ++t) {
                    if (t != greedy_tok && t != correct_tok) allowed.push_back(t);
                }
                if (!allowed.empty()) substitute = allowed[ex_rng.next_below(allowed.size())];
            }
            if (substitute < 0) {
                throw CannotCorrupt("synthesize: no non-greedy substitute available");
            }
            ex.wrong_answer[static_cast<size_t>(k)] = substitute;
            prefix.push_back(substitute);
        }
        ex.error_spans.push_back({span_start, span_start + span_len});
        out.push_back(std::move(ex));
    }
    return out;
}

}  // namespace specdec
