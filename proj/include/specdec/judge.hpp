// Copyright 2026 The specdec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "specdec/core.hpp"

namespace specdec {

struct DegenerateDataset : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

/// Linear accept/reject head over embeddings: accept when
/// sigmoid(weights . e + bias) > delta, strictly. delta = 1 accepts nothing.
struct JudgeHead {
    std::vector<double> weights;
    double bias = 0.0;
    double delta = 0.5;

    JudgeHead() = default;
    JudgeHead(std::vector<double> w, double b, double d) : weights(std::move(w)), bias(b), delta(d) {
        if (delta < 0.5 || delta > 1.0) {
            throw std::invalid_argument("JudgeHead: delta must lie in [0.5, 1]");
        }
    }

    int dim() const { return static_cast<int>(weights.size()); }

    double logit(std::span<const double> embedding) const {
        if (embedding.size() != weights.size()) {
            throw DimensionError("JudgeHead: embedding dim " + std::to_string(embedding.size()) +
                                 " != head dim " + std::to_string(weights.size()));
        }
        double z = bias;
        for (size_t i = 0; i < weights.size(); ++i) z += weights[i] * embedding[i];
        return z;
    }
};

inline double score(const JudgeHead& head, std::span<const double> embedding) {
    return sigmoid(head.logit(embedding));
}

inline bool accepts(const JudgeHead& head, std::span<const double> embedding) {
    return score(head, embedding) > head.delta;
}

/// The head viewed as one extra vocabulary row: the logit is the dot product
/// of the augmented row [w_1..w_D, bias] with the augmented embedding
/// [e_1..e_D, 1], so an engine can fuse it with the final projection.
struct VocabRow {
    std::vector<double> row;  // length D
    double bias = 0.0;

    std::vector<double> augmented() const {
        std::vector<double> out = row;
        out.push_back(bias);
        return out;
    }

    double logit(std::span<const double> embedding) const {
        if (embedding.size() != row.size()) {
            throw DimensionError("VocabRow: embedding dimension mismatch");
        }
        double z = bias;
        for (size_t i = 0; i < row.size(); ++i) z += row[i] * embedding[i];
        return z;
    }

    double score(std::span<const double> embedding) const { return sigmoid(logit(embedding)); }
};

inline VocabRow as_vocab_row(const JudgeHead& head) {
    return VocabRow{head.weights, head.bias};
}

enum class Label : uint8_t { positive = 1, negative = 0 };
enum class LabelSource : uint8_t { correct_answer, wrong_prefix, wrong_error };

/// One training token: an embedding with its correctness label and where in
/// the annotated example it came from. wrong_error tokens are negative by
/// definition; everything else is positive.
struct LabeledToken {
    std::vector<double> embedding;
    Label label = Label::positive;
    LabelSource source = LabelSource::correct_answer;
    int position = 0;

    static LabeledToken make(std::vector<double> embedding, LabelSource source, int position) {
        LabeledToken t;
        t.embedding = std::move(embedding);
        t.source = source;
        t.label = source == LabelSource::wrong_error ? Label::negative : Label::positive;
        t.position = position;
        return t;
    }
};

struct TrainConfig {
    double learning_rate = 1e-4;
    double weight_decay = 0.1;
    int batch_size = 128;
    // <= 0 means auto: (#positives / #negatives), never below 1.
    double negative_class_weight = 0.0;
    int max_epochs = 100;
    int patience = 5;
    double validation_fraction = 0.1;
    double delta = 0.5;
    uint64_t seed = 0;

    void validate() const {
        if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
        if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be >= 0");
        if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
        if (max_epochs < 1) throw std::invalid_argument("max_epochs must be >= 1");
        if (patience < 1) throw std::invalid_argument("patience must be >= 1");
        if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
            throw std::invalid_argument("validation_fraction must lie in (0, 1)");
        }
        if (delta < 0.5 || delta > 1.0) throw std::invalid_argument("delta must lie in [0.5, 1]");
    }

    uint64_t digest() const {
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%a|%a|%d|%a|%d|%d|%a|%a|%llu", learning_rate,
                      weight_decay, batch_size, negative_class_weight, max_epochs, patience,
                      validation_fraction, delta, static_cast<unsigned long long>(seed));
        uint64_t h = 0xcbf29ce484222325ull;
        for (const char* p = buf; *p; ++p) {
            h ^= static_cast<uint64_t>(static_cast<unsigned char>(*p));
            h *= 0x100000001b3ull;
        }
        return h;
    }
};

/// Confusion counts and derived rates at the head's threshold. "Accept" means
/// score > delta, i.e. predicted positive. Rates whose class is absent are NaN.
struct MetricsRecord {
    size_t tp = 0, fp = 0, tn = 0, fn = 0;
    double accuracy = 0.0;
    double precision_pos = 0.0, recall_pos = 0.0;
    double precision_neg = 0.0, recall_neg = 0.0;
    double false_accept_rate = 0.0;
};

inline MetricsRecord evaluate(const JudgeHead& head, std::span<const LabeledToken> dataset) {
    if (dataset.empty()) throw std::invalid_argument("evaluate: empty dataset");
    MetricsRecord m;
    for (const LabeledToken& t : dataset) {
        const bool predicted_accept = accepts(head, t.embedding);
        if (t.label == Label::positive) {
            predicted_accept ? ++m.tp : ++m.fn;
        } else {
            predicted_accept ? ++m.fp : ++m.tn;
        }
    }
    const auto rate = [](size_t num, size_t denom) {
        return denom == 0 ? std::numeric_limits<double>::quiet_NaN()
                          : static_cast<double>(num) / static_cast<double>(denom);
    };
    m.accuracy = rate(m.tp + m.tn, dataset.size());
    m.precision_pos = rate(m.tp, m.tp + m.fp);
    m.recall_pos = rate(m.tp, m.tp + m.fn);
    m.precision_neg = rate(m.tn, m.tn + m.fn);
    m.recall_neg = rate(m.tn, m.tn + m.fp);
    m.false_accept_rate = rate(m.fp, m.fp + m.tn);
    return m;
}

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;      // mean over the epoch's mini-batches
    double train_loss_end = 0.0;  // full training split, measured at the epoch boundary
    double val_loss = 0.0;
};

struct TrainReport {
    std::vector<EpochStats> epochs;
    int best_epoch = 0;
    bool stopped_early = false;
    size_t train_size = 0, val_size = 0;
    double negative_class_weight = 1.0;
    MetricsRecord validation_metrics;
};

struct TrainResult {
    JudgeHead head;
    TrainReport report;
};

namespace detail {

inline double weighted_bce(double logit, double y, double w) {
    // max(z,0) - z*y + log1p(exp(-|z|)), the stable form.
    const double z = logit;
    return w * (std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z))));
}

}  // namespace detail

/// Fit the linear head by AdamW on weighted cross entropy (positives weight 1,
/// negatives weight config.negative_class_weight). Mini-batches are shuffled
/// per epoch from config.seed, so training is bit-reproducible. Stops when the
/// weighted validation loss has not improved for `patience` epochs and returns
/// the best-validation snapshot.
inline TrainResult train(std::span<const LabeledToken> dataset, const TrainConfig& config) {
    config.validate();
    if (dataset.empty()) throw DegenerateDataset("train: empty dataset");
    const size_t dim = dataset.front().embedding.size();

    size_t n_pos = 0, n_neg = 0;
    for (const LabeledToken& t : dataset) {
        if (t.embedding.size() != dim) throw DimensionError("train: ragged embedding dims");
        t.label == Label::positive ? ++n_pos : ++n_neg;
    }
    if (n_pos == 0 || n_neg == 0) {
        throw DegenerateDataset("train: dataset must contain both classes");
    }

    double w_neg = config.negative_class_weight;
    if (w_neg <= 0.0) {
        w_neg = std::max(1.0, static_cast<double>(n_pos) / static_cast<double>(n_neg));
    }

    // Deterministic validation split: shuffle once, take the tail.
    SeededRng split_rng = SeededRng(config.seed).fork(0x5117);
    std::vector<size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), size_t{0});
    for (size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[split_rng.next_below(i)]);
    }
    size_t n_val = static_cast<size_t>(std::lround(
        config.validation_fraction * static_cast<double>(dataset.size())));
    n_val = std::clamp<size_t>(n_val, 1, dataset.size() - 1);
    std::vector<size_t> train_idx(order.begin(), order.end() - static_cast<ptrdiff_t>(n_val));
    std::vector<size_t> val_idx(order.end() - static_cast<ptrdiff_t>(n_val), order.end());

    {
        size_t tp = 0, tn = 0;
        for (size_t i : train_idx) dataset[i].label == Label::positive ? ++tp : ++tn;
        if (tp == 0 || tn == 0) {
            throw DegenerateDataset("train: training split lost one of the classes");
        }
    }

    const auto example_weight = [&](size_t i) {
        return dataset[i].label == Label::positive ? 1.0 : w_neg;
    };
    const auto example_target = [&](size_t i) {
        return dataset[i].label == Label::positive ? 1.0 : 0.0;
    };

    std::vector<double> w(dim, 0.0);
    double b = 0.0;
    std::vector<double> m_w(dim, 0.0), v_w(dim, 0.0);
    double m_b = 0.0, v_b = 0.0;
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long step = 0;

    const auto set_loss = [&](const std::vector<size_t>& idx) {
        double total = 0.0;
        for (size_t i : idx) {
            double z = b;
            const auto& e = dataset[i].embedding;
            for (size_t d = 0; d < dim; ++d) z += w[d] * e[d];
            total += detail::weighted_bce(z, example_target(i), example_weight(i));
        }
        return total / static_cast<double>(idx.size());
    };

    TrainResult result;
    result.report.train_size = train_idx.size();
    result.report.val_size = val_idx.size();
    result.report.negative_class_weight = w_neg;

    std::vector<double> best_w = w;
    double best_b = b;
    double best_val = std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    int stale = 0;

    SeededRng shuffle_rng = SeededRng(config.seed).fork(0xba7c4);
    std::vector<double> grad_w(dim);

    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        for (size_t i = train_idx.size(); i > 1; --i) {
            std::swap(train_idx[i - 1], train_idx[shuffle_rng.next_below(i)]);
        }
        double epoch_loss = 0.0;
        size_t batches = 0;
        for (size_t start = 0; start < train_idx.size(); start += static_cast<size_t>(config.batch_size)) {
            const size_t stop = std::min(train_idx.size(), start + static_cast<size_t>(config.batch_size));
            const double bsz = static_cast<double>(stop - start);
            std::fill(grad_w.begin(), grad_w.end(), 0.0);
            double grad_b = 0.0;
            double batch_loss = 0.0;
            for (size_t j = start; j < stop; ++j) {
                const size_t i = train_idx[j];
                const auto& e = dataset[i].embedding;
                double z = b;
                for (size_t d = 0; d < dim; ++d) z += w[d] * e[d];
                const double y = example_target(i);
                const double wt = example_weight(i);
                const double g = wt * (sigmoid(z) - y) / bsz;
                for (size_t d = 0; d < dim; ++d) grad_w[d] += g * e[d];
                grad_b += g;
                batch_loss += detail::weighted_bce(z, y, wt);
            }
            epoch_loss += batch_loss / bsz;
            ++batches;

            ++step;
            const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
            for (size_t d = 0; d < dim; ++d) {
                m_w[d] = beta1 * m_w[d] + (1.0 - beta1) * grad_w[d];
                v_w[d] = beta2 * v_w[d] + (1.0 - beta2) * grad_w[d] * grad_w[d];
                const double update = (m_w[d] / bc1) / (std::sqrt(v_w[d] / bc2) + eps);
                w[d] -= config.learning_rate * (update + config.weight_decay * w[d]);
            }
            m_b = beta1 * m_b + (1.0 - beta1) * grad_b;
            v_b = beta2 * v_b + (1.0 - beta2) * grad_b * grad_b;
            b -= config.learning_rate * (m_b / bc1) / (std::sqrt(v_b / bc2) + eps);
        }

        const double val_loss = set_loss(val_idx);
        result.report.epochs.push_back(EpochStats{epoch, epoch_loss / static_cast<double>(batches),
                                                  set_loss(train_idx), val_loss});

        if (val_loss < best_val - 1e-12) {
            best_val = val_loss;
            best_w = w;
            best_b = b;
            best_epoch = epoch;
            stale = 0;
        } else if (++stale >= config.patience) {
            result.report.stopped_early = true;
            break;
        }
    }

    result.head = JudgeHead(std::move(best_w), best_b, config.delta);
    result.report.best_epoch = best_epoch;

    std::vector<LabeledToken> val;
    val.reserve(val_idx.size());
    for (size_t i : val_idx) val.push_back(dataset[i]);
    result.report.validation_metrics = evaluate(result.head, val);
    return result;
}

// --- head serialization ------------------------------------------------------

inline void save_head(const JudgeHead& head, uint64_t config_digest, std::ostream& os) {
    os << "specdec-judge v1\n";
    os << "dim " << head.dim() << "\n";
    os << "delta " << detail::fmt_double(head.delta) << "\n";
    os << "bias " << detail::fmt_double(head.bias) << "\n";
    os << "weights";
    for (double v : head.weights) os << " " << detail::fmt_double(v);
    os << "\n";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(config_digest));
    os << "config_digest " << buf << "\n";
}

inline JudgeHead load_head(std::istream& is, uint64_t* config_digest = nullptr) {
    std::string magic, version;
    if (!(is >> magic >> version) || magic != "specdec-judge" || version != "v1") {
        throw std::runtime_error("load_head: not a specdec v1 judge file");
    }
    auto expect = [&](const char* word) {
        std::string s;
        if (!(is >> s) || s != word) {
            throw std::runtime_error("load_head: expected '" + std::string(word) + "'");
        }
    };
    expect("dim");
    int dim;
    is >> dim;
    expect("delta");
    std::string s;
    is >> s;
    const double delta = std::strtod(s.c_str(), nullptr);
    expect("bias");
    is >> s;
    const double bias = std::strtod(s.c_str(), nullptr);
    expect("weights");
    std::vector<double> weights(static_cast<size_t>(dim));
    for (auto& v : weights) {
        is >> s;
        v = std::strtod(s.c_str(), nullptr);
    }
    expect("config_digest");
    is >> s;
    if (config_digest) *config_digest = std::stoull(s, nullptr, 16);
    return JudgeHead(std::move(weights), bias, delta);
}

}  // namespace specdec
