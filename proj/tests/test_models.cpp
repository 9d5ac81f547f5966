// Copyright 2026 The specdec Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>
#include <sstream>

#include "specdec/model.hpp"
#include "testing_util.hpp"

using namespace specdec;
using specdec::testing::make_chain_model;
using specdec::testing::random_table_model;

TEST_CASE("greedy sampling follows a deterministic chain", "[models]") {
    // A=0 -> B=1 -> C=2 -> A
    const TableModel model = make_chain_model({{0, 1}, {1, 2}, {2, 0}}, 3);
    SeededRng rng(1);
    const auto out = autoregressive_sample(model, {0}, 2, SampleMode::greedy, rng);
    REQUIRE(out.size() == 2);
    CHECK(out[0].first == 1);
    CHECK(out[1].first == 2);
}

TEST_CASE("one-step autoregressive sampling equals a single forward", "[models]") {
    const TableModel model = make_chain_model({{0, 1}, {1, 2}, {2, 0}}, 3);
    SeededRng rng(2);
    const auto out = autoregressive_sample(model, {1}, 1, SampleMode::greedy, rng);
    const StepOutput direct = model.step(TokenSeq{1});
    REQUIRE(out.size() == 1);
    CHECK(out[0].first == argmax(direct.dist));
    CHECK(out[0].second.dist.values() == direct.dist.values());
    CHECK(out[0].second.embedding == direct.embedding);
}

TEST_CASE("order-2 ngram greedily continues an alternating corpus", "[models]") {
    // Corpus "ababab..." with a=0, b=1. Hand count-table oracle: after [a] the
    // only observed continuation is b; after [a,b] it is a; after [b,a] it is b.
    TokenSeq corpus;
    for (int i = 0; i < 6; ++i) {
        corpus.push_back(0);
        corpus.push_back(1);
    }
    const NgramModel model = fit_ngram(corpus, 2, 0.01);
    SeededRng rng(3);
    const auto out = autoregressive_sample(model, {0}, 3, SampleMode::greedy, rng);
    REQUIRE(out.size() == 3);
    CHECK(out[0].first == 1);
    CHECK(out[1].first == 0);
    CHECK(out[2].first == 1);
}

TEST_CASE("ngram conditionals follow the additive-smoothing formula", "[models]") {
    // Corpus [0,1,0,1,0], order 1: context 0 occurs three times but the final
    // token has no successor, so count(0) = 2 with both continuations being 1.
    const TokenSeq corpus{0, 1, 0, 1, 0};

    const double alpha = 0.5;
    const NgramModel model = fit_ngram(corpus, 1, alpha);
    const ProbDist cond = model.next_dist(TokenSeq{0});
    CHECK(cond[1] == Catch::Approx((2.0 + alpha) / (2.0 + 2.0 * alpha)).margin(1e-12));

    // alpha -> 0 limit: P(1|0) -> 1.
    const NgramModel tight = fit_ngram(corpus, 1, 1e-9);
    CHECK(tight.next_dist(TokenSeq{0})[1] == Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("unseen contexts smooth to the uniform distribution", "[models]") {
    const NgramModel model = fit_ngram(TokenSeq{0, 0, 0}, 1, 1.0, /*vocab_size=*/2);
    const ProbDist cond = model.next_dist(TokenSeq{1});
    CHECK(cond[0] == Catch::Approx(0.5));
    CHECK(cond[1] == Catch::Approx(0.5));
}

TEST_CASE("fit_ngram rejects corpora with no transitions", "[models]") {
    CHECK_THROWS_AS(fit_ngram(TokenSeq{}, 1, 1.0), EmptyCorpus);
    CHECK_THROWS_AS(fit_ngram(TokenSeq{0, 1}, 2, 1.0), EmptyCorpus);
    CHECK_THROWS_AS(fit_ngram(std::vector<TokenSeq>{{0}, {1}}, 1, 1.0), EmptyCorpus);
}

TEST_CASE("segment boundaries contribute no transitions", "[models]") {
    // Two segments [0,1] and [1,0]: the 1->1 join must not be counted.
    const NgramModel model = fit_ngram(std::vector<TokenSeq>{{0, 1}, {1, 0}}, 1, 1e-9);
    const ProbDist cond = model.next_dist(TokenSeq{1});
    CHECK(cond[0] == Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("parallel forward is bit-identical to sequential forwards", "[models]") {
    SeededRng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const int32_t V = 3 + static_cast<int32_t>(rng.next_below(4));
        const TableModel model = random_table_model(V, rng);
        TokenSeq context{static_cast<TokenId>(rng.next_below(static_cast<uint64_t>(V)))};
        TokenSeq tokens;
        for (int i = 0; i < 4; ++i) {
            tokens.push_back(static_cast<TokenId>(rng.next_below(static_cast<uint64_t>(V))));
        }
        const auto fwd = parallel_forward(model, tokens, context);
        REQUIRE(fwd.size() == tokens.size() + 1);
        TokenSeq ctx = context;
        for (size_t i = 0; i < fwd.size(); ++i) {
            const StepOutput single = model.step(ctx);
            REQUIRE(fwd[i].dist.values() == single.dist.values());
            REQUIRE(fwd[i].embedding == single.embedding);
            if (i < tokens.size()) ctx.push_back(tokens[i]);
        }
    }
}

TEST_CASE("parallel forward with zero tokens is the bare next-token prediction", "[models]") {
    const TableModel model = make_chain_model({{0, 1}, {1, 2}, {2, 0}}, 3);
    const auto fwd = parallel_forward(model, {}, {0});
    REQUIRE(fwd.size() == 1);
    CHECK(argmax(fwd[0].dist) == 1);
}

TEST_CASE("parallel forward walks the chain", "[models]") {
    // Chain A=0 -> B=1 -> C=2 -> A: distributions at [B, C] given [A] are point
    // masses on B, C, and the successor of C.
    const TableModel model = make_chain_model({{0, 1}, {1, 2}, {2, 0}}, 3);
    const auto fwd = parallel_forward(model, {1, 2}, {0});
    REQUIRE(fwd.size() == 3);
    CHECK(fwd[0].dist[1] == 1.0);
    CHECK(fwd[1].dist[2] == 1.0);
    CHECK(fwd[2].dist[0] == 1.0);
}

TEST_CASE("greedy autoregressive sampling is reproducible", "[models]") {
    SeededRng seed_rng(21);
    const TableModel model = random_table_model(5, seed_rng);
    SeededRng r1(0), r2(0);
    const auto a = autoregressive_sample(model, {2}, 16, SampleMode::greedy, r1);
    const auto b = autoregressive_sample(model, {2}, 16, SampleMode::greedy, r2);
    for (size_t i = 0; i < a.size(); ++i) REQUIRE(a[i].first == b[i].first);
}

TEST_CASE("ngram conditionals are valid distributions everywhere", "[models]") {
    SeededRng rng(31);
    TokenSeq corpus;
    for (int i = 0; i < 2000; ++i) corpus.push_back(static_cast<TokenId>(rng.next_below(12)));
    const NgramModel model = fit_ngram(corpus, 2, 0.25);
    for (int trial = 0; trial < 1000; ++trial) {
        TokenSeq ctx;
        const size_t len = rng.next_below(4);
        for (size_t i = 0; i < len; ++i) ctx.push_back(static_cast<TokenId>(rng.next_below(12)));
        const ProbDist cond = model.next_dist(ctx);  // construction enforces sum within 1e-9
        double sum = 0.0;
        for (size_t t = 0; t < cond.size(); ++t) sum += cond[t];
        REQUIRE(std::abs(sum - 1.0) < 1e-9);
    }
}

TEST_CASE("default embed map is deterministic and injective in the token", "[models]") {
    const int D = 8;
    for (int32_t V : {4, 16}) {
        std::vector<TokenSeq> windows{{}};
        for (TokenId a = 0; a < V; ++a) {
            windows.push_back({a});
            for (TokenId b = 0; b < V; ++b) windows.push_back({a, b});
        }
        for (const TokenSeq& w : windows) {
            std::vector<std::vector<double>> vecs;
            for (TokenId t = 0; t < V; ++t) {
                vecs.push_back(default_embed_map(w, t, D));
                REQUIRE(vecs.back() == default_embed_map(w, t, D));
            }
            for (TokenId a = 0; a < V; ++a) {
                for (TokenId b = a + 1; b < V; ++b) {
                    REQUIRE(vecs[static_cast<size_t>(a)] != vecs[static_cast<size_t>(b)]);
                }
            }
        }
    }
}

TEST_CASE("embed map handles an empty window and rejects tiny dims", "[models]") {
    const auto v = default_embed_map({}, 3, 8);
    CHECK(v.size() == 8);
    CHECK_THROWS_AS(default_embed_map({}, 3, 4), std::invalid_argument);
}

TEST_CASE("scored embeddings expose the model's own conditional", "[models]") {
    const TokenSeq corpus{0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1};
    const NgramModel model =
        fit_ngram(corpus, 1, 0.1, 0, EmbedConfig{EmbedKind::scored, 16, 2});
    const TokenSeq preceding{0};
    const ProbDist cond = model.next_dist(preceding);
    const auto emb = model.embed_at(preceding, 1);
    REQUIRE(emb.size() == 16);
    CHECK(emb[0] == cond[1]);
    CHECK(emb[1] == Catch::Approx(std::log10(std::max(cond[1], 1e-9)) / 9.0 + 1.0));
    // Token 1 is the argmax after context 0, so its rank feature is maximal.
    CHECK(emb[3] == Catch::Approx(1.0));
}

TEST_CASE("ngram models survive a serialization round trip", "[models]") {
    SeededRng rng(41);
    TokenSeq corpus;
    for (int i = 0; i < 500; ++i) corpus.push_back(static_cast<TokenId>(rng.next_below(7)));
    const NgramModel model = fit_ngram(corpus, 2, 0.3, 0, EmbedConfig{EmbedKind::scored, 32, 2});

    std::stringstream buf;
    save_model(model, buf);
    const std::unique_ptr<Model> loaded = load_model(buf);
    REQUIRE(loaded->vocab().size() == model.vocab().size());
    REQUIRE(loaded->embedding_dim() == 32);
    for (int trial = 0; trial < 50; ++trial) {
        TokenSeq ctx;
        for (size_t i = 0; i < 1 + rng.next_below(3); ++i) {
            ctx.push_back(static_cast<TokenId>(rng.next_below(7)));
        }
        REQUIRE(loaded->next_dist(ctx).values() == model.next_dist(ctx).values());
    }
}

TEST_CASE("table models survive a serialization round trip", "[models]") {
    SeededRng rng(43);
    const TableModel model = random_table_model(4, rng);
    std::stringstream buf;
    save_model(model, buf);
    const std::unique_ptr<Model> loaded = load_model(buf);
    for (TokenId t = 0; t < 4; ++t) {
        REQUIRE(loaded->next_dist(TokenSeq{t}).values() == model.next_dist(TokenSeq{t}).values());
    }
    // Unknown context falls back to the default distribution.
    REQUIRE(loaded->next_dist(TokenSeq{}).values() == model.next_dist(TokenSeq{}).values());
}

TEST_CASE("corpus files parse as id or byte segments", "[models]") {
    std::istringstream ids("1 2 3\n\n4 5\n");
    const auto seg_ids = read_corpus_segments(ids, CorpusFormat::ids);
    REQUIRE(seg_ids.size() == 2);
    CHECK(seg_ids[0] == TokenSeq{1, 2, 3});
    CHECK(seg_ids[1] == TokenSeq{4, 5});

    std::istringstream bytes("ab\ncd\n");
    const auto seg_bytes = read_corpus_segments(bytes, CorpusFormat::bytes);
    REQUIRE(seg_bytes.size() == 2);
    CHECK(seg_bytes[0] == TokenSeq{'a', 'b'});
}
