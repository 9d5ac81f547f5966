// Copyright 2026 The specdec Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include "specdec/verify.hpp"
#include "testing_util.hpp"

using namespace specdec;
using specdec::testing::random_dist;
using specdec::testing::random_table_model;

namespace {

std::vector<ProbDist> dists(std::initializer_list<std::vector<double>> rows) {
    std::vector<ProbDist> out;
    for (auto& r : rows) out.emplace_back(r);
    return out;
}

}  // namespace

TEST_CASE("ratio >= 1 forces acceptance for every epsilon", "[verify]") {
    const TokenSeq candidates{0};
    const auto q = dists({{0.3, 0.35, 0.35}});
    const auto p = dists({{0.9, 0.05, 0.05}, {0.4, 0.3, 0.3}});
    for (uint64_t seed = 0; seed < 200; ++seed) {
        SeededRng rng(seed);
        const VerifyOutcome out = lossless_verify(candidates, q, p, rng, SampleMode::sampled);
        REQUIRE(out.mask.accepted_len == 1);
        REQUIRE(out.bonus.has_value());
    }
}

TEST_CASE("low-ratio candidates reject and resample from the residual", "[verify]") {
    // ratio = p[c]/q[c] = 0.2/0.8 = 0.25; residual = norm(max(0, p-q)) =
    // norm([0, 0.4, 0.2]) = [0, 2/3, 1/3] by hand.
    const TokenSeq candidates{0};
    const auto q = dists({{0.8, 0.1, 0.1}});
    const auto p = dists({{0.2, 0.5, 0.3}, {0.4, 0.3, 0.3}});

    int rejections = 0;
    int corrections_1 = 0, corrections_2 = 0;
    for (uint64_t seed = 0; seed < 20000; ++seed) {
        SeededRng probe(seed);
        const double first_eps = probe.next_uniform();
        SeededRng rng(seed);
        const VerifyOutcome out = lossless_verify(candidates, q, p, rng, SampleMode::sampled);
        if (first_eps < 0.25) {
            REQUIRE(out.mask.accepted_len == 1);
        } else {
            REQUIRE(out.mask.accepted_len == 0);
            REQUIRE(out.correction.has_value());
            REQUIRE(*out.correction != 0);  // residual support excludes the rejected token
            ++rejections;
            (*out.correction == 1 ? corrections_1 : corrections_2)++;
            REQUIRE(out.rng_draws_used == 2);  // one epsilon, one resample draw
        }
    }
    // Correction frequencies follow the hand-computed residual [0, 2/3, 1/3].
    const double frac_1 = static_cast<double>(corrections_1) / rejections;
    CHECK(frac_1 == Catch::Approx(2.0 / 3.0).margin(0.02));
    CHECK(corrections_1 + corrections_2 == rejections);
}

TEST_CASE("full acceptance yields a bonus token from the extra vector", "[verify]") {
    const TokenSeq candidates{0, 1};
    const auto q = dists({{0.5, 0.3, 0.2}, {0.2, 0.6, 0.2}});
    const auto p = dists({{0.6, 0.2, 0.2}, {0.1, 0.8, 0.1}, {0.0, 0.0, 1.0}});
    SeededRng rng(7);
    const VerifyOutcome out = lossless_verify(candidates, q, p, rng, SampleMode::sampled);
    REQUIRE(out.mask.accepted_len == 2);
    REQUIRE(out.bonus.has_value());
    CHECK(*out.bonus == 2);  // point mass in p_{M+1}
    CHECK_FALSE(out.correction.has_value());
}

TEST_CASE("residual distribution matches hand arithmetic", "[verify]") {
    const ProbDist r1 = residual_distribution(ProbDist({0.5, 0.3, 0.2}), ProbDist({0.2, 0.5, 0.3}));
    CHECK(r1[0] == Catch::Approx(1.0));
    CHECK(r1[1] == 0.0);
    CHECK(r1[2] == 0.0);

    const ProbDist r2 = residual_distribution(ProbDist({1.0, 0.0}), ProbDist({0.0, 1.0}));
    CHECK(r2[0] == 1.0);

    const ProbDist r3 = residual_distribution(ProbDist({0.6, 0.4}), ProbDist({0.5, 0.5}));
    CHECK(r3[0] == Catch::Approx(1.0));
    CHECK(r3[1] == 0.0);

    CHECK_THROWS_AS(residual_distribution(ProbDist({0.4, 0.6}), ProbDist({0.4, 0.6})),
                    DegenerateResidual);
}

TEST_CASE("zero draft probability is accepted or flagged by target mass", "[verify]") {
    const TokenSeq candidates{0};
    const auto q = dists({{0.0, 0.5, 0.5}});
    const auto p_ok = dists({{0.5, 0.25, 0.25}, {0.4, 0.3, 0.3}});
    SeededRng rng(3);
    const VerifyOutcome out = lossless_verify(candidates, q, p_ok, rng, SampleMode::sampled);
    CHECK(out.mask.accepted_len == 1);  // ratio = +inf

    const auto p_zero = dists({{0.0, 0.5, 0.5}, {0.4, 0.3, 0.3}});
    SeededRng rng2(3);
    CHECK_THROWS_AS(lossless_verify(candidates, q, p_zero, rng2, SampleMode::sampled),
                    InvalidDraft);
}

TEST_CASE("a candidate with zero target mass is never accepted", "[verify]") {
    const TokenSeq candidates{1};
    const auto q = dists({{0.4, 0.4, 0.2}});
    const auto p = dists({{0.7, 0.0, 0.3}, {0.4, 0.3, 0.3}});
    for (uint64_t seed = 0; seed < 500; ++seed) {
        SeededRng rng(seed);
        const VerifyOutcome out = lossless_verify(candidates, q, p, rng, SampleMode::sampled);
        REQUIRE(out.mask.accepted_len == 0);
    }
}

TEST_CASE("greedy matching accepts exactly the target argmax prefix", "[verify]") {
    const auto p = dists({{0.1, 0.8, 0.1}, {0.6, 0.2, 0.2}, {0.2, 0.2, 0.6}});

    SECTION("all candidates equal the argmaxes") {
        const VerifyOutcome out = greedy_match_verify(TokenSeq{1, 0}, p);
        CHECK(out.mask.accepted_len == 2);
        REQUIRE(out.bonus.has_value());
        CHECK(*out.bonus == 2);
    }
    SECTION("first mismatch corrects with the argmax") {
        const VerifyOutcome out = greedy_match_verify(TokenSeq{0, 0}, p);
        CHECK(out.mask.accepted_len == 0);
        REQUIRE(out.correction.has_value());
        CHECK(*out.correction == 1);
    }
}

TEST_CASE("greedy matching equals lossless verification on point-mass models", "[verify]") {
    // Exhaustive over successor chains with V <= 4: draft proposes its chain,
    // the target's point masses either match or reject deterministically.
    const int32_t V = 4;
    for (int32_t draft_shift = 0; draft_shift < V; ++draft_shift) {
        for (int32_t target_shift = 0; target_shift < V; ++target_shift) {
            std::vector<ProbDist> q, p;
            TokenSeq candidates;
            TokenId cur = 0;
            for (int i = 0; i < 3; ++i) {
                const TokenId draft_next = (cur + 1 + draft_shift) % V;
                const TokenId target_next = (cur + 1 + target_shift) % V;
                q.push_back(ProbDist::point_mass(static_cast<size_t>(draft_next), V));
                p.push_back(ProbDist::point_mass(static_cast<size_t>(target_next), V));
                candidates.push_back(draft_next);
                cur = draft_next;
            }
            p.push_back(ProbDist::point_mass(0, V));

            const VerifyOutcome greedy = greedy_match_verify(candidates, p);
            SeededRng rng(99);
            const VerifyOutcome lossless =
                lossless_verify(candidates, q, p, rng, SampleMode::sampled);
            REQUIRE(greedy.mask.bits == lossless.mask.bits);
            REQUIRE(greedy.mask.accepted_len == lossless.mask.accepted_len);
            REQUIRE(greedy.correction == lossless.correction);
            REQUIRE(greedy.bonus == lossless.bonus);
        }
    }
}

TEST_CASE("top-1 verification is greedy matching", "[verify]") {
    SeededRng rng(5);
    for (int trial = 0; trial < 1000; ++trial) {
        const int32_t V = 3 + static_cast<int32_t>(rng.next_below(4));
        const size_t M = 1 + rng.next_below(5);
        TokenSeq candidates;
        std::vector<ProbDist> p;
        for (size_t i = 0; i < M; ++i) {
            candidates.push_back(static_cast<TokenId>(rng.next_below(static_cast<uint64_t>(V))));
            p.push_back(random_dist(V, rng));
        }
        p.push_back(random_dist(V, rng));
        const VerifyOutcome topk = topk_verify(candidates, p, 1);
        const VerifyOutcome greedy = greedy_match_verify(candidates, p);
        REQUIRE(topk.mask.bits == greedy.mask.bits);
        REQUIRE(topk.correction == greedy.correction);
        REQUIRE(topk.bonus == greedy.bonus);
    }
}

TEST_CASE("top-V verification accepts every candidate", "[verify]") {
    SeededRng rng(6);
    for (int trial = 0; trial < 200; ++trial) {
        const int32_t V = 2 + static_cast<int32_t>(rng.next_below(5));
        const size_t M = 1 + rng.next_below(6);
        TokenSeq candidates;
        std::vector<ProbDist> p;
        for (size_t i = 0; i < M; ++i) {
            candidates.push_back(static_cast<TokenId>(rng.next_below(static_cast<uint64_t>(V))));
            p.push_back(random_dist(V, rng));
        }
        p.push_back(random_dist(V, rng));
        const VerifyOutcome out = topk_verify(candidates, p, V);
        REQUIRE(out.mask.accepted_len == static_cast<int>(M));
        REQUIRE(out.bonus.has_value());
    }
}

TEST_CASE("top-k membership decides acceptance", "[verify]") {
    const auto p = dists({{0.5, 0.3, 0.2}, {0.4, 0.3, 0.3}});
    const VerifyOutcome in = topk_verify(TokenSeq{1}, p, 2);
    CHECK(in.mask.accepted_len == 1);
    const VerifyOutcome out = topk_verify(TokenSeq{2}, p, 2);
    CHECK(out.mask.accepted_len == 0);
    CHECK_THROWS_AS(topk_verify(TokenSeq{1}, p, 0), InvalidK);
}

TEST_CASE("judge bits follow the sigmoid threshold strictly", "[verify]") {
    const std::vector<std::vector<double>> embeddings{{0.0, 0.0}, {1.0, 1.0}};

    SECTION("zero head scores exactly 0.5 and is not > 0.5") {
        const JudgeHead zero({0.0, 0.0}, 0.0, 0.5);
        const auto bits = judge_verify(embeddings, zero);
        CHECK(bits == std::vector<uint8_t>{0, 0});
    }
    SECTION("delta = 1 rejects everything") {
        const JudgeHead strong({100.0, 100.0}, 50.0, 1.0);
        const auto bits = judge_verify(embeddings, strong);
        CHECK(bits == std::vector<uint8_t>{0, 0});
    }
    SECTION("a +20 logit clears delta = 0.999") {
        const JudgeHead head({10.0, 10.0}, 0.0, 0.999);
        // logit of embedding [1,1] is 20; sigmoid(20) ~ 1 - 2e-9 > 0.999.
        const auto bits = judge_verify(embeddings, head);
        CHECK(bits == std::vector<uint8_t>{0, 1});
    }
    SECTION("dimension mismatch") {
        const JudgeHead head({1.0, 2.0, 3.0}, 0.0, 0.5);
        CHECK_THROWS_AS(judge_verify(embeddings, head), DimensionError);
    }
}

TEST_CASE("judge bits at delta = 1 are all zero on arbitrary embeddings", "[verify]") {
    SeededRng rng(8);
    std::vector<std::vector<double>> embeddings;
    for (int i = 0; i < 50; ++i) {
        std::vector<double> e(16);
        for (double& v : e) v = (rng.next_uniform() - 0.5) * 200.0;
        embeddings.push_back(std::move(e));
    }
    std::vector<double> w(16);
    for (double& v : w) v = (rng.next_uniform() - 0.5) * 20.0;
    const JudgeHead head(w, 3.0, 1.0);
    for (uint8_t bit : judge_verify(embeddings, head)) REQUIRE(bit == 0);
}

TEST_CASE("mask combination is OR plus longest-ones prefix", "[verify]") {
    const VerdictMask m = combine_masks(std::vector<uint8_t>{1, 1, 0, 0},
                                        std::vector<uint8_t>{1, 0, 1, 0});
    CHECK(m.bits == std::vector<uint8_t>{1, 1, 1, 0});
    CHECK(m.accepted_len == 3);

    const VerdictMask prefix_only = combine_masks(std::vector<uint8_t>{1, 0},
                                                  std::vector<uint8_t>{0, 0});
    CHECK(prefix_only.accepted_len == 1);

    CHECK_THROWS_AS(combine_masks(std::vector<uint8_t>{1}, std::vector<uint8_t>{1, 0}),
                    DimensionError);
}

TEST_CASE("an all-zero judge mask leaves the standard prefix", "[verify]") {
    SeededRng rng(9);
    for (int trial = 0; trial < 200; ++trial) {
        const size_t M = 1 + rng.next_below(10);
        std::vector<uint8_t> z(M);
        for (auto& b : z) b = rng.next_below(2) ? 1 : 0;
        const VerdictMask m = combine_masks(z, std::vector<uint8_t>(M, 0));
        REQUIRE(m.bits == z);
        REQUIRE(m.accepted_len == VerdictMask::ones_prefix(z));
    }
}

TEST_CASE("standard mask bits replay the lossless epsilons by position", "[verify]") {
    SeededRng seeds(10);
    for (int trial = 0; trial < 100; ++trial) {
        const int32_t V = 3;
        const size_t M = 1 + seeds.next_below(6);
        TokenSeq candidates;
        std::vector<ProbDist> q, p;
        for (size_t i = 0; i < M; ++i) {
            candidates.push_back(static_cast<TokenId>(seeds.next_below(V)));
            q.push_back(random_dist(V, seeds));
            p.push_back(random_dist(V, seeds));
        }
        p.push_back(random_dist(V, seeds));

        const uint64_t seed = seeds.next_u64();
        SeededRng rng_a(seed), rng_b(seed);
        const auto bits = standard_mask_bits(candidates, q, p, rng_a, SampleMode::sampled);
        const VerifyOutcome out = lossless_verify(candidates, q, p, rng_b, SampleMode::sampled);
        // The lossless prefix must agree bit-for-bit with the full mask.
        for (int i = 0; i <= out.mask.accepted_len && i < static_cast<int>(M); ++i) {
            REQUIRE(bits[static_cast<size_t>(i)] == out.mask.bits[static_cast<size_t>(i)]);
        }
        REQUIRE(VerdictMask::ones_prefix(bits) == out.mask.accepted_len);
    }
}

TEST_CASE("greedy-mode lossless draws one epsilon per inspected candidate", "[verify]") {
    const TokenSeq candidates{1, 2, 0};
    std::vector<ProbDist> q, p;
    for (int i = 0; i < 3; ++i) {
        q.push_back(ProbDist::point_mass(static_cast<size_t>(candidates[i]), 3));
        p.push_back(ProbDist::point_mass(static_cast<size_t>(candidates[i]), 3));
    }
    p.push_back(ProbDist::point_mass(0, 3));
    SeededRng rng(11);
    const VerifyOutcome out = lossless_verify(candidates, q, p, rng, SampleMode::greedy);
    CHECK(out.mask.accepted_len == 3);
    CHECK(out.rng_draws_used == 3);  // three epsilons, argmax bonus needs no draw
}

TEST_CASE("lossless first-token distribution matches the target (smoke)", "[verify]") {
    SeededRng setup(12);
    const TableModel draft = random_table_model(3, setup);
    const TableModel target = random_table_model(3, setup);
    const TokenSeq context{1};
    const ProbDist expected = target.next_dist(context);

    const int trials = 200000;
    std::vector<int> counts(3, 0);
    for (int trial = 0; trial < trials; ++trial) {
        SeededRng rng(static_cast<uint64_t>(trial));
        SeededRng draft_rng = rng.fork(1);
        const auto drafted = autoregressive_sample(draft, context, 2, SampleMode::sampled,
                                                   draft_rng);
        TokenSeq candidates;
        std::vector<ProbDist> q;
        for (const auto& [t, s] : drafted) {
            candidates.push_back(t);
            q.push_back(s.dist);
        }
        std::vector<ProbDist> p;
        for (const auto& s : parallel_forward(target, candidates, context)) p.push_back(s.dist);
        SeededRng verify_rng = rng.fork(2);
        const VerifyOutcome out = lossless_verify(candidates, q, p, verify_rng,
                                                  SampleMode::sampled);
        const TokenId first = out.mask.accepted_len >= 1 ? candidates[0] : *out.correction;
        ++counts[static_cast<size_t>(first)];
    }
    double tv = 0.0;
    for (size_t t = 0; t < 3; ++t) {
        tv += std::abs(static_cast<double>(counts[t]) / trials - expected[t]);
    }
    tv /= 2.0;
    CHECK(tv < 0.02);
}

TEST_CASE("greedy-match acceptance length is monotone in M", "[verify]") {
    SeededRng setup(13);
    const TableModel draft = random_table_model(4, setup);
    const TableModel target = random_table_model(4, setup);
    const TokenSeq context{2};
    int prev = 0;
    for (int M = 1; M <= 10; ++M) {
        SeededRng rng(0);
        const auto drafted = autoregressive_sample(draft, context, M, SampleMode::greedy, rng);
        TokenSeq candidates;
        for (const auto& [t, s] : drafted) candidates.push_back(t);
        std::vector<ProbDist> p;
        for (const auto& s : parallel_forward(target, candidates, context)) p.push_back(s.dist);
        const VerifyOutcome out = greedy_match_verify(candidates, p);
        REQUIRE(out.mask.accepted_len >= prev);
        prev = out.mask.accepted_len;
    }
}
