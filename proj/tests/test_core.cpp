// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "misa/core.hpp"
#include "misa/workload_io.hpp"
#include "oracle.hpp"

namespace {

misa::IndexerConfig small_config(std::size_t H, std::size_t d) {
    misa::IndexerConfig cfg;
    cfg.n_heads = H;
    cfg.head_dim = d;
    cfg.active_heads_h = std::min<std::size_t>(cfg.active_heads_h, H);
    return cfg;
}

TEST(IndexerConfig, DefaultsAreValid) {
    misa::IndexerConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    EXPECT_EQ(cfg.n_heads, 64u);
    EXPECT_EQ(cfg.active_heads_h, 8u);
    EXPECT_EQ(cfg.block_size, 1024u);
    EXPECT_EQ(cfg.baseline_block_size, 128u);
    EXPECT_EQ(cfg.budget_k, 2048u);
    EXPECT_EQ(cfg.candidate_kprime, 8192u);
    EXPECT_EQ(cfg.hisa_block_m, misa::default_hisa_blocks(cfg.budget_k, cfg.baseline_block_size));
}

TEST(IndexerConfig, RejectsInconsistentValues) {
    misa::IndexerConfig cfg;
    cfg.active_heads_h = 65;
    EXPECT_THROW(cfg.validate(), misa::ConfigError);
    cfg = {};
    cfg.candidate_kprime = cfg.budget_k - 1;
    EXPECT_THROW(cfg.validate(), misa::ConfigError);
    cfg = {};
    cfg.block_size = 0;
    EXPECT_THROW(cfg.validate(), misa::ConfigError);
    cfg = {};
    cfg.active_heads_h = 0;
    EXPECT_THROW(cfg.validate(), misa::ConfigError);
}

TEST(RandomWorkload, SameSeedIsBitIdentical) {
    const auto cfg = small_config(4, 4);
    const auto a = misa::gen_random_workload(7, 16, cfg);
    const auto b = misa::gen_random_workload(7, 16, cfg);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.prefix_len(), 16u);
    EXPECT_EQ(a.n_heads(), 4u);
    EXPECT_EQ(a.head_dim(), 4u);
    EXPECT_NO_THROW(a.validate());
}

TEST(RandomWorkload, DifferentSeedsDiffer) {
    const auto cfg = small_config(4, 4);
    const auto a = misa::gen_random_workload(7, 16, cfg);
    const auto b = misa::gen_random_workload(8, 16, cfg);
    EXPECT_FALSE(a.keys == b.keys && a.queries == b.queries && a.gate_weights == b.gate_weights);
}

TEST(RandomWorkload, SoftmaxGatesArePositiveAndSumToOne) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto w = misa::gen_random_workload(seed, 8, small_config(64, 8));
        const double sum = std::accumulate(w.gate_weights.begin(), w.gate_weights.end(), 0.0);
        EXPECT_NEAR(sum, 1.0, 1e-12);
        for (double g : w.gate_weights) { EXPECT_GT(g, 0.0); }
    }
}

TEST(RandomWorkload, RawGatesKeepSign) {
    const auto w = misa::gen_random_workload(3, 8, small_config(64, 8), misa::GateMode::raw);
    EXPECT_TRUE(std::any_of(w.gate_weights.begin(), w.gate_weights.end(), [](double g) { return g < 0.0; }));
}

TEST(RandomWorkload, RejectsEmptyPrefix) {
    EXPECT_THROW(misa::gen_random_workload(1, 0, small_config(4, 4)), misa::ConfigError);
}

TEST(NeedleWorkload, DepthZeroStartsAtOrigin) {
    const auto w = misa::gen_needle_workload(1, 100, 0.0, 8, 10.0, small_config(4, 16));
    ASSERT_TRUE(w.label);
    EXPECT_EQ(w.label->begin, 0u);
    EXPECT_EQ(w.label->end, 8u);
}

TEST(NeedleWorkload, DepthOneEndsAtLastToken) {
    const auto w = misa::gen_needle_workload(1, 100, 1.0, 8, 10.0, small_config(4, 16));
    ASSERT_TRUE(w.label);
    EXPECT_EQ(w.label->end, 100u);
    EXPECT_EQ(w.label->begin, 92u);
}

TEST(NeedleWorkload, HaystackMatchesRandomWorkload) {
    const auto cfg = small_config(8, 16);
    const auto needle = misa::gen_needle_workload(5, 64, 0.5, 4, 10.0, cfg);
    const auto plain = misa::gen_random_workload(5, 64, cfg);
    EXPECT_EQ(needle.queries, plain.queries);
    EXPECT_EQ(needle.gate_weights, plain.gate_weights);
    for (std::size_t s = 0; s < 64; ++s) {
        if (s >= needle.label->begin && s < needle.label->end) continue;
        for (std::size_t c = 0; c < 16; ++c) { EXPECT_EQ(needle.keys(s, c), plain.keys(s, c)); }
    }
}

TEST(NeedleWorkload, AlignedWithLargestGateHead) {
    const auto w = misa::gen_needle_workload(11, 64, 0.3, 4, 10.0, small_config(8, 16));
    const auto argmax = static_cast<std::size_t>(
        std::max_element(w.gate_weights.begin(), w.gate_weights.end()) - w.gate_weights.begin());
    EXPECT_EQ(w.label->head, argmax);
}

TEST(NeedleWorkload, RejectsNeedleLongerThanPrefix) {
    EXPECT_THROW(misa::gen_needle_workload(1, 4, 0.5, 5, 10.0, small_config(4, 4)), misa::ConfigError);
}

// The needle occupies the top of the brute-force dense score on every instance.
TEST(NeedleWorkload, LabelMatchesDenseArgmaxRegion) {
    const auto cfg = small_config(4, 16);
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        misa::NeedleOptions opt;
        opt.depth_fraction = static_cast<double>(seed % 11) / 10.0;
        opt.needle_len = 8;
        opt.margin = 10.0;
        opt.noise_scale = 0.01;
        const auto w = misa::gen_needle_workload(seed, 512, opt, cfg);
        const auto top = oracle::sort_top_k(oracle::dense_scores(w), opt.needle_len);
        std::vector<std::size_t> expected;
        for (std::size_t s = w.label->begin; s < w.label->end; ++s) expected.push_back(s);
        EXPECT_EQ(top, expected) << "seed " << seed;
    }
}

TEST(NeedleWorkload, DenseTopKContainsNeedleForAnyBudgetAboveItsLength) {
    const auto cfg = small_config(4, 16);
    for (std::uint64_t seed = 100; seed < 120; ++seed) {
        const auto w = misa::gen_needle_workload(seed, 1024, 0.7, 16, 10.0, cfg);
        const auto scores = oracle::dense_scores(w);
        for (std::size_t k : {16u, 32u, 256u}) {
            const auto top = oracle::sort_top_k(scores, k);
            for (std::size_t s = w.label->begin; s < w.label->end; ++s)
                EXPECT_TRUE(std::binary_search(top.begin(), top.end(), s)) << "seed " << seed << " k " << k;
        }
    }
}

TEST(RotatedNeedle, HeadOutsideContentBlindTopSets) {
    auto cfg = small_config(64, 16);
    cfg.active_heads_h = 8;
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        misa::NeedleOptions opt;
        opt.needle_len = 8;
        const auto w = misa::gen_rotated_needle_workload(seed, 256, opt, cfg);
        const auto by_gate = oracle::sort_top_k(w.gate_weights, 8);
        std::vector<double> norms;
        for (std::size_t j = 0; j < 64; ++j) norms.push_back(std::sqrt(oracle::raw_dot(w.queries, j, w.queries, j)));
        const auto by_norm = oracle::sort_top_k(norms, 8);
        EXPECT_FALSE(std::binary_search(by_gate.begin(), by_gate.end(), w.label->head));
        EXPECT_FALSE(std::binary_search(by_norm.begin(), by_norm.end(), w.label->head));
    }
}

TEST(WorkloadValidate, RejectsShapeMismatchAndNonFinite) {
    auto w = misa::gen_random_workload(1, 8, small_config(4, 4));
    auto bad = w;
    bad.gate_weights.pop_back();
    EXPECT_THROW(bad.validate(), misa::ConfigError);
    bad = w;
    bad.keys(3, 1) = std::nan("");
    EXPECT_THROW(bad.validate(), misa::ConfigError);
    bad = w;
    bad.queries = misa::Matrix(4, 5);
    EXPECT_THROW(bad.validate(), misa::ConfigError);
}

TEST(TokenSelection, SortsAndRejectsDuplicates) {
    misa::TokenSelection sel({5, 1, 3}, 3);
    EXPECT_EQ(oracle::to_vector(sel.indices()), (std::vector<std::size_t>{1, 3, 5}));
    EXPECT_THROW(misa::TokenSelection({1, 1}, 2), std::logic_error);
    EXPECT_THROW(misa::HeadSet({2, 2}), std::logic_error);
}

TEST(CostLedger, TotalsEqualStageSums) {
    misa::CostLedger ledger;
    ledger.record("a", misa::CostKind::token, 10);
    ledger.record("b", misa::CostKind::block, 3);
    ledger.record("c", misa::CostKind::refine, 7);
    ledger.record("d", misa::CostKind::token, 5);
    EXPECT_EQ(ledger.token_dot_products(), 15u);
    EXPECT_EQ(ledger.block_dot_products(), 3u);
    EXPECT_EQ(ledger.refine_dot_products(), 7u);
    EXPECT_EQ(ledger.total(), 25u);
    std::uint64_t sum = 0;
    for (const auto& e : ledger.entries()) sum += e.count;
    EXPECT_EQ(sum, ledger.total());
}

TEST(WorkloadFormat, HeaderLayoutIsLittleEndian) {
    const auto w = misa::gen_random_workload(2, 3, small_config(2, 5));
    std::ostringstream os;
    misa::write_workload(os, w);
    const std::string bytes = os.str();
    ASSERT_EQ(bytes.size(), 8u + 4u + 24u + 8u * (3 * 5 + 2 * 5 + 2));
    EXPECT_EQ(bytes.substr(0, 8), "MISAWKLD");
    auto u8 = [&](std::size_t i) { return static_cast<unsigned char>(bytes[i]); };
    EXPECT_EQ(u8(8), 1);
    EXPECT_EQ(u8(9) | u8(10) | u8(11), 0);
    EXPECT_EQ(u8(12), 3);  // L
    EXPECT_EQ(u8(20), 5);  // d
    EXPECT_EQ(u8(28), 2);  // H
    double first_key = 0.0;
    std::memcpy(&first_key, bytes.data() + 36, 8);
    EXPECT_EQ(first_key, w.keys(0, 0));
}

TEST(WorkloadFormat, RoundTripPreservesTensors) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto w = misa::gen_random_workload(seed, 17 + seed, small_config(3 + seed, 6), misa::GateMode::raw);
        std::stringstream ss;
        misa::write_workload(ss, w);
        const auto back = misa::read_workload(ss);
        EXPECT_EQ(back.keys, w.keys);
        EXPECT_EQ(back.queries, w.queries);
        EXPECT_EQ(back.gate_weights, w.gate_weights);
    }
}

TEST(WorkloadFormat, RejectsCorruptInput) {
    const auto w = misa::gen_random_workload(2, 3, small_config(2, 5));
    std::ostringstream os;
    misa::write_workload(os, w);
    std::string bytes = os.str();

    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    std::istringstream a(bad_magic);
    EXPECT_THROW(misa::read_workload(a), misa::IoError);

    std::istringstream b(bytes.substr(0, bytes.size() - 4));
    EXPECT_THROW(misa::read_workload(b), misa::IoError);

    std::string bad_version = bytes;
    bad_version[8] = 9;
    std::istringstream c(bad_version);
    EXPECT_THROW(misa::read_workload(c), misa::IoError);

    EXPECT_THROW(misa::load_workload("/nonexistent/dir/w.bin"), misa::IoError);
}

} // namespace
