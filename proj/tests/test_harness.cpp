// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "misa/harness.hpp"

namespace {

misa::ExperimentSpec small_spec(misa::Method method, misa::WorkloadKind kind = misa::WorkloadKind::needle) {
    misa::ExperimentSpec spec;
    spec.method = method;
    spec.cfg.n_heads = 16;
    spec.cfg.head_dim = 32;
    spec.cfg.active_heads_h = 4;
    spec.cfg.block_size = 256;
    spec.workload.kind = kind;
    spec.workload.seed = 7;
    spec.workload.lengths = {256, 512, 1024};
    spec.workload.depths = {0.0, 0.5, 1.0};
    spec.repeats = 2;
    return spec;
}

std::set<std::uint64_t> seeds_of(const misa::GridResult& r) {
    std::set<std::uint64_t> s;
    for (const auto& row : r.rows) s.insert(row.seed);
    return s;
}

std::set<std::size_t> values(const misa::GridResult& r, std::size_t misa::GridRow::*field) {
    std::set<std::size_t> s;
    for (const auto& row : r.rows) s.insert(row.*field);
    return s;
}

void expect_closed_form(const misa::GridResult& r) {
    for (const auto& row : r.rows) {
        if (const auto c = misa::closed_form_cost(row)) { EXPECT_EQ(row.cost(), *c) << misa::to_string(row.method); }
    }
}

TEST(EffectiveConfig, ScalesBudgetBelowPrefix) {
    misa::IndexerConfig base;
    auto c = misa::effective_config(base, 1024, true, std::nullopt);
    EXPECT_EQ(c.budget_k, 256u);
    EXPECT_EQ(c.candidate_kprime, 1024u);
    EXPECT_EQ(c.hisa_block_m, 4u);
    c = misa::effective_config(base, 131072, true, std::nullopt);
    EXPECT_EQ(c.budget_k, 2048u);
    EXPECT_EQ(c.candidate_kprime, 8192u);
    EXPECT_EQ(c.hisa_block_m, 32u);
    c = misa::effective_config(base, 1024, false, 5);
    EXPECT_EQ(c.budget_k, 2048u);
    EXPECT_EQ(c.hisa_block_m, 5u);
    EXPECT_EQ(misa::effective_config(base, 3, true, std::nullopt).budget_k, 1u);
}

TEST(CellSeed, DeterministicAndDistinct) {
    EXPECT_EQ(misa::cell_seed(1, 1024, 2, 3), misa::cell_seed(1, 1024, 2, 3));
    std::set<std::uint64_t> seen;
    for (std::size_t L : {1024u, 2048u})
        for (std::size_t d = 0; d < 11; ++d)
            for (std::size_t r = 0; r < 5; ++r) seen.insert(misa::cell_seed(0, L, d, r));
    EXPECT_EQ(seen.size(), 110u);
}

TEST(FormatFixed, Basics) {
    EXPECT_EQ(misa::format_fixed(0.5), "0.500000");
    EXPECT_EQ(misa::format_fixed(1.0 / 3.0), "0.333333");
    EXPECT_EQ(misa::format_fixed(std::nan("")), "nan");
}

TEST(NiahGrid, DenseFindsEveryNeedle) {
    const auto r = misa::run_niah_grid(small_spec(misa::Method::dsa));
    EXPECT_EQ(r.rows.size(), 3u * 3u * 2u);
    for (const auto& row : r.rows) {
        EXPECT_DOUBLE_EQ(row.needle_recall, 1.0);
        EXPECT_DOUBLE_EQ(row.iou_vs_dsa, 1.0);
    }
    expect_closed_form(r);
}

TEST(NiahGrid, FullHeadPoolMatchesDenseCellByCell) {
    auto spec = small_spec(misa::Method::misa);
    spec.cfg.active_heads_h = 16;
    const auto a = misa::run_niah_grid(spec);
    const auto d = misa::run_niah_grid(small_spec(misa::Method::dsa));
    ASSERT_EQ(a.rows.size(), d.rows.size());
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
        EXPECT_EQ(a.rows[i].seed, d.rows[i].seed);
        EXPECT_EQ(a.rows[i].needle_recall, d.rows[i].needle_recall);
        EXPECT_DOUBLE_EQ(a.rows[i].iou_vs_dsa, 1.0);
    }
    expect_closed_form(a);
}

TEST(NiahGrid, RejectsRandomWorkload) {
    EXPECT_THROW(misa::run_niah_grid(small_spec(misa::Method::dsa, misa::WorkloadKind::random)), misa::ConfigError);
}

TEST(GridResult, CsvIsIndependentOfThreadCount) {
    auto spec = small_spec(misa::Method::misa_hier);
    const auto one = misa::run_head_sweep(spec, std::vector<std::size_t>{1, 2, 4}).to_csv();
    spec.threads = 4;
    const auto four = misa::run_head_sweep(spec, std::vector<std::size_t>{1, 2, 4}).to_csv();
    EXPECT_EQ(one, four);
    EXPECT_EQ(one.substr(0, one.find('\n')), misa::kCsvHeader);
    EXPECT_EQ(one.find('\r'), std::string::npos);
}

TEST(GridResult, WriteCsvRoundTripAndFailure) {
    const auto r = misa::run_niah_grid(small_spec(misa::Method::dsa));
    const auto path = std::filesystem::temp_directory_path() / "misa_harness_test.csv";
    r.write_csv(path);
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    EXPECT_EQ(ss.str(), r.to_csv());
    std::filesystem::remove(path);
    EXPECT_THROW(r.write_csv("/nonexistent-dir/x/y.csv"), misa::IoError);
}

TEST(GridResult, RowsSortedAndRouterColumn) {
    auto spec = small_spec(misa::Method::misa);
    const auto r = misa::run_router_ablation(spec);
    for (std::size_t i = 1; i < r.rows.size(); ++i) { EXPECT_LE(r.rows[i - 1].sort_key(), r.rows[i].sort_key()); }
    const auto csv = r.to_csv();
    for (const char* kind : {"gate_only", "query_norm", "block_attention"}) { EXPECT_NE(csv.find(kind), std::string::npos); }
    const auto dense_csv = misa::run_niah_grid(small_spec(misa::Method::dsa)).to_csv();
    EXPECT_NE(dense_csv.find(",none\n"), std::string::npos);
}

TEST(HeadSweep, OneGridPerH) {
    auto spec = small_spec(misa::Method::misa);
    const std::vector<std::size_t> hs{1, 2, 4, 8, 16};
    const auto r = misa::run_head_sweep(spec, hs);
    EXPECT_EQ(values(r, &misa::GridRow::h), (std::set<std::size_t>{1, 2, 4, 8, 16}));
    EXPECT_EQ(r.rows.size(), 5u * 18u);
    expect_closed_form(r);
    const auto dense = misa::run_niah_grid(small_spec(misa::Method::dsa));
    std::size_t matched = 0;
    for (const auto& row : r.rows) {
        if (row.h != 16) continue;
        EXPECT_DOUBLE_EQ(row.iou_vs_dsa, 1.0);
        ++matched;
    }
    EXPECT_EQ(matched, dense.rows.size());
}

TEST(HeadSweep, MeanRecallNonDecreasingInH) {
    auto spec = small_spec(misa::Method::misa, misa::WorkloadKind::rotated_needle);
    spec.cfg.active_heads_h = 2;
    spec.repeats = 4;
    const auto stats = misa::summarize(misa::run_head_sweep(spec, std::vector<std::size_t>{1, 2, 4, 8, 16}));
    double prev = -1.0;
    for (const auto& [key, g] : stats) {
        EXPECT_GE(g.mean_needle_recall, prev) << "h=" << key.h;
        prev = g.mean_needle_recall;
    }
    EXPECT_DOUBLE_EQ(prev, 1.0);
}

TEST(HeadSweep, HierarchicalEmitsSingleStageCompanion) {
    const auto r = misa::run_head_sweep(small_spec(misa::Method::misa_hier), std::vector<std::size_t>{2, 4});
    std::size_t hier = 0, single = 0;
    for (const auto& row : r.rows) (row.method == misa::Method::misa_hier ? hier : single)++;
    EXPECT_EQ(hier, single);
    expect_closed_form(r);
}

TEST(HeadSweep, RejectsOtherMethods) {
    EXPECT_THROW(misa::run_head_sweep(small_spec(misa::Method::dsa), std::vector<std::size_t>{1}), misa::ConfigError);
    EXPECT_THROW(misa::run_head_sweep(small_spec(misa::Method::misa), std::vector<std::size_t>{32}), misa::ConfigError);
}

TEST(BlockSweep, ElevenGridsIncludingSinglePooledKey) {
    auto spec = small_spec(misa::Method::misa);
    spec.workload.lengths = {1024};
    spec.workload.depths = {0.5};
    const std::vector<std::size_t> Bs{1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024};
    const auto r = misa::run_block_sweep(spec, Bs);
    EXPECT_EQ(values(r, &misa::GridRow::B).size(), 11u);
    for (const auto& row : r.rows) {
        if (row.B == 1024) { EXPECT_EQ(row.block_dot_products, 16u); }
        if (row.B == 1) { EXPECT_EQ(row.block_dot_products, 16u * 1024u); }
    }
    expect_closed_form(r);
}

TEST(RouterAblation, ThreeKindsOnIdenticalWorkloads) {
    const auto r = misa::run_router_ablation(small_spec(misa::Method::misa, misa::WorkloadKind::rotated_needle));
    std::map<misa::RouterScoreKind, std::set<std::uint64_t>> seeds;
    for (const auto& row : r.rows) seeds[row.router].insert(row.seed);
    ASSERT_EQ(seeds.size(), 3u);
    EXPECT_EQ(seeds[misa::RouterScoreKind::gate_only], seeds[misa::RouterScoreKind::block_attention]);
    EXPECT_EQ(seeds[misa::RouterScoreKind::query_norm], seeds[misa::RouterScoreKind::block_attention]);
    expect_closed_form(r);
    EXPECT_THROW(misa::run_router_ablation(small_spec(misa::Method::hisa)), misa::ConfigError);
}

TEST(IouCurves, FullCandidatePoolIsExact) {
    auto spec = small_spec(misa::Method::misa_hier, misa::WorkloadKind::random);
    spec.cfg.candidate_kprime = 1 << 20;
    spec.repeats = 3;
    const auto r = misa::run_iou_curves(spec);
    EXPECT_EQ(r.rows.size(), 3u * 3u);
    for (const auto& row : r.rows) { EXPECT_DOUBLE_EQ(row.iou_vs_dsa, 1.0); }
    EXPECT_EQ(seeds_of(r).size(), 9u);
}

TEST(IouCurves, SkipsPositionsBelowBudget) {
    auto spec = small_spec(misa::Method::misa, misa::WorkloadKind::random);
    spec.scale_budget = false;
    spec.cfg.budget_k = 512;
    spec.cfg.candidate_kprime = 512;
    const auto r = misa::run_iou_curves(spec);
    EXPECT_EQ(values(r, &misa::GridRow::L), (std::set<std::size_t>{512, 1024}));
}

TEST(IouCurves, HierarchicalAtLeastSingleStageOnAverage) {
    auto spec = small_spec(misa::Method::misa, misa::WorkloadKind::random);
    spec.repeats = 4;
    const auto single = misa::summarize(misa::run_iou_curves(spec));
    spec.method = misa::Method::misa_hier;
    const auto hier = misa::summarize(misa::run_iou_curves(spec));
    EXPECT_GE(hier.begin()->second.mean_iou, single.begin()->second.mean_iou);
}

TEST(Bench, CountsMatchClosedFormAndRequiresRepeats) {
    auto spec = small_spec(misa::Method::dsa, misa::WorkloadKind::random);
    spec.repeats = 5;
    const std::vector<std::size_t> Ls{256, 512};
    const auto r = misa::run_bench(spec, Ls, false);
    EXPECT_EQ(r.rows.size(), 2u * 5u);
    expect_closed_form(r);
    for (const auto& row : r.rows) { EXPECT_EQ(row.wall_micros, 0); }
    EXPECT_EQ(r.to_csv(), misa::run_bench(spec, Ls, false).to_csv());
    spec.repeats = 4;
    EXPECT_THROW(misa::run_bench(spec, Ls), misa::ConfigError);
}

TEST(ExperimentSpec, Validation) {
    auto spec = small_spec(misa::Method::dsa);
    spec.workload.lengths.clear();
    EXPECT_THROW(spec.validate(), misa::ConfigError);
    spec = small_spec(misa::Method::dsa);
    spec.repeats = 0;
    EXPECT_THROW(spec.validate(), misa::ConfigError);
    spec = small_spec(misa::Method::dsa);
    spec.workload.depths = {1.5};
    EXPECT_THROW(spec.validate(), misa::ConfigError);
    spec = small_spec(misa::Method::dsa);
    spec.workload.needle_len = 300;
    EXPECT_THROW(spec.validate(), misa::ConfigError);
}

TEST(Method, StringRoundTrip) {
    for (auto m : misa::kAllMethods) { EXPECT_EQ(misa::parse_method(misa::to_string(m)), m); }
    EXPECT_THROW(misa::parse_method("sparse"), misa::ConfigError);
    EXPECT_EQ(misa::parse_workload_kind("rotated"), misa::WorkloadKind::rotated_needle);
}

} // namespace
