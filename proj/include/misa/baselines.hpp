// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "misa/core.hpp"
#include "misa/dsa.hpp"
#include "misa/kernels.hpp"
#include "misa/pooling.hpp"

namespace misa {

struct BlockSelectResult {
    TokenSelection tokens;
    CostLedger cost;
    std::vector<std::size_t> blocks; // retained blocks, ascending
    TokenSelection candidates;       // union of retained blocks (before any truncation)
    bool under_budget = false;       // fewer than min(k, L) tokens were available
};

namespace detail {

inline void check_summary(const IndexerWorkload& w, const BlockSummary& summary) {
    if (summary.prefix_len() != w.prefix_len() || summary.head_dim() != w.head_dim())
        throw ConfigError("block summary does not match the workload prefix");
}

inline std::vector<std::size_t> tokens_of_blocks(const BlockSummary& summary, std::span<const std::size_t> blocks) {
    std::vector<std::size_t> tokens;
    for (std::size_t b : blocks)
        for (std::size_t s = summary.block_begin(b); s < summary.block_end(b); ++s) tokens.push_back(s);
    std::sort(tokens.begin(), tokens.end());
    return tokens;
}

inline std::size_t token_count(const BlockSummary& summary, std::span<const std::size_t> blocks) {
    std::size_t n = 0;
    for (std::size_t b : blocks) n += summary.block_len(b);
    return n;
}

inline std::vector<std::size_t> map_positions(std::span<const std::size_t> positions, std::span<const std::size_t> ids) {
    std::vector<std::size_t> out;
    out.reserve(positions.size());
    for (std::size_t p : positions) out.push_back(ids[p]);
    return out;
}

} // namespace detail

/// Block-Sparse selector: whole blocks ranked by their pooled keys.
///
/// Blocks are ranked by J_b = Σ_j w_j ReLU(q_j · pooled_b) and retained in
/// rank order until they cover min(k, L) tokens (ceil(k/B) blocks when every
/// retained block is full). If the retained blocks overshoot the budget, the
/// lowest-ranked retained block keeps only its best tokens by dense score, so
/// the result always has exactly min(k, L) tokens.
inline BlockSelectResult block_sparse_select(const IndexerWorkload& w, const BlockSummary& summary, std::size_t k,
                                             Precision precision = Precision::reference64) {
    detail::check_summary(w, summary);
    BlockSelectResult out;
    const std::size_t M = summary.n_blocks();
    const std::size_t target = std::min(k, w.prefix_len());
    const auto heads = kernels::iota_indices(w.n_heads());
    const auto blocks = kernels::iota_indices(M);
    const auto ranked = kernels::rank_keys(summary.pooled_keys(), blocks, w.queries, w.gate_weights, heads, precision,
                                           out.cost, "block_sparse.blocks", CostKind::block);

    std::size_t r = std::min(M, std::max<std::size_t>(1, (target + summary.block_size() - 1) / summary.block_size()));
    auto retained = ranked.top(r);
    while (detail::token_count(summary, retained) < target && r < M) retained = ranked.top(++r);
    out.blocks = retained;
    auto candidates = detail::tokens_of_blocks(summary, retained);
    out.candidates = TokenSelection(candidates, candidates.size());

    if (candidates.size() <= target) {
        out.tokens = TokenSelection(std::move(candidates), k);
        return out;
    }

    // Top-(r-1) is nested in top-r, so the difference is the lowest-ranked retained block.
    const auto upper = r > 1 ? ranked.top(r - 1) : std::vector<std::size_t>{};
    std::size_t lowest = retained.front();
    for (std::size_t b : retained)
        if (!std::binary_search(upper.begin(), upper.end(), b)) lowest = b;
    auto kept = detail::tokens_of_blocks(summary, upper);
    const std::size_t need = target - kept.size();

    std::vector<std::size_t> tail;
    for (std::size_t s = summary.block_begin(lowest); s < summary.block_end(lowest); ++s) tail.push_back(s);
    const auto tail_ranked = kernels::rank_keys(w.keys, tail, w.queries, w.gate_weights, heads, precision, out.cost,
                                                "block_sparse.truncate", CostKind::refine);
    const auto best_tail = detail::map_positions(tail_ranked.top(need), tail);
    kept.insert(kept.end(), best_tail.begin(), best_tail.end());
    out.tokens = TokenSelection(std::move(kept), k);
    return out;
}

/// Stage-1 block set of HISA: blocks 0 and M-1 always, the rest by J_b rank,
/// max(m, forced) blocks in total (capped at M).
inline std::vector<std::size_t> hisa_candidate_blocks(const RankedScores& block_scores, std::size_t M, std::size_t m) {
    std::vector<std::size_t> forced{0};
    if (M > 1) forced.push_back(M - 1);
    const std::size_t total = std::min(M, std::max(m, forced.size()));
    std::vector<std::size_t> others;
    for (std::size_t b = 1; b + 1 < M; ++b) others.push_back(b);
    auto chosen = block_scores.top(total - forced.size(), others);
    chosen.insert(chosen.end(), forced.begin(), forced.end());
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

/// Two-stage HISA indexer: top-m blocks (first and last forced) define the
/// candidate pool, which the dense scorer then reduces to the final top-k.
inline BlockSelectResult hisa_select(const IndexerWorkload& w, const BlockSummary& summary, std::size_t m, std::size_t k,
                                     Precision precision = Precision::reference64) {
    detail::check_summary(w, summary);
    if (m == 0) throw ConfigError("hisa_select: m must be positive");
    BlockSelectResult out;
    const std::size_t M = summary.n_blocks();
    const auto heads = kernels::iota_indices(w.n_heads());
    const auto blocks = kernels::iota_indices(M);
    const auto block_scores = kernels::rank_keys(summary.pooled_keys(), blocks, w.queries, w.gate_weights, heads,
                                                 precision, out.cost, "hisa.blocks", CostKind::block);
    out.blocks = hisa_candidate_blocks(block_scores, M, m);

    const auto omega = detail::tokens_of_blocks(summary, out.blocks);
    out.candidates = TokenSelection(omega, omega.size());
    const auto token_scores = kernels::rank_keys(w.keys, omega, w.queries, w.gate_weights, heads, precision, out.cost,
                                                 "hisa.refine", CostKind::refine);
    out.tokens = TokenSelection(detail::map_positions(token_scores.top(k), omega), k);
    out.under_budget = omega.size() < std::min(k, w.prefix_len());
    return out;
}

} // namespace misa
