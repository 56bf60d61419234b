// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

#include "misa/core.hpp"
#include "misa/kernels.hpp"
#include "misa/topk.hpp"

namespace misa {

struct IndexerResult {
    TokenSelection tokens;
    CostLedger cost;
};

/// I_s = Σ_j w_j ReLU(q_j · k_s) for every prefix token, double accumulation.
inline ScoreVector dsa_score(const IndexerWorkload& w) {
    const auto heads = kernels::iota_indices(w.n_heads());
    const auto rows = kernels::iota_indices(w.prefix_len());
    return {kernels::gated_relu_scores<double>(w.keys, rows, w.queries, w.gate_weights, heads), ScoreAxis::token};
}

inline TokenSelection topk_tokens(const ScoreVector& scores, std::size_t k) {
    return TokenSelection(top_k_positions(scores.values, k), k);
}

/// Dense indexer: all H^I heads over all L tokens, then top-k.
inline IndexerResult dsa_select(const IndexerWorkload& w, std::size_t k, Precision precision = Precision::reference64) {
    IndexerResult out;
    const auto heads = kernels::iota_indices(w.n_heads());
    const auto rows = kernels::iota_indices(w.prefix_len());
    const auto ranked = kernels::rank_keys(w.keys, rows, w.queries, w.gate_weights, heads, precision, out.cost,
                                           "dsa.tokens", CostKind::token);
    out.tokens = TokenSelection(ranked.top(k), k);
    return out;
}

} // namespace misa
