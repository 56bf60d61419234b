// SPDX-License-Identifier: Apache-2.0
#pragma once

// Mixture-of-indexer-experts token selection.
//
// A router scores every indexer head on the block-pooled prefix and keeps the
// top-h heads; only those heads then score individual tokens. The
// hierarchical variant keeps k' routed candidates and re-ranks them with the
// full head pool.

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "misa/core.hpp"
#include "misa/dsa.hpp"
#include "misa/kernels.hpp"
#include "misa/pooling.hpp"
#include "misa/topk.hpp"

namespace misa {

enum class RouterScoreKind { gate_only, query_norm, block_attention };

inline std::string_view to_string(RouterScoreKind k) {
    switch (k) {
    case RouterScoreKind::gate_only: return "gate_only";
    case RouterScoreKind::query_norm: return "query_norm";
    case RouterScoreKind::block_attention: return "block_attention";
    }
    return "?";
}

inline RouterScoreKind parse_router_kind(std::string_view s) {
    if (s == "gate_only") return RouterScoreKind::gate_only;
    if (s == "query_norm") return RouterScoreKind::query_norm;
    if (s == "block_attention") return RouterScoreKind::block_attention;
    throw ConfigError("unknown router score kind: " + std::string(s));
}

struct MisaResult {
    TokenSelection tokens;
    HeadSet heads;
    CostLedger cost;
    std::optional<TokenSelection> candidates; // routed candidate pool (hierarchical variant only)
};

/// Per-head importance E_j.
///
/// block_attention: (1/M) Σ_b |w_j ReLU(q_j · pooled_b)|; gate_only: w_j;
/// query_norm: ||q_j||_2.
inline ScoreVector route_head_importance(const IndexerWorkload& w, const BlockSummary& summary, RouterScoreKind kind) {
    const std::size_t H = w.n_heads();
    ScoreVector e{std::vector<double>(H), ScoreAxis::head};
    for (std::size_t j = 0; j < H; ++j) {
        switch (kind) {
        case RouterScoreKind::gate_only: e.values[j] = w.gate_weights[j]; break;
        case RouterScoreKind::query_norm: e.values[j] = l2_norm(w.queries.row(j)); break;
        case RouterScoreKind::block_attention:
            e.values[j] = kernels::block_attention_importance<double>(summary.pooled_keys(), w.queries.row(j),
                                                                      w.gate_weights[j]);
            break;
        }
    }
    return e;
}

inline HeadSet route_topk_heads(const ScoreVector& importance, std::size_t h) {
    return HeadSet(top_k_positions(importance.values, h));
}

/// Î_s = Σ_{j in heads} w_j ReLU(q_j · k_s). Bit-identical to dsa_score when heads is the full pool.
inline ScoreVector misa_score(const IndexerWorkload& w, const HeadSet& heads) {
    if (heads.empty()) throw ConfigError("misa_score: empty head set");
    if (heads.indices().back() >= w.n_heads()) throw ConfigError("misa_score: head index out of range");
    const auto rows = kernels::iota_indices(w.prefix_len());
    return {kernels::gated_relu_scores<double>(w.keys, rows, w.queries, w.gate_weights, heads.indices()), ScoreAxis::token};
}

namespace detail {

inline void check_misa_inputs(const IndexerWorkload& w, const BlockSummary& summary, const IndexerConfig& cfg) {
    cfg.validate();
    if (w.n_heads() != cfg.n_heads) throw ConfigError("workload head count does not match config");
    if (summary.prefix_len() != w.prefix_len() || summary.head_dim() != w.head_dim())
        throw ConfigError("block summary does not match the workload prefix");
}

inline HeadSet route(const IndexerWorkload& w, const BlockSummary& summary, std::size_t h, RouterScoreKind kind,
                     Precision precision, CostLedger& ledger) {
    if (kind == RouterScoreKind::block_attention) {
        const auto ranked = kernels::rank_heads_block_attention(w, summary, precision, ledger, "misa.router");
        return HeadSet(ranked.top(h));
    }
    // Content-blind variants read no keys.
    return route_topk_heads(route_head_importance(w, summary, kind), h);
}

/// Top-k of the routed score, with the last `window` positions forced in when requested.
inline std::vector<std::size_t> routed_top(const RankedScores& scores, std::size_t L, std::size_t k, std::size_t window) {
    if (window == 0) return scores.top(k);
    const std::size_t forced = std::min({window, k, L});
    std::vector<std::size_t> rest(L - forced);
    for (std::size_t s = 0; s < rest.size(); ++s) rest[s] = s;
    auto chosen = scores.top(k - forced, rest);
    for (std::size_t s = L - forced; s < L; ++s) chosen.push_back(s);
    return chosen;
}

} // namespace detail

/// Single-stage MISA: route h heads, score all tokens with them, keep top-k.
inline MisaResult misa_select(const IndexerWorkload& w, const BlockSummary& summary, const IndexerConfig& cfg,
                              RouterScoreKind kind = RouterScoreKind::block_attention) {
    detail::check_misa_inputs(w, summary, cfg);
    MisaResult out;
    out.heads = detail::route(w, summary, cfg.active_heads_h, kind, cfg.precision, out.cost);
    const auto rows = kernels::iota_indices(w.prefix_len());
    const auto scores = kernels::rank_keys(w.keys, rows, w.queries, w.gate_weights, out.heads.indices(), cfg.precision,
                                           out.cost, "misa.tokens", CostKind::token);
    out.tokens = TokenSelection(detail::routed_top(scores, w.prefix_len(), cfg.budget_k, cfg.local_window), cfg.budget_k);
    return out;
}

/// Hierarchical MISA: routed top-k' candidates, re-ranked by all H^I heads to the final top-k.
inline MisaResult misa_hier_select(const IndexerWorkload& w, const BlockSummary& summary, const IndexerConfig& cfg,
                                   RouterScoreKind kind = RouterScoreKind::block_attention) {
    detail::check_misa_inputs(w, summary, cfg);
    MisaResult out;
    out.heads = detail::route(w, summary, cfg.active_heads_h, kind, cfg.precision, out.cost);
    const auto rows = kernels::iota_indices(w.prefix_len());
    const auto coarse = kernels::rank_keys(w.keys, rows, w.queries, w.gate_weights, out.heads.indices(), cfg.precision,
                                           out.cost, "misa_hier.coarse", CostKind::token);
    const auto omega = detail::routed_top(coarse, w.prefix_len(), cfg.candidate_kprime, cfg.local_window);
    out.candidates = TokenSelection(omega, cfg.candidate_kprime);

    const auto all_heads = kernels::iota_indices(w.n_heads());
    const auto fine = kernels::rank_keys(w.keys, omega, w.queries, w.gate_weights, all_heads, cfg.precision, out.cost,
                                         "misa_hier.refine", CostKind::refine);
    std::vector<std::size_t> chosen;
    for (std::size_t p : fine.top(cfg.budget_k)) chosen.push_back(omega[p]);
    out.tokens = TokenSelection(std::move(chosen), cfg.budget_k);
    return out;
}

} // namespace misa
