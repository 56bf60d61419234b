// SPDX-License-Identifier: Apache-2.0
#pragma once

// Gated-ReLU scoring kernels shared by every indexer.
//
// Accumulation order is fixed: heads ascending, and within a head the same
// four-lane dot product. A single-item rescore therefore reproduces the
// batch result bit for bit.

#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "misa/core.hpp"
#include "misa/pooling.hpp"
#include "misa/topk.hpp"

namespace misa::kernels {

template <typename Real>
inline Real dot(std::span<const Real> a, std::span<const Real> b) noexcept {
    const std::size_t n = a.size();
    Real l0 = Real(0), l1 = Real(0), l2 = Real(0), l3 = Real(0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        l0 += a[i] * b[i];
        l1 += a[i + 1] * b[i + 1];
        l2 += a[i + 2] * b[i + 2];
        l3 += a[i + 3] * b[i + 3];
    }
    Real acc = (l0 + l1) + (l2 + l3);
    for (; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

template <typename Real>
inline Real relu(Real x) noexcept {
    return x > Real(0) ? x : Real(0);
}

/// Σ_{j in heads} gates[j] * ReLU(queries[j] · key) for one key.
template <typename Real>
inline Real gated_relu_score(std::span<const Real> key, const BasicMatrix<Real>& queries, std::span<const Real> gates,
                             std::span<const std::size_t> heads) noexcept {
    Real acc = Real(0);
    for (std::size_t j : heads) acc += gates[j] * relu(dot(queries.row(j), key));
    return acc;
}

/// Batch form of gated_relu_score over keys.row(rows[i]).
template <typename Real>
inline std::vector<Real> gated_relu_scores(const BasicMatrix<Real>& keys, std::span<const std::size_t> rows,
                                           const BasicMatrix<Real>& queries, std::span<const Real> gates,
                                           std::span<const std::size_t> heads) {
    std::vector<Real> acc(rows.size(), Real(0));
    for (std::size_t j : heads) {
        auto q = queries.row(j);
        const Real g = gates[j];
        for (std::size_t i = 0; i < rows.size(); ++i) acc[i] += g * relu(dot(q, keys.row(rows[i])));
    }
    return acc;
}

/// (1/M) Σ_b |gates[j] * ReLU(queries[j] · pooled[b])| for one head.
template <typename Real>
inline Real block_attention_importance(const BasicMatrix<Real>& pooled, std::span<const Real> query, Real gate) noexcept {
    Real acc = Real(0);
    for (std::size_t b = 0; b < pooled.rows(); ++b) acc += std::abs(gate * relu(dot(query, pooled.row(b))));
    return acc / static_cast<Real>(pooled.rows());
}

inline std::vector<std::size_t> iota_indices(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), std::size_t{0});
    return v;
}

namespace detail {

inline constexpr double kFloatUnitRoundoff = 0x1p-24;

/// Uniform bound on |float result - double result| of a sum of `n_terms`
/// gated ReLU terms over `dot_len`-wide dot products. Twice the first-order
/// rounding bound; the slack absorbs the double path's own rounding.
inline double gated_score_bound(std::size_t dot_len, std::size_t n_terms, double max_key_norm, double weighted_query_mass) {
    const double n = static_cast<double>(dot_len + n_terms + 8);
    return 2.0 * kFloatUnitRoundoff * n * max_key_norm * weighted_query_mass;
}

inline std::vector<float> to_float(std::span<const double> v) {
    return {v.begin(), v.end()};
}

} // namespace detail

/// Rankable scores of keys.row(rows[i]) under `heads`, recorded in `ledger`
/// as |heads| * |rows| products of `kind`.
///
/// reference64 accumulates in double. fast32 accumulates in float and keeps a
/// double rescorer so that top-k queries still return the reference answer.
/// The result refers to keys, queries, gates, rows and heads; they must
/// outlive it.
inline RankedScores rank_keys(const Matrix& keys, std::span<const std::size_t> rows, const Matrix& queries,
                              std::span<const double> gates, std::span<const std::size_t> heads, Precision precision,
                              CostLedger& ledger, std::string stage, CostKind kind) {
    ledger.record(std::move(stage), kind, static_cast<std::uint64_t>(heads.size()) * rows.size());
    if (precision == Precision::reference64) {
        return RankedScores(gated_relu_scores<double>(keys, rows, queries, gates, heads));
    }

    const auto keys32 = keys.gather_rows<float>(rows);
    const auto all_heads = iota_indices(queries.rows());
    const auto queries32 = queries.gather_rows<float>(all_heads);
    const auto gates32 = detail::to_float(gates);
    const auto local = iota_indices(rows.size());
    const auto approx32 = gated_relu_scores<float>(keys32, local, queries32, gates32, heads);

    double max_key_norm = 0.0;
    for (std::size_t r : rows) max_key_norm = std::max(max_key_norm, l2_norm(keys.row(r)));
    double mass = 0.0;
    for (std::size_t j : heads) mass += std::abs(gates[j]) * l2_norm(queries.row(j));
    const double bound = detail::gated_score_bound(keys.cols(), heads.size(), max_key_norm, mass);

    std::vector<double> approx(approx32.begin(), approx32.end());
    return RankedScores(std::move(approx), bound, [&keys, rows, &queries, gates, heads](std::size_t i) {
        return gated_relu_score<double>(keys.row(rows[i]), queries, gates, heads);
    });
}

/// Block-attention importance of every head, rankable.
inline RankedScores rank_heads_block_attention(const IndexerWorkload& w, const BlockSummary& summary,
                                               Precision precision, CostLedger& ledger, std::string stage) {
    const std::size_t H = w.n_heads();
    ledger.record(std::move(stage), CostKind::block, static_cast<std::uint64_t>(H) * summary.n_blocks());
    const Matrix& pooled = summary.pooled_keys();
    if (precision == Precision::reference64) {
        std::vector<double> e(H);
        for (std::size_t j = 0; j < H; ++j)
            e[j] = block_attention_importance<double>(pooled, w.queries.row(j), w.gate_weights[j]);
        return RankedScores(std::move(e));
    }

    const auto all_blocks = iota_indices(pooled.rows());
    const auto pooled32 = pooled.gather_rows<float>(all_blocks);
    const auto queries32 = w.queries.gather_rows<float>(iota_indices(H));
    std::vector<double> approx(H);
    double max_mass = 0.0;
    for (std::size_t j = 0; j < H; ++j) {
        approx[j] = block_attention_importance<float>(pooled32, queries32.row(j), static_cast<float>(w.gate_weights[j]));
        max_mass = std::max(max_mass, std::abs(w.gate_weights[j]) * l2_norm(w.queries.row(j)));
    }
    double max_key_norm = 0.0;
    for (std::size_t b = 0; b < pooled.rows(); ++b) max_key_norm = std::max(max_key_norm, l2_norm(pooled.row(b)));
    const double bound = detail::gated_score_bound(pooled.cols(), pooled.rows(), max_key_norm, max_mass);
    return RankedScores(std::move(approx), bound, [&w, &pooled](std::size_t j) {
        return block_attention_importance<double>(pooled, w.queries.row(j), w.gate_weights[j]);
    });
}

} // namespace misa::kernels
