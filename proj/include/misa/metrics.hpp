// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <iterator>
#include <stdexcept>
#include <vector>

#include "misa/core.hpp"

namespace misa {

inline std::size_t intersection_size(const TokenSelection& a, const TokenSelection& b) {
    std::size_t n = 0;
    auto ia = a.indices().begin(), ib = b.indices().begin();
    while (ia != a.indices().end() && ib != b.indices().end()) {
        if (*ia < *ib) {
            ++ia;
        } else if (*ib < *ia) {
            ++ib;
        } else {
            ++n;
            ++ia;
            ++ib;
        }
    }
    return n;
}

/// |a ∩ b| / |a ∪ b|; two empty sets count as identical.
inline double iou(const TokenSelection& a, const TokenSelection& b) {
    const std::size_t inter = intersection_size(a, b);
    const std::size_t uni = a.size() + b.size() - inter;
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// Fraction of needle positions present in `sel`.
inline double needle_recall(const TokenSelection& sel, const NeedleLabel& needle) {
    if (needle.length() == 0) throw ConfigError("needle_recall: empty needle range");
    std::size_t hit = 0;
    for (std::size_t s = needle.begin; s < needle.end; ++s) hit += sel.contains(s) ? 1 : 0;
    return static_cast<double>(hit) / static_cast<double>(needle.length());
}

/// |omega ∩ reference| / |reference|; 1 for an empty reference.
inline double candidate_recall(const TokenSelection& omega, const TokenSelection& reference) {
    if (reference.empty()) return 1.0;
    return static_cast<double>(intersection_size(omega, reference)) / static_cast<double>(reference.size());
}

/// Baseline dot products per dot product spent by `ledger`.
inline double cost_ratio(const CostCounts& ledger, const CostCounts& baseline) {
    if (ledger.total() == 0) throw std::domain_error("cost_ratio: ledger has no dot products");
    return static_cast<double>(baseline.total()) / static_cast<double>(ledger.total());
}

inline double cost_ratio(const CostLedger& ledger, const CostLedger& baseline) {
    return cost_ratio(ledger.counts(), baseline.counts());
}

// Closed-form per-query dot-product counts.

inline std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

inline CostCounts dsa_cost(std::uint64_t n_heads, std::uint64_t L) { return {n_heads * L, 0, 0}; }

/// h·L token products plus H^I·⌈L/B⌉ router products (block-attention routing).
inline CostCounts misa_cost(std::uint64_t n_heads, std::uint64_t h, std::uint64_t L, std::uint64_t B,
                            bool block_router = true) {
    return {h * L, block_router ? n_heads * ceil_div(L, B) : 0, 0};
}

inline CostCounts misa_hier_cost(std::uint64_t n_heads, std::uint64_t h, std::uint64_t L, std::uint64_t B,
                                 std::uint64_t kprime, bool block_router = true) {
    CostCounts c = misa_cost(n_heads, h, L, B, block_router);
    c.refine = n_heads * std::min(kprime, L);
    return c;
}

} // namespace misa
