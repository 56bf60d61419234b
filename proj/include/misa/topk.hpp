// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

namespace misa {

/// Total order used by every selection: larger score first, then smaller position.
inline bool ranks_before(double a, std::size_t ia, double b, std::size_t ib) noexcept {
    return a > b || (a == b && ia < ib);
}

/// The min(k, |among|) positions of `among` with the largest `values`, ascending.
inline std::vector<std::size_t> top_k_positions(std::span<const double> values, std::span<const std::size_t> among,
                                                std::size_t k) {
    std::vector<std::size_t> pool(among.begin(), among.end());
    if (k < pool.size()) {
        auto cmp = [&](std::size_t a, std::size_t b) { return ranks_before(values[a], a, values[b], b); };
        std::nth_element(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k), pool.end(), cmp);
        pool.resize(k);
    }
    std::sort(pool.begin(), pool.end());
    return pool;
}

inline std::vector<std::size_t> top_k_positions(std::span<const double> values, std::size_t k) {
    std::vector<std::size_t> all(values.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return top_k_positions(values, all, k);
}

/// Scores that can answer top-k queries with the reference tie-breaking.
///
/// Either exact (reference scores) or approximate with a uniform error bound:
/// |approx[i] - reference[i]| <= bound for every i. In the approximate case a
/// query returns exactly the reference answer: items clearly above or below
/// the k-th approximate value are decided directly and the ones within
/// 2*bound of it are rescored through `rescore`.
class RankedScores {
public:
    using Rescorer = std::function<double(std::size_t)>;

    explicit RankedScores(std::vector<double> exact) : values_(std::move(exact)) {}

    RankedScores(std::vector<double> approx, double bound, Rescorer rescore)
        : values_(std::move(approx)), bound_(bound), rescore_(std::move(rescore)),
          cache_(values_.size(), 0.0), cached_(values_.size(), false) {}

    std::size_t size() const noexcept { return values_.size(); }
    bool exact() const noexcept { return !rescore_; }
    double bound() const noexcept { return bound_; }
    std::size_t rescored() const noexcept { return rescored_; }

    /// Reference value of one item (rescored on demand in approximate mode).
    double value(std::size_t i) const { return exact() ? values_[i] : exact_at(i); }

    std::vector<std::size_t> top(std::size_t k) const {
        std::vector<std::size_t> all(values_.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        return top(k, all);
    }

    std::vector<std::size_t> top(std::size_t k, std::span<const std::size_t> among) const {
        if (exact() || k == 0 || k >= among.size()) return top_k_positions(values_, among, k);

        std::vector<double> approx(among.size());
        for (std::size_t i = 0; i < among.size(); ++i) approx[i] = values_[among[i]];
        std::vector<double> sorted = approx;
        std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k - 1), sorted.end(),
                         std::greater<>());
        const double kth = sorted[k - 1];
        const double margin = 2.0 * bound_;

        std::vector<std::size_t> chosen;
        std::vector<std::size_t> ambiguous;
        for (std::size_t i = 0; i < among.size(); ++i) {
            if (approx[i] > kth + margin)
                chosen.push_back(among[i]);
            else if (approx[i] >= kth - margin)
                ambiguous.push_back(among[i]);
        }
        const std::size_t need = k - chosen.size();
        std::vector<double> exact_vals(values_.size(), 0.0);
        for (std::size_t i : ambiguous) exact_vals[i] = exact_at(i);
        auto rest = top_k_positions(exact_vals, ambiguous, need);
        chosen.insert(chosen.end(), rest.begin(), rest.end());
        std::sort(chosen.begin(), chosen.end());
        return chosen;
    }

private:
    double exact_at(std::size_t i) const {
        if (!cached_[i]) {
            cache_[i] = rescore_(i);
            cached_[i] = true;
            ++rescored_;
        }
        return cache_[i];
    }

    std::vector<double> values_;
    double bound_ = 0.0;
    Rescorer rescore_;
    mutable std::vector<double> cache_;
    mutable std::vector<bool> cached_;
    mutable std::size_t rescored_ = 0;
};

} // namespace misa
