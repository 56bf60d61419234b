// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace misa {

/// Raised when a configuration or an input shape violates its contract.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised on read/write failures of workload files and CSV artifacts.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Precision { reference64, fast32 };

inline std::string_view to_string(Precision p) {
    return p == Precision::reference64 ? "reference64" : "fast32";
}

inline Precision parse_precision(std::string_view s) {
    if (s == "reference64") return Precision::reference64;
    if (s == "fast32") return Precision::fast32;
    throw ConfigError("unknown precision mode: " + std::string(s));
}

// ---------------------------------------------------------------------------
// Dense row-major matrix
// ---------------------------------------------------------------------------

template <typename Real>
class BasicMatrix {
public:
    BasicMatrix() = default;
    BasicMatrix(std::size_t rows, std::size_t cols, Real fill = Real(0))
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }

    std::span<Real> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const Real> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    Real& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    Real operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<Real> data() noexcept { return data_; }
    std::span<const Real> data() const noexcept { return data_; }

    void append_row(std::span<const Real> values) {
        if (rows_ == 0 && cols_ == 0) cols_ = values.size();
        if (values.size() != cols_) throw ConfigError("append_row: width mismatch");
        data_.insert(data_.end(), values.begin(), values.end());
        ++rows_;
    }

    /// Copy of the selected rows, converted to another element type.
    template <typename Out>
    BasicMatrix<Out> gather_rows(std::span<const std::size_t> which) const {
        BasicMatrix<Out> out(which.size(), cols_);
        for (std::size_t i = 0; i < which.size(); ++i) {
            auto src = row(which[i]);
            auto dst = out.row(i);
            for (std::size_t c = 0; c < cols_; ++c) dst[c] = static_cast<Out>(src[c]);
        }
        return out;
    }

    bool operator==(const BasicMatrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<Real> data_;
};

using Matrix = BasicMatrix<double>;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct IndexerConfig {
    std::size_t n_heads = 64;              // H^I
    std::size_t head_dim = 64;             // d
    std::size_t budget_k = 2048;           // k
    std::size_t block_size = 1024;         // router block size
    std::size_t baseline_block_size = 128; // HISA / Block-Sparse block size
    std::size_t active_heads_h = 8;        // h
    std::size_t candidate_kprime = 8192;   // k'
    std::size_t hisa_block_m = 32;         // m, HISA stage-1 blocks
    std::size_t local_window = 0;          // MISA: force-include the last tokens (0 = off)
    Precision precision = Precision::reference64;

    void validate() const {
        auto positive = [](std::size_t v, const char* name) {
            if (v == 0) throw ConfigError(std::string(name) + " must be positive");
        };
        positive(n_heads, "n_heads");
        positive(head_dim, "head_dim");
        positive(budget_k, "budget_k");
        positive(block_size, "block_size");
        positive(baseline_block_size, "baseline_block_size");
        positive(active_heads_h, "active_heads_h");
        positive(candidate_kprime, "candidate_kprime");
        positive(hisa_block_m, "hisa_block_m");
        if (active_heads_h > n_heads) throw ConfigError("active_heads_h must not exceed n_heads");
        if (candidate_kprime < budget_k) throw ConfigError("candidate_kprime must be >= budget_k");
    }
};

/// HISA stage-1 block count used when none is configured: twice the blocks the budget needs.
inline std::size_t default_hisa_blocks(std::size_t k, std::size_t block_size) {
    return 2 * ((k + block_size - 1) / block_size);
}

// ---------------------------------------------------------------------------
// Selection types
// ---------------------------------------------------------------------------

/// Sorted set of selected prefix positions.
class TokenSelection {
public:
    TokenSelection() = default;
    TokenSelection(std::vector<std::size_t> indices, std::size_t budget)
        : indices_(std::move(indices)), budget_(budget) {
        std::sort(indices_.begin(), indices_.end());
        if (std::adjacent_find(indices_.begin(), indices_.end()) != indices_.end())
            throw std::logic_error("TokenSelection: duplicate index");
    }

    std::span<const std::size_t> indices() const noexcept { return indices_; }
    std::size_t size() const noexcept { return indices_.size(); }
    bool empty() const noexcept { return indices_.empty(); }
    std::size_t budget() const noexcept { return budget_; }

    bool contains(std::size_t s) const { return std::binary_search(indices_.begin(), indices_.end(), s); }

    /// Set equality; the budget is provenance, not identity.
    friend bool operator==(const TokenSelection& a, const TokenSelection& b) { return a.indices_ == b.indices_; }

private:
    std::vector<std::size_t> indices_;
    std::size_t budget_ = 0;
};

/// Sorted set of active indexer heads.
class HeadSet {
public:
    HeadSet() = default;
    explicit HeadSet(std::vector<std::size_t> heads) : heads_(std::move(heads)) {
        std::sort(heads_.begin(), heads_.end());
        if (std::adjacent_find(heads_.begin(), heads_.end()) != heads_.end())
            throw std::logic_error("HeadSet: duplicate head");
    }

    static HeadSet all(std::size_t n_heads) {
        std::vector<std::size_t> h(n_heads);
        for (std::size_t j = 0; j < n_heads; ++j) h[j] = j;
        return HeadSet(std::move(h));
    }

    std::span<const std::size_t> indices() const noexcept { return heads_; }
    std::size_t size() const noexcept { return heads_.size(); }
    bool empty() const noexcept { return heads_.empty(); }
    bool contains(std::size_t j) const { return std::binary_search(heads_.begin(), heads_.end(), j); }

    bool operator==(const HeadSet&) const = default;

private:
    std::vector<std::size_t> heads_;
};

enum class ScoreAxis { token, block, head };

struct ScoreVector {
    std::vector<double> values;
    ScoreAxis axis = ScoreAxis::token;

    std::size_t size() const noexcept { return values.size(); }
    double operator[](std::size_t i) const noexcept { return values[i]; }
};

// ---------------------------------------------------------------------------
// Cost accounting
// ---------------------------------------------------------------------------

enum class CostKind { token, block, refine };

struct CostCounts {
    std::uint64_t token = 0;
    std::uint64_t block = 0;
    std::uint64_t refine = 0;

    std::uint64_t total() const noexcept { return token + block + refine; }
    bool operator==(const CostCounts&) const = default;
};

struct CostEntry {
    std::string stage;
    CostKind kind;
    std::uint64_t count;
};

/// Head-token and head-block dot products performed, one entry per stage.
class CostLedger {
public:
    void record(std::string stage, CostKind kind, std::uint64_t count) {
        entries_.push_back({std::move(stage), kind, count});
    }

    std::span<const CostEntry> entries() const noexcept { return entries_; }

    CostCounts counts() const noexcept {
        CostCounts c;
        for (const auto& e : entries_) {
            switch (e.kind) {
            case CostKind::token: c.token += e.count; break;
            case CostKind::block: c.block += e.count; break;
            case CostKind::refine: c.refine += e.count; break;
            }
        }
        return c;
    }

    std::uint64_t token_dot_products() const noexcept { return counts().token; }
    std::uint64_t block_dot_products() const noexcept { return counts().block; }
    std::uint64_t refine_dot_products() const noexcept { return counts().refine; }
    std::uint64_t total() const noexcept { return counts().total(); }

private:
    std::vector<CostEntry> entries_;
};

// ---------------------------------------------------------------------------
// Workloads
// ---------------------------------------------------------------------------

/// Planted needle: tokens [begin, end) aligned with query head `head`.
struct NeedleLabel {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t head = 0;

    std::size_t length() const noexcept { return end - begin; }
    bool operator==(const NeedleLabel&) const = default;
};

/// Tensors consumed by an indexer for one query position.
struct IndexerWorkload {
    Matrix keys;                      // L x d
    Matrix queries;                   // H^I x d
    std::vector<double> gate_weights; // H^I
    std::uint64_t seed = 0;
    std::optional<NeedleLabel> label;

    std::size_t prefix_len() const noexcept { return keys.rows(); }
    std::size_t head_dim() const noexcept { return keys.cols(); }
    std::size_t n_heads() const noexcept { return queries.rows(); }

    void validate() const {
        if (prefix_len() == 0) throw ConfigError("workload: empty prefix");
        if (n_heads() == 0) throw ConfigError("workload: no heads");
        if (queries.cols() != keys.cols()) throw ConfigError("workload: query/key width mismatch");
        if (gate_weights.size() != n_heads()) throw ConfigError("workload: gate count != head count");
        auto finite = [](std::span<const double> v) {
            return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
        };
        if (!finite(keys.data()) || !finite(queries.data()) || !finite(gate_weights))
            throw ConfigError("workload: non-finite entry");
        if (label && (label->begin >= label->end || label->end > prefix_len() || label->head >= n_heads()))
            throw ConfigError("workload: needle label out of range");
    }

    bool operator==(const IndexerWorkload&) const = default;
};

enum class GateMode { softmax, raw };

inline void softmax_inplace(std::span<double> v) {
    if (v.empty()) return;
    const double mx = *std::max_element(v.begin(), v.end());
    double sum = 0.0;
    for (auto& x : v) {
        x = std::exp(x - mx);
        sum += x;
    }
    for (auto& x : v) x /= sum;
}

inline double l2_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

namespace detail {

inline void fill_normal(std::span<double> out, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& x : out) x = scale * normal(rng);
}

/// Heads ordered by descending value, ties to the smaller index.
inline std::vector<std::size_t> rank_desc(std::span<const double> values) {
    std::vector<std::size_t> order(values.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
    return order;
}

/// Overwrites keys[begin, begin+len) with margin * unit(q_head) + noise.
inline void plant_needle(IndexerWorkload& w, std::size_t begin, std::size_t len, std::size_t head,
                         double margin, double noise_scale, std::mt19937_64& rng) {
    auto q = w.queries.row(head);
    const double norm = l2_norm(q);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t s = begin; s < begin + len; ++s) {
        auto k = w.keys.row(s);
        for (std::size_t c = 0; c < k.size(); ++c) {
            const double dir = norm > 0.0 ? q[c] / norm : 0.0;
            k[c] = margin * dir + noise_scale * normal(rng);
        }
    }
    w.label = NeedleLabel{begin, begin + len, head};
}

inline std::size_t needle_start(std::size_t L, std::size_t needle_len, double depth_fraction) {
    return static_cast<std::size_t>(std::floor(depth_fraction * static_cast<double>(L - needle_len)));
}

} // namespace detail

/// Keys, queries and gate logits drawn i.i.d. N(0,1) in that order from mt19937_64(seed).
inline IndexerWorkload gen_random_workload(std::uint64_t seed, std::size_t L, const IndexerConfig& cfg,
                                           GateMode gates = GateMode::softmax) {
    if (L == 0) throw ConfigError("gen_random_workload: L must be >= 1");
    if (cfg.n_heads == 0 || cfg.head_dim == 0) throw ConfigError("gen_random_workload: invalid dimensions");
    std::mt19937_64 rng(seed);
    IndexerWorkload w;
    w.seed = seed;
    w.keys = Matrix(L, cfg.head_dim);
    w.queries = Matrix(cfg.n_heads, cfg.head_dim);
    w.gate_weights.assign(cfg.n_heads, 0.0);
    detail::fill_normal(w.keys.data(), rng);
    detail::fill_normal(w.queries.data(), rng);
    detail::fill_normal(w.gate_weights, rng);
    if (gates == GateMode::softmax) softmax_inplace(w.gate_weights);
    return w;
}

struct NeedleOptions {
    double depth_fraction = 0.5;
    std::size_t needle_len = 32;
    double margin = 10.0;
    double noise_scale = 0.01;
    GateMode gates = GateMode::softmax;
};

/// Random haystack with a needle aligned to the largest-gate head.
///
/// The haystack is bit-identical to gen_random_workload(seed, L, cfg); needle
/// noise comes from a separate stream derived from the seed.
inline IndexerWorkload gen_needle_workload(std::uint64_t seed, std::size_t L, const NeedleOptions& opt,
                                           const IndexerConfig& cfg) {
    if (opt.needle_len == 0 || opt.needle_len > L) throw ConfigError("gen_needle_workload: needle_len must be in [1, L]");
    if (!(opt.depth_fraction >= 0.0 && opt.depth_fraction <= 1.0))
        throw ConfigError("gen_needle_workload: depth_fraction must be in [0, 1]");
    IndexerWorkload w = gen_random_workload(seed, L, cfg, opt.gates);
    std::mt19937_64 needle_rng(seed ^ 0x9e3779b97f4a7c15ULL);
    const std::size_t head = detail::rank_desc(w.gate_weights).front();
    detail::plant_needle(w, detail::needle_start(L, opt.needle_len, opt.depth_fraction), opt.needle_len, head,
                         opt.margin, opt.noise_scale, needle_rng);
    return w;
}

inline IndexerWorkload gen_needle_workload(std::uint64_t seed, std::size_t L, double depth_fraction,
                                           std::size_t needle_len, double margin, const IndexerConfig& cfg) {
    NeedleOptions opt;
    opt.depth_fraction = depth_fraction;
    opt.needle_len = needle_len;
    opt.margin = margin;
    return gen_needle_workload(seed, L, opt, cfg);
}

namespace detail {

/// Head for a rotated needle: gate rank in [h, 2h) and outside the top-h query
/// norms, picked by seed. Falls back to any head outside both top-h sets, then
/// to gate rank h.
inline std::size_t rotated_needle_head(const IndexerWorkload& w, std::size_t h, std::uint64_t seed) {
    const std::size_t H = w.n_heads();
    if (h >= H) return 0;
    const auto by_gate = rank_desc(w.gate_weights);
    std::vector<double> norms(H);
    for (std::size_t j = 0; j < H; ++j) norms[j] = l2_norm(w.queries.row(j));
    const auto by_norm = rank_desc(norms);
    std::vector<bool> top_gate(H, false), top_norm(H, false);
    for (std::size_t r = 0; r < h; ++r) {
        top_gate[by_gate[r]] = true;
        top_norm[by_norm[r]] = true;
    }
    std::vector<std::size_t> eligible;
    for (std::size_t r = h; r < std::min(H, 2 * h); ++r)
        if (!top_norm[by_gate[r]]) eligible.push_back(by_gate[r]);
    if (eligible.empty())
        for (std::size_t r = h; r < H; ++r)
            if (!top_norm[by_gate[r]]) eligible.push_back(by_gate[r]);
    if (eligible.empty()) return by_gate[h];
    return eligible[seed % eligible.size()];
}

} // namespace detail

/// Needle aligned with a seed-dependent head that neither the gate values nor
/// the query norms rank among the top `h` (content-blind routers miss it).
inline IndexerWorkload gen_rotated_needle_workload(std::uint64_t seed, std::size_t L, const NeedleOptions& opt,
                                                   const IndexerConfig& cfg) {
    if (opt.needle_len == 0 || opt.needle_len > L) throw ConfigError("gen_rotated_needle_workload: needle_len must be in [1, L]");
    if (!(opt.depth_fraction >= 0.0 && opt.depth_fraction <= 1.0))
        throw ConfigError("gen_rotated_needle_workload: depth_fraction must be in [0, 1]");
    IndexerWorkload w = gen_random_workload(seed, L, cfg, opt.gates);
    std::mt19937_64 needle_rng(seed ^ 0x9e3779b97f4a7c15ULL);
    const std::size_t head = detail::rotated_needle_head(w, cfg.active_heads_h, seed);
    detail::plant_needle(w, detail::needle_start(L, opt.needle_len, opt.depth_fraction), opt.needle_len, head,
                         opt.margin, opt.noise_scale, needle_rng);
    return w;
}

} // namespace misa
