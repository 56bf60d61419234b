// SPDX-License-Identifier: Apache-2.0
#pragma once

// Experiment runner: grids of seeded workloads, every indexer under matched
// budgets, one CSV row per (cell, variant).
//
// Every cell co-generates its workload and a reference64 dense selection;
// nothing is cached across cells. Rows are sorted before output, so results
// do not depend on the number of worker threads.

#include <algorithm>
#include <array>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <tuple>
#include <vector>

#include "misa/baselines.hpp"
#include "misa/core.hpp"
#include "misa/dsa.hpp"
#include "misa/metrics.hpp"
#include "misa/misa.hpp"
#include "misa/pooling.hpp"

namespace misa {

enum class Method { dsa, block_sparse, hisa, misa, misa_hier };

inline constexpr std::array<Method, 5> kAllMethods = {Method::dsa, Method::block_sparse, Method::hisa, Method::misa,
                                                      Method::misa_hier};

inline std::string_view to_string(Method m) {
    switch (m) {
    case Method::dsa: return "dsa";
    case Method::block_sparse: return "block_sparse";
    case Method::hisa: return "hisa";
    case Method::misa: return "misa";
    case Method::misa_hier: return "misa_hier";
    }
    return "?";
}

inline Method parse_method(std::string_view s) {
    for (Method m : kAllMethods)
        if (to_string(m) == s) return m;
    throw ConfigError("unknown method: " + std::string(s));
}

inline bool uses_router(Method m) { return m == Method::misa || m == Method::misa_hier; }

enum class WorkloadKind { random, needle, rotated_needle };

inline std::string_view to_string(WorkloadKind k) {
    switch (k) {
    case WorkloadKind::random: return "random";
    case WorkloadKind::needle: return "needle";
    case WorkloadKind::rotated_needle: return "rotated";
    }
    return "?";
}

inline WorkloadKind parse_workload_kind(std::string_view s) {
    if (s == "random") return WorkloadKind::random;
    if (s == "needle") return WorkloadKind::needle;
    if (s == "rotated") return WorkloadKind::rotated_needle;
    throw ConfigError("unknown workload kind: " + std::string(s));
}

struct WorkloadSpec {
    WorkloadKind kind = WorkloadKind::random;
    std::uint64_t seed = 0;
    std::vector<std::size_t> lengths = {1024, 2048, 4096, 8192};
    std::vector<double> depths = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    double margin = 10.0;
    double noise_scale = 0.01;
    std::size_t needle_len = 32;
    GateMode gates = GateMode::softmax;
};

struct ExperimentSpec {
    Method method = Method::misa;
    IndexerConfig cfg;
    WorkloadSpec workload;
    RouterScoreKind router_kind = RouterScoreKind::block_attention;
    std::size_t repeats = 1;
    std::filesystem::path output_path;
    /// k = min(budget_k, L/4) per cell, with k' and the HISA block count scaled alongside.
    bool scale_budget = true;
    std::optional<std::size_t> hisa_block_m;
    bool timing = false;
    unsigned threads = 1;

    void validate() const {
        cfg.validate();
        if (workload.lengths.empty()) throw ConfigError("L grid must not be empty");
        if (repeats == 0) throw ConfigError("repeats must be >= 1");
        if (std::find(workload.lengths.begin(), workload.lengths.end(), std::size_t{0}) != workload.lengths.end())
            throw ConfigError("prefix lengths must be positive");
        if (workload.kind != WorkloadKind::random) {
            if (workload.depths.empty()) throw ConfigError("depth grid must not be empty");
            for (double d : workload.depths)
                if (!(d >= 0.0 && d <= 1.0)) throw ConfigError("depth fractions must lie in [0, 1]");
            const auto min_len = *std::min_element(workload.lengths.begin(), workload.lengths.end());
            if (workload.needle_len == 0 || workload.needle_len > min_len)
                throw ConfigError("needle_len must be in [1, min L]");
        }
        if (hisa_block_m && *hisa_block_m == 0) throw ConfigError("hisa_block_m must be positive");
    }
};

struct GridRow {
    Method method = Method::dsa;
    std::size_t L = 0;
    double depth_fraction = 0.0;
    std::size_t h = 0;
    std::size_t B = 0;
    std::size_t kprime = 0;
    std::uint64_t seed = 0;
    double needle_recall = std::numeric_limits<double>::quiet_NaN();
    double iou_vs_dsa = 0.0;
    std::uint64_t token_dot_products = 0;
    std::uint64_t block_dot_products = 0;
    std::uint64_t refine_dot_products = 0;
    std::int64_t wall_micros = 0;
    RouterScoreKind router = RouterScoreKind::block_attention;
    std::size_t k = 0;        // effective budget (not emitted)
    std::size_t n_heads = 0;  // H^I (not emitted)

    CostCounts cost() const { return {token_dot_products, block_dot_products, refine_dot_products}; }

    auto sort_key() const {
        return std::make_tuple(static_cast<int>(method), L, depth_fraction, h, B, kprime, seed, static_cast<int>(router));
    }
};

inline constexpr std::string_view kCsvHeader =
    "method,L,depth_fraction,h,B,kprime,seed,needle_recall,iou_vs_dsa,token_dot_products,block_dot_products,"
    "refine_dot_products,wall_micros,router";

inline std::string format_fixed(double x, int precision = 6) {
    if (std::isnan(x)) return "nan";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), x, std::chars_format::fixed, precision);
    return std::string(buf, res.ptr);
}

struct GridResult {
    std::vector<GridRow> rows;

    void sort_rows() {
        std::stable_sort(rows.begin(), rows.end(), [](const GridRow& a, const GridRow& b) { return a.sort_key() < b.sort_key(); });
    }

    void append(const GridResult& other) { rows.insert(rows.end(), other.rows.begin(), other.rows.end()); }

    std::string to_csv() const {
        std::string out(kCsvHeader);
        out += '\n';
        for (const auto& r : rows) {
            out += to_string(r.method);
            out += ',' + std::to_string(r.L);
            out += ',' + format_fixed(r.depth_fraction);
            out += ',' + std::to_string(r.h);
            out += ',' + std::to_string(r.B);
            out += ',' + std::to_string(r.kprime);
            out += ',' + std::to_string(r.seed);
            out += ',' + format_fixed(r.needle_recall);
            out += ',' + format_fixed(r.iou_vs_dsa);
            out += ',' + std::to_string(r.token_dot_products);
            out += ',' + std::to_string(r.block_dot_products);
            out += ',' + std::to_string(r.refine_dot_products);
            out += ',' + std::to_string(r.wall_micros);
            out += ',';
            out += uses_router(r.method) ? to_string(r.router) : std::string_view("none");
            out += '\n';
        }
        return out;
    }

    void write_csv(const std::filesystem::path& path) const {
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot open " + path.string() + " for writing");
        const auto text = to_csv();
        os.write(text.data(), static_cast<std::streamsize>(text.size()));
        if (!os) throw IoError("write failed: " + path.string());
    }
};

// ---------------------------------------------------------------------------
// Cells and variants
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Workload seed of one grid cell; independent of method, h, B and router.
inline std::uint64_t cell_seed(std::uint64_t base, std::size_t L, std::size_t depth_index, std::size_t repeat) {
    std::uint64_t s = splitmix64(base);
    s = splitmix64(s ^ L);
    s = splitmix64(s ^ depth_index);
    return splitmix64(s ^ repeat);
}

struct Cell {
    std::size_t L = 0;
    std::size_t depth_index = 0;
    double depth = 0.0;
    std::size_t repeat = 0;
    std::uint64_t seed = 0;
};

/// A method plus the parameters it runs with on every cell.
struct Variant {
    Method method = Method::dsa;
    IndexerConfig cfg;
    RouterScoreKind router = RouterScoreKind::block_attention;
};

/// Per-cell config: the budget scaling rule applied to `base` at prefix length L.
inline IndexerConfig effective_config(const IndexerConfig& base, std::size_t L, bool scale_budget,
                                      std::optional<std::size_t> hisa_block_m) {
    IndexerConfig cfg = base;
    if (scale_budget) {
        cfg.budget_k = std::min(base.budget_k, std::max<std::size_t>(1, L / 4));
        const auto scaled = static_cast<std::uint64_t>(cfg.budget_k) * base.candidate_kprime / base.budget_k;
        cfg.candidate_kprime = std::max<std::size_t>(cfg.budget_k, static_cast<std::size_t>(scaled));
    }
    cfg.hisa_block_m = hisa_block_m ? *hisa_block_m : default_hisa_blocks(cfg.budget_k, cfg.baseline_block_size);
    return cfg;
}

inline IndexerWorkload make_workload(const WorkloadSpec& ws, const IndexerConfig& cfg, const Cell& cell) {
    NeedleOptions opt;
    opt.depth_fraction = cell.depth;
    opt.needle_len = ws.needle_len;
    opt.margin = ws.margin;
    opt.noise_scale = ws.noise_scale;
    opt.gates = ws.gates;
    switch (ws.kind) {
    case WorkloadKind::random: return gen_random_workload(cell.seed, cell.L, cfg, ws.gates);
    case WorkloadKind::needle: return gen_needle_workload(cell.seed, cell.L, opt, cfg);
    case WorkloadKind::rotated_needle: return gen_rotated_needle_workload(cell.seed, cell.L, opt, cfg);
    }
    throw ConfigError("unknown workload kind");
}

inline std::vector<Cell> grid_cells(const WorkloadSpec& ws, std::span<const std::size_t> lengths, std::size_t repeats) {
    std::vector<Cell> cells;
    const std::vector<double> no_depth{0.0};
    const auto& depths = ws.kind == WorkloadKind::random ? no_depth : ws.depths;
    for (std::size_t L : lengths)
        for (std::size_t di = 0; di < depths.size(); ++di)
            for (std::size_t r = 0; r < repeats; ++r)
                cells.push_back({L, di, depths[di], r, cell_seed(ws.seed, L, di, r)});
    return cells;
}

struct MethodOutcome {
    TokenSelection tokens;
    CostCounts cost;
    std::size_t h = 0;
    std::size_t B = 0;
    std::size_t kprime = 0;
};

/// Runs one method on one workload with an already scaled config.
inline MethodOutcome run_method(Method method, const IndexerWorkload& w, const IndexerConfig& cfg, RouterScoreKind router) {
    MethodOutcome out;
    out.h = cfg.n_heads;
    switch (method) {
    case Method::dsa: {
        auto r = dsa_select(w, cfg.budget_k, cfg.precision);
        out.tokens = std::move(r.tokens);
        out.cost = r.cost.counts();
        break;
    }
    case Method::block_sparse: {
        const auto summary = build_block_summary(w.keys, cfg.baseline_block_size);
        auto r = block_sparse_select(w, summary, cfg.budget_k, cfg.precision);
        out.tokens = std::move(r.tokens);
        out.cost = r.cost.counts();
        out.B = cfg.baseline_block_size;
        break;
    }
    case Method::hisa: {
        const auto summary = build_block_summary(w.keys, cfg.baseline_block_size);
        auto r = hisa_select(w, summary, cfg.hisa_block_m, cfg.budget_k, cfg.precision);
        out.tokens = std::move(r.tokens);
        out.cost = r.cost.counts();
        out.B = cfg.baseline_block_size;
        break;
    }
    case Method::misa:
    case Method::misa_hier: {
        const auto summary = build_block_summary(w.keys, cfg.block_size);
        auto r = method == Method::misa ? misa_select(w, summary, cfg, router) : misa_hier_select(w, summary, cfg, router);
        out.tokens = std::move(r.tokens);
        out.cost = r.cost.counts();
        out.h = cfg.active_heads_h;
        out.B = cfg.block_size;
        out.kprime = method == Method::misa_hier ? cfg.candidate_kprime : 0;
        break;
    }
    }
    return out;
}

/// Dot products the cost model predicts for a row; nullopt where the count is
/// data dependent (HISA refinement, Block-Sparse truncation).
inline std::optional<CostCounts> closed_form_cost(const GridRow& row) {
    const bool block_router = row.router == RouterScoreKind::block_attention;
    switch (row.method) {
    case Method::dsa: return dsa_cost(row.n_heads, row.L);
    case Method::misa: return misa_cost(row.n_heads, row.h, row.L, row.B, block_router);
    case Method::misa_hier: return misa_hier_cost(row.n_heads, row.h, row.L, row.B, row.kprime, block_router);
    case Method::block_sparse:
    case Method::hisa: return std::nullopt;
    }
    return std::nullopt;
}

struct RunOptions {
    bool timing = false;
    std::size_t timing_repeats = 1; // median over this many timed runs
    unsigned threads = 1;
    bool scale_budget = true;
    std::optional<std::size_t> hisa_block_m;
};

namespace detail {

inline std::int64_t median(std::vector<std::int64_t> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

/// One row per variant on an already generated workload.
inline std::vector<GridRow> evaluate_variants(const IndexerWorkload& w, double depth, std::span<const Variant> variants,
                                              const RunOptions& opt) {
    std::vector<GridRow> rows;
    std::optional<TokenSelection> reference;
    std::size_t reference_k = 0;
    for (const Variant& v : variants) {
        const IndexerConfig cfg = effective_config(v.cfg, w.prefix_len(), opt.scale_budget, opt.hisa_block_m);
        if (cfg.n_heads != w.n_heads() || cfg.head_dim != w.head_dim())
            throw ConfigError("workload dimensions do not match the configured heads/dim");
        if (!reference || reference_k != cfg.budget_k) {
            reference = dsa_select(w, cfg.budget_k, Precision::reference64).tokens;
            reference_k = cfg.budget_k;
        }
        MethodOutcome outcome;
        std::vector<std::int64_t> times;
        const std::size_t runs = opt.timing ? std::max<std::size_t>(1, opt.timing_repeats) : 1;
        for (std::size_t i = 0; i < runs; ++i) {
            const auto t0 = std::chrono::steady_clock::now();
            outcome = run_method(v.method, w, cfg, v.router);
            const auto t1 = std::chrono::steady_clock::now();
            times.push_back(std::chrono::duration_cast<std::chrono::microseconds>(t1 - t0).count());
        }

        GridRow row;
        row.method = v.method;
        row.L = w.prefix_len();
        row.depth_fraction = depth;
        row.h = outcome.h;
        row.B = outcome.B;
        row.kprime = outcome.kprime;
        row.seed = w.seed;
        if (w.label) row.needle_recall = needle_recall(outcome.tokens, *w.label);
        row.iou_vs_dsa = iou(outcome.tokens, *reference);
        row.token_dot_products = outcome.cost.token;
        row.block_dot_products = outcome.cost.block;
        row.refine_dot_products = outcome.cost.refine;
        row.wall_micros = opt.timing ? median(times) : 0;
        row.router = v.router;
        row.k = cfg.budget_k;
        row.n_heads = cfg.n_heads;
        rows.push_back(row);
    }
    return rows;
}

inline std::vector<GridRow> run_cell(const WorkloadSpec& ws, const IndexerConfig& workload_cfg, const Cell& cell,
                                     std::span<const Variant> variants, const RunOptions& opt) {
    return evaluate_variants(make_workload(ws, workload_cfg, cell), cell.depth, variants, opt);
}

} // namespace detail

/// Runs every variant on every cell of the (L × depth × repeat) grid.
inline GridResult run_variants(const WorkloadSpec& ws, const IndexerConfig& workload_cfg, std::span<const std::size_t> lengths,
                               std::size_t repeats, std::span<const Variant> variants, const RunOptions& opt) {
    const auto cells = grid_cells(ws, lengths, repeats);
    std::vector<std::vector<GridRow>> per_cell(cells.size());
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr error;

    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            try {
                per_cell[i] = detail::run_cell(ws, workload_cfg, cells[i], variants, opt);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                next = cells.size();
            }
        }
    };
    const unsigned n_threads = std::max(1u, std::min<unsigned>(opt.threads, static_cast<unsigned>(cells.size())));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    }
    if (error) std::rethrow_exception(error);

    GridResult result;
    for (auto& rows : per_cell) result.rows.insert(result.rows.end(), rows.begin(), rows.end());
    result.sort_rows();
    return result;
}

/// Every variant on one externally supplied workload (e.g. loaded from disk).
/// The depth column is 0; needle_recall is nan unless the workload carries a label.
inline GridResult run_on_workload(const IndexerWorkload& w, std::span<const Variant> variants, const RunOptions& opt) {
    w.validate();
    GridResult result;
    result.rows = detail::evaluate_variants(w, 0.0, variants, opt);
    result.sort_rows();
    return result;
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

namespace detail {

inline RunOptions run_options(const ExperimentSpec& spec) {
    RunOptions opt;
    opt.timing = spec.timing;
    opt.threads = spec.threads;
    opt.scale_budget = spec.scale_budget;
    opt.hisa_block_m = spec.hisa_block_m;
    return opt;
}

inline void require_method(const ExperimentSpec& spec, std::initializer_list<Method> allowed, const char* op) {
    if (std::find(allowed.begin(), allowed.end(), spec.method) == allowed.end())
        throw ConfigError(std::string(op) + ": method " + std::string(to_string(spec.method)) + " not supported");
}

inline GridResult finish(const ExperimentSpec& spec, GridResult result) {
    if (!spec.output_path.empty()) result.write_csv(spec.output_path);
    return result;
}

} // namespace detail

/// Single method over the experiment's grid.
inline GridResult run_experiment(const ExperimentSpec& spec) {
    spec.validate();
    const Variant v{spec.method, spec.cfg, spec.router_kind};
    return detail::finish(spec, run_variants(spec.workload, spec.cfg, spec.workload.lengths, spec.repeats,
                                             std::span(&v, 1), detail::run_options(spec)));
}

/// Needle-in-a-haystack grid: context length × needle depth × repeat.
inline GridResult run_niah_grid(const ExperimentSpec& spec) {
    spec.validate();
    if (spec.workload.kind == WorkloadKind::random) throw ConfigError("niah: workload kind must be needle or rotated");
    return run_experiment(spec);
}

/// One grid per active-head count. For misa_hier the single-stage misa grid at
/// the same h values is emitted alongside, so hierarchical h can be compared
/// with single-stage 2h.
inline GridResult run_head_sweep(const ExperimentSpec& spec, std::span<const std::size_t> h_values) {
    spec.validate();
    detail::require_method(spec, {Method::misa, Method::misa_hier}, "head-sweep");
    if (h_values.empty()) throw ConfigError("head-sweep: h list must not be empty");
    std::vector<Variant> variants;
    for (std::size_t h : h_values) {
        Variant v{spec.method, spec.cfg, spec.router_kind};
        v.cfg.active_heads_h = h;
        v.cfg.validate();
        variants.push_back(v);
        if (spec.method == Method::misa_hier) {
            v.method = Method::misa;
            variants.push_back(v);
        }
    }
    return detail::finish(spec, run_variants(spec.workload, spec.cfg, spec.workload.lengths, spec.repeats, variants,
                                             detail::run_options(spec)));
}

/// One grid per router block size; B >= L degenerates to a single pooled key.
inline GridResult run_block_sweep(const ExperimentSpec& spec, std::span<const std::size_t> block_sizes) {
    spec.validate();
    detail::require_method(spec, {Method::misa, Method::misa_hier}, "block-sweep");
    if (block_sizes.empty()) throw ConfigError("block-sweep: B list must not be empty");
    std::vector<Variant> variants;
    for (std::size_t B : block_sizes) {
        Variant v{spec.method, spec.cfg, spec.router_kind};
        v.cfg.block_size = B;
        v.cfg.validate();
        variants.push_back(v);
    }
    return detail::finish(spec, run_variants(spec.workload, spec.cfg, spec.workload.lengths, spec.repeats, variants,
                                             detail::run_options(spec)));
}

inline constexpr std::array<RouterScoreKind, 3> kAllRouterKinds = {
    RouterScoreKind::gate_only, RouterScoreKind::query_norm, RouterScoreKind::block_attention};

/// One misa grid per head-importance score, on identical workloads.
inline GridResult run_router_ablation(const ExperimentSpec& spec) {
    spec.validate();
    detail::require_method(spec, {Method::misa}, "ablate-router");
    std::vector<Variant> variants;
    for (RouterScoreKind kind : kAllRouterKinds) variants.push_back({spec.method, spec.cfg, kind});
    return detail::finish(spec, run_variants(spec.workload, spec.cfg, spec.workload.lengths, spec.repeats, variants,
                                             detail::run_options(spec)));
}

/// IoU against the dense reference per prefix position and per simulated
/// layer. Layers are independent workloads (one seed each, `repeats` layers);
/// positions below the budget are skipped.
inline GridResult run_iou_curves(const ExperimentSpec& spec) {
    spec.validate();
    detail::require_method(spec, {Method::hisa, Method::misa, Method::misa_hier}, "iou");
    std::vector<std::size_t> positions;
    for (std::size_t L : spec.workload.lengths) {
        const auto cfg = effective_config(spec.cfg, L, spec.scale_budget, spec.hisa_block_m);
        if (L >= cfg.budget_k) positions.push_back(L);
    }
    GridResult result;
    if (!positions.empty()) {
        const Variant v{spec.method, spec.cfg, spec.router_kind};
        result = run_variants(spec.workload, spec.cfg, positions, spec.repeats, std::span(&v, 1), detail::run_options(spec));
    }
    return detail::finish(spec, std::move(result));
}

/// Median wall time of every method per prefix length over `repeats` timed
/// runs, next to the dot-product counts. With `timing` off the wall_micros
/// column is zero and the output is reproducible byte for byte.
inline GridResult run_bench(const ExperimentSpec& spec, std::span<const std::size_t> lengths, bool timing = true) {
    spec.validate();
    if (spec.repeats < 5) throw ConfigError("bench: repeats must be >= 5");
    if (lengths.empty()) throw ConfigError("bench: L list must not be empty");
    std::vector<Variant> variants;
    for (Method m : kAllMethods) variants.push_back({m, spec.cfg, spec.router_kind});
    RunOptions opt = detail::run_options(spec);
    opt.timing = timing;
    opt.timing_repeats = spec.repeats;
    opt.threads = 1;
    return detail::finish(spec, run_variants(spec.workload, spec.cfg, lengths, 1, variants, opt));
}

// ---------------------------------------------------------------------------
// Summaries
// ---------------------------------------------------------------------------

struct GroupKey {
    Method method;
    std::size_t h;
    std::size_t B;
    RouterScoreKind router;
    auto operator<=>(const GroupKey&) const = default;
};

struct GroupStats {
    std::size_t rows = 0;
    double mean_needle_recall = 0.0;
    double mean_iou = 0.0;
};

/// Mean recall and IoU per (method, h, B, router) over all cells.
inline std::map<GroupKey, GroupStats> summarize(const GridResult& result) {
    std::map<GroupKey, GroupStats> out;
    for (const auto& r : result.rows) {
        auto& g = out[{r.method, r.h, r.B, r.router}];
        ++g.rows;
        g.mean_needle_recall += std::isnan(r.needle_recall) ? 0.0 : r.needle_recall;
        g.mean_iou += r.iou_vs_dsa;
    }
    for (auto& [key, g] : out) {
        g.mean_needle_recall /= static_cast<double>(g.rows);
        g.mean_iou /= static_cast<double>(g.rows);
    }
    return out;
}

} // namespace misa
