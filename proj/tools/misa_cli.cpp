// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end for the indexer harness.
//
//   misa_cli <subcommand> [flags]      subcommands: run niah head-sweep
//                                      block-sweep ablate-router iou bench gen
//
// Exit codes: 0 success, 2 invalid configuration, 3 I/O failure.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "misa/harness.hpp"
#include "misa/workload_io.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;

struct Options {
    std::string method;
    std::size_t heads = 64;
    std::size_t dim = 64;
    std::size_t k = 2048;
    std::size_t block_size = 1024;
    std::size_t baseline_block_size = 128;
    std::size_t h = 8;
    std::size_t kprime = 8192;
    std::optional<std::size_t> hisa_m;
    std::string precision = "reference64";
    std::string router = "block_attention";
    std::size_t local_window = 0;
    std::string workload;
    std::uint64_t seed = 0;
    std::vector<std::size_t> lengths;
    std::vector<double> depths;
    double margin = 10.0;
    double noise = 0.01;
    std::size_t needle_len = 32;
    bool raw_gates = false;
    std::size_t repeats = 0;
    std::string out;
    bool no_scale_budget = false;
    unsigned threads = 1;
    std::optional<bool> timing;
    std::vector<std::size_t> h_values = {1, 2, 4, 8, 16};
    std::vector<std::size_t> b_values;
    std::string workload_file;
    std::size_t length = 1024;
    double depth = 0.5;
};

void add_flags(CLI::App& app, Options& o) {
    app.add_option("--method", o.method, "dsa | block_sparse | hisa | misa | misa_hier");
    app.add_option("--heads", o.heads, "indexer heads H")->capture_default_str();
    app.add_option("--dim", o.dim, "indexer head dimension d")->capture_default_str();
    app.add_option("--k", o.k, "token budget k (before per-L scaling)")->capture_default_str();
    app.add_option("--block-size", o.block_size, "router block size B")->capture_default_str();
    app.add_option("--baseline-block-size", o.baseline_block_size, "HISA / Block-Sparse block size")->capture_default_str();
    app.add_option("--h", o.h, "active heads h")->capture_default_str();
    app.add_option("--kprime", o.kprime, "hierarchical candidate count k'")->capture_default_str();
    app.add_option("--hisa-m", o.hisa_m, "HISA stage-1 blocks (default 2*ceil(k/B))");
    app.add_option("--precision", o.precision, "reference64 | fast32")->capture_default_str();
    app.add_option("--router", o.router, "gate_only | query_norm | block_attention")->capture_default_str();
    app.add_option("--local-window", o.local_window, "force the last N tokens into MISA selections")->capture_default_str();
    app.add_option("--workload", o.workload, "random | needle | rotated");
    app.add_option("--seed", o.seed, "base seed")->capture_default_str();
    app.add_option("--lengths", o.lengths, "prefix lengths, comma separated")->delimiter(',');
    app.add_option("--depths", o.depths, "needle depth fractions, comma separated")->delimiter(',');
    app.add_option("--margin", o.margin, "needle margin")->capture_default_str();
    app.add_option("--noise", o.noise, "needle noise scale")->capture_default_str();
    app.add_option("--needle-len", o.needle_len, "needle length in tokens")->capture_default_str();
    app.add_flag("--raw-gates", o.raw_gates, "keep raw normal gate weights (no softmax)");
    app.add_option("--repeats", o.repeats, "repeats per cell (bench: timed runs per row)");
    app.add_option("--out", o.out, "output path (CSV; gen: workload file); stdout when omitted");
    app.add_flag("--no-scale-budget", o.no_scale_budget, "use k and k' as given at every L");
    app.add_option("--threads", o.threads, "worker threads")->capture_default_str();
    app.add_flag("--timing,!--no-timing", o.timing, "record wall-clock medians");
    app.add_option("--h-values", o.h_values, "head-sweep h list")->delimiter(',');
    app.add_option("--b-values", o.b_values, "block-sweep B list")->delimiter(',');
    app.add_option("--workload-file", o.workload_file, "run: evaluate a saved workload instead of a grid");
    app.add_option("--length", o.length, "gen: prefix length")->capture_default_str();
    app.add_option("--depth", o.depth, "gen: needle depth fraction")->capture_default_str();
}

struct Defaults {
    const char* method;
    misa::WorkloadKind workload;
    std::size_t repeats;
};

misa::ExperimentSpec make_spec(const Options& o, const Defaults& d) {
    misa::ExperimentSpec spec;
    spec.method = o.method.empty() ? misa::parse_method(d.method) : misa::parse_method(o.method);
    auto& c = spec.cfg;
    c.n_heads = o.heads;
    c.head_dim = o.dim;
    c.budget_k = o.k;
    c.block_size = o.block_size;
    c.baseline_block_size = o.baseline_block_size;
    c.active_heads_h = o.h;
    c.candidate_kprime = o.kprime;
    c.local_window = o.local_window;
    c.precision = misa::parse_precision(o.precision);
    if (o.hisa_m) c.hisa_block_m = *o.hisa_m;
    spec.hisa_block_m = o.hisa_m;
    spec.router_kind = misa::parse_router_kind(o.router);
    spec.workload.kind = o.workload.empty() ? d.workload : misa::parse_workload_kind(o.workload);
    spec.workload.seed = o.seed;
    if (!o.lengths.empty()) spec.workload.lengths = o.lengths;
    if (!o.depths.empty()) spec.workload.depths = o.depths;
    spec.workload.margin = o.margin;
    spec.workload.noise_scale = o.noise;
    spec.workload.needle_len = o.needle_len;
    spec.workload.gates = o.raw_gates ? misa::GateMode::raw : misa::GateMode::softmax;
    spec.repeats = o.repeats ? o.repeats : d.repeats;
    spec.scale_budget = !o.no_scale_budget;
    spec.timing = o.timing.value_or(false);
    spec.threads = o.threads;
    if (!(o.margin > 0.0)) throw misa::ConfigError("margin must be positive");
    if (!(o.noise >= 0.0)) throw misa::ConfigError("noise must be non-negative");
    if (o.threads == 0) throw misa::ConfigError("threads must be positive");
    return spec;
}

void emit(const misa::GridResult& result, const std::string& out) {
    if (out.empty()) {
        std::cout << result.to_csv();
        std::cout.flush();
        if (!std::cout) throw misa::IoError("write to stdout failed");
    } else {
        result.write_csv(out);
    }
}

int dispatch(const std::string& cmd, const Options& o) {
    using misa::Method;
    using misa::WorkloadKind;

    if (cmd == "run") {
        auto spec = make_spec(o, {"dsa", WorkloadKind::random, 1});
        if (o.workload_file.empty()) {
            emit(misa::run_experiment(spec), o.out);
            return 0;
        }
        spec.cfg.validate();
        const auto w = misa::load_workload(o.workload_file);
        const misa::Variant v{spec.method, spec.cfg, spec.router_kind};
        misa::RunOptions opt;
        opt.scale_budget = spec.scale_budget;
        opt.hisa_block_m = spec.hisa_block_m;
        opt.timing = spec.timing;
        opt.timing_repeats = spec.repeats;
        emit(misa::run_on_workload(w, std::span(&v, 1), opt), o.out);
        return 0;
    }
    if (cmd == "niah") {
        emit(misa::run_niah_grid(make_spec(o, {"misa", WorkloadKind::needle, 5})), o.out);
        return 0;
    }
    if (cmd == "head-sweep") {
        emit(misa::run_head_sweep(make_spec(o, {"misa", WorkloadKind::needle, 5}), o.h_values), o.out);
        return 0;
    }
    if (cmd == "block-sweep") {
        const auto spec = make_spec(o, {"misa", WorkloadKind::needle, 5});
        std::vector<std::size_t> bs = o.b_values;
        if (bs.empty()) {
            const auto L = *std::max_element(spec.workload.lengths.begin(), spec.workload.lengths.end());
            for (std::size_t b = 1; b <= L; b *= 2) bs.push_back(b);
            if (bs.size() > 11) bs.erase(bs.begin(), bs.end() - 11);
        }
        emit(misa::run_block_sweep(spec, bs), o.out);
        return 0;
    }
    if (cmd == "ablate-router") {
        emit(misa::run_router_ablation(make_spec(o, {"misa", WorkloadKind::rotated_needle, 5})), o.out);
        return 0;
    }
    if (cmd == "iou") {
        emit(misa::run_iou_curves(make_spec(o, {"misa_hier", WorkloadKind::random, 8})), o.out);
        return 0;
    }
    if (cmd == "bench") {
        const auto spec = make_spec(o, {"dsa", WorkloadKind::random, 5});
        emit(misa::run_bench(spec, spec.workload.lengths, o.timing.value_or(true)), o.out);
        return 0;
    }
    if (cmd == "gen") {
        if (o.out.empty()) throw misa::ConfigError("gen: --out is required");
        auto spec = make_spec(o, {"dsa", WorkloadKind::random, 1});
        spec.cfg.validate();
        misa::NeedleOptions opt;
        opt.depth_fraction = o.depth;
        opt.needle_len = o.needle_len;
        opt.margin = o.margin;
        opt.noise_scale = o.noise;
        opt.gates = spec.workload.gates;
        misa::IndexerWorkload w;
        switch (spec.workload.kind) {
        case WorkloadKind::random: w = misa::gen_random_workload(o.seed, o.length, spec.cfg, opt.gates); break;
        case WorkloadKind::needle: w = misa::gen_needle_workload(o.seed, o.length, opt, spec.cfg); break;
        case WorkloadKind::rotated_needle: w = misa::gen_rotated_needle_workload(o.seed, o.length, opt, spec.cfg); break;
        }
        misa::save_workload(o.out, w);
        return 0;
    }
    throw misa::ConfigError("unknown subcommand " + cmd);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sparse-attention indexer harness: DSA, Block-Sparse, HISA, MISA and hierarchical MISA"};
    app.set_help_flag("--help", "print this help and exit");
    app.fallthrough();
    app.require_subcommand(1);
    app.set_config("--config", "", "flat key=value file (# comments); command-line flags override it");

    Options o;
    add_flags(app, o);
    const std::vector<std::pair<const char*, const char*>> subcommands = {
        {"run", "one method over a workload grid, or a saved workload (--workload-file)"},
        {"niah", "needle-in-a-haystack grid: length x depth x repeat"},
        {"head-sweep", "one grid per active-head count (--h-values)"},
        {"block-sweep", "one grid per router block size (--b-values)"},
        {"ablate-router", "MISA under each head-importance score"},
        {"iou", "IoU against the dense reference per position and simulated layer"},
        {"bench", "all methods per prefix length with wall-clock medians"},
        {"gen", "write a generated workload to a binary file (--out)"},
    };
    for (const auto& [name, help] : subcommands) app.add_subcommand(name, help);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::FileError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitIo;
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        return dispatch(app.get_subcommands().front()->get_name(), o);
    } catch (const misa::IoError& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return kExitIo;
    } catch (const misa::ConfigError& e) {
        std::cerr << "invalid configuration: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::logic_error& e) {
        std::cerr << "invalid configuration: " << e.what() << '\n';
        return kExitConfig;
    }
}
