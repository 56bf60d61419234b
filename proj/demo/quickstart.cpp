// SPDX-License-Identifier: Apache-2.0
//
// Plant a needle, run every indexer on the same query and print what each
// one selected and what it cost.

#include <cstdio>

#include "misa/misa_all.hpp"

int main() {
    misa::IndexerConfig cfg;
    cfg.head_dim = 32;
    cfg.budget_k = 256;
    cfg.candidate_kprime = 1024;
    cfg.block_size = 512;

    misa::NeedleOptions needle;
    needle.depth_fraction = 0.3;
    const auto w = misa::gen_needle_workload(42, 4096, needle, cfg);

    const auto dense = misa::dsa_select(w, cfg.budget_k);
    const auto router_blocks = misa::build_block_summary(w.keys, cfg.block_size);
    const auto baseline_blocks = misa::build_block_summary(w.keys, cfg.baseline_block_size);
    const auto sparse = misa::block_sparse_select(w, baseline_blocks, cfg.budget_k);
    const auto hisa = misa::hisa_select(w, baseline_blocks, misa::default_hisa_blocks(cfg.budget_k, 128), cfg.budget_k);
    const auto routed = misa::misa_select(w, router_blocks, cfg);
    const auto hier = misa::misa_hier_select(w, router_blocks, cfg);

    std::printf("needle [%zu, %zu) aligned with head %zu\n", w.label->begin, w.label->end, w.label->head);
    std::printf("%-13s %8s %8s %12s\n", "method", "recall", "IoU", "dot products");
    auto line = [&](const char* name, const misa::TokenSelection& sel, const misa::CostLedger& cost) {
        std::printf("%-13s %8.3f %8.3f %12llu\n", name, misa::needle_recall(sel, *w.label), misa::iou(sel, dense.tokens),
                    static_cast<unsigned long long>(cost.total()));
    };
    line("dsa", dense.tokens, dense.cost);
    line("block_sparse", sparse.tokens, sparse.cost);
    line("hisa", hisa.tokens, hisa.cost);
    line("misa", routed.tokens, routed.cost);
    line("misa_hier", hier.tokens, hier.cost);
    return 0;
}
