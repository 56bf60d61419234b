// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "misa/core.hpp"

namespace misa {

/// Contiguous partition of a prefix into blocks of `block_size` tokens (the
/// last one possibly shorter) together with each block's mean key.
class BlockSummary {
public:
    BlockSummary() = default;
    BlockSummary(std::size_t block_size, std::size_t head_dim) : block_size_(block_size), pooled_(0, head_dim) {
        if (block_size == 0) throw ConfigError("BlockSummary: block_size must be positive");
    }

    std::size_t block_size() const noexcept { return block_size_; }
    std::size_t n_blocks() const noexcept { return pooled_.rows(); }
    std::size_t prefix_len() const noexcept { return prefix_len_; }
    std::size_t head_dim() const noexcept { return pooled_.cols(); }

    std::size_t block_begin(std::size_t b) const noexcept { return b * block_size_; }
    std::size_t block_end(std::size_t b) const noexcept { return std::min(prefix_len_, (b + 1) * block_size_); }
    std::size_t block_len(std::size_t b) const noexcept { return block_end(b) - block_begin(b); }
    std::pair<std::size_t, std::size_t> boundaries(std::size_t b) const noexcept { return {block_begin(b), block_end(b)}; }

    const Matrix& pooled_keys() const noexcept { return pooled_; }
    std::span<const double> pooled_key(std::size_t b) const noexcept { return pooled_.row(b); }

    /// Running-mean update with one more key; opens a new block when the last is full.
    void append(std::span<const double> key) {
        if (pooled_.cols() == 0 && pooled_.rows() == 0) pooled_ = Matrix(0, key.size());
        if (key.size() != pooled_.cols()) throw ConfigError("BlockSummary::append: key width mismatch");
        if (prefix_len_ % block_size_ == 0) {
            pooled_.append_row(key);
        } else {
            auto mean = pooled_.row(n_blocks() - 1);
            const double count = static_cast<double>(prefix_len_ % block_size_ + 1);
            for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += (key[c] - mean[c]) / count;
        }
        ++prefix_len_;
    }

private:
    friend BlockSummary build_block_summary(const Matrix& keys, std::size_t block_size);

    std::size_t block_size_ = 1;
    std::size_t prefix_len_ = 0;
    Matrix pooled_;
};

/// Mean-pooled block summary of `keys`; a partial last block is averaged over its actual length.
inline BlockSummary build_block_summary(const Matrix& keys, std::size_t block_size) {
    BlockSummary out(block_size, keys.cols());
    const std::size_t L = keys.rows();
    const std::size_t M = (L + block_size - 1) / block_size;
    out.prefix_len_ = L;
    out.pooled_ = Matrix(M, keys.cols());
    for (std::size_t b = 0; b < M; ++b) {
        auto mean = out.pooled_.row(b);
        const std::size_t begin = out.block_begin(b), end = out.block_end(b);
        for (std::size_t s = begin; s < end; ++s) {
            auto k = keys.row(s);
            for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += k[c];
        }
        const double n = static_cast<double>(end - begin);
        for (auto& x : mean) x /= n;
    }
    return out;
}

/// Summary for the prefix extended by `new_key`.
inline BlockSummary incremental_append(BlockSummary summary, std::span<const double> new_key) {
    summary.append(new_key);
    return summary;
}

} // namespace misa
