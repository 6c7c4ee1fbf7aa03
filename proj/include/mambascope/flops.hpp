#pragma once

#include <cstdint>
#include <numeric>
#include <vector>

#include "mambascope/config.hpp"
#include "mambascope/vim.hpp"

namespace mambascope {

/// Analytic compute-cost model. Counts the multiply-accumulates the encoder
/// actually performs (FLOPs = 2 x MAC); nonlinearities and softmax are
/// omitted, which is what keeps the dynamic cross-check within tolerance.
struct CostModel {
    std::size_t dim;        // D
    std::size_t dim_inner;  // D'
    std::size_t state_dim;  // N
    std::size_t depth;
    std::size_t classes;
    std::size_t patch_flat;  // p2^2 * channels
    std::size_t n_coarse;

    explicit CostModel(const ModelConfig& cfg)
        : dim(cfg.dim),
          dim_inner(cfg.dim_inner),
          state_dim(cfg.state_dim),
          depth(cfg.depth),
          classes(cfg.classes),
          patch_flat(cfg.patch_fine * cfg.patch_fine * cfg.channels),
          n_coarse(cfg.n_coarse()) {}

    /// MACs of one block per token: in_proj, two directions (delta/B/C
    /// projections, scan, gate) and out_proj.
    std::uint64_t block_macs_per_token() const {
        const std::uint64_t d = dim, di = dim_inner, n = state_dim;
        const std::uint64_t per_dir = di * di        // delta_proj
                                      + 2 * di * n   // b_proj + c_proj
                                      + 3 * di * n   // scan update + readout
                                      + di * di;     // gate_proj
        return d * 2 * di + 2 * per_dir + di * d;
    }

    std::uint64_t embed_macs(std::uint64_t n_patches) const {
        return n_patches * static_cast<std::uint64_t>(patch_flat) * dim;
    }

    std::uint64_t head_macs() const {
        return static_cast<std::uint64_t>(dim) * classes;
    }

    std::uint64_t reuse_macs() const {
        // two-layer MLP, hidden = D, over N_c rows
        return 2ull * n_coarse * dim * dim;
    }
};

/// Analytic FLOPs of one stage at sequence length L (tokens incl. CLS).
/// The coarse stage embeds L-1 patches; the fine stage always embeds the
/// full fine grid (tokens are gathered afterwards) and pays the reuse MLP.
inline std::uint64_t stage_flops(const ModelConfig& cfg, std::size_t seq_len,
                                 Stage stage) {
    CostModel m(cfg);
    std::uint64_t macs = static_cast<std::uint64_t>(cfg.depth) * seq_len *
                         m.block_macs_per_token() +
                         m.head_macs();
    if (stage == Stage::Coarse) {
        macs += m.embed_macs(seq_len - 1);
    } else {
        macs += m.embed_macs(4ull * cfg.n_coarse()) + m.reuse_macs();
    }
    return 2 * macs;
}

/// Mean realized per-image FLOPs over a routing sweep.
inline double expected_flops(const std::vector<std::uint64_t>& per_image) {
    if (per_image.empty()) return 0.0;
    long double sum = 0.0;
    for (std::uint64_t v : per_image) sum += static_cast<long double>(v);
    return static_cast<double>(sum / static_cast<long double>(per_image.size()));
}

}  // namespace mambascope
