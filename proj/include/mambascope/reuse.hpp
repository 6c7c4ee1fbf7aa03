#pragma once

#include <cmath>
#include <vector>

#include "mambascope/geometry.hpp"
#include "mambascope/vim.hpp"

namespace mambascope {

/// Coarse features transformed and aligned to the fine grid, plus the
/// per-fine-index mask of which parents were selected. Masked-off rows are
/// exactly zero.
struct ReuseFeatures {
    Tensor grid;             // 4 N_c x D
    std::vector<bool> mask;  // true iff parent coarse patch selected
};

inline double gelu(double x) {
    // tanh approximation
    const double c = 0.7978845608028654;  // sqrt(2/pi)
    return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

/// Eq.-style reuse transform: drop the CLS row, then a two-layer MLP
/// (hidden = D, GELU) applied rowwise. Output rows are in coarse grid order.
inline Tensor reuse_transform(const TokenSeq& coarse_final, const ReuseMlp& mlp) {
    const std::size_t total = coarse_final.length();
    const std::size_t d = coarse_final.tokens.dims[1];
    Tensor grid_tokens({total - 1, d});
    std::size_t w = 0;
    for (std::size_t t = 0; t < total; ++t) {
        if (t == coarse_final.cls_index) continue;
        for (std::size_t j = 0; j < d; ++j)
            grid_tokens.at(w, j) = coarse_final.tokens.at(t, j);
        ++w;
    }
    Tensor hidden = matmul(grid_tokens, mlp.w0);
    for (std::size_t t = 0; t < hidden.dims[0]; ++t)
        for (std::size_t j = 0; j < hidden.dims[1]; ++j)
            hidden.at(t, j) = static_cast<float>(gelu(hidden.at(t, j) + mlp.b0.at(j)));
    Tensor out = matmul(hidden, mlp.w1);
    for (std::size_t t = 0; t < out.dims[0]; ++t)
        for (std::size_t j = 0; j < out.dims[1]; ++j) out.at(t, j) += mlp.b1.at(j);
    return out;
}

/// Row-lookup broadcast: fine row f copies its parent's transformed row.
inline Tensor broadcast_to_fine(const Tensor& transformed, const GridMap& grid) {
    if (transformed.dims[0] != grid.n_coarse())
        throw ShapeError("broadcast_to_fine: row count does not match coarse grid");
    const std::size_t d = transformed.dims[1];
    Tensor out({grid.n_fine(), d});
    for (std::size_t f = 0; f < grid.n_fine(); ++f) {
        const std::size_t parent = fine_to_coarse(f, grid);
        for (std::size_t j = 0; j < d; ++j) out.at(f, j) = transformed.at(parent, j);
    }
    return out;
}

/// Same broadcast through the image path: reshape N_c x D to D x H1 x H1,
/// nearest-upsample 2x, flatten back. Must agree bit-exactly with
/// broadcast_to_fine.
inline Tensor broadcast_to_fine_via_upsample(const Tensor& transformed,
                                             const GridMap& grid) {
    if (transformed.dims[0] != grid.n_coarse())
        throw ShapeError("broadcast_to_fine: row count does not match coarse grid");
    const std::size_t d = transformed.dims[1];
    Tensor img({d, grid.h1, grid.h1});
    for (std::size_t i = 0; i < grid.n_coarse(); ++i)
        for (std::size_t j = 0; j < d; ++j)
            img.at(j, i / grid.h1, i % grid.h1) = transformed.at(i, j);
    Tensor up = nearest_upsample_2x(img);
    Tensor out({grid.n_fine(), d});
    for (std::size_t f = 0; f < grid.n_fine(); ++f)
        for (std::size_t j = 0; j < d; ++j)
            out.at(f, j) = up.at(j, f / grid.h2, f % grid.h2);
    return out;
}

/// Full reuse feature construction. With mask_unselected (the default) the
/// rows whose parent was not selected are zeroed; disabling it keeps the
/// upsample-everything behavior for ablation.
inline ReuseFeatures build_reuse_features(const TokenSeq& coarse_final,
                                          const ReuseMlp& mlp, const Selection& sel,
                                          const GridMap& grid,
                                          bool mask_unselected = true) {
    Tensor transformed = reuse_transform(coarse_final, mlp);
    ReuseFeatures feats;
    feats.grid = broadcast_to_fine(transformed, grid);
    std::vector<bool> parent_selected(grid.n_coarse(), false);
    for (std::size_t ci : sel.important) parent_selected[ci] = true;
    feats.mask.resize(grid.n_fine());
    for (std::size_t f = 0; f < grid.n_fine(); ++f) {
        feats.mask[f] = parent_selected[fine_to_coarse(f, grid)];
        if (mask_unselected && !feats.mask[f])
            for (std::size_t j = 0; j < feats.grid.dims[1]; ++j)
                feats.grid.at(f, j) = 0.0f;
    }
    return feats;
}

/// Residual fusion: fine tokens with a selected parent receive their reuse
/// row; the CLS slot receives zero; retained coarse tokens are untouched.
inline TokenSeq mask_and_fuse(TokenSeq fine_seq, const ReuseFeatures& feats,
                              const Selection& sel) {
    std::vector<bool> parent_selected(feats.mask.size() / 4, false);
    for (std::size_t ci : sel.important) {
        if (ci >= parent_selected.size())
            throw SelectionMismatch("mask_and_fuse: selection index out of range");
        parent_selected[ci] = true;
    }
    const std::size_t d = fine_seq.tokens.dims[1];
    GridMap grid(static_cast<std::size_t>(
        std::lround(std::sqrt(static_cast<double>(parent_selected.size())))));
    for (std::size_t t = 0; t < fine_seq.length(); ++t) {
        const Origin& o = fine_seq.origin[t];
        if (o.kind != Origin::Kind::Fine) continue;
        if (!parent_selected[fine_to_coarse(o.index, grid)])
            throw SelectionMismatch("mask_and_fuse: fine token with unselected parent");
        for (std::size_t j = 0; j < d; ++j)
            fine_seq.tokens.at(t, j) += feats.grid.at(o.index, j);
    }
    if (!fine_seq.tokens.all_finite())
        throw NumericError("mask_and_fuse: non-finite output");
    return fine_seq;
}

}  // namespace mambascope
