#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "mambascope/config.hpp"
#include "mambascope/vim.hpp"

namespace mambascope {

/// Coarse/fine grid sides; the fine grid is always twice the coarse one.
struct GridMap {
    std::size_t h1;  // coarse side
    std::size_t h2;  // fine side = 2 * h1

    explicit GridMap(std::size_t coarse_side) : h1(coarse_side), h2(2 * coarse_side) {}
    std::size_t n_coarse() const { return h1 * h1; }
    std::size_t n_fine() const { return h2 * h2; }
};

/// Flattened indices of the 2x2 fine patches under coarse patch i:
/// y = i mod h1; I1 = 4i - 2y; I2 = I1 + 1; I3 = I1 + h2; I4 = I3 + 1.
inline std::array<std::size_t, 4> coarse_to_fine(std::size_t i, const GridMap& grid) {
    if (i >= grid.n_coarse())
        throw IndexError("coarse_to_fine: index " + std::to_string(i) +
                         " out of range for h1=" + std::to_string(grid.h1));
    const std::size_t y = i % grid.h1;
    const std::size_t i1 = 4 * i - 2 * y;
    return {i1, i1 + 1, i1 + grid.h2, i1 + grid.h2 + 1};
}

/// Parent coarse index of a fine index (inverse of coarse_to_fine).
inline std::size_t fine_to_coarse(std::size_t f, const GridMap& grid) {
    if (f >= grid.n_fine()) throw IndexError("fine_to_coarse: index out of range");
    const std::size_t r = f / grid.h2, c = f % grid.h2;
    return (r / 2) * grid.h1 + c / 2;
}

/// N_f = 4 * ceil(alpha * N_c) + floor((1 - alpha) * N_c).
inline std::size_t fine_count(double alpha, std::size_t n_c) {
    const std::size_t k =
        static_cast<std::size_t>(std::ceil(alpha * static_cast<double>(n_c)));
    const std::size_t kept = static_cast<std::size_t>(
        std::floor((1.0 - alpha) * static_cast<double>(n_c)));
    return 4 * k + kept;
}

/// Top-k split of the coarse grid by importance. Both halves are re-sorted
/// ascending so spatial order survives the ranking.
struct Selection {
    std::vector<std::size_t> important;    // ascending, |important| = ceil(alpha*N_c)
    std::vector<std::size_t> unimportant;  // ascending complement
};

inline Selection select_informative(const Tensor& scores, double alpha) {
    if (scores.rank() != 1) throw ShapeError("select_informative expects a vector");
    const std::size_t n_c = scores.dims[0];
    const std::size_t k =
        static_cast<std::size_t>(std::ceil(alpha * static_cast<double>(n_c)));
    std::vector<std::size_t> policy = argsort_descending(scores.data);
    Selection sel;
    sel.important.assign(policy.begin(), policy.begin() + static_cast<std::ptrdiff_t>(k));
    sel.unimportant.assign(policy.begin() + static_cast<std::ptrdiff_t>(k), policy.end());
    std::sort(sel.important.begin(), sel.important.end());
    std::sort(sel.unimportant.begin(), sel.unimportant.end());
    return sel;
}

/// Raw grid index -> sequence position, skipping over the CLS slot.
inline std::size_t remap_cls(std::size_t g, std::size_t cls_index) {
    return g < cls_index ? g : g + 1;
}

/// Builds the mixed fine-stage input sequence: fine tokens of the selected
/// coarse patches (gathered in ascending fine-index order), the CLS token
/// placed per policy, and the unselected patches carried over as the
/// coarse stage's final-layer tokens.
inline TokenSeq assemble_fine_sequence(const Tensor& fine_tokens,
                                       const TokenSeq& coarse_final,
                                       const Selection& sel, const Tensor& cls,
                                       const GridMap& grid,
                                       OrderPolicy policy) {
    const std::size_t n_c = grid.n_coarse();
    if (sel.important.size() + sel.unimportant.size() != n_c)
        throw SelectionMismatch("selection does not cover the coarse grid");
    if (fine_tokens.dims[0] != grid.n_fine())
        throw SelectionMismatch("fine token matrix does not cover the fine grid");
    if (coarse_final.length() != n_c + 1)
        throw SelectionMismatch("coarse final sequence has wrong length");
    const std::size_t d = fine_tokens.dims[1];

    std::vector<std::size_t> fine_idx;
    fine_idx.reserve(4 * sel.important.size());
    for (std::size_t ci : sel.important)
        for (std::size_t f : coarse_to_fine(ci, grid)) fine_idx.push_back(f);
    std::sort(fine_idx.begin(), fine_idx.end());

    const std::size_t n_imp = fine_idx.size();  // N' = 4k
    const std::size_t n_unimp = sel.unimportant.size();
    const std::size_t total = n_imp + n_unimp + 1;

    TokenSeq seq;
    seq.tokens = Tensor({total, d});
    seq.origin.reserve(total);

    std::size_t row = 0;
    auto push_fine = [&](std::size_t f) {
        for (std::size_t j = 0; j < d; ++j) seq.tokens.at(row, j) = fine_tokens.at(f, j);
        seq.origin.push_back(Origin::fine(f));
        ++row;
    };
    auto push_coarse = [&](std::size_t ci) {
        const std::size_t src = remap_cls(ci, coarse_final.cls_index);
        for (std::size_t j = 0; j < d; ++j)
            seq.tokens.at(row, j) = coarse_final.tokens.at(src, j);
        seq.origin.push_back(Origin::coarse(ci));
        ++row;
    };
    auto push_cls = [&]() {
        for (std::size_t j = 0; j < d; ++j) seq.tokens.at(row, j) = cls.at(j);
        seq.origin.push_back(Origin::cls());
        seq.cls_index = row;
        ++row;
    };

    switch (policy) {
        case OrderPolicy::ClsMiddleOfImportant: {
            const std::size_t m = n_imp / 2;
            for (std::size_t i = 0; i < m; ++i) push_fine(fine_idx[i]);
            push_cls();
            for (std::size_t i = m; i < n_imp; ++i) push_fine(fine_idx[i]);
            for (std::size_t ci : sel.unimportant) push_coarse(ci);
            break;
        }
        case OrderPolicy::ClsBeforeImportant: {
            push_cls();
            for (std::size_t f : fine_idx) push_fine(f);
            for (std::size_t ci : sel.unimportant) push_coarse(ci);
            break;
        }
        case OrderPolicy::ClsAfterImportant: {
            for (std::size_t f : fine_idx) push_fine(f);
            push_cls();
            for (std::size_t ci : sel.unimportant) push_coarse(ci);
            break;
        }
        case OrderPolicy::UnimportantFirst: {
            for (std::size_t ci : sel.unimportant) push_coarse(ci);
            const std::size_t m = n_imp / 2;
            for (std::size_t i = 0; i < m; ++i) push_fine(fine_idx[i]);
            push_cls();
            for (std::size_t i = m; i < n_imp; ++i) push_fine(fine_idx[i]);
            break;
        }
    }
    return seq;
}

}  // namespace mambascope
