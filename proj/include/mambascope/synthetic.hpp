#pragma once

#include <cstdint>
#include <vector>

#include "mambascope/config.hpp"
#include "mambascope/rng.hpp"
#include "mambascope/tensor.hpp"

namespace mambascope {

struct LabeledImage {
    Tensor image;  // C x H x W
    std::size_t label;
};

/// Synthetic classification data. Class c places a high-frequency
/// checkerboard in the c-th coarse cell; everything else is a smooth
/// gradient with a per-sample random phase. The checker amplitude varies
/// per sample (drawn from [0.25, 1] x amplitude) so some samples are
/// separable at coarse resolution and others only at fine resolution.
inline std::vector<LabeledImage> gen_synthetic(const ModelConfig& cfg,
                                               std::size_t count, std::uint64_t seed,
                                               double amplitude = 1.0) {
    if (cfg.classes > 16) throw ConfigError("gen_synthetic supports at most 16 classes");
    if (cfg.classes > cfg.n_coarse())
        throw ConfigError("gen_synthetic needs classes <= coarse cell count");
    SplitMix64 rng(seed);
    const std::size_t c = cfg.channels, h = cfg.image_size, w = cfg.image_size;
    const std::size_t cell = cfg.patch_coarse;
    const std::size_t cells_per_row = cfg.grid_coarse();

    std::vector<LabeledImage> out;
    out.reserve(count);
    for (std::size_t s = 0; s < count; ++s) {
        const std::size_t label = rng.next() % cfg.classes;
        const double phase = rng.uniform();
        const double amp = amplitude * (0.25 + 0.75 * rng.uniform());
        const std::size_t cell_r = label / cells_per_row;
        const std::size_t cell_c = label % cells_per_row;

        Tensor img({c, h, w});
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < h; ++i)
                for (std::size_t j = 0; j < w; ++j) {
                    double v = phase + static_cast<double>(i + j) /
                                           static_cast<double>(h + w);
                    if (i / cell == cell_r && j / cell == cell_c)
                        v += ((i + j) % 2 == 0 ? amp : -amp);
                    img.at(ch, i, j) = static_cast<float>(v);
                }
        out.push_back({std::move(img), label});
    }
    return out;
}

}  // namespace mambascope
