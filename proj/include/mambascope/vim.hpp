#pragma once

#include <utility>
#include <vector>

#include "mambascope/config.hpp"
#include "mambascope/ssm.hpp"
#include "mambascope/tensor.hpp"

namespace mambascope {

/// Per-token provenance within a sequence.
struct Origin {
    enum class Kind { CoarseKept, Fine, Cls };
    Kind kind;
    std::size_t index;  // coarse index for CoarseKept, fine index for Fine, unused for Cls

    static Origin coarse(std::size_t i) { return {Kind::CoarseKept, i}; }
    static Origin fine(std::size_t i) { return {Kind::Fine, i}; }
    static Origin cls() { return {Kind::Cls, 0}; }
};

/// Token matrix plus provenance and the CLS position.
struct TokenSeq {
    Tensor tokens;                // L x D
    std::vector<Origin> origin;   // length L, exactly one Cls
    std::size_t cls_index = 0;

    std::size_t length() const { return tokens.dims[0]; }
};

/// One direction of a bidirectional block: the selective SSM plus its gate.
struct DirectionParams {
    SsmParams ssm;
    Tensor gate_proj;  // D' x D'
};

struct BlockParams {
    Tensor in_proj;  // D x 2D' (value half, then gate half)
    DirectionParams fwd;
    DirectionParams bwd;
    Tensor out_proj;  // D' x D
};

struct ReuseMlp {
    Tensor w0, b0;  // D x D, D
    Tensor w1, b1;  // D x D, D
};

struct EncoderParams {
    Tensor patch_embed;  // (p2^2 * channels) x D, shared by both stages
    Tensor cls_token;    // D
    Tensor pos_coarse;   // (N_c + 1) x D, grid rows first, CLS row last
    Tensor pos_fine;     // (4 N_c + 1) x D, same layout
    std::vector<BlockParams> blocks;
    Tensor head_w;  // D x C
    Tensor head_b;  // C
    ReuseMlp reuse_mlp;
};

enum class Stage { Coarse, Fine };

/// Ungated per-direction SSM outputs of one layer, both in token order.
struct LayerActivations {
    Tensor y_fwd;  // L x D'
    Tensor y_bwd;  // L x D'
};

/// Splits the image into p x p patches in row-major order, flattens each
/// patch channel-major and projects it through the shared embedding matrix.
inline Tensor patch_embed_grid(const Tensor& image, const Tensor& embed, std::size_t p) {
    if (image.rank() != 3) throw ShapeError("patch_embed expects C x H x W");
    const std::size_t c = image.dims[0], h = image.dims[1], w = image.dims[2];
    if (h % p != 0 || w % p != 0)
        throw ShapeError("image " + image.shape_str() + " not divisible by patch " +
                         std::to_string(p));
    const std::size_t gh = h / p, gw = w / p;
    const std::size_t flat = c * p * p;
    if (embed.dims[0] != flat)
        throw ShapeError("patch_embed weight rows " + embed.shape_str() +
                         " do not match patch size " + std::to_string(flat));
    Tensor patches({gh * gw, flat});
    for (std::size_t gi = 0; gi < gh; ++gi)
        for (std::size_t gj = 0; gj < gw; ++gj) {
            const std::size_t row = gi * gw + gj;
            std::size_t k = 0;
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t pi = 0; pi < p; ++pi)
                    for (std::size_t pj = 0; pj < p; ++pj)
                        patches.at(row, k++) = image.at(ch, gi * p + pi, gj * p + pj);
        }
    return matmul(patches, embed);
}

inline Tensor patch_embed_fine(const Tensor& image, const EncoderParams& params,
                               const ModelConfig& cfg) {
    return patch_embed_grid(image, params.patch_embed, cfg.patch_fine);
}

/// Coarse patches are 2x2 mean-pooled down to fine patch size and pass
/// through the same embedding weights as the fine stage.
inline Tensor patch_embed_coarse(const Tensor& image, const EncoderParams& params,
                                 const ModelConfig& cfg) {
    if (image.dims[1] % cfg.patch_coarse != 0 || image.dims[2] % cfg.patch_coarse != 0)
        throw ShapeError("image " + image.shape_str() + " not divisible by patch " +
                         std::to_string(cfg.patch_coarse));
    Tensor pooled = mean_pool_2x2(image);
    return patch_embed_grid(pooled, params.patch_embed, cfg.patch_fine);
}

/// CLS goes at index floor(M/2); grid tokens keep their order and get
/// provenance tags from `make_origin(i)`.
template <typename OriginFn>
inline TokenSeq insert_cls_middle(const Tensor& tokens, const Tensor& cls,
                                  OriginFn make_origin) {
    const std::size_t m = tokens.dims[0];
    const std::size_t d = tokens.dims[1];
    const std::size_t mid = m / 2;
    TokenSeq seq;
    seq.tokens = Tensor({m + 1, d});
    seq.origin.reserve(m + 1);
    for (std::size_t i = 0; i < mid; ++i) {
        for (std::size_t j = 0; j < d; ++j) seq.tokens.at(i, j) = tokens.at(i, j);
        seq.origin.push_back(make_origin(i));
    }
    for (std::size_t j = 0; j < d; ++j) seq.tokens.at(mid, j) = cls.at(j);
    seq.origin.push_back(Origin::cls());
    for (std::size_t i = mid; i < m; ++i) {
        for (std::size_t j = 0; j < d; ++j) seq.tokens.at(i + 1, j) = tokens.at(i, j);
        seq.origin.push_back(make_origin(i));
    }
    seq.cls_index = mid;
    return seq;
}

inline TokenSeq insert_cls_middle(const Tensor& tokens, const Tensor& cls) {
    return insert_cls_middle(tokens, cls,
                             [](std::size_t i) { return Origin::coarse(i); });
}

/// One bidirectional block. Returns the residual output plus the ungated
/// per-direction SSM activations (backward re-aligned to token order), which
/// feed the importance scoring.
inline std::pair<Tensor, LayerActivations> vim_block(const Tensor& seq_in,
                                                     const BlockParams& params) {
    if (!seq_in.all_finite()) throw NumericError("vim_block: non-finite input");
    const std::size_t seq_len = seq_in.dims[0];
    const std::size_t d_inner = params.out_proj.dims[0];

    Tensor proj = matmul(seq_in, params.in_proj);  // L x 2D'
    Tensor value({seq_len, d_inner});
    Tensor gate_in({seq_len, d_inner});
    for (std::size_t t = 0; t < seq_len; ++t)
        for (std::size_t j = 0; j < d_inner; ++j) {
            value.at(t, j) = proj.at(t, j);
            gate_in.at(t, j) = proj.at(t, d_inner + j);
        }

    Tensor y_fwd = selective_scan(value, params.fwd.ssm);
    Tensor y_bwd = reverse_seq(selective_scan(reverse_seq(value), params.bwd.ssm));

    Tensor gate_fwd = matmul(gate_in, params.fwd.gate_proj);
    Tensor gate_bwd = matmul(gate_in, params.bwd.gate_proj);
    Tensor gated({seq_len, d_inner});
    for (std::size_t t = 0; t < seq_len; ++t)
        for (std::size_t j = 0; j < d_inner; ++j)
            gated.at(t, j) = static_cast<float>(
                y_fwd.at(t, j) * sigmoid(gate_fwd.at(t, j)) +
                y_bwd.at(t, j) * sigmoid(gate_bwd.at(t, j)));

    Tensor out = add(matmul(gated, params.out_proj), seq_in);
    if (!out.all_finite()) throw NumericError("vim_block: non-finite output");
    return {std::move(out), LayerActivations{std::move(y_fwd), std::move(y_bwd)}};
}

/// Positional row for a token: fine tokens index pos_fine, retained coarse
/// tokens index pos_coarse, CLS takes the last row of the current stage's
/// table. Keeps per-token spatial identity in mixed sequences.
inline void add_positional(TokenSeq& seq, const EncoderParams& params, Stage stage) {
    const Tensor& cls_table =
        (stage == Stage::Coarse) ? params.pos_coarse : params.pos_fine;
    const std::size_t d = seq.tokens.dims[1];
    for (std::size_t t = 0; t < seq.length(); ++t) {
        const Origin& o = seq.origin[t];
        const Tensor* table = nullptr;
        std::size_t row = 0;
        switch (o.kind) {
            case Origin::Kind::Cls:
                table = &cls_table;
                row = cls_table.dims[0] - 1;
                break;
            case Origin::Kind::CoarseKept:
                table = &params.pos_coarse;
                row = o.index;
                break;
            case Origin::Kind::Fine:
                table = &params.pos_fine;
                row = o.index;
                break;
        }
        for (std::size_t j = 0; j < d; ++j) seq.tokens.at(t, j) += table->at(row, j);
    }
}

/// Positional add followed by d blocks; records every layer's activations.
inline std::pair<TokenSeq, std::vector<LayerActivations>> encode(
    TokenSeq seq, const EncoderParams& params, Stage stage) {
    add_positional(seq, params, stage);
    std::vector<LayerActivations> acts;
    acts.reserve(params.blocks.size());
    for (const BlockParams& blk : params.blocks) {
        auto [out, layer_acts] = vim_block(seq.tokens, blk);
        seq.tokens = std::move(out);
        acts.push_back(std::move(layer_acts));
    }
    return {std::move(seq), std::move(acts)};
}

/// Classifier head F applied to the CLS row; caller softmaxes.
inline Tensor classify(const TokenSeq& final_seq, const EncoderParams& params) {
    if (final_seq.cls_index >= final_seq.length())
        throw IndexError("classify: cls_index out of range");
    Tensor cls_row = slice_rows(final_seq.tokens, final_seq.cls_index,
                                final_seq.cls_index + 1);
    Tensor logits2d = matmul(cls_row, params.head_w);
    Tensor logits({params.head_w.dims[1]});
    for (std::size_t c = 0; c < logits.dims[0]; ++c)
        logits.at(c) = logits2d.at(0, c) + params.head_b.at(c);
    return logits;
}

/// Seeded gaussian init (std 0.02, zero biases); A[d', n] = -(n + 1).
inline EncoderParams init_encoder(const ModelConfig& cfg, std::uint64_t seed) {
    SplitMix64 rng(seed);
    const std::size_t d = cfg.dim, di = cfg.dim_inner, n = cfg.state_dim;
    const float std_init = 0.02f;

    auto gauss = [&](std::vector<std::size_t> dims) {
        Tensor t(std::move(dims));
        fill_gaussian(t, rng, std_init);
        return t;
    };
    auto make_ssm = [&]() {
        SsmParams p;
        p.a = Tensor({di, n});
        for (std::size_t i = 0; i < di; ++i)
            for (std::size_t j = 0; j < n; ++j)
                p.a.at(i, j) = -static_cast<float>(j + 1);
        p.delta_proj = gauss({di, di});
        p.b_proj = gauss({di, n});
        p.c_proj = gauss({di, n});
        return p;
    };

    EncoderParams params;
    params.patch_embed = gauss({cfg.patch_fine * cfg.patch_fine * cfg.channels, d});
    params.cls_token = gauss({d});
    params.pos_coarse = gauss({cfg.n_coarse() + 1, d});
    params.pos_fine = gauss({cfg.n_fine_full() + 1, d});
    params.blocks.reserve(cfg.depth);
    for (std::size_t i = 0; i < cfg.depth; ++i) {
        BlockParams blk;
        blk.in_proj = gauss({d, 2 * di});
        blk.fwd = DirectionParams{make_ssm(), gauss({di, di})};
        blk.bwd = DirectionParams{make_ssm(), gauss({di, di})};
        blk.out_proj = gauss({di, d});
        params.blocks.push_back(std::move(blk));
    }
    params.head_w = gauss({d, cfg.classes});
    params.head_b = Tensor({cfg.classes});
    params.reuse_mlp.w0 = gauss({d, d});
    params.reuse_mlp.b0 = Tensor({d});
    params.reuse_mlp.w1 = gauss({d, d});
    params.reuse_mlp.b1 = Tensor({d});
    return params;
}

}  // namespace mambascope
