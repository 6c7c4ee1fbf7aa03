#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "mambascope/config.hpp"
#include "mambascope/flops.hpp"
#include "mambascope/geometry.hpp"
#include "mambascope/reuse.hpp"
#include "mambascope/scoring.hpp"
#include "mambascope/vim.hpp"

namespace mambascope {

/// Model = config + one shared parameter set. Coarse and fine stages run on
/// the same EncoderParams object.
struct Model {
    ModelConfig config;
    EncoderParams params;
};

enum class RouteDecision { Accept, Refine };

struct RoutingOutcome {
    enum class StageTaken { CoarseAccepted, Refined };
    StageTaken stage;
    Tensor q;                      // coarse probabilities
    std::optional<Tensor> p;       // fine probabilities when refined
    std::size_t predicted;         // final class
    double confidence;             // coarse q at its argmax
    std::optional<Selection> selected;
    std::uint64_t flops_used;
};

struct CoarseResult {
    Tensor q;  // softmaxed coarse probabilities
    std::vector<LayerActivations> activations;
    TokenSeq z_c;  // final-layer coarse tokens, length N_c + 1
};

inline std::size_t argmax(const Tensor& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.dims[0]; ++i)
        if (v.at(i) > v.at(best)) best = i;
    return best;
}

/// Coarse pass: embed large patches, CLS in the middle, encode, classify.
inline CoarseResult coarse_stage(const Tensor& image, const Model& model) {
    const ModelConfig& cfg = model.config;
    Tensor tokens = patch_embed_coarse(image, model.params, cfg);
    TokenSeq seq = insert_cls_middle(tokens, model.params.cls_token);
    auto [final_seq, acts] = encode(std::move(seq), model.params, Stage::Coarse);
    Tensor q = softmax(classify(final_seq, model.params));
    return {std::move(q), std::move(acts), std::move(final_seq)};
}

/// Accept iff max(q) >= eta (boundary inclusive).
inline RouteDecision route(const Tensor& q, double eta) {
    if (eta < 0.0 || eta > 1.0) throw DomainError("route: eta outside [0, 1]");
    return q.at(argmax(q)) >= eta ? RouteDecision::Accept : RouteDecision::Refine;
}

/// Fine pass: score, select, assemble the mixed sequence, fuse reused coarse
/// features, encode with the same parameters, classify.
inline Tensor fine_stage(const Tensor& image, const CoarseResult& coarse,
                         const Model& model, double alpha,
                         Selection* out_sel = nullptr) {
    const ModelConfig& cfg = model.config;
    GridMap grid(cfg.grid_coarse());

    Tensor scores = aggregate(coarse.activations, coarse.z_c.cls_index, cfg);
    Selection sel = select_informative(scores, alpha);
    if (out_sel) *out_sel = sel;
    if (sel.important.empty())
        // alpha = 0 short-circuit: no patch is refined, the fine stage
        // degenerates to the coarse prediction
        return coarse.q;

    Tensor fine_tokens = patch_embed_fine(image, model.params, cfg);
    TokenSeq seq = assemble_fine_sequence(fine_tokens, coarse.z_c, sel,
                                          model.params.cls_token, grid,
                                          cfg.order_policy);
    ReuseFeatures feats = build_reuse_features(coarse.z_c, model.params.reuse_mlp, sel,
                                               grid, cfg.reuse_mask_unselected);
    seq = mask_and_fuse(std::move(seq), feats, sel);
    auto [final_seq, acts] = encode(std::move(seq), model.params, Stage::Fine);
    return softmax(classify(final_seq, model.params));
}

/// End-to-end adaptive inference for one image.
inline RoutingOutcome infer(const Tensor& image, const Model& model, double eta,
                            double alpha) {
    const ModelConfig& cfg = model.config;
    CoarseResult coarse = coarse_stage(image, model);
    const std::size_t coarse_pred = argmax(coarse.q);
    const double confidence = coarse.q.at(coarse_pred);

    RoutingOutcome out;
    out.q = coarse.q;
    out.confidence = confidence;
    out.flops_used = stage_flops(cfg, cfg.n_coarse() + 1, Stage::Coarse);

    if (route(coarse.q, eta) == RouteDecision::Accept) {
        out.stage = RoutingOutcome::StageTaken::CoarseAccepted;
        out.predicted = coarse_pred;
        return out;
    }

    Selection sel;
    Tensor p = fine_stage(image, coarse, model, alpha, &sel);
    out.stage = RoutingOutcome::StageTaken::Refined;
    out.p = p;
    out.selected = sel;
    out.predicted = argmax(p);
    if (!sel.important.empty()) {
        const std::size_t n_f = fine_count(alpha, cfg.n_coarse());
        out.flops_used += stage_flops(cfg, n_f + 1, Stage::Fine);
    }
    return out;
}

/// Evaluation loss: CE(p, label) + KL(q || p), with p clamped at 1e-12 and
/// 0 * ln 0 treated as 0.
inline double loss(const Tensor& p, const Tensor& q, std::size_t label) {
    if (p.dims != q.dims || p.rank() != 1)
        throw ShapeError("loss: p and q must be equal-length vectors");
    if (label >= p.dims[0]) throw IndexError("loss: label out of range");
    const double clamp = 1e-12;
    double ce = -std::log(std::max(static_cast<double>(p.at(label)), clamp));
    double kl = 0.0;
    for (std::size_t c = 0; c < p.dims[0]; ++c) {
        const double qc = q.at(c);
        if (qc <= 0.0) continue;
        const double pc = std::max(static_cast<double>(p.at(c)), clamp);
        kl += qc * std::log(qc / pc);
    }
    return ce + kl;
}

}  // namespace mambascope
