#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "mambascope/config.hpp"
#include "mambascope/vim.hpp"

namespace mambascope {

/// Per-layer raw scores and their EMA accumulator.
struct ImportanceState {
    double beta = 0.99;
    std::vector<std::size_t> layer_set;       // traversal order, shallow -> deep
    Tensor ema;                               // length L, valid after aggregate
    std::map<std::size_t, Tensor> per_layer;  // layer -> raw scores
};

/// Token importance over one layer's activations.
/// Default metric: S[t] = max_d softplus(y_hat[t, d]) with y_hat picked by
/// direction (mean re-aligns backward with forward). L2Norm and TopKMean are
/// ablation variants.
inline Tensor token_score(const Tensor& y_fwd, const Tensor& y_bwd,
                          ScoreDirection dir = ScoreDirection::Mean,
                          ScoreMetric metric = ScoreMetric::SoftplusMax,
                          std::size_t topk = 4) {
    if (y_fwd.dims != y_bwd.dims || y_fwd.rank() != 2)
        throw ShapeError("token_score: activation shape mismatch");
    const std::size_t seq_len = y_fwd.dims[0], d_inner = y_fwd.dims[1];
    Tensor scores({seq_len});
    std::vector<double> chan(d_inner);
    for (std::size_t t = 0; t < seq_len; ++t) {
        for (std::size_t d = 0; d < d_inner; ++d) {
            switch (dir) {
                case ScoreDirection::Forward: chan[d] = y_fwd.at(t, d); break;
                case ScoreDirection::Backward: chan[d] = y_bwd.at(t, d); break;
                case ScoreDirection::Mean:
                    chan[d] = 0.5 * (y_fwd.at(t, d) + y_bwd.at(t, d));
                    break;
            }
        }
        double s = 0.0;
        switch (metric) {
            case ScoreMetric::SoftplusMax: {
                s = softplus(chan[0]);
                for (std::size_t d = 1; d < d_inner; ++d)
                    s = std::max(s, softplus(chan[d]));
                break;
            }
            case ScoreMetric::L2Norm: {
                double acc = 0.0;
                for (double v : chan) acc += v * v;
                s = std::sqrt(acc);
                break;
            }
            case ScoreMetric::TopKMean: {
                std::vector<double> sp(d_inner);
                for (std::size_t d = 0; d < d_inner; ++d) sp[d] = softplus(chan[d]);
                std::size_t k = std::min(topk, d_inner);
                std::partial_sort(sp.begin(), sp.begin() + static_cast<std::ptrdiff_t>(k),
                                  sp.end(), std::greater<>());
                double acc = 0.0;
                for (std::size_t d = 0; d < k; ++d) acc += sp[d];
                s = acc / static_cast<double>(k);
                break;
            }
        }
        scores.at(t) = static_cast<float>(s);
    }
    return scores;
}

/// One EMA step: beta * prev + (1 - beta) * cur, elementwise.
inline Tensor ema_update(const Tensor& prev, const Tensor& cur, double beta) {
    if (prev.dims != cur.dims) throw ShapeError("ema_update shape mismatch");
    if (beta < 0.0 || beta > 1.0) throw DomainError("ema_update: beta outside [0, 1]");
    Tensor out(prev.dims);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = static_cast<float>(beta * prev.data[i] +
                                         (1.0 - beta) * cur.data[i]);
    return out;
}

/// Layer indices participating in aggregation: every second layer counting
/// down from the last, capped at `count`, returned shallow -> deep.
inline std::vector<std::size_t> default_layer_set(std::size_t depth, std::size_t count) {
    std::vector<std::size_t> layers;
    for (std::size_t step = 0; step * 2 < depth && layers.size() < count; ++step)
        layers.push_back(depth - 1 - step * 2);
    std::reverse(layers.begin(), layers.end());
    return layers;
}

/// Folds the per-layer scores with the EMA (initialized from the first
/// participating layer, not zero) and strips the CLS entry, yielding one
/// score per coarse patch in grid order.
inline Tensor aggregate(const std::vector<LayerActivations>& activations,
                        std::size_t cls_index, const ModelConfig& cfg,
                        ImportanceState* state = nullptr) {
    std::vector<std::size_t> layer_set = default_layer_set(cfg.depth, cfg.layer_count);
    if (layer_set.empty()) throw EmptyLayerSet("aggregate: empty layer set");

    Tensor ema;
    bool first = true;
    for (std::size_t layer : layer_set) {
        if (layer >= activations.size())
            throw IndexError("aggregate: layer index out of range");
        Tensor raw = token_score(activations[layer].y_fwd, activations[layer].y_bwd,
                                 cfg.score_direction, cfg.score_metric, cfg.score_topk);
        if (state) state->per_layer[layer] = raw;
        if (first) {
            ema = std::move(raw);
            first = false;
        } else {
            ema = ema_update(ema, raw, cfg.beta);
        }
    }
    if (state) {
        state->beta = cfg.beta;
        state->layer_set = layer_set;
        state->ema = ema;
    }

    // remove_cls: drop the CLS entry, keep grid order
    const std::size_t seq_len = ema.dims[0];
    if (cls_index >= seq_len) throw IndexError("aggregate: cls_index out of range");
    Tensor out({seq_len - 1});
    std::size_t w = 0;
    for (std::size_t t = 0; t < seq_len; ++t)
        if (t != cls_index) out.at(w++) = ema.at(t);
    return out;
}

}  // namespace mambascope
