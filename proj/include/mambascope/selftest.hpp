#pragma once

#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "mambascope/pipeline.hpp"
#include "mambascope/synthetic.hpp"
#include "mambascope/weights.hpp"

namespace mambascope {

struct SelfTestResult {
    std::string name;
    bool passed;
    std::string detail;
};

namespace selftest_detail {

inline ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.image_size = 32;
    cfg.channels = 3;
    cfg.patch_coarse = 16;
    cfg.patch_fine = 8;
    cfg.dim = 8;
    cfg.dim_inner = 12;
    cfg.state_dim = 2;
    cfg.depth = 3;
    cfg.classes = 4;
    cfg.alpha = 0.5;
    return cfg;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.data[i]) - b.data[i]));
    return m;
}

}  // namespace selftest_detail

/// Runs the independent-oracle property checks. Each entry is one named
/// check; a failure carries a short diagnostic.
inline std::vector<SelfTestResult> run_selftest() {
    using namespace selftest_detail;
    std::vector<SelfTestResult> results;
    auto check = [&](const std::string& name, bool ok, const std::string& detail = "") {
        results.push_back({name, ok, detail});
    };

    // matmul vs naive triple loop
    {
        SplitMix64 rng(11);
        bool ok = true;
        for (int rep = 0; rep < 20 && ok; ++rep) {
            std::size_t m = 1 + rng.next() % 8, k = 1 + rng.next() % 8,
                        n = 1 + rng.next() % 8;
            Tensor a({m, k}), b({k, n});
            fill_gaussian(a, rng);
            fill_gaussian(b, rng);
            Tensor c = matmul(a, b);
            for (std::size_t i = 0; i < m && ok; ++i)
                for (std::size_t j = 0; j < n && ok; ++j) {
                    double acc = 0.0;
                    for (std::size_t p = 0; p < k; ++p)
                        acc += static_cast<double>(a.at(i, p)) * b.at(p, j);
                    ok = (c.at(i, j) == static_cast<float>(acc));
                }
        }
        check("matmul_naive_oracle", ok);
    }

    // recurrence vs kernel form, frozen parameters
    {
        SplitMix64 rng(22);
        double worst = 0.0;
        for (int rep = 0; rep < 100; ++rep) {
            std::size_t seq_len = 1 + rng.next() % 32;
            std::size_t n_state = 1 + rng.next() % 4;
            std::vector<double> a(n_state), b(n_state), c(n_state), ab(n_state),
                bb(n_state);
            double delta = 0.05 + rng.uniform();
            for (std::size_t n = 0; n < n_state; ++n) {
                a[n] = -0.1 - 3.0 * rng.uniform();
                b[n] = rng.gaussian();
                c[n] = rng.gaussian();
                auto [abar, bbar] = discretize_zoh(a[n], b[n], delta);
                ab[n] = abar;
                bb[n] = bbar;
            }
            Tensor x({seq_len});
            fill_gaussian(x, rng);
            Tensor y_rec = frozen_scan(x, a, b, c, delta);
            Tensor y_ker = kernel_form(x, ab, bb, c);
            worst = std::max(worst, max_abs_diff(y_rec, y_ker));
        }
        check("scan_kernel_equivalence", worst < 1e-4,
              "max abs diff " + std::to_string(worst));
    }

    // coarse->fine mapping bijection, h1 in [1, 8]
    {
        bool ok = true;
        for (std::size_t h1 = 1; h1 <= 8 && ok; ++h1) {
            GridMap grid(h1);
            std::vector<int> hits(grid.n_fine(), 0);
            for (std::size_t i = 0; i < grid.n_coarse(); ++i) {
                for (std::size_t f : coarse_to_fine(i, grid)) {
                    // 2D coordinate oracle: (r, y) -> (2r, 2y) block
                    const std::size_t r = i / h1, y = i % h1;
                    const std::size_t fr = f / grid.h2, fc = f % grid.h2;
                    if (fr / 2 != r || fc / 2 != y) ok = false;
                    ++hits[f];
                }
            }
            for (int hcount : hits)
                if (hcount != 1) ok = false;
        }
        check("coarse_to_fine_bijection", ok);
    }

    // patch-count law
    {
        bool ok = true;
        for (std::size_t n_c : {1u, 4u, 9u, 16u, 49u})
            for (int ai = 0; ai <= 100; ++ai) {
                double alpha = ai / 100.0;
                std::size_t k = static_cast<std::size_t>(std::ceil(alpha * n_c));
                if (fine_count(alpha, n_c) != 4 * k + (n_c - k)) ok = false;
            }
        ok = ok && fine_count(0.8, 49) == 169 && fine_count(0.0, 49) == 49 &&
             fine_count(1.0, 49) == 196;
        check("patch_count_law", ok);
    }

    // reuse broadcast paths agree bit-exactly; masking leaves tokens untouched
    {
        SplitMix64 rng(33);
        bool ok = true;
        for (std::size_t h1 = 1; h1 <= 4 && ok; ++h1) {
            GridMap grid(h1);
            Tensor t({grid.n_coarse(), 5});
            fill_gaussian(t, rng);
            Tensor a = broadcast_to_fine(t, grid);
            Tensor b = broadcast_to_fine_via_upsample(t, grid);
            ok = (a.data == b.data);
        }
        check("broadcast_paths_bit_equal", ok);
    }

    // EMA fold: beta = 0 keeps the deepest layer; hand 3-layer fold
    {
        Tensor s1({2}, {1.0f, 4.0f});
        Tensor s2({2}, {2.0f, 3.0f});
        Tensor s3({2}, {8.0f, 0.0f});
        double beta = 0.5;
        Tensor e = ema_update(ema_update(s1, s2, beta), s3, beta);
        bool ok = std::abs(e.at(0) - (0.5 * (0.5 * 1 + 0.5 * 2) + 0.5 * 8)) < 1e-6 &&
                  std::abs(e.at(1) - (0.5 * (0.5 * 4 + 0.5 * 3) + 0.5 * 0)) < 1e-6;
        Tensor z = ema_update(s1, s3, 0.0);
        ok = ok && z.data == s3.data;
        check("ema_hand_fold", ok);
    }

    // loss hand case
    {
        Tensor p({2}, {0.5f, 0.5f});
        Tensor q({2}, {0.9f, 0.1f});
        double v = loss(p, q, 0);
        check("loss_hand_case", std::abs(v - 1.0612) < 1e-3,
              "got " + std::to_string(v));
    }

    // save/load roundtrip bit-exactness
    {
        ModelConfig cfg = tiny_config();
        EncoderParams params = init_encoder(cfg, 99);
        std::stringstream buf;
        write_weight_map(to_weight_map(params), buf);
        EncoderParams back = from_weight_map(read_weight_map(buf), cfg);
        bool ok = back.patch_embed.data == params.patch_embed.data &&
                  back.pos_fine.data == params.pos_fine.data &&
                  back.blocks.size() == params.blocks.size();
        for (std::size_t i = 0; ok && i < params.blocks.size(); ++i)
            ok = back.blocks[i].in_proj.data == params.blocks[i].in_proj.data &&
                 back.blocks[i].fwd.ssm.a.data == params.blocks[i].fwd.ssm.a.data;
        check("weight_roundtrip_bit_exact", ok);
    }

    // alpha = 1 fine stage with zeroed reuse equals a plain full-fine pass
    {
        ModelConfig cfg = tiny_config();
        Model model{cfg, init_encoder(cfg, 7)};
        model.params.reuse_mlp.w0 = Tensor({cfg.dim, cfg.dim});
        model.params.reuse_mlp.w1 = Tensor({cfg.dim, cfg.dim});
        auto data = gen_synthetic(cfg, 1, 5);
        CoarseResult coarse = coarse_stage(data[0].image, model);
        Tensor p = fine_stage(data[0].image, coarse, model, 1.0);

        Tensor fine_tokens = patch_embed_fine(data[0].image, model.params, cfg);
        TokenSeq seq = insert_cls_middle(
            fine_tokens, model.params.cls_token,
            [](std::size_t i) { return Origin::fine(i); });
        auto [final_seq, acts] = encode(std::move(seq), model.params, Stage::Fine);
        Tensor p_direct = softmax(classify(final_seq, model.params));
        double d = max_abs_diff(p, p_direct);
        check("alpha1_full_fine_oracle", d < 1e-5, "max abs diff " + std::to_string(d));
    }

    // routing monotone in eta on a small batch
    {
        ModelConfig cfg = tiny_config();
        Model model{cfg, init_encoder(cfg, 3)};
        auto data = gen_synthetic(cfg, 16, 9);
        std::size_t prev_accepted = data.size() + 1;
        bool ok = true;
        for (double eta : {0.0, 0.5, 1.0}) {
            std::size_t accepted = 0;
            for (const auto& sample : data) {
                RoutingOutcome out = infer(sample.image, model, eta, cfg.alpha);
                if (out.stage == RoutingOutcome::StageTaken::CoarseAccepted) ++accepted;
            }
            if (accepted > prev_accepted) ok = false;
            prev_accepted = accepted;
            if (eta == 0.0 && accepted != data.size()) ok = false;
            if (eta == 1.0 && accepted != 0) ok = false;
        }
        check("routing_monotone_in_eta", ok);
    }

    return results;
}

}  // namespace mambascope
