#include "catch2/catch_amalgamated.hpp"

#include <cmath>
#include <vector>

#include "mambascope/pipeline.hpp"
#include "mambascope/synthetic.hpp"

using namespace mambascope;

namespace {

ModelConfig tiny_cfg() {
    ModelConfig cfg;
    cfg.image_size = 32;
    cfg.channels = 3;
    cfg.patch_coarse = 16;
    cfg.patch_fine = 8;
    cfg.dim = 4;
    cfg.dim_inner = 6;
    cfg.state_dim = 2;
    cfg.depth = 2;
    cfg.classes = 3;
    cfg.alpha = 0.5;
    return cfg;
}

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Tensor& t) {
    Mat m(t.dims[0], std::vector<double>(t.dims[1]));
    for (std::size_t i = 0; i < t.dims[0]; ++i)
        for (std::size_t j = 0; j < t.dims[1]; ++j) m[i][j] = t.at(i, j);
    return m;
}

// Straight-line re-derivation of the coarse pass for the tiny config,
// written with plain loops and no calls into the library's forward path.
std::vector<double> oracle_coarse_probs(const Tensor& image, const ModelConfig& cfg,
                                        const EncoderParams& p) {
    const std::size_t d = cfg.dim, di = cfg.dim_inner, ns = cfg.state_dim;
    const std::size_t h1 = cfg.grid_coarse();
    const std::size_t n_c = h1 * h1;
    const std::size_t p2 = cfg.patch_fine;

    // coarse tokens: 2x2 mean pool each 16px patch to 8px, flatten
    // channel-major, project
    Mat tokens(n_c, std::vector<double>(d, 0.0));
    for (std::size_t gi = 0; gi < h1; ++gi)
        for (std::size_t gj = 0; gj < h1; ++gj) {
            std::vector<double> flat;
            flat.reserve(cfg.channels * p2 * p2);
            for (std::size_t ch = 0; ch < cfg.channels; ++ch)
                for (std::size_t pi = 0; pi < p2; ++pi)
                    for (std::size_t pj = 0; pj < p2; ++pj) {
                        std::size_t r = gi * cfg.patch_coarse + 2 * pi;
                        std::size_t c = gj * cfg.patch_coarse + 2 * pj;
                        double pool = 0.25 * (static_cast<double>(image.at(ch, r, c)) +
                                              image.at(ch, r, c + 1) +
                                              image.at(ch, r + 1, c) +
                                              image.at(ch, r + 1, c + 1));
                        flat.push_back(static_cast<float>(pool));
                    }
            for (std::size_t j = 0; j < d; ++j) {
                double acc = 0.0;
                for (std::size_t k = 0; k < flat.size(); ++k)
                    acc += flat[k] * static_cast<double>(p.patch_embed.at(k, j));
                tokens[gi * h1 + gj][j] = static_cast<float>(acc);
            }
        }

    // CLS in the middle, positional add (grid rows, CLS row last)
    const std::size_t mid = n_c / 2;
    const std::size_t seq_len = n_c + 1;
    Mat seq(seq_len, std::vector<double>(d));
    for (std::size_t i = 0; i < mid; ++i) seq[i] = tokens[i];
    for (std::size_t j = 0; j < d; ++j) seq[mid][j] = p.cls_token.at(j);
    for (std::size_t i = mid; i < n_c; ++i) seq[i + 1] = tokens[i];
    for (std::size_t t = 0; t < seq_len; ++t) {
        std::size_t row = (t == mid) ? n_c : (t < mid ? t : t - 1);
        for (std::size_t j = 0; j < d; ++j)
            seq[t][j] = static_cast<float>(seq[t][j] + p.pos_coarse.at(row, j));
    }

    // d bidirectional blocks
    for (const BlockParams& blk : p.blocks) {
        Mat value(seq_len, std::vector<double>(di)), gate_in(seq_len,
                                                             std::vector<double>(di));
        for (std::size_t t = 0; t < seq_len; ++t)
            for (std::size_t j = 0; j < 2 * di; ++j) {
                double acc = 0.0;
                for (std::size_t q = 0; q < d; ++q)
                    acc += seq[t][q] * static_cast<double>(blk.in_proj.at(q, j));
                if (j < di)
                    value[t][j] = static_cast<float>(acc);
                else
                    gate_in[t][j - di] = static_cast<float>(acc);
            }

        auto run_dir = [&](const SsmParams& sp, bool backward) {
            Mat y(seq_len, std::vector<double>(di, 0.0));
            for (std::size_t j = 0; j < di; ++j) {
                std::vector<double> h(ns, 0.0);
                for (std::size_t step = 0; step < seq_len; ++step) {
                    std::size_t t = backward ? seq_len - 1 - step : step;
                    double draw = 0.0;
                    std::vector<double> bt(ns, 0.0), ct(ns, 0.0);
                    for (std::size_t q = 0; q < di; ++q) {
                        draw += value[t][q] * static_cast<double>(sp.delta_proj.at(q, j));
                        for (std::size_t n = 0; n < ns; ++n) {
                            bt[n] += value[t][q] * static_cast<double>(sp.b_proj.at(q, n));
                            ct[n] += value[t][q] * static_cast<double>(sp.c_proj.at(q, n));
                        }
                    }
                    double delta = std::log1p(std::exp(static_cast<float>(draw)));
                    double acc = 0.0;
                    for (std::size_t n = 0; n < ns; ++n) {
                        double a = sp.a.at(j, n);
                        double a_bar = std::exp(delta * a);
                        double b_bar = std::abs(delta * a) >= 1e-6
                                           ? (a_bar - 1.0) / a *
                                                 static_cast<float>(bt[n])
                                           : delta * static_cast<float>(bt[n]) *
                                                 (1.0 + delta * a * 0.5);
                        h[n] = a_bar * h[n] + b_bar * value[t][j];
                        acc += static_cast<double>(static_cast<float>(ct[n])) * h[n];
                    }
                    y[t][j] = static_cast<float>(acc);
                }
            }
            return y;
        };
        Mat y_f = run_dir(blk.fwd.ssm, false);
        Mat y_b = run_dir(blk.bwd.ssm, true);

        Mat next(seq_len, std::vector<double>(d));
        for (std::size_t t = 0; t < seq_len; ++t) {
            std::vector<double> gated(di);
            for (std::size_t j = 0; j < di; ++j) {
                double gf = 0.0, gb = 0.0;
                for (std::size_t q = 0; q < di; ++q) {
                    gf += gate_in[t][q] * static_cast<double>(blk.fwd.gate_proj.at(q, j));
                    gb += gate_in[t][q] * static_cast<double>(blk.bwd.gate_proj.at(q, j));
                }
                gf = static_cast<float>(gf);
                gb = static_cast<float>(gb);
                gated[j] = static_cast<float>(y_f[t][j] / (1.0 + std::exp(-gf)) +
                                              y_b[t][j] / (1.0 + std::exp(-gb)));
            }
            for (std::size_t q = 0; q < d; ++q) {
                double acc = 0.0;
                for (std::size_t j = 0; j < di; ++j)
                    acc += gated[j] * static_cast<double>(blk.out_proj.at(j, q));
                next[t][q] = static_cast<float>(static_cast<float>(acc) + seq[t][q]);
            }
        }
        seq = std::move(next);
    }

    // head on CLS, softmax
    std::vector<double> logits(cfg.classes);
    for (std::size_t c = 0; c < cfg.classes; ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j)
            acc += seq[mid][j] * static_cast<double>(p.head_w.at(j, c));
        logits[c] = static_cast<float>(acc) + p.head_b.at(c);
    }
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double sum = 0.0;
    std::vector<double> probs(cfg.classes);
    for (std::size_t c = 0; c < cfg.classes; ++c) {
        probs[c] = std::exp(logits[c] - mx);
        sum += probs[c];
    }
    for (double& v : probs) v /= sum;
    return probs;
}

}  // namespace

TEST_CASE("coarse_stage basics") {
    ModelConfig cfg = tiny_cfg();
    Model model{cfg, init_encoder(cfg, 1)};
    auto data = gen_synthetic(cfg, 1, 2);

    SECTION("zero-weight model gives uniform probabilities") {
        Model zero = model;
        zero.params.head_w = Tensor({cfg.dim, cfg.classes});
        zero.params.head_b = Tensor({cfg.classes});
        CoarseResult res = coarse_stage(data[0].image, zero);
        for (std::size_t c = 0; c < cfg.classes; ++c)
            CHECK(res.q.at(c) == Catch::Approx(1.0 / cfg.classes));
    }

    SECTION("z_c has N_c + 1 tokens and activations cover every layer") {
        CoarseResult res = coarse_stage(data[0].image, model);
        CHECK(res.z_c.length() == cfg.n_coarse() + 1);
        CHECK(res.activations.size() == cfg.depth);
    }
}

TEST_CASE("coarse_stage matches the straight-line oracle") {
    ModelConfig cfg = tiny_cfg();
    Model model{cfg, init_encoder(cfg, 21)};
    auto data = gen_synthetic(cfg, 3, 22);
    for (const auto& sample : data) {
        CoarseResult res = coarse_stage(sample.image, model);
        auto probs = oracle_coarse_probs(sample.image, cfg, model.params);
        for (std::size_t c = 0; c < cfg.classes; ++c)
            REQUIRE(res.q.at(c) == Catch::Approx(probs[c]).margin(1e-5));
    }
}

TEST_CASE("route") {
    Tensor q({2}, {0.6f, 0.4f});
    CHECK(route(q, 0.0) == RouteDecision::Accept);
    CHECK(route(q, 0.6) == RouteDecision::Accept);  // boundary inclusive
    CHECK(route(q, 0.61) == RouteDecision::Refine);
    CHECK(route(q, 1.0) == RouteDecision::Refine);
    CHECK_THROWS_AS(route(q, 1.5), DomainError);
}

TEST_CASE("fine_stage") {
    ModelConfig cfg = tiny_cfg();
    Model model{cfg, init_encoder(cfg, 31)};
    auto data = gen_synthetic(cfg, 1, 32);
    CoarseResult coarse = coarse_stage(data[0].image, model);

    SECTION("alpha = 1 with zeroed reuse equals a plain full-fine pass") {
        Model zero_reuse = model;
        zero_reuse.params.reuse_mlp.w0 = Tensor({cfg.dim, cfg.dim});
        zero_reuse.params.reuse_mlp.w1 = Tensor({cfg.dim, cfg.dim});
        CoarseResult coarse2 = coarse_stage(data[0].image, zero_reuse);
        Tensor p = fine_stage(data[0].image, coarse2, zero_reuse, 1.0);

        Tensor fine_tokens = patch_embed_fine(data[0].image, zero_reuse.params, cfg);
        TokenSeq seq = insert_cls_middle(
            fine_tokens, zero_reuse.params.cls_token,
            [](std::size_t i) { return Origin::fine(i); });
        auto [final_seq, acts] = encode(std::move(seq), zero_reuse.params, Stage::Fine);
        Tensor direct = softmax(classify(final_seq, zero_reuse.params));
        for (std::size_t c = 0; c < cfg.classes; ++c)
            CHECK(p.at(c) == Catch::Approx(direct.at(c)).margin(1e-5));
    }

    SECTION("alpha = 0 short-circuits to the coarse prediction") {
        Tensor p = fine_stage(data[0].image, coarse, model, 0.0);
        CHECK(p.data == coarse.q.data);
    }

    SECTION("deterministic across runs") {
        Tensor p1 = fine_stage(data[0].image, coarse, model, cfg.alpha);
        Tensor p2 = fine_stage(data[0].image, coarse, model, cfg.alpha);
        CHECK(p1.data == p2.data);
    }
}

TEST_CASE("infer flops accounting and monotone routing") {
    ModelConfig cfg = tiny_cfg();
    Model model{cfg, init_encoder(cfg, 41)};
    auto data = gen_synthetic(cfg, 24, 42);

    const std::uint64_t coarse_cost = stage_flops(cfg, cfg.n_coarse() + 1, Stage::Coarse);
    const std::uint64_t fine_cost =
        stage_flops(cfg, fine_count(cfg.alpha, cfg.n_coarse()) + 1, Stage::Fine);

    std::size_t prev_refined = 0;
    double prev_mean = -1.0;
    for (double eta : {0.0, 0.5, 1.0}) {
        std::size_t refined = 0;
        std::vector<std::uint64_t> flops;
        for (const auto& sample : data) {
            RoutingOutcome out = infer(sample.image, model, eta, cfg.alpha);
            // routing partition: exactly one stage, consistent fields
            if (out.stage == RoutingOutcome::StageTaken::CoarseAccepted) {
                REQUIRE(!out.p.has_value());
                REQUIRE(out.confidence >= eta);
                REQUIRE(out.flops_used == coarse_cost);
            } else {
                ++refined;
                REQUIRE(out.p.has_value());
                REQUIRE(out.flops_used == coarse_cost + fine_cost);
            }
        }
        if (eta == 0.0) CHECK(refined == 0);
        if (eta == 1.0) CHECK(refined == data.size());
        REQUIRE(refined >= prev_refined);
        prev_refined = refined;

        double mean = static_cast<double>(coarse_cost) +
                      static_cast<double>(fine_cost) * refined / data.size();
        REQUIRE(mean >= prev_mean);
        prev_mean = mean;
    }
}

TEST_CASE("threshold monotonicity: refined sets nest") {
    ModelConfig cfg = tiny_cfg();
    Model model{cfg, init_encoder(cfg, 51)};
    auto data = gen_synthetic(cfg, 16, 52);
    std::vector<bool> refined_lo, refined_hi;
    for (const auto& sample : data) {
        refined_lo.push_back(infer(sample.image, model, 0.4, cfg.alpha).stage ==
                             RoutingOutcome::StageTaken::Refined);
        refined_hi.push_back(infer(sample.image, model, 0.8, cfg.alpha).stage ==
                             RoutingOutcome::StageTaken::Refined);
    }
    for (std::size_t i = 0; i < data.size(); ++i)
        if (refined_lo[i]) REQUIRE(refined_hi[i]);
}

TEST_CASE("loss") {
    SECTION("one-hot p at the label with q = p gives zero") {
        Tensor p({3}, {1.0f, 0.0f, 0.0f});
        CHECK(loss(p, p, 0) == Catch::Approx(0.0).margin(1e-9));
    }
    SECTION("q = p reduces to cross-entropy") {
        Tensor p({2}, {0.7f, 0.3f});
        CHECK(loss(p, p, 1) == Catch::Approx(-std::log(0.3)).margin(1e-6));
    }
    SECTION("hand case") {
        Tensor p({2}, {0.5f, 0.5f});
        Tensor q({2}, {0.9f, 0.1f});
        CHECK(loss(p, q, 0) == Catch::Approx(1.0612).margin(1e-3));
    }
    SECTION("KL term is non-negative over random distribution pairs") {
        SplitMix64 rng(61);
        for (int rep = 0; rep < 1000; ++rep) {
            std::size_t n = 2 + rng.next() % 6;
            Tensor p({n}), q({n});
            fill_uniform(p, rng, 0.01f, 1.0f);
            fill_uniform(q, rng, 0.01f, 1.0f);
            float ps = 0, qs = 0;
            for (float v : p.data) ps += v;
            for (float v : q.data) qs += v;
            for (float& v : p.data) v /= ps;
            for (float& v : q.data) v /= qs;
            std::size_t label = rng.next() % n;
            double total = loss(p, q, label);
            double ce = -std::log(p.at(label));
            REQUIRE(total >= ce - 1e-7);
        }
    }
}

TEST_CASE("coarse and fine stages share the same parameter object") {
    ModelConfig cfg = tiny_cfg();
    Model model{cfg, init_encoder(cfg, 71)};
    auto data = gen_synthetic(cfg, 1, 72);
    // both stages read model.params; scaling the shared head scales both
    CoarseResult c1 = coarse_stage(data[0].image, model);
    Tensor p1 = fine_stage(data[0].image, c1, model, 1.0);
    model.params.head_w.at(0, 0) += 0.5f;
    CoarseResult c2 = coarse_stage(data[0].image, model);
    Tensor p2 = fine_stage(data[0].image, c2, model, 1.0);
    CHECK(c1.q.data != c2.q.data);
    CHECK(p1.data != p2.data);
}
