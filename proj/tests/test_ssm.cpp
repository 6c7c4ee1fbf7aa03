#include "catch2/catch_amalgamated.hpp"

#include <cmath>

#include "mambascope/ssm.hpp"

using namespace mambascope;

TEST_CASE("discretize_zoh") {
    SECTION("singular limit a = 0 gives b_bar = delta * b") {
        auto [a_bar, b_bar] = discretize_zoh(0.0, 1.0, 0.5);
        CHECK(a_bar == Catch::Approx(1.0));
        CHECK(b_bar == Catch::Approx(0.5));
    }
    SECTION("hand case a = -1, delta = ln 2") {
        auto [a_bar, b_bar] = discretize_zoh(-1.0, 1.0, std::log(2.0));
        CHECK(a_bar == Catch::Approx(0.5));
        CHECK(b_bar == Catch::Approx(0.5));
    }
    SECTION("zero input gain") {
        auto [a_bar, b_bar] = discretize_zoh(-1.0, 0.0, 0.37);
        (void)a_bar;
        CHECK(b_bar == 0.0);
    }
    SECTION("delta must be positive") {
        CHECK_THROWS_AS(discretize_zoh(-1.0, 1.0, 0.0), DomainError);
        CHECK_THROWS_AS(discretize_zoh(-1.0, 1.0, -0.1), DomainError);
    }
    SECTION("series branch is continuous across the threshold") {
        auto [a1, b1] = discretize_zoh(-0.9999e-6, 1.0, 1.0);
        auto [a2, b2] = discretize_zoh(-1.0001e-6, 1.0, 1.0);
        (void)a1;
        (void)a2;
        CHECK(b1 == Catch::Approx(b2).epsilon(1e-6));
    }
}

namespace {

SsmParams make_params(std::size_t d_inner, std::size_t n_state, SplitMix64& rng) {
    SsmParams p;
    p.a = Tensor({d_inner, n_state});
    for (std::size_t i = 0; i < d_inner; ++i)
        for (std::size_t j = 0; j < n_state; ++j)
            p.a.at(i, j) = -static_cast<float>(j + 1);
    p.delta_proj = Tensor({d_inner, d_inner});
    p.b_proj = Tensor({d_inner, n_state});
    p.c_proj = Tensor({d_inner, n_state});
    fill_gaussian(p.delta_proj, rng, 0.2f);
    fill_gaussian(p.b_proj, rng, 0.5f);
    fill_gaussian(p.c_proj, rng, 0.5f);
    return p;
}

}  // namespace

TEST_CASE("selective_scan single step: y1 = <C1, B1_bar> * x1") {
    SplitMix64 rng(5);
    std::size_t d_inner = 3, n_state = 2;
    SsmParams p = make_params(d_inner, n_state, rng);
    Tensor x({1, d_inner});
    fill_gaussian(x, rng);
    Tensor y = selective_scan(x, p);

    Tensor delta_raw = matmul(x, p.delta_proj);
    Tensor b_tok = matmul(x, p.b_proj);
    Tensor c_tok = matmul(x, p.c_proj);
    for (std::size_t d = 0; d < d_inner; ++d) {
        double delta = softplus(delta_raw.at(0, d));
        double acc = 0.0;
        for (std::size_t n = 0; n < n_state; ++n) {
            auto [a_bar, b_bar] = discretize_zoh(p.a.at(d, n), b_tok.at(0, n), delta);
            (void)a_bar;
            acc += static_cast<double>(c_tok.at(0, n)) * b_bar * x.at(0, d);
        }
        CHECK(y.at(0, d) == Catch::Approx(acc).margin(1e-6));
    }
}

TEST_CASE("selective_scan of zero input is zero") {
    SplitMix64 rng(6);
    SsmParams p = make_params(4, 3, rng);
    Tensor x({5, 4});
    Tensor y = selective_scan(x, p);
    for (float v : y.data) CHECK(v == 0.0f);
}

TEST_CASE("selective_scan matches scalar recurrence oracle (L=3, D'=1, N=1)") {
    SsmParams p;
    p.a = Tensor({1, 1}, {-0.5f});
    p.delta_proj = Tensor({1, 1}, {0.3f});
    p.b_proj = Tensor({1, 1}, {0.7f});
    p.c_proj = Tensor({1, 1}, {1.1f});
    Tensor x({3, 1}, {1.0f, -2.0f, 0.5f});
    Tensor y = selective_scan(x, p);

    // five-line oracle
    double h = 0.0;
    for (std::size_t t = 0; t < 3; ++t) {
        double xv = x.at(t, 0);
        double delta = softplus(0.3 * xv);
        double a_bar = std::exp(delta * -0.5);
        double b_bar = (a_bar - 1.0) / -0.5 * (0.7 * xv);
        h = a_bar * h + b_bar * xv;
        CHECK(y.at(t, 0) == Catch::Approx((1.1 * xv) * h).margin(1e-6));
    }
}

TEST_CASE("kernel_form basics") {
    SECTION("memoryless when a_bar = 0") {
        Tensor x({4}, {1, 2, 3, 4});
        Tensor y = kernel_form(x, 0.0, 0.5, 2.0);
        for (std::size_t t = 0; t < 4; ++t)
            CHECK(y.at(t) == Catch::Approx(1.0 * x.at(t)));
    }
    SECTION("impulse response is the kernel itself") {
        Tensor e1({5}, {1, 0, 0, 0, 0});
        double a_bar = 0.6, b_bar = 0.3, c = 1.5;
        Tensor y = kernel_form(e1, a_bar, b_bar, c);
        double pow_a = 1.0;
        for (std::size_t t = 0; t < 5; ++t) {
            CHECK(y.at(t) == Catch::Approx(c * pow_a * b_bar).margin(1e-7));
            pow_a *= a_bar;
        }
    }
}

TEST_CASE("recurrence and kernel form agree for frozen parameters") {
    SplitMix64 rng(77);
    double worst = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
        std::size_t seq_len = 1 + rng.next() % 32;
        std::size_t n_state = 1 + rng.next() % 4;
        std::vector<double> a(n_state), b(n_state), c(n_state), ab(n_state), bb(n_state);
        double delta = 0.05 + rng.uniform();
        for (std::size_t n = 0; n < n_state; ++n) {
            a[n] = -0.1 - 3.0 * rng.uniform();
            b[n] = rng.gaussian();
            c[n] = rng.gaussian();
            std::tie(ab[n], bb[n]) = discretize_zoh(a[n], b[n], delta);
        }
        Tensor x({seq_len});
        fill_gaussian(x, rng);
        Tensor y_rec = frozen_scan(x, a, b, c, delta);
        Tensor y_ker = kernel_form(x, ab, bb, c);
        for (std::size_t t = 0; t < seq_len; ++t)
            worst = std::max(worst,
                             std::abs(static_cast<double>(y_rec.at(t)) - y_ker.at(t)));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("impulse response magnitude is non-increasing for stable A") {
    SplitMix64 rng(13);
    for (int rep = 0; rep < 50; ++rep) {
        std::size_t seq_len = 2 + rng.next() % 30;
        std::size_t n_state = 1 + rng.next() % 4;
        std::vector<double> ab(n_state), bb(n_state), c(n_state);
        double delta = 0.05 + rng.uniform();
        for (std::size_t n = 0; n < n_state; ++n) {
            double a = -0.1 - 3.0 * rng.uniform();
            double b = std::abs(rng.gaussian());
            c[n] = std::abs(rng.gaussian());
            std::tie(ab[n], bb[n]) = discretize_zoh(a, b, delta);
        }
        Tensor k = discrete_kernel(seq_len, ab, bb, c);
        for (std::size_t t = 1; t < seq_len; ++t)
            REQUIRE(std::abs(k.at(t)) <= std::abs(k.at(t - 1)) + 1e-9);
    }
}

TEST_CASE("frozen scan is linear in x") {
    SplitMix64 rng(21);
    std::vector<double> a = {-1.2, -0.4}, b = {0.5, -0.8}, c = {1.0, 0.3};
    Tensor x({16});
    fill_gaussian(x, rng);
    Tensor x2 = x;
    for (float& v : x2.data) v *= 3.0f;
    Tensor y1 = frozen_scan(x, a, b, c, 0.4);
    Tensor y2 = frozen_scan(x2, a, b, c, 0.4);
    for (std::size_t t = 0; t < 16; ++t)
        CHECK(y2.at(t) == Catch::Approx(3.0 * y1.at(t)).margin(1e-5));
}

TEST_CASE("softplus-produced delta is positive for any finite input") {
    SplitMix64 rng(31);
    for (int rep = 0; rep < 1000; ++rep) {
        double x = rng.gaussian() * 100.0;
        REQUIRE(softplus(x) > 0.0);
    }
}

TEST_CASE("reverse_seq") {
    Tensor v({3}, {1, 2, 3});
    CHECK(reverse_seq(v).data == std::vector<float>{3, 2, 1});
    CHECK(reverse_seq(reverse_seq(v)).data == v.data);
    Tensor one({1}, {4});
    CHECK(reverse_seq(one).data == one.data);

    Tensor m({2, 2}, {1, 2, 3, 4});
    CHECK(reverse_seq(m).data == std::vector<float>{3, 4, 1, 2});
}

TEST_CASE("selective_scan reports the offending token on blow-up") {
    SsmParams p;
    p.a = Tensor({1, 1}, {1e30f});  // unstable on purpose
    p.delta_proj = Tensor({1, 1}, {50.0f});
    p.b_proj = Tensor({1, 1}, {1e10f});
    p.c_proj = Tensor({1, 1}, {1e10f});
    Tensor x({2, 1}, {1e5f, 1e5f});
    CHECK_THROWS_AS(selective_scan(x, p), NumericError);
}
