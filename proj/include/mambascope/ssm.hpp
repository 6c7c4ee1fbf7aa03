#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "mambascope/tensor.hpp"

namespace mambascope {

/// Per-direction selective-SSM parameters.
///   a          : D' x N continuous-time diagonal state decay (entries <= 0)
///   delta_proj : D' x D', token -> per-channel timescale (pre-softplus)
///   b_proj     : D' x N,  token -> input gain B_t
///   c_proj     : D' x N,  token -> readout C_t
/// Projections are stored input-major so they apply as matmul(x, W).
struct SsmParams {
    Tensor a;
    Tensor delta_proj;
    Tensor b_proj;
    Tensor c_proj;
};

/// Zero-order-hold discretization of a scalar channel.
/// a_bar = exp(delta*a); b_bar = (exp(delta*a) - 1)/a * b, with a two-term
/// series at the removable singularity delta*a -> 0.
inline std::pair<double, double> discretize_zoh(double a, double b, double delta) {
    if (!(delta > 0.0)) throw DomainError("discretize_zoh: delta must be > 0");
    if (!std::isfinite(a)) throw DomainError("discretize_zoh: a must be finite");
    const double da = delta * a;
    const double a_bar = std::exp(da);
    double b_bar;
    if (std::abs(da) >= 1e-6) {
        b_bar = (a_bar - 1.0) / a * b;
    } else {
        b_bar = delta * b * (1.0 + da * 0.5);
    }
    return {a_bar, b_bar};
}

/// Selective scan over x: L x D'. Per token t the dynamics are produced from
/// the token itself: Delta_t = softplus(delta_proj x_t), B_t = b_proj x_t,
/// C_t = c_proj x_t; then per channel d':
///   h_t = a_bar (.) h_{t-1} + b_bar * x_t[d'],  y_t[d'] = <C_t, h_t>.
inline Tensor selective_scan(const Tensor& x, const SsmParams& params) {
    if (x.rank() != 2) throw ShapeError("selective_scan expects L x D'");
    const std::size_t seq_len = x.dims[0];
    const std::size_t d_inner = x.dims[1];
    const std::size_t n_state = params.a.dims[1];
    if (params.a.dims[0] != d_inner)
        throw ShapeError("selective_scan: A shape " + params.a.shape_str() +
                         " inconsistent with input " + x.shape_str());

    Tensor delta_raw = matmul(x, params.delta_proj);  // L x D'
    Tensor b_tok = matmul(x, params.b_proj);          // L x N
    Tensor c_tok = matmul(x, params.c_proj);          // L x N

    Tensor y({seq_len, d_inner});
    std::vector<double> h(n_state);
    for (std::size_t d = 0; d < d_inner; ++d) {
        std::fill(h.begin(), h.end(), 0.0);
        for (std::size_t t = 0; t < seq_len; ++t) {
            const double delta = softplus(delta_raw.at(t, d));
            const double xv = x.at(t, d);
            double acc = 0.0;
            for (std::size_t n = 0; n < n_state; ++n) {
                auto [a_bar, b_bar] =
                    discretize_zoh(params.a.at(d, n), b_tok.at(t, n), delta);
                h[n] = a_bar * h[n] + b_bar * xv;
                acc += static_cast<double>(c_tok.at(t, n)) * h[n];
            }
            if (!std::isfinite(acc))
                throw NumericError("selective_scan: non-finite output at token " +
                                   std::to_string(t));
            y.at(t, d) = static_cast<float>(acc);
        }
    }
    // state update (2) + readout dot (1) per (t, d', n)
    mac_counter_add(3ull * seq_len * d_inner * n_state);
    return y;
}

/// Recurrence with frozen (token-independent) parameters for one channel.
/// Used to cross-check the kernel form on its domain of validity.
inline Tensor frozen_scan(const Tensor& x, const std::vector<double>& a,
                          const std::vector<double>& b, const std::vector<double>& c,
                          double delta) {
    if (x.rank() != 1) throw ShapeError("frozen_scan expects a vector");
    const std::size_t seq_len = x.dims[0];
    const std::size_t n_state = a.size();
    Tensor y({seq_len});
    std::vector<double> h(n_state, 0.0);
    for (std::size_t t = 0; t < seq_len; ++t) {
        double acc = 0.0;
        for (std::size_t n = 0; n < n_state; ++n) {
            auto [a_bar, b_bar] = discretize_zoh(a[n], b[n], delta);
            h[n] = a_bar * h[n] + b_bar * x.at(t);
            acc += c[n] * h[n];
        }
        y.at(t) = static_cast<float>(acc);
    }
    return y;
}

/// Time-invariant convolution kernel K[t] = sum_n c[n] a_bar[n]^t b_bar[n].
inline Tensor discrete_kernel(std::size_t seq_len, const std::vector<double>& a_bar,
                              const std::vector<double>& b_bar,
                              const std::vector<double>& c) {
    Tensor k({seq_len});
    std::vector<double> pow_a(a_bar.size(), 1.0);
    for (std::size_t t = 0; t < seq_len; ++t) {
        double acc = 0.0;
        for (std::size_t n = 0; n < a_bar.size(); ++n) {
            acc += c[n] * pow_a[n] * b_bar[n];
            pow_a[n] *= a_bar[n];
        }
        k.at(t) = static_cast<float>(acc);
    }
    return k;
}

/// Global-convolution form: y_t = sum_{j<=t} K[j] x_{t-j} (causal).
/// Only valid for frozen parameters; pass already-discretized a_bar, b_bar.
inline Tensor kernel_form(const Tensor& x, const std::vector<double>& a_bar,
                          const std::vector<double>& b_bar,
                          const std::vector<double>& c) {
    if (x.rank() != 1) throw ShapeError("kernel_form expects a vector");
    const std::size_t seq_len = x.dims[0];
    Tensor k = discrete_kernel(seq_len, a_bar, b_bar, c);
    Tensor y({seq_len});
    for (std::size_t t = 0; t < seq_len; ++t) {
        double acc = 0.0;
        for (std::size_t j = 0; j <= t; ++j)
            acc += static_cast<double>(k.at(j)) * static_cast<double>(x.at(t - j));
        y.at(t) = static_cast<float>(acc);
    }
    return y;
}

/// Scalar convenience overload (N = 1).
inline Tensor kernel_form(const Tensor& x, double a_bar, double b_bar, double c) {
    return kernel_form(x, std::vector<double>{a_bar}, std::vector<double>{b_bar},
                       std::vector<double>{c});
}

/// Index reversal along the sequence axis. Involutive.
inline Tensor reverse_seq(const Tensor& x) {
    if (x.rank() == 1) {
        Tensor y(x.dims);
        for (std::size_t i = 0; i < x.dims[0]; ++i) y.at(i) = x.at(x.dims[0] - 1 - i);
        return y;
    }
    if (x.rank() != 2) throw ShapeError("reverse_seq expects rank 1 or 2");
    Tensor y(x.dims);
    const std::size_t l = x.dims[0], d = x.dims[1];
    for (std::size_t i = 0; i < l; ++i)
        for (std::size_t j = 0; j < d; ++j) y.at(i, j) = x.at(l - 1 - i, j);
    return y;
}

}  // namespace mambascope
