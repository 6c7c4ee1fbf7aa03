#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "mambascope/error.hpp"
#include "mambascope/rng.hpp"

namespace mambascope {

/// Multiply-accumulate counter for the dynamic FLOPs cross-check.
/// matmul and the selective scan report into it when enabled.
inline thread_local std::uint64_t g_mac_count = 0;
inline thread_local bool g_mac_enabled = false;

inline void mac_counter_reset() { g_mac_count = 0; }
inline void mac_counter_enable(bool on) { g_mac_enabled = on; }
inline std::uint64_t mac_counter_value() { return g_mac_count; }
inline void mac_counter_add(std::uint64_t n) {
    if (g_mac_enabled) g_mac_count += n;
}

/// Dense row-major float32 array, rank <= 4. The universal value carrier.
struct Tensor {
    std::vector<std::size_t> dims;
    std::vector<float> data;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> d, float fill = 0.0f) : dims(std::move(d)) {
        check_rank();
        data.assign(numel(), fill);
    }

    Tensor(std::vector<std::size_t> d, std::vector<float> values)
        : dims(std::move(d)), data(std::move(values)) {
        check_rank();
        if (numel() != data.size())
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str());
    }

    std::size_t numel() const {
        return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                               std::multiplies<>());
    }
    std::size_t rank() const { return dims.size(); }

    std::string shape_str() const {
        std::ostringstream os;
        os << '[';
        for (std::size_t i = 0; i < dims.size(); ++i) {
            if (i) os << 'x';
            os << dims[i];
        }
        os << ']';
        return os.str();
    }

    float& at(std::size_t i) { return data[i]; }
    float at(std::size_t i) const { return data[i]; }
    float& at(std::size_t i, std::size_t j) { return data[i * dims[1] + j]; }
    float at(std::size_t i, std::size_t j) const { return data[i * dims[1] + j]; }
    float& at(std::size_t i, std::size_t j, std::size_t k) {
        return data[(i * dims[1] + j) * dims[2] + k];
    }
    float at(std::size_t i, std::size_t j, std::size_t k) const {
        return data[(i * dims[1] + j) * dims[2] + k];
    }

    bool all_finite() const {
        for (float v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

private:
    void check_rank() const {
        if (dims.size() > 4) throw ShapeError("rank > 4 not supported");
    }
};

/// c[i,j] = sum_k a[i,k] * b[k,j], accumulated in double, stored as float.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dims[1] != b.dims[0])
        throw ShapeError("matmul shape mismatch: " + a.shape_str() + " x " +
                         b.shape_str());
    const std::size_t m = a.dims[0], k = a.dims[1], n = b.dims[1];
    Tensor c({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p)
                acc += static_cast<double>(a.at(i, p)) * static_cast<double>(b.at(p, j));
            c.at(i, j) = static_cast<float>(acc);
        }
    }
    mac_counter_add(static_cast<std::uint64_t>(m) * k * n);
    return c;
}

inline double softplus(double x) {
    if (x > 30.0) return x;           // asymptote, avoids exp overflow
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Numerically stable softmax over a rank-1 tensor.
inline Tensor softmax(const Tensor& v) {
    if (v.rank() != 1 || v.dims[0] < 1)
        throw ShapeError("softmax expects a non-empty vector, got " + v.shape_str());
    if (!v.all_finite()) throw NumericError("softmax: non-finite input");
    double mx = v.data[0];
    for (float x : v.data) mx = std::max(mx, static_cast<double>(x));
    Tensor out(v.dims);
    double sum = 0.0;
    for (std::size_t i = 0; i < v.data.size(); ++i) {
        double e = std::exp(static_cast<double>(v.data[i]) - mx);
        out.data[i] = static_cast<float>(e);
        sum += e;
    }
    for (float& x : out.data) x = static_cast<float>(x / sum);
    return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    if (a.dims != b.dims)
        throw ShapeError("add shape mismatch: " + a.shape_str() + " vs " + b.shape_str());
    Tensor c = a;
    for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] += b.data[i];
    return c;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.dims != b.dims)
        throw ShapeError("mul shape mismatch: " + a.shape_str() + " vs " + b.shape_str());
    Tensor c = a;
    for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] *= b.data[i];
    return c;
}

inline Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("transpose expects rank 2, got " + a.shape_str());
    Tensor t({a.dims[1], a.dims[0]});
    for (std::size_t i = 0; i < a.dims[0]; ++i)
        for (std::size_t j = 0; j < a.dims[1]; ++j) t.at(j, i) = a.at(i, j);
    return t;
}

inline Tensor reshape(const Tensor& a, std::vector<std::size_t> new_dims) {
    Tensor t(std::move(new_dims));
    if (t.numel() != a.numel())
        throw ShapeError("reshape " + a.shape_str() + " -> " + t.shape_str() +
                         " changes element count");
    t.data = a.data;
    return t;
}

/// Rows [begin, end) of a rank-2 tensor.
inline Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
    if (a.rank() != 2) throw ShapeError("slice_rows expects rank 2");
    if (begin > end || end > a.dims[0])
        throw IndexError("slice_rows range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") out of " + std::to_string(a.dims[0]));
    Tensor t({end - begin, a.dims[1]});
    std::copy(a.data.begin() + static_cast<std::ptrdiff_t>(begin * a.dims[1]),
              a.data.begin() + static_cast<std::ptrdiff_t>(end * a.dims[1]),
              t.data.begin());
    return t;
}

inline Tensor concat_rows(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dims[1] != b.dims[1])
        throw ShapeError("concat_rows shape mismatch: " + a.shape_str() + " vs " +
                         b.shape_str());
    Tensor t({a.dims[0] + b.dims[0], a.dims[1]});
    std::copy(a.data.begin(), a.data.end(), t.data.begin());
    std::copy(b.data.begin(), b.data.end(),
              t.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()));
    return t;
}

/// Indices sorted by descending value; equal values keep ascending index order.
inline std::vector<std::size_t> argsort_descending(const std::vector<float>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
    return idx;
}

/// out[c, 2i+a, 2j+b] = grid[c, i, j].
inline Tensor nearest_upsample_2x(const Tensor& grid) {
    if (grid.rank() != 3) throw ShapeError("nearest_upsample_2x expects CxHxW");
    const std::size_t c = grid.dims[0], h = grid.dims[1], w = grid.dims[2];
    Tensor out({c, 2 * h, 2 * w});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) {
                float v = grid.at(ch, i, j);
                out.at(ch, 2 * i, 2 * j) = v;
                out.at(ch, 2 * i, 2 * j + 1) = v;
                out.at(ch, 2 * i + 1, 2 * j) = v;
                out.at(ch, 2 * i + 1, 2 * j + 1) = v;
            }
    return out;
}

/// 2x2 mean pooling of a CxHxW grid (H, W even).
inline Tensor mean_pool_2x2(const Tensor& grid) {
    if (grid.rank() != 3) throw ShapeError("mean_pool_2x2 expects CxHxW");
    const std::size_t c = grid.dims[0], h = grid.dims[1], w = grid.dims[2];
    if (h % 2 != 0 || w % 2 != 0)
        throw ShapeError("mean_pool_2x2 needs even H, W, got " + grid.shape_str());
    Tensor out({c, h / 2, w / 2});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < h / 2; ++i)
            for (std::size_t j = 0; j < w / 2; ++j) {
                double s = static_cast<double>(grid.at(ch, 2 * i, 2 * j)) +
                           grid.at(ch, 2 * i, 2 * j + 1) +
                           grid.at(ch, 2 * i + 1, 2 * j) +
                           grid.at(ch, 2 * i + 1, 2 * j + 1);
                out.at(ch, i, j) = static_cast<float>(s * 0.25);
            }
    return out;
}

inline void fill_uniform(Tensor& t, SplitMix64& rng, float lo = 0.0f, float hi = 1.0f) {
    for (float& v : t.data)
        v = lo + static_cast<float>(rng.uniform()) * (hi - lo);
}

inline void fill_gaussian(Tensor& t, SplitMix64& rng, float stddev = 1.0f) {
    for (float& v : t.data) v = static_cast<float>(rng.gaussian()) * stddev;
}

}  // namespace mambascope
