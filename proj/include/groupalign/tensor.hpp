#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "groupalign/common.hpp"

namespace groupalign {

// Dense rank-3 tensor (height x width x channels), channels contiguous.
// All model math runs in double so finite-difference checks stay meaningful.
struct Tensor {
    int h = 0, w = 0, c = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int h_, int w_, int c_, double fill = 0.0)
        : h(h_), w(w_), c(c_), v(static_cast<std::size_t>(h_) * w_ * c_, fill) {}

    double& at(int y, int x, int ch) { return v[(static_cast<std::size_t>(y) * w + x) * c + ch]; }
    double at(int y, int x, int ch) const {
        return v[(static_cast<std::size_t>(y) * w + x) * c + ch];
    }
    double* px(int y, int x) { return v.data() + (static_cast<std::size_t>(y) * w + x) * c; }
    const double* px(int y, int x) const {
        return v.data() + (static_cast<std::size_t>(y) * w + x) * c;
    }

    std::size_t size() const { return v.size(); }
    bool same_shape(const Tensor& o) const { return h == o.h && w == o.w && c == o.c; }

    void fill(double x) { std::fill(v.begin(), v.end(), x); }

    bool finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }
};

inline void add_scaled(Tensor& dst, const Tensor& src, double s) {
    for (std::size_t i = 0; i < dst.v.size(); ++i) dst.v[i] += s * src.v[i];
}

inline double l2_norm(const Tensor& t) {
    double s = 0.0;
    for (double x : t.v) s += x * x;
    return std::sqrt(s);
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double l2_norm(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

// Per-pixel softmax over the channel axis.
inline Tensor channel_softmax(const Tensor& x) {
    Tensor y(x.h, x.w, x.c);
    for (int i = 0; i < x.h * x.w; ++i) {
        const double* in = x.v.data() + static_cast<std::size_t>(i) * x.c;
        double* out = y.v.data() + static_cast<std::size_t>(i) * x.c;
        double mx = in[0];
        for (int ch = 1; ch < x.c; ++ch) mx = std::max(mx, in[ch]);
        double sum = 0.0;
        for (int ch = 0; ch < x.c; ++ch) {
            out[ch] = std::exp(in[ch] - mx);
            sum += out[ch];
        }
        for (int ch = 0; ch < x.c; ++ch) out[ch] /= sum;
    }
    return y;
}

// dL/dx given softmax output y and dL/dy.
inline Tensor channel_softmax_backward(const Tensor& y, const Tensor& dy) {
    Tensor dx(y.h, y.w, y.c);
    for (int i = 0; i < y.h * y.w; ++i) {
        const double* p = y.v.data() + static_cast<std::size_t>(i) * y.c;
        const double* g = dy.v.data() + static_cast<std::size_t>(i) * y.c;
        double* out = dx.v.data() + static_cast<std::size_t>(i) * y.c;
        double inner = 0.0;
        for (int ch = 0; ch < y.c; ++ch) inner += g[ch] * p[ch];
        for (int ch = 0; ch < y.c; ++ch) out[ch] = p[ch] * (g[ch] - inner);
    }
    return dx;
}

inline void fill_normal(std::vector<double>& v, std::mt19937_64& rng, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& x : v) x = dist(rng);
}

inline void fill_uniform(std::vector<double>& v, std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    for (double& x : v) x = dist(rng);
}

}  // namespace groupalign
