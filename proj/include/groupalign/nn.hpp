#pragma once

#include <cassert>
#include <cmath>
#include <string>
#include <vector>

#include "groupalign/tensor.hpp"

namespace groupalign {

// Named view onto a parameter array and its gradient. Optimizers and the
// checkpoint container address parameters through these.
struct ParamRef {
    std::string name;
    std::vector<double>* value = nullptr;
    std::vector<double>* grad = nullptr;
};

// Named view onto a non-trainable buffer (batch-norm running stats).
struct BufferRef {
    std::string name;
    std::vector<double>* value = nullptr;
};

// 2-D convolution, weights laid out [out][ky][kx][in] so the innermost loop
// runs over contiguous input channels.
struct Conv2d {
    int in_ch = 0, out_ch = 0, kh = 1, kw = 1, stride = 1, pad = 0;
    std::vector<double> weight, bias;
    std::vector<double> gweight, gbias;

    Conv2d() = default;
    Conv2d(int in, int out, int k, int stride_, int pad_)
        : in_ch(in), out_ch(out), kh(k), kw(k), stride(stride_), pad(pad_) {
        weight.assign(static_cast<std::size_t>(out) * kh * kw * in, 0.0);
        bias.assign(out, 0.0);
        gweight.assign(weight.size(), 0.0);
        gbias.assign(bias.size(), 0.0);
    }

    void he_init(std::mt19937_64& rng) {
        const double fan_in = static_cast<double>(in_ch) * kh * kw;
        fill_normal(weight, rng, std::sqrt(2.0 / fan_in));
        std::fill(bias.begin(), bias.end(), 0.0);
    }

    int out_h(int in_h) const { return (in_h + 2 * pad - kh) / stride + 1; }
    int out_w(int in_w) const { return (in_w + 2 * pad - kw) / stride + 1; }

    const double* wtap(int ko, int ky, int kx) const {
        return weight.data() + ((static_cast<std::size_t>(ko) * kh + ky) * kw + kx) * in_ch;
    }
    double* gwtap(int ko, int ky, int kx) {
        return gweight.data() + ((static_cast<std::size_t>(ko) * kh + ky) * kw + kx) * in_ch;
    }

    Tensor forward(const Tensor& x) const {
        assert(x.c == in_ch);
        Tensor y(out_h(x.h), out_w(x.w), out_ch);
        for (int oy = 0; oy < y.h; ++oy) {
            for (int ox = 0; ox < y.w; ++ox) {
                double* out = y.px(oy, ox);
                for (int ko = 0; ko < out_ch; ++ko) out[ko] = bias[ko];
                const int base_y = oy * stride - pad;
                const int base_x = ox * stride - pad;
                for (int ky = 0; ky < kh; ++ky) {
                    const int iy = base_y + ky;
                    if (iy < 0 || iy >= x.h) continue;
                    for (int kx = 0; kx < kw; ++kx) {
                        const int ix = base_x + kx;
                        if (ix < 0 || ix >= x.w) continue;
                        const double* in = x.px(iy, ix);
                        for (int ko = 0; ko < out_ch; ++ko) {
                            const double* wt = wtap(ko, ky, kx);
                            double acc = 0.0;
                            for (int ci = 0; ci < in_ch; ++ci) acc += wt[ci] * in[ci];
                            out[ko] += acc;
                        }
                    }
                }
            }
        }
        return y;
    }

    // Accumulates weight/bias gradients and returns dL/dx. `x` must be the
    // tensor the matching forward saw.
    Tensor backward(const Tensor& x, const Tensor& dy) {
        Tensor dx(x.h, x.w, in_ch);
        // weight and bias gradients
        for (int oy = 0; oy < dy.h; ++oy) {
            for (int ox = 0; ox < dy.w; ++ox) {
                const double* g = dy.px(oy, ox);
                for (int ko = 0; ko < out_ch; ++ko) gbias[ko] += g[ko];
                const int base_y = oy * stride - pad;
                const int base_x = ox * stride - pad;
                for (int ky = 0; ky < kh; ++ky) {
                    const int iy = base_y + ky;
                    if (iy < 0 || iy >= x.h) continue;
                    for (int kx = 0; kx < kw; ++kx) {
                        const int ix = base_x + kx;
                        if (ix < 0 || ix >= x.w) continue;
                        const double* in = x.px(iy, ix);
                        for (int ko = 0; ko < out_ch; ++ko) {
                            const double go = g[ko];
                            if (go == 0.0) continue;
                            double* gw = gwtap(ko, ky, kx);
                            for (int ci = 0; ci < in_ch; ++ci) gw[ci] += go * in[ci];
                        }
                    }
                }
            }
        }
        // input gradient, gathered per input pixel
        for (int oy = 0; oy < dy.h; ++oy) {
            const int base_y = oy * stride - pad;
            for (int ox = 0; ox < dy.w; ++ox) {
                const int base_x = ox * stride - pad;
                const double* g = dy.px(oy, ox);
                for (int ky = 0; ky < kh; ++ky) {
                    const int iy = base_y + ky;
                    if (iy < 0 || iy >= x.h) continue;
                    for (int kx = 0; kx < kw; ++kx) {
                        const int ix = base_x + kx;
                        if (ix < 0 || ix >= x.w) continue;
                        double* din = dx.px(iy, ix);
                        for (int ko = 0; ko < out_ch; ++ko) {
                            const double go = g[ko];
                            if (go == 0.0) continue;
                            const double* wt = wtap(ko, ky, kx);
                            for (int ci = 0; ci < in_ch; ++ci) din[ci] += go * wt[ci];
                        }
                    }
                }
            }
        }
        return dx;
    }

    void zero_grad() {
        std::fill(gweight.begin(), gweight.end(), 0.0);
        std::fill(gbias.begin(), gbias.end(), 0.0);
    }

    void collect(const std::string& prefix, std::vector<ParamRef>& out) {
        out.push_back({prefix + ".weight", &weight, &gweight});
        out.push_back({prefix + ".bias", &bias, &gbias});
    }
};

inline Tensor relu(const Tensor& x) {
    Tensor y = x;
    for (double& v : y.v) v = v > 0.0 ? v : 0.0;
    return y;
}

inline Tensor relu_backward(const Tensor& x, const Tensor& dy) {
    Tensor dx(x.h, x.w, x.c);
    for (std::size_t i = 0; i < x.v.size(); ++i) dx.v[i] = x.v[i] > 0.0 ? dy.v[i] : 0.0;
    return dx;
}

inline Tensor leaky_relu(const Tensor& x, double slope) {
    Tensor y = x;
    for (double& v : y.v) v = v > 0.0 ? v : slope * v;
    return y;
}

inline Tensor leaky_relu_backward(const Tensor& x, const Tensor& dy, double slope) {
    Tensor dx(x.h, x.w, x.c);
    for (std::size_t i = 0; i < x.v.size(); ++i) dx.v[i] = x.v[i] > 0.0 ? dy.v[i] : slope * dy.v[i];
    return dx;
}

// Channel-wise batch normalization over a batch of maps. Training mode uses
// the statistics of the given batch (source and target maps concatenated);
// eval mode uses frozen running averages.
struct BatchNorm {
    int channels = 0;
    double eps = 1e-5;
    double momentum = 0.1;
    std::vector<double> gamma, beta, ggamma, gbeta;
    std::vector<double> running_mean, running_var;

    struct Cache {
        std::vector<double> mean, inv_std;   // per channel
        std::vector<Tensor> xhat;            // normalized inputs
        std::size_t count = 0;               // pixels per channel across the batch
    };

    BatchNorm() = default;
    explicit BatchNorm(int ch) : channels(ch) {
        gamma.assign(ch, 1.0);
        beta.assign(ch, 0.0);
        ggamma.assign(ch, 0.0);
        gbeta.assign(ch, 0.0);
        running_mean.assign(ch, 0.0);
        running_var.assign(ch, 1.0);
    }

    std::vector<Tensor> forward(const std::vector<Tensor>& xs, bool training, Cache* cache) {
        std::vector<double> mean(channels, 0.0), var(channels, 0.0);
        std::size_t count = 0;
        if (training) {
            for (const Tensor& x : xs) {
                count += static_cast<std::size_t>(x.h) * x.w;
                for (int i = 0; i < x.h * x.w; ++i) {
                    const double* p = x.v.data() + static_cast<std::size_t>(i) * channels;
                    for (int ch = 0; ch < channels; ++ch) mean[ch] += p[ch];
                }
            }
            for (int ch = 0; ch < channels; ++ch) mean[ch] /= static_cast<double>(count);
            for (const Tensor& x : xs) {
                for (int i = 0; i < x.h * x.w; ++i) {
                    const double* p = x.v.data() + static_cast<std::size_t>(i) * channels;
                    for (int ch = 0; ch < channels; ++ch) {
                        const double d = p[ch] - mean[ch];
                        var[ch] += d * d;
                    }
                }
            }
            for (int ch = 0; ch < channels; ++ch) var[ch] /= static_cast<double>(count);
            for (int ch = 0; ch < channels; ++ch) {
                running_mean[ch] = (1.0 - momentum) * running_mean[ch] + momentum * mean[ch];
                running_var[ch] = (1.0 - momentum) * running_var[ch] + momentum * var[ch];
            }
        } else {
            mean = running_mean;
            var = running_var;
        }
        std::vector<double> inv_std(channels);
        for (int ch = 0; ch < channels; ++ch) inv_std[ch] = 1.0 / std::sqrt(var[ch] + eps);

        std::vector<Tensor> ys;
        ys.reserve(xs.size());
        if (cache) {
            cache->mean = mean;
            cache->inv_std = inv_std;
            cache->xhat.clear();
            cache->count = count;
        }
        for (const Tensor& x : xs) {
            Tensor y(x.h, x.w, channels);
            Tensor xhat(x.h, x.w, channels);
            for (int i = 0; i < x.h * x.w; ++i) {
                const double* p = x.v.data() + static_cast<std::size_t>(i) * channels;
                double* q = y.v.data() + static_cast<std::size_t>(i) * channels;
                double* xh = xhat.v.data() + static_cast<std::size_t>(i) * channels;
                for (int ch = 0; ch < channels; ++ch) {
                    xh[ch] = (p[ch] - mean[ch]) * inv_std[ch];
                    q[ch] = gamma[ch] * xh[ch] + beta[ch];
                }
            }
            if (cache) cache->xhat.push_back(std::move(xhat));
            ys.push_back(std::move(y));
        }
        return ys;
    }

    // Training-mode backward; couples every map in the batch through the
    // shared statistics.
    std::vector<Tensor> backward(const Cache& cache, const std::vector<Tensor>& dys) {
        const double n = static_cast<double>(cache.count);
        std::vector<double> sum_dy(channels, 0.0), sum_dy_xhat(channels, 0.0);
        for (std::size_t b = 0; b < dys.size(); ++b) {
            const Tensor& dy = dys[b];
            const Tensor& xh = cache.xhat[b];
            for (std::size_t i = 0; i < dy.v.size(); ++i) {
                const int ch = static_cast<int>(i % channels);
                sum_dy[ch] += dy.v[i];
                sum_dy_xhat[ch] += dy.v[i] * xh.v[i];
            }
        }
        for (int ch = 0; ch < channels; ++ch) {
            gbeta[ch] += sum_dy[ch];
            ggamma[ch] += sum_dy_xhat[ch];
        }
        std::vector<Tensor> dxs;
        dxs.reserve(dys.size());
        for (std::size_t b = 0; b < dys.size(); ++b) {
            const Tensor& dy = dys[b];
            const Tensor& xh = cache.xhat[b];
            Tensor dx(dy.h, dy.w, channels);
            for (std::size_t i = 0; i < dy.v.size(); ++i) {
                const int ch = static_cast<int>(i % channels);
                dx.v[i] = gamma[ch] * cache.inv_std[ch] *
                          (dy.v[i] - sum_dy[ch] / n - xh.v[i] * sum_dy_xhat[ch] / n);
            }
            dxs.push_back(std::move(dx));
        }
        return dxs;
    }

    // Eval-mode backward: statistics are constants.
    Tensor backward_eval(const Tensor& dy) const {
        Tensor dx(dy.h, dy.w, channels);
        for (std::size_t i = 0; i < dy.v.size(); ++i) {
            const int ch = static_cast<int>(i % channels);
            dx.v[i] = dy.v[i] * gamma[ch] / std::sqrt(running_var[ch] + eps);
        }
        return dx;
    }

    void zero_grad() {
        std::fill(ggamma.begin(), ggamma.end(), 0.0);
        std::fill(gbeta.begin(), gbeta.end(), 0.0);
    }

    void collect(const std::string& prefix, std::vector<ParamRef>& params,
                 std::vector<BufferRef>& buffers) {
        params.push_back({prefix + ".gamma", &gamma, &ggamma});
        params.push_back({prefix + ".beta", &beta, &gbeta});
        buffers.push_back({prefix + ".running_mean", &running_mean});
        buffers.push_back({prefix + ".running_var", &running_var});
    }
};

// Bilinear resize (half-pixel centers). Used to bring strided backbone
// outputs back to input resolution.
inline Tensor bilinear_resize(const Tensor& x, int out_h, int out_w) {
    Tensor y(out_h, out_w, x.c);
    const double sy = static_cast<double>(x.h) / out_h;
    const double sx = static_cast<double>(x.w) / out_w;
    for (int oy = 0; oy < out_h; ++oy) {
        double fy = (oy + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(x.h - 1));
        const int y0 = std::min(static_cast<int>(fy), x.h - 1);
        const int y1 = std::min(y0 + 1, x.h - 1);
        const double wy = fy - y0;
        for (int ox = 0; ox < out_w; ++ox) {
            double fx = (ox + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(x.w - 1));
            const int x0 = std::min(static_cast<int>(fx), x.w - 1);
            const int x1 = std::min(x0 + 1, x.w - 1);
            const double wx = fx - x0;
            const double* p00 = x.px(y0, x0);
            const double* p01 = x.px(y0, x1);
            const double* p10 = x.px(y1, x0);
            const double* p11 = x.px(y1, x1);
            double* out = y.px(oy, ox);
            for (int ch = 0; ch < x.c; ++ch) {
                const double top = p00[ch] + wx * (p01[ch] - p00[ch]);
                const double bot = p10[ch] + wx * (p11[ch] - p10[ch]);
                out[ch] = top + wy * (bot - top);
            }
        }
    }
    return y;
}

inline Tensor bilinear_resize_backward(const Tensor& dy, int in_h, int in_w) {
    Tensor dx(in_h, in_w, dy.c);
    const double sy = static_cast<double>(in_h) / dy.h;
    const double sx = static_cast<double>(in_w) / dy.w;
    for (int oy = 0; oy < dy.h; ++oy) {
        double fy = (oy + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(in_h - 1));
        const int y0 = std::min(static_cast<int>(fy), in_h - 1);
        const int y1 = std::min(y0 + 1, in_h - 1);
        const double wy = fy - y0;
        for (int ox = 0; ox < dy.w; ++ox) {
            double fx = (ox + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(in_w - 1));
            const int x0 = std::min(static_cast<int>(fx), in_w - 1);
            const int x1 = std::min(x0 + 1, in_w - 1);
            const double wx = fx - x0;
            const double* g = dy.px(oy, ox);
            double* p00 = dx.px(y0, x0);
            double* p01 = dx.px(y0, x1);
            double* p10 = dx.px(y1, x0);
            double* p11 = dx.px(y1, x1);
            for (int ch = 0; ch < dy.c; ++ch) {
                const double go = g[ch];
                p00[ch] += go * (1.0 - wy) * (1.0 - wx);
                p01[ch] += go * (1.0 - wy) * wx;
                p10[ch] += go * wy * (1.0 - wx);
                p11[ch] += go * wy * wx;
            }
        }
    }
    return dx;
}

}  // namespace groupalign
