#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "groupalign/nn.hpp"
#include "groupalign/tensor.hpp"

namespace groupalign {

enum class Domain { source, target };

inline const char* domain_name(Domain d) { return d == Domain::source ? "source" : "target"; }

// Input image, values in [0,1].
struct Image {
    Tensor pixels;  // h x w x channels
    Domain domain_tag = Domain::source;

    void validate() const {
        if (pixels.h < 32 || pixels.w < 32 || pixels.h % 32 != 0 || pixels.w % 32 != 0)
            throw DataError("image dimensions must be >= 32 and divisible by 32");
        for (double v : pixels.v)
            if (!(v >= 0.0 && v <= 1.0)) throw DataError("image pixel outside [0,1]");
    }
};

// Per-pixel integer labels; kIgnoreLabel marks pixels excluded everywhere.
struct LabelMap {
    int h = 0, w = 0;
    std::vector<int> labels;

    LabelMap() = default;
    LabelMap(int h_, int w_, int fill = 0)
        : h(h_), w(w_), labels(static_cast<std::size_t>(h_) * w_, fill) {}

    int& at(int y, int x) { return labels[static_cast<std::size_t>(y) * w + x]; }
    int at(int y, int x) const { return labels[static_cast<std::size_t>(y) * w + x]; }
};

// Pre-normalization class scores plus the canonical per-pixel softmax. Every
// downstream consumer reads `prob`, so there is exactly one normalization.
struct ScoreMap {
    Tensor scores;  // h x w x cls
    Tensor prob;    // softmax of scores over the class axis
};

inline ScoreMap make_score_map(Tensor scores) {
    ScoreMap s;
    s.prob = channel_softmax(scores);
    s.scores = std::move(scores);
    return s;
}

struct SegConfig {
    int in_channels = 3;
    int cls = 5;
    std::vector<int> widths{32, 64, 128, 128};  // four conv blocks, second one strided
};

// Small encoder-decoder segmentation network: four 3x3 conv blocks with ReLU
// (block 2 at stride 2), a 1x1 class head at half resolution, and bilinear
// upsampling of the scores back to input resolution.
struct SegNet {
    SegConfig cfg;
    Conv2d b1, b2, b3, b4, head;

    SegNet() = default;
    explicit SegNet(const SegConfig& c) : cfg(c) {
        if (c.widths.size() != 4) throw ConfigError("seg model needs exactly 4 block widths");
        b1 = Conv2d(c.in_channels, c.widths[0], 3, 1, 1);
        b2 = Conv2d(c.widths[0], c.widths[1], 3, 2, 1);
        b3 = Conv2d(c.widths[1], c.widths[2], 3, 1, 1);
        b4 = Conv2d(c.widths[2], c.widths[3], 3, 1, 1);
        head = Conv2d(c.widths[3], c.cls, 1, 1, 0);
    }

    void init(std::mt19937_64& rng) {
        b1.he_init(rng);
        b2.he_init(rng);
        b3.he_init(rng);
        b4.he_init(rng);
        head.he_init(rng);
    }

    struct Forward {
        Tensor x0, z1, a1, z2, a2, z3, a3, z4, a4, half_scores;
        int in_h = 0, in_w = 0;
    };

    ScoreMap forward(const Image& image, Forward* fw = nullptr) const {
        if (image.pixels.c != cfg.in_channels)
            throw ConfigError("segmentation model configured for " +
                              std::to_string(cfg.in_channels) + " channels, image has " +
                              std::to_string(image.pixels.c));
        Forward local;
        Forward& f = fw ? *fw : local;
        f.in_h = image.pixels.h;
        f.in_w = image.pixels.w;
        f.x0 = image.pixels;
        f.z1 = b1.forward(f.x0);
        f.a1 = relu(f.z1);
        f.z2 = b2.forward(f.a1);
        f.a2 = relu(f.z2);
        f.z3 = b3.forward(f.a2);
        f.a3 = relu(f.z3);
        f.z4 = b4.forward(f.a3);
        f.a4 = relu(f.z4);
        f.half_scores = head.forward(f.a4);
        Tensor scores = bilinear_resize(f.half_scores, f.in_h, f.in_w);
        return make_score_map(std::move(scores));
    }

    // Accumulates parameter gradients from dL/dscores (full resolution).
    void backward(const Forward& f, const Tensor& dscores) {
        Tensor dhalf = bilinear_resize_backward(dscores, f.half_scores.h, f.half_scores.w);
        Tensor da4 = head.backward(f.a4, dhalf);
        Tensor dz4 = relu_backward(f.z4, da4);
        Tensor da3 = b4.backward(f.a3, dz4);
        Tensor dz3 = relu_backward(f.z3, da3);
        Tensor da2 = b3.backward(f.a2, dz3);
        Tensor dz2 = relu_backward(f.z2, da2);
        Tensor da1 = b2.backward(f.a1, dz2);
        Tensor dz1 = relu_backward(f.z1, da1);
        b1.backward(f.x0, dz1);
    }

    void zero_grad() {
        b1.zero_grad();
        b2.zero_grad();
        b3.zero_grad();
        b4.zero_grad();
        head.zero_grad();
    }

    void collect(std::vector<ParamRef>& params) {
        b1.collect("G.b1", params);
        b2.collect("G.b2", params);
        b3.collect("G.b3", params);
        b4.collect("G.b4", params);
        head.collect("G.head", params);
    }
};

inline ScoreMap forward_segmentation(const SegNet& model, const Image& image) {
    return model.forward(image);
}

// Mean over non-ignored pixels of -log p[label].
inline double seg_loss(const ScoreMap& score, const LabelMap& labels, Tensor* dscores = nullptr) {
    if (score.scores.h != labels.h || score.scores.w != labels.w)
        throw DataError("seg_loss: score/label shape mismatch");
    const int cls = score.scores.c;
    std::size_t valid = 0;
    for (int y = 0; y < labels.h; ++y)
        for (int x = 0; x < labels.w; ++x) {
            const int lb = labels.at(y, x);
            if (lb == kIgnoreLabel) continue;
            if (lb < 0 || lb >= cls) throw DataError("seg_loss: label out of range");
            ++valid;
        }
    if (valid == 0) throw DataError("seg_loss: empty supervision (all pixels ignored)");

    if (dscores) *dscores = Tensor(labels.h, labels.w, cls);
    double loss = 0.0;
    const double inv = 1.0 / static_cast<double>(valid);
    for (int y = 0; y < labels.h; ++y) {
        for (int x = 0; x < labels.w; ++x) {
            const int lb = labels.at(y, x);
            if (lb == kIgnoreLabel) continue;
            const double* s = score.scores.px(y, x);
            double mx = s[0];
            for (int ch = 1; ch < cls; ++ch) mx = std::max(mx, s[ch]);
            double lse = 0.0;
            for (int ch = 0; ch < cls; ++ch) lse += std::exp(s[ch] - mx);
            lse = mx + std::log(lse);
            loss += lse - s[lb];
            if (dscores) {
                double* g = dscores->px(y, x);
                const double* p = score.prob.px(y, x);
                for (int ch = 0; ch < cls; ++ch) g[ch] += p[ch] * inv;
                g[lb] -= inv;
            }
        }
    }
    return loss * inv;
}

}  // namespace groupalign
