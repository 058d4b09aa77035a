#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "groupalign/grouping.hpp"
#include "groupalign/nn.hpp"

namespace groupalign {

// Per-pixel outer product between the group feature's class vector and the
// group's class distribution, flattened to cls^2 channels (index u*cls+v).
inline Tensor make_conditional_input(const GroupFeature& feat, const ClassDistribution& q) {
    if (static_cast<int>(q.size()) != feat.c)
        throw DataError("make_conditional_input: cls mismatch between feature and condition");
    const int cls = feat.c;
    Tensor cond(feat.h, feat.w, cls * cls);
    for (int i = 0; i < feat.h * feat.w; ++i) {
        const double* f = feat.v.data() + static_cast<std::size_t>(i) * cls;
        double* out = cond.v.data() + static_cast<std::size_t>(i) * cls * cls;
        for (int u = 0; u < cls; ++u)
            for (int v = 0; v < cls; ++v) out[u * cls + v] = f[u] * q[v];
    }
    return cond;
}

// Tiling F over cls channels; equals the outer product with an all-ones
// condition and realizes plain global alignment through the same D.
inline Tensor make_global_input(const GroupFeature& feat) {
    ClassDistribution ones(static_cast<std::size_t>(feat.c), 1.0);
    return make_conditional_input(feat, ones);
}

// Backward of the outer product. dq may be null when the condition is
// detached (the default on the generator step).
inline void conditional_input_backward(const GroupFeature& feat, const ClassDistribution& q,
                                       const Tensor& dcond, Tensor& dfeat,
                                       std::vector<double>* dq = nullptr) {
    const int cls = feat.c;
    for (int i = 0; i < feat.h * feat.w; ++i) {
        const double* f = feat.v.data() + static_cast<std::size_t>(i) * cls;
        const double* g = dcond.v.data() + static_cast<std::size_t>(i) * cls * cls;
        double* df = dfeat.v.data() + static_cast<std::size_t>(i) * cls;
        for (int u = 0; u < cls; ++u) {
            double acc = 0.0;
            for (int v = 0; v < cls; ++v) {
                acc += g[u * cls + v] * q[v];
                if (dq) (*dq)[v] += g[u * cls + v] * f[u];
            }
            df[u] += acc;
        }
    }
}

struct DiscConfig {
    int in_channels = 25;  // cls^2
    // Five 4x4 stride-2 convolutions; leaky ReLU 0.2 after all but the last.
    std::vector<int> channels{64, 128, 256, 512, 1};
    double leaky_slope = 0.2;
};

struct PatchDiscriminator {
    DiscConfig cfg;
    std::vector<Conv2d> convs;

    PatchDiscriminator() = default;
    explicit PatchDiscriminator(const DiscConfig& c) : cfg(c) {
        if (c.channels.size() != 5 || c.channels.back() != 1)
            throw ConfigError("discriminator: exactly five layers ending in one channel");
        int in = c.in_channels;
        for (int ch : c.channels) {
            convs.emplace_back(in, ch, 4, 2, 1);
            in = ch;
        }
    }

    void init(std::mt19937_64& rng) {
        for (Conv2d& conv : convs) conv.he_init(rng);
    }

    struct Forward {
        std::vector<Tensor> z;  // pre-activation per layer
        std::vector<Tensor> a;  // post-activation inputs to the next layer
    };

    // Patch logit map; spatial dims shrink by 2^5.
    Tensor forward(const Tensor& cond, Forward* fw = nullptr) const {
        if (cond.h % 32 != 0 || cond.w % 32 != 0)
            throw DataError("discriminator input spatial dims must be divisible by 32");
        if (cond.c != cfg.in_channels)
            throw ConfigError("discriminator configured for " + std::to_string(cfg.in_channels) +
                              " channels, got " + std::to_string(cond.c));
        Forward local;
        Forward& f = fw ? *fw : local;
        f.z.clear();
        f.a.clear();
        f.a.push_back(cond);
        for (std::size_t i = 0; i < convs.size(); ++i) {
            f.z.push_back(convs[i].forward(f.a.back()));
            if (i + 1 < convs.size())
                f.a.push_back(leaky_relu(f.z.back(), cfg.leaky_slope));
        }
        return f.z.back();
    }

    // Returns dL/d(cond); accumulate_params=false skips weight gradients
    // (generator step, D frozen).
    Tensor backward(const Forward& f, const Tensor& dlogits, bool accumulate_params) {
        Tensor grad = dlogits;
        for (int i = static_cast<int>(convs.size()) - 1; i >= 0; --i) {
            if (i < static_cast<int>(convs.size()) - 1)
                grad = leaky_relu_backward(f.z[i], grad, cfg.leaky_slope);
            if (accumulate_params) {
                grad = convs[i].backward(f.a[i], grad);
            } else {
                // input gradient only
                std::vector<double> gw_save = convs[i].gweight;
                std::vector<double> gb_save = convs[i].gbias;
                grad = convs[i].backward(f.a[i], grad);
                convs[i].gweight = std::move(gw_save);
                convs[i].gbias = std::move(gb_save);
            }
        }
        return grad;
    }

    void zero_grad() {
        for (Conv2d& conv : convs) conv.zero_grad();
    }

    void collect(std::vector<ParamRef>& params) {
        for (std::size_t i = 0; i < convs.size(); ++i)
            convs[i].collect("D.conv" + std::to_string(i + 1), params);
    }
};

inline Tensor discriminate(const PatchDiscriminator& d, const Tensor& cond) {
    return d.forward(cond);
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Numerically stable binary cross-entropy on logits: mean over patches of
// BCE(sigma(z), label). dlogits receives (sigma(z) - label)/n scaled by
// `grad_scale` when non-null.
inline double bce_with_logits(const Tensor& logits, double label, Tensor* dlogits = nullptr,
                              double grad_scale = 1.0) {
    const double n = static_cast<double>(logits.v.size());
    double loss = 0.0;
    if (dlogits && dlogits->v.empty()) *dlogits = Tensor(logits.h, logits.w, logits.c);
    for (std::size_t i = 0; i < logits.v.size(); ++i) {
        const double z = logits.v[i];
        // softplus(z) = log(1 + exp(z)) without overflow
        const double sp_pos = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
        const double sp_neg = sp_pos - z;  // softplus(-z)
        loss += label * sp_neg + (1.0 - label) * sp_pos;
        if (dlogits) dlogits->v[i] += grad_scale * (sigmoid(z) - label) / n;
    }
    return loss / n;
}

enum class AdvSide { disc, gen };

// Eq-4 realized as alternating BCE objectives. Discriminator side: labels
// source=1 / target=0, summed over groups. Generator side: non-saturating
// BCE(D(target), 1), summed over groups.
inline double adversarial_losses(const std::vector<Tensor>& source_logits,
                                 const std::vector<Tensor>& target_logits, AdvSide side) {
    if (side == AdvSide::disc) {
        if (source_logits.size() != target_logits.size() || source_logits.empty())
            throw DataError("adversarial_losses: missing group logits");
        double loss = 0.0;
        for (std::size_t k = 0; k < source_logits.size(); ++k) {
            loss += bce_with_logits(source_logits[k], 1.0);
            loss += bce_with_logits(target_logits[k], 0.0);
        }
        return loss;
    }
    if (target_logits.empty()) throw DataError("adversarial_losses: missing group logits");
    double loss = 0.0;
    for (const Tensor& t : target_logits) loss += bce_with_logits(t, 1.0);
    return loss;
}

}  // namespace groupalign
