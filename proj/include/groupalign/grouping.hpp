#pragma once

#include <random>
#include <string>
#include <vector>

#include "groupalign/nn.hpp"
#include "groupalign/seg_model.hpp"
#include "groupalign/tensor.hpp"

namespace groupalign {

// Per-pixel soft assignment over the K groups; rows sum to one.
using GroupProbabilities = Tensor;  // h x w x K

// Group-masked class probabilities, one per group.
using GroupFeature = Tensor;  // h x w x cls

// Mean-pooled (Q) and max-pooled (M) per-group class summaries.
using ClassDistribution = std::vector<double>;  // length cls
using MaxClassScores = std::vector<double>;     // length cls

struct GroupConfig {
    int cls = 5;
    int k = 4;
    int hidden = 64;
    bool on_raw_scores = false;  // ablation flag: feed raw scores instead of prob
};

// Cross-domain grouping network: 1x1 conv (cls -> hidden), ReLU, batch norm
// over the concatenated source+target batch, 1x1 conv (hidden -> K), per-pixel
// softmax.
struct GroupNet {
    GroupConfig cfg;
    Conv2d conv1, conv2;
    BatchNorm bn;

    GroupNet() = default;
    explicit GroupNet(const GroupConfig& c) : cfg(c) {
        if (c.k < 1) throw ConfigError("grouping: K must be >= 1");
        conv1 = Conv2d(c.cls, c.hidden, 1, 1, 0);
        conv2 = Conv2d(c.hidden, c.k, 1, 1, 0);
        bn = BatchNorm(c.hidden);
    }

    // First conv He-initialized; second conv starts at zero so training begins
    // from uniform group assignments.
    void init(std::mt19937_64& rng) {
        conv1.he_init(rng);
        std::fill(conv2.weight.begin(), conv2.weight.end(), 0.0);
        std::fill(conv2.bias.begin(), conv2.bias.end(), 0.0);
    }

    const Tensor& pick_input(const ScoreMap& s) const {
        return cfg.on_raw_scores ? s.scores : s.prob;
    }

    struct Forward {
        std::vector<Tensor> x;   // network inputs
        std::vector<Tensor> z1;  // post conv1
        std::vector<Tensor> a1;  // post relu
        BatchNorm::Cache bn_cache;
        std::vector<Tensor> n1;  // post batch norm
        std::vector<Tensor> assign;
        bool training = false;
    };

    // Batched forward; in training mode the BN statistics are computed over
    // all maps jointly.
    std::vector<GroupProbabilities> forward(const std::vector<const ScoreMap*>& scores,
                                            bool training, Forward* fw = nullptr) {
        Forward local;
        Forward& f = fw ? *fw : local;
        f.training = training;
        f.x.clear();
        f.z1.clear();
        f.a1.clear();
        f.n1.clear();
        f.assign.clear();
        for (const ScoreMap* s : scores) {
            f.x.push_back(pick_input(*s));
            f.z1.push_back(conv1.forward(f.x.back()));
            f.a1.push_back(relu(f.z1.back()));
        }
        f.n1 = bn.forward(f.a1, training, &f.bn_cache);
        std::vector<GroupProbabilities> out;
        out.reserve(scores.size());
        for (std::size_t i = 0; i < f.n1.size(); ++i) {
            Tensor z2 = conv2.forward(f.n1[i]);
            Tensor assign = channel_softmax(z2);
            f.assign.push_back(assign);
            out.push_back(std::move(assign));
        }
        return out;
    }

    // dL/d(assign) for every map -> dL/d(network input) for every map, while
    // accumulating parameter gradients.
    std::vector<Tensor> backward(const Forward& f, const std::vector<Tensor>& dassign) {
        std::vector<Tensor> dn1;
        dn1.reserve(dassign.size());
        for (std::size_t i = 0; i < dassign.size(); ++i) {
            Tensor dz2 = channel_softmax_backward(f.assign[i], dassign[i]);
            dn1.push_back(conv2.backward(f.n1[i], dz2));
        }
        std::vector<Tensor> da1;
        if (f.training) {
            da1 = bn.backward(f.bn_cache, dn1);
        } else {
            da1.reserve(dn1.size());
            for (const Tensor& d : dn1) da1.push_back(bn.backward_eval(d));
        }
        std::vector<Tensor> dx;
        dx.reserve(da1.size());
        for (std::size_t i = 0; i < da1.size(); ++i) {
            Tensor dz1 = relu_backward(f.z1[i], da1[i]);
            dx.push_back(conv1.backward(f.x[i], dz1));
        }
        return dx;
    }

    void zero_grad() {
        conv1.zero_grad();
        conv2.zero_grad();
        bn.zero_grad();
    }

    void collect(std::vector<ParamRef>& params, std::vector<BufferRef>& buffers) {
        conv1.collect("C.conv1", params);
        conv2.collect("C.conv2", params);
        bn.collect("C.bn", params, buffers);
    }
};

// Single-map convenience wrapper (batch of one).
inline GroupProbabilities group_assign(GroupNet& net, const ScoreMap& score,
                                       bool training = false) {
    std::vector<const ScoreMap*> batch{&score};
    return net.forward(batch, training)[0];
}

// F^k = assign_k (.) prob, one map per group.
inline std::vector<GroupFeature> group_features(const ScoreMap& score,
                                                const GroupProbabilities& assign) {
    const Tensor& prob = score.prob;
    if (assign.h != prob.h || assign.w != prob.w)
        throw DataError("group_features: spatial shape mismatch");
    const int k_count = assign.c;
    const int cls = prob.c;
    std::vector<GroupFeature> feats(static_cast<std::size_t>(k_count));
    for (int k = 0; k < k_count; ++k) feats[k] = Tensor(prob.h, prob.w, cls);
    for (int i = 0; i < prob.h * prob.w; ++i) {
        const double* p = prob.v.data() + static_cast<std::size_t>(i) * cls;
        const double* a = assign.v.data() + static_cast<std::size_t>(i) * k_count;
        for (int k = 0; k < k_count; ++k) {
            double* out = feats[k].v.data() + static_cast<std::size_t>(i) * cls;
            for (int u = 0; u < cls; ++u) out[u] = a[k] * p[u];
        }
    }
    return feats;
}

// Backward of group_features: grads per group flow into both factors.
inline void group_features_backward(const ScoreMap& score, const GroupProbabilities& assign,
                                    const std::vector<Tensor>& dfeats, Tensor& dassign,
                                    Tensor& dprob) {
    const Tensor& prob = score.prob;
    const int k_count = assign.c;
    const int cls = prob.c;
    if (dassign.v.empty()) dassign = Tensor(assign.h, assign.w, k_count);
    if (dprob.v.empty()) dprob = Tensor(prob.h, prob.w, cls);
    for (int i = 0; i < prob.h * prob.w; ++i) {
        const double* p = prob.v.data() + static_cast<std::size_t>(i) * cls;
        const double* a = assign.v.data() + static_cast<std::size_t>(i) * k_count;
        double* da = dassign.v.data() + static_cast<std::size_t>(i) * k_count;
        double* dp = dprob.v.data() + static_cast<std::size_t>(i) * cls;
        for (int k = 0; k < k_count; ++k) {
            const double* df = dfeats[k].v.data() + static_cast<std::size_t>(i) * cls;
            double acc = 0.0;
            for (int u = 0; u < cls; ++u) {
                acc += df[u] * p[u];
                dp[u] += df[u] * a[k];
            }
            da[k] += acc;
        }
    }
}

// Q^k: spatial mean of F^k per class.
inline ClassDistribution class_distribution(const GroupFeature& feat) {
    ClassDistribution q(feat.c, 0.0);
    const double inv = 1.0 / (static_cast<double>(feat.h) * feat.w);
    for (int i = 0; i < feat.h * feat.w; ++i) {
        const double* p = feat.v.data() + static_cast<std::size_t>(i) * feat.c;
        for (int u = 0; u < feat.c; ++u) q[u] += p[u];
    }
    for (double& x : q) x *= inv;
    return q;
}

inline void class_distribution_backward(const std::vector<double>& dq, Tensor& dfeat) {
    const double inv = 1.0 / (static_cast<double>(dfeat.h) * dfeat.w);
    for (int i = 0; i < dfeat.h * dfeat.w; ++i) {
        double* g = dfeat.v.data() + static_cast<std::size_t>(i) * dfeat.c;
        for (int u = 0; u < dfeat.c; ++u) g[u] += dq[u] * inv;
    }
}

// M^k: spatial max of F^k per class. argmax kept for the backward scatter;
// ties resolve to the first pixel in scan order.
struct MaxPoolResult {
    MaxClassScores m;
    std::vector<int> arg;  // flat pixel index per class
};

inline MaxPoolResult max_class_scores_with_arg(const GroupFeature& feat) {
    MaxPoolResult r;
    r.m.assign(feat.c, -1.0);
    r.arg.assign(feat.c, 0);
    for (int i = 0; i < feat.h * feat.w; ++i) {
        const double* p = feat.v.data() + static_cast<std::size_t>(i) * feat.c;
        for (int u = 0; u < feat.c; ++u) {
            if (p[u] > r.m[u]) {
                r.m[u] = p[u];
                r.arg[u] = i;
            }
        }
    }
    return r;
}

inline MaxClassScores max_class_scores(const GroupFeature& feat) {
    return max_class_scores_with_arg(feat).m;
}

inline void max_class_scores_backward(const MaxPoolResult& pool, const std::vector<double>& dm,
                                      Tensor& dfeat) {
    for (int u = 0; u < dfeat.c; ++u)
        dfeat.v[static_cast<std::size_t>(pool.arg[u]) * dfeat.c + u] += dm[u];
}

}  // namespace groupalign
