#pragma once

#include <string>
#include <vector>

#include "groupalign/discriminator.hpp"
#include "groupalign/grouping.hpp"
#include "groupalign/losses.hpp"
#include "groupalign/seg_model.hpp"

namespace groupalign {

enum class ConditionMode { q, ones };

enum class LossTerm { seg, co, orth, cadv, cl };

inline const char* loss_term_name(LossTerm t) {
    switch (t) {
        case LossTerm::seg: return "seg";
        case LossTerm::co: return "co";
        case LossTerm::orth: return "orth";
        case LossTerm::cadv: return "cadv";
        case LossTerm::cl: return "cl";
    }
    return "?";
}

struct PipelineConfig {
    LossWeights weights;
    LossToggle toggle;
    ConditionMode condition_mode = ConditionMode::q;
    bool couple_q = false;  // let generator gradients flow through the Q condition
};

// Everything derived from one batch of paired score maps: group assignments,
// per-group F/Q/M, and cached conditional inputs. Map order is all sources
// first, then all targets.
struct AlignmentState {
    int pairs = 0;
    int k_count = 0;
    std::vector<const ScoreMap*> maps;
    std::vector<const LabelMap*> labels;  // per pair, source side
    GroupNet::Forward c_fwd;
    std::vector<GroupProbabilities> assign;
    std::vector<std::vector<GroupFeature>> feats;        // [map][k]
    std::vector<std::vector<ClassDistribution>> q;       // [map][k]
    std::vector<std::vector<MaxPoolResult>> m;           // [map][k]
    std::vector<std::vector<Tensor>> cond;               // [map][k]

    int source_index(int pair) const { return pair; }
    int target_index(int pair) const { return pairs + pair; }
};

// Ties the grouping network and discriminator to the loss algebra for one
// batch. The generator-side backward runs per term so each term's gradient
// contribution (and its norm) stays separable.
struct AlignmentPipeline {
    GroupNet* c_net = nullptr;
    PatchDiscriminator* d_net = nullptr;
    PipelineConfig cfg;

    AlignmentPipeline(GroupNet* c, PatchDiscriminator* d, const PipelineConfig& pc)
        : c_net(c), d_net(d), cfg(pc) {}

    bool needs_cond() const { return cfg.toggle.cadv; }

    AlignmentState forward(const std::vector<const ScoreMap*>& source_maps,
                           const std::vector<const LabelMap*>& source_labels,
                           const std::vector<const ScoreMap*>& target_maps, bool training) {
        AlignmentState st;
        st.pairs = static_cast<int>(source_maps.size());
        st.k_count = c_net->cfg.k;
        st.maps.reserve(source_maps.size() + target_maps.size());
        for (const ScoreMap* s : source_maps) st.maps.push_back(s);
        for (const ScoreMap* t : target_maps) st.maps.push_back(t);
        st.labels = source_labels;
        st.assign = c_net->forward(st.maps, training, &st.c_fwd);
        const std::size_t n = st.maps.size();
        st.feats.resize(n);
        st.q.resize(n);
        st.m.resize(n);
        st.cond.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            st.feats[i] = group_features(*st.maps[i], st.assign[i]);
            st.q[i].reserve(st.k_count);
            st.m[i].reserve(st.k_count);
            for (int k = 0; k < st.k_count; ++k) {
                st.q[i].push_back(class_distribution(st.feats[i][k]));
                st.m[i].push_back(max_class_scores_with_arg(st.feats[i][k]));
            }
            if (needs_cond()) {
                st.cond[i].reserve(st.k_count);
                for (int k = 0; k < st.k_count; ++k) {
                    if (cfg.condition_mode == ConditionMode::q)
                        st.cond[i].push_back(make_conditional_input(st.feats[i][k], st.q[i][k]));
                    else
                        st.cond[i].push_back(make_global_input(st.feats[i][k]));
                }
            }
        }
        return st;
    }

    // Discriminator objective and parameter gradients (inputs detached).
    double disc_loss_and_grads(const AlignmentState& st) {
        const double inv_pairs = 1.0 / static_cast<double>(st.pairs);
        double total = 0.0;
        for (int p = 0; p < st.pairs; ++p) {
            for (int k = 0; k < st.k_count; ++k) {
                for (int side = 0; side < 2; ++side) {
                    const int idx = side == 0 ? st.source_index(p) : st.target_index(p);
                    const double label = side == 0 ? 1.0 : 0.0;
                    PatchDiscriminator::Forward fwd;
                    Tensor logits = d_net->forward(st.cond[idx][k], &fwd);
                    Tensor dlogits;
                    total += bce_with_logits(logits, label, &dlogits, inv_pairs) * inv_pairs;
                    d_net->backward(fwd, dlogits, /*accumulate_params=*/true);
                }
            }
        }
        return total;
    }

    // Per-map gradient accumulators used while walking a term backward.
    struct GradSink {
        std::vector<std::vector<std::vector<double>>> dq;  // [map][k][cls]
        std::vector<std::vector<std::vector<double>>> dm;  // [map][k][cls]
        std::vector<std::vector<Tensor>> dfeat;            // [map][k]
        explicit GradSink(const AlignmentState& st) {
            const std::size_t n = st.maps.size();
            dq.resize(n);
            dm.resize(n);
            dfeat.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                dq[i].assign(st.k_count, std::vector<double>(st.maps[i]->prob.c, 0.0));
                dm[i].assign(st.k_count, std::vector<double>(st.maps[i]->prob.c, 0.0));
                dfeat[i].resize(st.k_count);
                for (int k = 0; k < st.k_count; ++k)
                    dfeat[i][k] = Tensor(st.maps[i]->prob.h, st.maps[i]->prob.w, st.maps[i]->prob.c);
            }
        }
    };

    // Computes one term's value (mean over pairs) and, when dscores is given,
    // its gradient w.r.t. every map's scores scaled by `param_scale` (the
    // term's loss weight during training, 1 for gradient verification). The
    // grouping network's parameter gradients accumulate at the same scale.
    double term_value_and_grad(const AlignmentState& st, LossTerm term,
                               std::vector<Tensor>* dscores, double param_scale = 1.0) {
        const double inv_pairs = 1.0 / static_cast<double>(st.pairs);
        double value = 0.0;

        if (term == LossTerm::seg) {
            if (dscores)
                for (std::size_t i = 0; i < st.maps.size(); ++i)
                    (*dscores)[i] = Tensor(st.maps[i]->scores.h, st.maps[i]->scores.w,
                                           st.maps[i]->scores.c);
            for (int p = 0; p < st.pairs; ++p) {
                const int idx = st.source_index(p);
                Tensor g;
                value += seg_loss(*st.maps[idx], *st.labels[p], dscores ? &g : nullptr) * inv_pairs;
                if (dscores) add_scaled((*dscores)[idx], g, inv_pairs * param_scale);
            }
            return value;
        }

        GradSink sink(st);
        const bool want_grad = dscores != nullptr;

        switch (term) {
            case LossTerm::co: {
                for (int p = 0; p < st.pairs; ++p) {
                    const int si = st.source_index(p), ti = st.target_index(p);
                    double v = semantic_consistency_loss(st.q[si], st.q[ti],
                                                         want_grad ? &sink.dq[si] : nullptr,
                                                         want_grad ? &sink.dq[ti] : nullptr);
                    value += v * inv_pairs;
                }
                break;
            }
            case LossTerm::orth: {
                for (int p = 0; p < st.pairs; ++p) {
                    const int si = st.source_index(p), ti = st.target_index(p);
                    double v = orthogonality_loss(st.q[si], st.q[ti],
                                                  want_grad ? &sink.dq[si] : nullptr,
                                                  want_grad ? &sink.dq[ti] : nullptr);
                    value += v * inv_pairs;
                }
                break;
            }
            case LossTerm::cl: {
                for (int p = 0; p < st.pairs; ++p) {
                    const int si = st.source_index(p), ti = st.target_index(p);
                    std::vector<MaxClassScores> ms, mt;
                    for (int k = 0; k < st.k_count; ++k) {
                        ms.push_back(st.m[si][k].m);
                        mt.push_back(st.m[ti][k].m);
                    }
                    double v = class_equivalence_loss(ms, mt, cfg.weights.tau,
                                                      want_grad ? &sink.dm[ti] : nullptr);
                    value += v * inv_pairs;
                }
                break;
            }
            case LossTerm::cadv: {
                for (int p = 0; p < st.pairs; ++p) {
                    const int ti = st.target_index(p);
                    for (int k = 0; k < st.k_count; ++k) {
                        PatchDiscriminator::Forward fwd;
                        Tensor logits = d_net->forward(st.cond[ti][k], &fwd);
                        Tensor dlogits;
                        value += bce_with_logits(logits, 1.0, want_grad ? &dlogits : nullptr,
                                                 inv_pairs) *
                                 inv_pairs;
                        if (want_grad) {
                            Tensor dcond = d_net->backward(fwd, dlogits, /*accumulate_params=*/false);
                            const bool couple =
                                cfg.couple_q && cfg.condition_mode == ConditionMode::q;
                            if (cfg.condition_mode == ConditionMode::q) {
                                conditional_input_backward(st.feats[ti][k], st.q[ti][k], dcond,
                                                           sink.dfeat[ti][k],
                                                           couple ? &sink.dq[ti][k] : nullptr);
                            } else {
                                ClassDistribution ones(
                                    static_cast<std::size_t>(st.maps[ti]->prob.c), 1.0);
                                conditional_input_backward(st.feats[ti][k], ones, dcond,
                                                           sink.dfeat[ti][k], nullptr);
                            }
                        }
                    }
                }
                break;
            }
            case LossTerm::seg:
                break;
        }

        if (!want_grad) return value;

        // dq/dm -> dfeat, then dfeat -> (dassign, dprob), then through the
        // grouping network and the softmax back to scores.
        std::vector<Tensor> dassign(st.maps.size());
        std::vector<Tensor> dprob(st.maps.size());
        for (std::size_t i = 0; i < st.maps.size(); ++i) {
            for (int k = 0; k < st.k_count; ++k) {
                class_distribution_backward(sink.dq[i][k], sink.dfeat[i][k]);
                max_class_scores_backward(st.m[i][k], sink.dm[i][k], sink.dfeat[i][k]);
            }
            dassign[i] = Tensor(st.assign[i].h, st.assign[i].w, st.k_count);
            dprob[i] = Tensor(st.maps[i]->prob.h, st.maps[i]->prob.w, st.maps[i]->prob.c);
            group_features_backward(*st.maps[i], st.assign[i], sink.dfeat[i], dassign[i], dprob[i]);
            if (param_scale != 1.0) {
                for (double& x : dassign[i].v) x *= param_scale;
                for (double& x : dprob[i].v) x *= param_scale;
            }
        }
        std::vector<Tensor> dcin = c_net->backward(st.c_fwd, dassign);
        for (std::size_t i = 0; i < st.maps.size(); ++i) {
            (*dscores)[i] = Tensor(st.maps[i]->scores.h, st.maps[i]->scores.w, st.maps[i]->scores.c);
            if (c_net->cfg.on_raw_scores) {
                Tensor ds = channel_softmax_backward(st.maps[i]->prob, dprob[i]);
                add_scaled((*dscores)[i], ds, 1.0);
                add_scaled((*dscores)[i], dcin[i], 1.0);
            } else {
                add_scaled(dprob[i], dcin[i], 1.0);
                Tensor ds = channel_softmax_backward(st.maps[i]->prob, dprob[i]);
                add_scaled((*dscores)[i], ds, 1.0);
            }
        }
        return value;
    }

    // Per-group mean D(target) probability, logged as an alignment signal.
    std::vector<double> target_domain_probs(const AlignmentState& st) {
        std::vector<double> probs(static_cast<std::size_t>(st.k_count), 0.0);
        if (!needs_cond()) return probs;
        for (int p = 0; p < st.pairs; ++p) {
            const int ti = st.target_index(p);
            for (int k = 0; k < st.k_count; ++k) {
                Tensor logits = d_net->forward(st.cond[ti][k]);
                double mean = 0.0;
                for (double z : logits.v) mean += sigmoid(z);
                probs[k] += mean / static_cast<double>(logits.v.size()) / st.pairs;
            }
        }
        return probs;
    }
};

}  // namespace groupalign
