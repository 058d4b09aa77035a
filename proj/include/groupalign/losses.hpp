#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "groupalign/common.hpp"
#include "groupalign/grouping.hpp"

namespace groupalign {

inline constexpr double kCosEps = 1e-8;
inline constexpr double kLogEps = 1e-8;

struct LossWeights {
    double lambda_co = 0.001;
    double lambda_orth = 0.001;
    double lambda_cadv = 0.001;
    double lambda_cl = 0.0001;
    double tau = 0.05;

    void validate() const {
        if (!(lambda_co >= 0 && lambda_orth >= 0 && lambda_cadv >= 0 && lambda_cl >= 0))
            throw ConfigError("loss weights must be non-negative");
        if (!(std::isfinite(lambda_co) && std::isfinite(lambda_orth) && std::isfinite(lambda_cadv) &&
              std::isfinite(lambda_cl)))
            throw ConfigError("loss weights must be finite");
        if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("tau must lie in (0,1)");
    }
};

// Which loss terms participate in the generator objective.
struct LossToggle {
    bool seg = true;
    bool cadv = true;
    bool co = true;
    bool orth = true;
    bool cl = true;
};

struct LossReport {
    double seg = 0.0;
    double co = 0.0;
    double orth = 0.0;
    double cadv_g = 0.0;
    double cl = 0.0;
    double total = 0.0;
    double disc = 0.0;  // discriminator-side objective, informational
    // L2 norms of each term's gradient w.r.t. the score maps
    double gnorm_seg = 0.0;
    double gnorm_co = 0.0;
    double gnorm_orth = 0.0;
    double gnorm_cadv = 0.0;
    double gnorm_cl = 0.0;
    std::vector<double> d_target_prob;  // per-group mean D(target), alignment signal
};

// Sum_k || Q_S^k - Q_T^k ||^2  (squared Euclidean norm).
inline double semantic_consistency_loss(const std::vector<ClassDistribution>& q_source,
                                        const std::vector<ClassDistribution>& q_target,
                                        std::vector<std::vector<double>>* dq_source = nullptr,
                                        std::vector<std::vector<double>>* dq_target = nullptr) {
    if (q_source.size() != q_target.size())
        throw DataError("semantic_consistency_loss: group count mismatch");
    double loss = 0.0;
    for (std::size_t k = 0; k < q_source.size(); ++k) {
        const auto& a = q_source[k];
        const auto& b = q_target[k];
        if (a.size() != b.size()) throw DataError("semantic_consistency_loss: cls mismatch");
        for (std::size_t u = 0; u < a.size(); ++u) {
            const double d = a[u] - b[u];
            loss += d * d;
            if (dq_source) (*dq_source)[k][u] += 2.0 * d;
            if (dq_target) (*dq_target)[k][u] -= 2.0 * d;
        }
    }
    return loss;
}

// a.b / (|a||b| + eps); in [0,1] for non-negative inputs.
inline double cosine_similarity(const ClassDistribution& a, const ClassDistribution& b) {
    if (a.size() != b.size()) throw DataError("cosine_similarity: length mismatch");
    const double denom = l2_norm(a) * l2_norm(b) + kCosEps;
    return dot(a, b) / denom;
}

// Accumulates d cos / da and d cos / db scaled by `scale`.
inline double cosine_similarity_backward(const ClassDistribution& a, const ClassDistribution& b,
                                         double scale, std::vector<double>& da,
                                         std::vector<double>& db) {
    const double na = l2_norm(a);
    const double nb = l2_norm(b);
    const double denom = na * nb + kCosEps;
    const double s = dot(a, b);
    const double c = s / denom;
    for (std::size_t u = 0; u < a.size(); ++u) {
        double ga = b[u] / denom;
        double gb = a[u] / denom;
        if (na > 0.0) ga -= s / (denom * denom) * nb * a[u] / na;
        if (nb > 0.0) gb -= s / (denom * denom) * na * b[u] / nb;
        da[u] += scale * ga;
        db[u] += scale * gb;
    }
    return c;
}

// Sum over both domains of the pairwise (j1 < j2) cosine similarities between
// that domain's group class distributions. Zero when K = 1.
inline double orthogonality_loss(const std::vector<ClassDistribution>& q_source,
                                 const std::vector<ClassDistribution>& q_target,
                                 std::vector<std::vector<double>>* dq_source = nullptr,
                                 std::vector<std::vector<double>>* dq_target = nullptr) {
    double loss = 0.0;
    for (int side = 0; side < 2; ++side) {
        const auto& qs = side == 0 ? q_source : q_target;
        auto* dqs = side == 0 ? dq_source : dq_target;
        const std::size_t k_count = qs.size();
        for (std::size_t j1 = 0; j1 < k_count; ++j1) {
            for (std::size_t j2 = j1 + 1; j2 < k_count; ++j2) {
                if (dqs) {
                    loss += cosine_similarity_backward(qs[j1], qs[j2], 1.0, (*dqs)[j1], (*dqs)[j2]);
                } else {
                    loss += cosine_similarity(qs[j1], qs[j2]);
                }
            }
        }
    }
    return loss;
}

// -Sum_k Sum_u [m_S >= tau] log(m_T + eps). The source side acts as a
// pseudo-label: no gradient flows into it.
inline double class_equivalence_loss(const std::vector<MaxClassScores>& m_source,
                                     const std::vector<MaxClassScores>& m_target, double tau,
                                     std::vector<std::vector<double>>* dm_target = nullptr) {
    if (m_source.size() != m_target.size())
        throw DataError("class_equivalence_loss: group count mismatch");
    if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("class_equivalence_loss: tau outside (0,1)");
    double loss = 0.0;
    for (std::size_t k = 0; k < m_source.size(); ++k) {
        for (std::size_t u = 0; u < m_source[k].size(); ++u) {
            if (m_source[k][u] < tau) continue;
            loss -= std::log(m_target[k][u] + kLogEps);
            if (dm_target) (*dm_target)[k][u] -= 1.0 / (m_target[k][u] + kLogEps);
        }
    }
    return loss;
}

// Eq-6 style weighted sum; fills `total` from the component fields.
inline void total_loss(LossReport& report, const LossWeights& w) {
    w.validate();
    report.total = report.seg + w.lambda_co * report.co + w.lambda_orth * report.orth +
                   w.lambda_cadv * report.cadv_g + w.lambda_cl * report.cl;
}

}  // namespace groupalign
