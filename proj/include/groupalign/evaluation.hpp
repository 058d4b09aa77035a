#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "groupalign/grouping.hpp"
#include "groupalign/image_io.hpp"
#include "groupalign/losses.hpp"
#include "groupalign/seg_model.hpp"

namespace groupalign {

// Rows are ground truth, columns are predictions; ignored pixels never enter.
struct ConfusionMatrix {
    int cls = 0;
    std::vector<long long> counts;

    ConfusionMatrix() = default;
    explicit ConfusionMatrix(int cls_)
        : cls(cls_), counts(static_cast<std::size_t>(cls_) * cls_, 0) {}

    long long& at(int truth, int pred) { return counts[static_cast<std::size_t>(truth) * cls + pred]; }
    long long at(int truth, int pred) const {
        return counts[static_cast<std::size_t>(truth) * cls + pred];
    }

    void add(const LabelMap& truth, const LabelMap& pred) {
        if (truth.h != pred.h || truth.w != pred.w)
            throw DataError("confusion: prediction/ground-truth shape mismatch");
        for (std::size_t i = 0; i < truth.labels.size(); ++i) {
            const int t = truth.labels[i];
            if (t == kIgnoreLabel) continue;
            const int p = pred.labels[i];
            if (t < 0 || t >= cls || p < 0 || p >= cls)
                throw DataError("confusion: label outside [0, cls)");
            at(t, p) += 1;
        }
    }

    // confusion matrices merge, so evaluation can shard over images
    void merge(const ConfusionMatrix& other) {
        for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
    }

    long long total() const {
        long long t = 0;
        for (long long c : counts) t += c;
        return t;
    }
};

struct IouResult {
    std::vector<double> iou;      // NaN where undefined
    std::vector<bool> defined;    // union > 0
    double miou = 0.0;
};

// IoU_u = TP / (TP + FP + FN); classes with zero union are excluded from the
// mean and reported as undefined.
inline IouResult compute_iou(const ConfusionMatrix& cm) {
    IouResult r;
    r.iou.assign(cm.cls, std::nan(""));
    r.defined.assign(cm.cls, false);
    double sum = 0.0;
    int n_defined = 0;
    for (int u = 0; u < cm.cls; ++u) {
        long long tp = cm.at(u, u);
        long long fp = 0, fn = 0;
        for (int v = 0; v < cm.cls; ++v) {
            if (v == u) continue;
            fp += cm.at(v, u);
            fn += cm.at(u, v);
        }
        const long long uni = tp + fp + fn;
        if (uni == 0) continue;
        r.iou[u] = static_cast<double>(tp) / static_cast<double>(uni);
        r.defined[u] = true;
        sum += r.iou[u];
        ++n_defined;
    }
    if (n_defined == 0) throw DataError("compute_iou: every class has zero union");
    r.miou = sum / n_defined;
    return r;
}

inline LabelMap argmax_labels(const Tensor& prob) {
    LabelMap lm(prob.h, prob.w);
    for (int i = 0; i < prob.h * prob.w; ++i) {
        const double* p = prob.v.data() + static_cast<std::size_t>(i) * prob.c;
        int best = 0;
        for (int ch = 1; ch < prob.c; ++ch)
            if (p[ch] > p[best]) best = ch;
        lm.labels[i] = best;
    }
    return lm;
}

// Fixed palette over group indices: evenly spaced hues, deterministic for
// any K.
inline std::vector<std::array<std::uint8_t, 3>> group_palette(int k) {
    std::vector<std::array<std::uint8_t, 3>> palette;
    for (int i = 0; i < k; ++i) {
        const double hue = std::fmod(0.12 + i * 0.61803398875, 1.0) * 6.0;
        const int sector = static_cast<int>(hue);
        const double f = hue - sector;
        const double v = 0.92, s = 0.78;
        const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
        double r = 0, g = 0, b = 0;
        switch (sector % 6) {
            case 0: r = v; g = t; b = p; break;
            case 1: r = q; g = v; b = p; break;
            case 2: r = p; g = v; b = t; break;
            case 3: r = p; g = q; b = v; break;
            case 4: r = t; g = p; b = v; break;
            case 5: r = v; g = p; b = q; break;
        }
        palette.push_back({static_cast<std::uint8_t>(std::lround(r * 255)),
                           static_cast<std::uint8_t>(std::lround(g * 255)),
                           static_cast<std::uint8_t>(std::lround(b * 255))});
    }
    return palette;
}

// Argmax over groups through a fixed palette; ties break toward the lower
// group index.
inline IndexedImage render_group_map(const GroupProbabilities& assign) {
    IndexedImage img(assign.h, assign.w);
    img.palette = group_palette(assign.c);
    for (int i = 0; i < assign.h * assign.w; ++i) {
        const double* a = assign.v.data() + static_cast<std::size_t>(i) * assign.c;
        int best = 0;
        for (int k = 1; k < assign.c; ++k)
            if (a[k] > a[best]) best = k;
        img.idx[i] = static_cast<std::uint8_t>(best);
    }
    return img;
}

// --- deterministic 2-D projection of output distributions -------------------

struct ProjectedPoint {
    double x = 0.0, y = 0.0;
    int cls = 0;
    Domain domain = Domain::source;
};

struct ProjectionResult {
    std::vector<ProjectedPoint> points;
    std::vector<double> mean;             // pooled mean, length cls
    std::vector<std::vector<double>> pc;  // two principal axes
};

namespace detail {

// Jacobi eigen-decomposition of a small symmetric matrix.
inline void jacobi_eigen(std::vector<std::vector<double>>& a, std::vector<double>& eigval,
                         std::vector<std::vector<double>>& eigvec) {
    const int n = static_cast<int>(a.size());
    eigvec.assign(n, std::vector<double>(n, 0.0));
    for (int i = 0; i < n; ++i) eigvec[i][i] = 1.0;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) off += a[i][j] * a[i][j];
        if (off < 1e-24) break;
        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) {
                if (std::abs(a[p][q]) < 1e-30) continue;
                const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int i = 0; i < n; ++i) {
                    const double aip = a[i][p], aiq = a[i][q];
                    a[i][p] = c * aip - s * aiq;
                    a[i][q] = s * aip + c * aiq;
                }
                for (int i = 0; i < n; ++i) {
                    const double api = a[p][i], aqi = a[q][i];
                    a[p][i] = c * api - s * aqi;
                    a[q][i] = s * api + c * aqi;
                }
                for (int i = 0; i < n; ++i) {
                    const double vip = eigvec[i][p], viq = eigvec[i][q];
                    eigvec[i][p] = c * vip - s * viq;
                    eigvec[i][q] = s * vip + c * viq;
                }
            }
        }
    }
    eigval.assign(n, 0.0);
    for (int i = 0; i < n; ++i) eigval[i] = a[i][i];
}

}  // namespace detail

// Pixels are subsampled with the given seed, their class-probability vectors
// projected onto the top-2 principal components of the pooled set.
inline ProjectionResult project_outputs(const std::vector<const Tensor*>& prob_maps,
                                        const std::vector<const LabelMap*>& labels,
                                        const std::vector<Domain>& domains,
                                        int samples_per_map = 256, std::uint64_t seed = 7) {
    if (prob_maps.size() < 2) throw DataError("project_outputs: need at least 2 maps");
    if (prob_maps.size() != labels.size() || prob_maps.size() != domains.size())
        throw DataError("project_outputs: input list length mismatch");
    const int cls = prob_maps[0]->c;

    struct RawPoint {
        std::vector<double> p;
        int cls;
        Domain domain;
    };
    std::vector<RawPoint> raw;
    for (std::size_t m = 0; m < prob_maps.size(); ++m) {
        std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(m)));
        const Tensor& prob = *prob_maps[m];
        const int n_px = prob.h * prob.w;
        std::uniform_int_distribution<int> pick(0, n_px - 1);
        for (int s = 0; s < samples_per_map; ++s) {
            const int i = pick(rng);
            const int lb = labels[m]->labels[i];
            if (lb == kIgnoreLabel) continue;
            RawPoint pt;
            pt.p.assign(prob.v.begin() + static_cast<std::size_t>(i) * cls,
                        prob.v.begin() + static_cast<std::size_t>(i + 1) * cls);
            pt.cls = lb;
            pt.domain = domains[m];
            raw.push_back(std::move(pt));
        }
    }
    if (raw.size() < 2) throw DataError("project_outputs: fewer than 2 sampled points");

    std::vector<double> mean(cls, 0.0);
    for (const RawPoint& pt : raw)
        for (int u = 0; u < cls; ++u) mean[u] += pt.p[u];
    for (double& v : mean) v /= static_cast<double>(raw.size());

    std::vector<std::vector<double>> cov(cls, std::vector<double>(cls, 0.0));
    for (const RawPoint& pt : raw)
        for (int u = 0; u < cls; ++u)
            for (int v = 0; v < cls; ++v) cov[u][v] += (pt.p[u] - mean[u]) * (pt.p[v] - mean[v]);
    for (auto& row : cov)
        for (double& v : row) v /= static_cast<double>(raw.size());

    std::vector<double> eigval;
    std::vector<std::vector<double>> eigvec;
    detail::jacobi_eigen(cov, eigval, eigvec);
    // top-2 eigenvalues
    std::vector<int> order(cls);
    for (int i = 0; i < cls; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) { return eigval[a] > eigval[b]; });

    ProjectionResult res;
    res.mean = mean;
    for (int axis = 0; axis < 2; ++axis) {
        std::vector<double> pc(cls);
        for (int u = 0; u < cls; ++u) pc[u] = eigvec[u][order[axis]];
        // deterministic sign: largest magnitude entry is positive
        int big = 0;
        for (int u = 1; u < cls; ++u)
            if (std::abs(pc[u]) > std::abs(pc[big])) big = u;
        if (pc[big] < 0)
            for (double& v : pc) v = -v;
        res.pc.push_back(std::move(pc));
    }
    for (const RawPoint& pt : raw) {
        ProjectedPoint out;
        for (int u = 0; u < cls; ++u) {
            out.x += (pt.p[u] - mean[u]) * res.pc[0][u];
            out.y += (pt.p[u] - mean[u]) * res.pc[1][u];
        }
        out.cls = pt.cls;
        out.domain = pt.domain;
        res.points.push_back(out);
    }
    return res;
}

// Simple raster scatter: class color, source drawn as filled squares, target
// as crosses.
inline RgbImage render_scatter(const ProjectionResult& proj,
                               const std::vector<std::array<std::uint8_t, 3>>& palette,
                               int size = 512) {
    RgbImage img(size, size);
    std::fill(img.rgb.begin(), img.rgb.end(), 255);
    double lo_x = 1e300, hi_x = -1e300, lo_y = 1e300, hi_y = -1e300;
    for (const ProjectedPoint& p : proj.points) {
        lo_x = std::min(lo_x, p.x);
        hi_x = std::max(hi_x, p.x);
        lo_y = std::min(lo_y, p.y);
        hi_y = std::max(hi_y, p.y);
    }
    const double span_x = hi_x - lo_x > 1e-12 ? hi_x - lo_x : 1.0;
    const double span_y = hi_y - lo_y > 1e-12 ? hi_y - lo_y : 1.0;
    auto put = [&](int y, int x, const std::array<std::uint8_t, 3>& c) {
        if (y < 0 || y >= size || x < 0 || x >= size) return;
        std::uint8_t* px = img.px(y, x);
        px[0] = c[0];
        px[1] = c[1];
        px[2] = c[2];
    };
    for (const ProjectedPoint& p : proj.points) {
        const int x = static_cast<int>((p.x - lo_x) / span_x * (size - 9)) + 4;
        const int y = static_cast<int>((1.0 - (p.y - lo_y) / span_y) * (size - 9)) + 4;
        const auto& c = palette[static_cast<std::size_t>(p.cls) % palette.size()];
        if (p.domain == Domain::source) {
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) put(y + dy, x + dx, c);
        } else {
            for (int d = -2; d <= 2; ++d) {
                put(y + d, x, c);
                put(y, x + d, c);
            }
        }
    }
    return img;
}

// --- grouping diagnostics ----------------------------------------------------

struct GroupDiagnostics {
    std::vector<ClassDistribution> q_source, q_target;  // mean Q per group
    std::vector<double> consistency;                    // ||Q_S^k - Q_T^k|| per group
    std::vector<std::vector<double>> cos_source, cos_target;
    std::vector<double> pixel_share_source, pixel_share_target;
    bool collapsed = false;
};

namespace detail {

inline std::vector<std::vector<double>> cosine_matrix(const std::vector<ClassDistribution>& qs) {
    const std::size_t k = qs.size();
    std::vector<std::vector<double>> m(k, std::vector<double>(k, 0.0));
    for (std::size_t i = 0; i < k; ++i) {
        m[i][i] = 1.0;
        for (std::size_t j = i + 1; j < k; ++j) {
            const double c = cosine_similarity(qs[i], qs[j]);
            m[i][j] = c;
            m[j][i] = c;
        }
    }
    return m;
}

}  // namespace detail

inline GroupDiagnostics group_diagnostics(const std::vector<ClassDistribution>& q_source,
                                          const std::vector<ClassDistribution>& q_target,
                                          const std::vector<double>& pixel_share_source,
                                          const std::vector<double>& pixel_share_target) {
    if (q_source.size() != q_target.size())
        throw DataError("group_diagnostics: group count mismatch");
    GroupDiagnostics d;
    d.q_source = q_source;
    d.q_target = q_target;
    for (std::size_t k = 0; k < q_source.size(); ++k) {
        double s = 0.0;
        for (std::size_t u = 0; u < q_source[k].size(); ++u) {
            const double diff = q_source[k][u] - q_target[k][u];
            s += diff * diff;
        }
        d.consistency.push_back(std::sqrt(s));
    }
    d.cos_source = detail::cosine_matrix(q_source);
    d.cos_target = detail::cosine_matrix(q_target);
    d.pixel_share_source = pixel_share_source;
    d.pixel_share_target = pixel_share_target;
    for (double share : pixel_share_source)
        if (share >= 0.99) d.collapsed = true;
    for (double share : pixel_share_target)
        if (share >= 0.99) d.collapsed = true;
    return d;
}

// Mean group membership over pixels; a collapse detector input.
inline std::vector<double> pixel_shares(const std::vector<const GroupProbabilities*>& assigns) {
    if (assigns.empty()) throw DataError("pixel_shares: no assignments");
    const int k = assigns[0]->c;
    std::vector<double> share(k, 0.0);
    std::size_t total = 0;
    for (const GroupProbabilities* a : assigns) {
        total += static_cast<std::size_t>(a->h) * a->w;
        for (int i = 0; i < a->h * a->w; ++i) {
            const double* p = a->v.data() + static_cast<std::size_t>(i) * k;
            for (int g = 0; g < k; ++g) share[g] += p[g];
        }
    }
    for (double& s : share) s /= static_cast<double>(total);
    return share;
}

}  // namespace groupalign
