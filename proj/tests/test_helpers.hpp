#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "groupalign/tensor.hpp"

namespace gatest {

using groupalign::Tensor;
using groupalign::fill_normal;
using groupalign::fill_uniform;

inline Tensor random_tensor(int h, int w, int c, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
    Tensor t(h, w, c);
    groupalign::fill_uniform(t.v, rng, lo, hi);
    return t;
}

// Central finite differences of a scalar function over a flat parameter
// vector, compared against the analytic gradient. Returns the worst relative
// error max(|fd - an|) / max(scale, |fd|, |an|).
inline double grad_rel_error(std::vector<double>& params,
                             const std::function<double()>& eval,
                             const std::vector<double>& analytic, double step = 1e-4,
                             double scale = 1e-3) {
    double worst = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double saved = params[i];
        params[i] = saved + step;
        const double up = eval();
        params[i] = saved - step;
        const double down = eval();
        params[i] = saved;
        const double fd = (up - down) / (2.0 * step);
        const double denom = std::max({scale, std::abs(fd), std::abs(analytic[i])});
        worst = std::max(worst, std::abs(fd - analytic[i]) / denom);
    }
    return worst;
}

struct GradCheckResult {
    double worst = 0.0;
    int checked = 0;
    int skipped = 0;  // coordinates whose FD probe straddles an activation kink
};

// Central differences at steps h and h/2 must agree with each other before a
// coordinate counts: composites with ReLU / leaky-ReLU / max have measure-zero
// kinks where FD stops estimating the derivative, and a probe landing across
// one is detectable exactly this way (the two step sizes disagree). A wrong
// analytic gradient cannot hide: away from kinks both FD estimates agree and
// the comparison runs. `indices` empty means every coordinate.
inline GradCheckResult grad_check_filtered(std::vector<double>& params,
                                           const std::function<double()>& eval,
                                           const std::vector<double>& analytic,
                                           std::vector<std::size_t> indices, double step = 1e-4,
                                           double scale = 1e-3) {
    GradCheckResult res;
    if (indices.empty()) {
        indices.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) indices[i] = i;
    }
    auto fd_at = [&](std::size_t i, double h) {
        const double saved = params[i];
        params[i] = saved + h;
        const double up = eval();
        params[i] = saved - h;
        const double down = eval();
        params[i] = saved;
        return (up - down) / (2.0 * h);
    };
    for (std::size_t i : indices) {
        const double fd1 = fd_at(i, step);
        const double fd2 = fd_at(i, step / 2.0);
        const double denom = std::max({scale, std::abs(fd1), std::abs(analytic[i])});
        if (std::abs(fd1 - fd2) > 0.5e-4 * denom) {
            ++res.skipped;
            continue;
        }
        res.worst = std::max(res.worst, std::abs(fd2 - analytic[i]) / denom);
        ++res.checked;
    }
    return res;
}

inline std::vector<std::size_t> sample_indices(std::size_t size, int samples, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, size - 1);
    std::vector<std::size_t> idx;
    for (int s = 0; s < samples; ++s) idx.push_back(pick(rng));
    return idx;
}

// Seeded subset variant; returns the worst relative error over coordinates
// that pass the kink filter and requires most coordinates to be checkable.
inline double grad_rel_error_sampled(std::vector<double>& params,
                                     const std::function<double()>& eval,
                                     const std::vector<double>& analytic, int samples,
                                     std::uint64_t seed, double step = 1e-4,
                                     double scale = 1e-3) {
    GradCheckResult res = grad_check_filtered(
        params, eval, analytic, sample_indices(params.size(), samples, seed), step, scale);
    if (res.checked < samples * 3 / 4) return 1.0;  // too many kink hits to trust the probe
    return res.worst;
}

}  // namespace gatest
