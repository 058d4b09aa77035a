#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "groupalign/common.hpp"
#include "groupalign/nn.hpp"

namespace groupalign {

// base_lr * (1 - iteration/total)^power
inline double poly_lr(double base_lr, long long iteration, long long total, double power) {
    if (iteration < 0 || iteration > total) throw ConfigError("poly_lr: iteration outside [0, total]");
    const double frac = 1.0 - static_cast<double>(iteration) / static_cast<double>(total);
    return base_lr * std::pow(frac, power);
}

// SGD with optional momentum; state buffers are keyed by parameter name so
// they survive checkpoints.
struct SgdOptimizer {
    double momentum = 0.0;
    std::map<std::string, std::vector<double>> velocity;

    void step(const std::vector<ParamRef>& params, double lr) {
        for (const ParamRef& p : params) {
            if (momentum > 0.0) {
                auto& v = velocity[p.name];
                if (v.size() != p.value->size()) v.assign(p.value->size(), 0.0);
                for (std::size_t i = 0; i < v.size(); ++i) {
                    v[i] = momentum * v[i] + (*p.grad)[i];
                    (*p.value)[i] -= lr * v[i];
                }
            } else {
                for (std::size_t i = 0; i < p.value->size(); ++i)
                    (*p.value)[i] -= lr * (*p.grad)[i];
            }
        }
    }
};

struct AdamOptimizer {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long long t = 0;
    std::map<std::string, std::vector<double>> m, v;

    void step(const std::vector<ParamRef>& params, double lr) {
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (const ParamRef& p : params) {
            auto& m_buf = m[p.name];
            auto& v_buf = v[p.name];
            if (m_buf.size() != p.value->size()) m_buf.assign(p.value->size(), 0.0);
            if (v_buf.size() != p.value->size()) v_buf.assign(p.value->size(), 0.0);
            for (std::size_t i = 0; i < p.value->size(); ++i) {
                const double g = (*p.grad)[i];
                m_buf[i] = beta1 * m_buf[i] + (1.0 - beta1) * g;
                v_buf[i] = beta2 * v_buf[i] + (1.0 - beta2) * g * g;
                const double mhat = m_buf[i] / bc1;
                const double vhat = v_buf[i] / bc2;
                (*p.value)[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }
};

}  // namespace groupalign
