#pragma once

#include "glassdet/tensor.hpp"

#include <vector>

namespace glassdet {

/// Adam with bias correction. Parameters without requires_grad are skipped,
/// so frozen gates stay untouched.
struct AdamOptimizer {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t step_count = 0;

    std::vector<Tensor> params;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;

    AdamOptimizer() = default;
    AdamOptimizer(std::vector<Tensor> params_, double lr_) : lr(lr_), params(std::move(params_)) {
        m.resize(params.size());
        v.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            m[i].assign(params[i].data().size(), 0.0);
            v[i].assign(params[i].data().size(), 0.0);
        }
    }

    void zero_grad() {
        for (Tensor& p : params) p.zero_grad();
    }

    void step() {
        ++step_count;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
        for (size_t i = 0; i < params.size(); ++i) {
            Tensor& p = params[i];
            if (!p.requires_grad() || !p.has_grad()) continue;
            const std::vector<double>& g = p.grad();
            std::vector<double>& mi = m[i];
            std::vector<double>& vi = v[i];
            std::vector<double>& w = p.data();
            for (size_t j = 0; j < w.size(); ++j) {
                mi[j] = beta1 * mi[j] + (1.0 - beta1) * g[j];
                vi[j] = beta2 * vi[j] + (1.0 - beta2) * g[j] * g[j];
                const double mhat = mi[j] / bc1;
                const double vhat = vi[j] / bc2;
                w[j] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }

    double grad_norm() const {
        double s = 0.0;
        for (const Tensor& p : params) {
            if (!p.has_grad()) continue;
            for (double g : p.grad()) s += g * g;
        }
        return std::sqrt(s);
    }
};

}  // namespace glassdet
