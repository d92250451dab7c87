#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "dkmd/tensor.hpp"

namespace dkmd::nn {

// Adam with bias correction. Moment buffers are indexed by the parameter
// registry order, which is fixed per model build.
struct AdamOptimizer {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t step_count = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;

    void init(const std::vector<Parameter*>& params) {
        m.clear();
        v.clear();
        m.reserve(params.size());
        v.reserve(params.size());
        for (const Parameter* p : params) {
            m.emplace_back(p->size(), 0.0);
            v.emplace_back(p->size(), 0.0);
        }
        step_count = 0;
    }

    void step(const std::vector<Parameter*>& params) {
        if (m.size() != params.size())
            throw Error(ErrorCategory::state, "adam: optimizer not initialized for these parameters");
        ++step_count;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
        for (std::size_t k = 0; k < params.size(); ++k) {
            Parameter& p = *params[k];
            if (m[k].size() != p.size())
                throw Error(ErrorCategory::shape, "adam: moment shape mismatch for " + p.name);
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double g = p.grad.data[i];
                m[k][i] = beta1 * m[k][i] + (1.0 - beta1) * g;
                v[k][i] = beta2 * v[k][i] + (1.0 - beta2) * g * g;
                const double mhat = m[k][i] / bc1;
                const double vhat = v[k][i] / bc2;
                p.value.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }
};

inline void zero_grads(const std::vector<Parameter*>& params) {
    for (Parameter* p : params) p->zero_grad();
}

}  // namespace dkmd::nn
