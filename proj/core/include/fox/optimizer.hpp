#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "fox/params.hpp"

namespace fox {

struct OptimizerHyper {
    double peak_lr = 4e-4;
    double weight_decay = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;

    void validate() const {
        if (peak_lr <= 0.0) throw std::invalid_argument("optimizer: peak_lr must be positive");
        if (weight_decay < 0.0) throw std::invalid_argument("optimizer: weight_decay must be >= 0");
        if (beta1 <= 0.0 || beta1 >= 1.0 || beta2 <= 0.0 || beta2 >= 1.0)
            throw std::invalid_argument("optimizer: betas must be in (0, 1)");
        if (eps <= 0.0) throw std::invalid_argument("optimizer: eps must be positive");
    }
};

// Thrown when a non-finite gradient reaches the optimizer; training halts
// rather than silently corrupting the parameters.
class GradientError : public std::runtime_error {
public:
    explicit GradientError(const std::string& what) : std::runtime_error(what) {}
};

// Returns the global L2 norm over every gradient tensor.
inline double gradient_norm(const ParameterSet& grads) {
    double sumsq = 0.0;
    grads.visit([&](const std::string&, const Tensor& g) {
        for (std::int64_t i = 0; i < g.size(); ++i)
            sumsq += static_cast<double>(g[i]) * static_cast<double>(g[i]);
    });
    return std::sqrt(sumsq);
}

inline void scale_gradients(ParameterSet& grads, float scale) {
    grads.visit([&](const std::string&, Tensor& g) {
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] *= scale;
    });
}

// One decoupled-AdamW update. `t` is the 1-based update count used for bias
// correction. Weight decay applies to matrices (rank >= 2) only; 1-D norm
// weights are exempt.
inline void adamw_step(ParameterSet& params, const ParameterSet& grads, ParameterSet& m,
                       ParameterSet& v, std::int64_t t, const OptimizerHyper& hyper, double lr) {
    hyper.validate();
    if (lr < 0.0) throw std::invalid_argument("adamw: negative learning rate");
    if (t < 1) throw std::invalid_argument("adamw: update count must be >= 1");
    grads.visit([&](const std::string& name, const Tensor& g) {
        for (std::int64_t i = 0; i < g.size(); ++i)
            if (!std::isfinite(g[i]))
                throw GradientError("adamw: non-finite gradient in " + name);
    });
    const float b1 = static_cast<float>(hyper.beta1);
    const float b2 = static_cast<float>(hyper.beta2);
    const float bc1 = 1.0f - std::pow(b1, static_cast<float>(t));
    const float bc2 = 1.0f - std::pow(b2, static_cast<float>(t));
    const float flr = static_cast<float>(lr);
    const float eps = static_cast<float>(hyper.eps);

    // Walk the three sets in lockstep via index-free zip over visit order.
    std::vector<Tensor*> pt, mt, vt;
    std::vector<const Tensor*> gt;
    std::vector<bool> decay;
    params.visit([&](const std::string&, Tensor& x) {
        pt.push_back(&x);
        decay.push_back(x.rank() >= 2);
    });
    const_cast<ParameterSet&>(grads).visit([&](const std::string&, Tensor& x) { gt.push_back(&x); });
    m.visit([&](const std::string&, Tensor& x) { mt.push_back(&x); });
    v.visit([&](const std::string&, Tensor& x) { vt.push_back(&x); });

    for (std::size_t k = 0; k < pt.size(); ++k) {
        Tensor& p = *pt[k];
        const Tensor& g = *gt[k];
        Tensor& mk = *mt[k];
        Tensor& vk = *vt[k];
        const float wd = decay[k] ? static_cast<float>(hyper.weight_decay) : 0.0f;
        for (std::int64_t i = 0; i < p.size(); ++i) {
            mk[i] = b1 * mk[i] + (1.0f - b1) * g[i];
            vk[i] = b2 * vk[i] + (1.0f - b2) * g[i] * g[i];
            const float mhat = mk[i] / bc1;
            const float vhat = vk[i] / bc2;
            p[i] -= flr * (mhat / (std::sqrt(vhat) + eps)) + flr * wd * p[i];
        }
    }
}

}  // namespace fox
