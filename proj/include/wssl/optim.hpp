#ifndef WSSL_OPTIM_HPP
#define WSSL_OPTIM_HPP

#include <cmath>
#include <cstdint>
#include <vector>

#include "wssl/model.hpp"

namespace wssl::optim {

// Adam with the decoupled-from-nothing classic formulation: weight decay is
// added to the gradient. The learnable temperatures are exempt from decay.
struct Adam {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double weight_decay = 0.0;
    std::int64_t t = 0;
    std::vector<std::vector<double>> m, v;
    std::vector<bool> no_decay;

    void init(const model::ParamStore& ps) {
        t = 0;
        m.resize(ps.params.size());
        v.resize(ps.params.size());
        no_decay.resize(ps.params.size());
        for (std::size_t i = 0; i < ps.params.size(); ++i) {
            m[i].assign(ps.params[i].w.size(), 0.0);
            v[i].assign(ps.params[i].w.size(), 0.0);
            no_decay[i] = ps.params[i].name.rfind("log_t", 0) == 0;
        }
    }

    void step(model::ParamStore& ps, const model::GradBuffer& grads, double lr) {
        ++t;
        double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (std::size_t i = 0; i < ps.params.size(); ++i) {
            auto& w = ps.params[i].w;
            const auto& g = grads.g[i];
            double wd = no_decay[i] ? 0.0 : weight_decay;
            for (std::size_t k = 0; k < w.size(); ++k) {
                double grad = g[k] + wd * w[k];
                m[i][k] = beta1 * m[i][k] + (1.0 - beta1) * grad;
                v[i][k] = beta2 * v[i][k] + (1.0 - beta2) * grad * grad;
                w[k] -= lr * (m[i][k] / bc1) / (std::sqrt(v[i][k] / bc2) + eps);
            }
        }
    }
};

}  // namespace wssl::optim

#endif
