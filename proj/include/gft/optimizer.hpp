#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "gft/autodiff.hpp"

namespace gft {

struct OptimizerConfig {
    enum class Kind { SGD, AdamLike } kind{Kind::AdamLike};
    double learning_rate{1e-3};
    double momentum{0.9};  // SGD momentum and AdamLike beta1
    double beta2{0.999};
    double epsilon_opt{1e-8};
    std::optional<double> grad_clip_norm;

    void validate() const {
        if (!(learning_rate > 0.0)) throw ConfigError("OptimizerConfig: learning_rate must be > 0");
        if (grad_clip_norm && !(*grad_clip_norm > 0.0))
            throw ConfigError("OptimizerConfig: grad_clip_norm must be > 0");
    }
};

struct OptimizerState {
    std::map<std::string, Array> m;  // momentum / first moment
    std::map<std::string, Array> v;  // second moment (AdamLike)
    std::int64_t t{0};
};

inline double global_grad_norm(const GradMap& grads) {
    double s = 0.0;
    for (const auto& [name, g] : grads)
        for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * g[i];
    return std::sqrt(s);
}

inline void optimizer_update(ParameterVector& params, const GradMap& grads, OptimizerState& state,
                             const OptimizerConfig& cfg) {
    cfg.validate();

    double clip_scale = 1.0;
    if (cfg.grad_clip_norm) {
        const double norm = global_grad_norm(grads);
        if (norm > *cfg.grad_clip_norm) clip_scale = *cfg.grad_clip_norm / norm;
    }

    state.t += 1;
    for (std::size_t e = 0; e < params.count(); ++e) {
        const std::string& name = params.name_at(e);
        auto git = grads.find(name);
        if (git == grads.end())
            throw ConfigError("optimizer_update: missing gradient for '" + name + "'");
        const Array& g = git->second;
        Value p = params.value_at(e);
        Array& theta = p.node()->data;
        if (!(g.shape() == theta.shape()))
            throw ShapeError("optimizer_update: gradient shape " + g.shape().str() +
                             " != parameter shape " + theta.shape().str() + " for '" + name + "'");

        if (cfg.kind == OptimizerConfig::Kind::SGD) {
            auto [mit, fresh] = state.m.try_emplace(name, theta.rows(), theta.cols(), 0.0);
            Array& buf = mit->second;
            for (std::size_t i = 0; i < theta.size(); ++i) {
                const double gi = g[i] * clip_scale;
                buf[i] = cfg.momentum * buf[i] + gi;
                theta[i] -= cfg.learning_rate * buf[i];
            }
        } else {
            auto [mit, f1] = state.m.try_emplace(name, theta.rows(), theta.cols(), 0.0);
            auto [vit, f2] = state.v.try_emplace(name, theta.rows(), theta.cols(), 0.0);
            Array& m = mit->second;
            Array& v = vit->second;
            const double b1 = cfg.momentum, b2 = cfg.beta2;
            const double corr1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
            const double corr2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
            for (std::size_t i = 0; i < theta.size(); ++i) {
                const double gi = g[i] * clip_scale;
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                const double mhat = m[i] / corr1;
                const double vhat = v[i] / corr2;
                theta[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon_opt);
            }
        }

        if (!theta.all_finite())
            throw NumericAbort("optimizer_update: non-finite parameter after update in '" + name +
                               "'");
    }
}

}  // namespace gft
