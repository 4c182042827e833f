#include "xorinv/nn/adam.hpp"

#include <cmath>

#include "xorinv/error.hpp"

namespace xorinv::nn {

template <typename T>
AdamState<T> AdamState<T>::create(const ParameterSet<T>& params, AdamConfig config) {
    require(config.lr > 0.0 && config.beta1 >= 0.0 && config.beta1 < 1.0 && config.beta2 >= 0.0 && config.beta2 < 1.0 &&
                config.epsilon > 0.0,
            "AdamConfig: invalid hyperparameters");
    AdamState s;
    s.config = config;
    for (const auto& p : params.params) {
        s.m.emplace_back(p.value.size(), T(0));
        s.v.emplace_back(p.value.size(), T(0));
    }
    return s;
}

template <typename T>
bool adam_step(ParameterSet<T>& params, const Gradients<T>& grads, AdamState<T>& state) {
    require(grads.size() == params.params.size() && state.m.size() == params.params.size(),
            "adam_step: gradient/state count does not match parameters");
    for (std::size_t i = 0; i < grads.size(); ++i) {
        require(grads[i].size() == params.params[i].value.size() && state.m[i].size() == grads[i].size(),
                "adam_step: shape mismatch for parameter '" + params.params[i].name + "'");
        for (T g : grads[i]) {
            if (!std::isfinite(g)) {
                if (state.config.strict)
                    fail(ErrorKind::Divergence, "adam_step: non-finite gradient in '" + params.params[i].name + "'");
                return false;
            }
        }
    }
    const auto& c = state.config;
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(c.beta1, t);
    const double bc2 = 1.0 - std::pow(c.beta2, t);
    const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
    const T step_size = static_cast<T>(c.lr / bc1);
    const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
    const T eps = static_cast<T>(c.epsilon);
    for (std::size_t i = 0; i < grads.size(); ++i) {
        auto& w = params.params[i].value;
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            const T g = grads[i][j];
            m[j] = b1 * m[j] + (T(1) - b1) * g;
            v[j] = b2 * v[j] + (T(1) - b2) * g * g;
            w[j] -= step_size * m[j] / (std::sqrt(v[j]) * inv_sqrt_bc2 + eps);
        }
    }
    return true;
}

template struct AdamState<float>;
template struct AdamState<double>;
template bool adam_step(ParameterSet<float>&, const Gradients<float>&, AdamState<float>&);
template bool adam_step(ParameterSet<double>&, const Gradients<double>&, AdamState<double>&);

}  // namespace xorinv::nn
