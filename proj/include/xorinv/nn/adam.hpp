#pragma once

#include <cstdint>
#include <vector>

#include "xorinv/nn/unet.hpp"

namespace xorinv::nn {

struct AdamConfig {
    double lr = 2e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    /// Non-finite gradients throw in strict mode; otherwise the step is skipped.
    bool strict = false;
};

template <typename T>
struct AdamState {
    AdamConfig config;
    std::uint64_t step = 0;
    std::vector<std::vector<T>> m;  // first moments, one per parameter
    std::vector<std::vector<T>> v;  // second moments

    static AdamState create(const ParameterSet<T>& params, AdamConfig config);
};

/// One bias-corrected Adam update. Returns false if the step was skipped
/// because of a non-finite gradient (non-strict mode); state is then untouched.
template <typename T>
bool adam_step(ParameterSet<T>& params, const Gradients<T>& grads, AdamState<T>& state);

}  // namespace xorinv::nn
