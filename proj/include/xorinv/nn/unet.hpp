#pragma once

// Same-padding U-Net: `depth` encoder levels (two 3x3 conv + ReLU, then 2x2
// max pooling), a bottleneck block, `depth` decoder levels (2x2 transposed
// conv, skip concatenation, two 3x3 conv + ReLU) and a 1x1 output conv.
// Level l has base_width * 2^l channels; output size equals input size.

#include <cstdint>
#include <string>
#include <vector>

#include "xorinv/nn/tensor.hpp"

namespace xorinv::nn {

struct UNetConfig {
    std::size_t in_channels = 12;
    std::size_t out_channels = 3;
    std::size_t base_width = 64;
    std::size_t depth = 4;
    std::size_t kernel_size = 3;
    /// Affinely map every input sample to [0,1) using its own min/max.
    bool rescale_input = true;

    void validate() const;
    /// Throws unless height and width are divisible by 2^depth.
    void check_input(std::size_t height, std::size_t width) const;

    friend bool operator==(const UNetConfig&, const UNetConfig&) = default;
};

template <typename T>
struct Parameter {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<T> value;
};

template <typename T>
struct ParameterSet {
    std::vector<Parameter<T>> params;

    std::size_t scalar_count() const;
    const Parameter<T>& get(const std::string& name) const;
    Parameter<T>& get(const std::string& name);
};

/// One gradient buffer per parameter, same order as ParameterSet::params.
template <typename T>
using Gradients = std::vector<std::vector<T>>;

template <typename T>
Gradients<T> zero_gradients(const ParameterSet<T>& params);

/// Parameter names and shapes implied by the config, zero-valued.
template <typename T>
ParameterSet<T> unet_layout(const UNetConfig& cfg);

/// Fan-in scaled uniform init U(-sqrt(6/fan_in), sqrt(6/fan_in)); biases zero.
template <typename T>
ParameterSet<T> init_unet(const UNetConfig& cfg, std::uint64_t seed);

template <typename To, typename From>
ParameterSet<To> cast_parameters(const ParameterSet<From>& in);

/// Activations kept by the forward pass for backpropagation.
template <typename T>
struct ForwardCache {
    struct Block {
        Tensor<T> input, hidden, output;  // output = relu(conv2(relu(conv1(input))))
    };
    Tensor<T> raw_input;
    Tensor<T> input;  // after rescaling
    std::vector<Block> encoder;
    std::vector<std::vector<std::uint32_t>> pool_argmax;
    Block bottleneck;
    std::vector<Tensor<T>> up_input;  // per decoder level (indexed by level)
    std::vector<Block> decoder;       // indexed by level
};

template <typename T>
Tensor<T> unet_forward(const ParameterSet<T>& params, const UNetConfig& cfg, const Tensor<T>& x,
                       ForwardCache<T>* cache = nullptr);

/// Accumulates parameter gradients of a loss whose output gradient is `dy`.
/// Returns the gradient with respect to the raw (un-rescaled) input.
template <typename T>
Tensor<T> unet_backward(const ParameterSet<T>& params, const UNetConfig& cfg, const ForwardCache<T>& cache,
                        const Tensor<T>& dy, Gradients<T>& grads);

/// Per-sample rescaling to [0,1) and its backward pass.
template <typename T>
Tensor<T> rescale_unit(const Tensor<T>& x);
template <typename T>
Tensor<T> rescale_unit_backward(const Tensor<T>& x, const Tensor<T>& dy);

}  // namespace xorinv::nn
