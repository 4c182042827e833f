#pragma once

// U-Net building blocks with explicit backward passes. Backward functions
// that produce parameter gradients accumulate (+=) into the given buffers so
// a batch can be processed in pieces.

#include <cstdint>
#include <span>
#include <vector>

#include "xorinv/nn/tensor.hpp"

namespace xorinv::nn {

/// Same-padding (zero) stride-1 cross-correlation with an odd square kernel.
/// kernel: (out_ch, in_ch, k, k) flattened; bias: out_ch.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, std::span<const T> kernel, std::span<const T> bias, std::size_t out_channels,
                         std::size_t kernel_size);

/// dx may be nullptr when the input gradient is not needed.
template <typename T>
void conv2d_backward(const Tensor<T>& x, std::span<const T> kernel, const Tensor<T>& dy, std::size_t kernel_size,
                     Tensor<T>* dx, std::span<T> dkernel, std::span<T> dbias);

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x);

/// Uses the forward output: gradient passes where y > 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& y, const Tensor<T>& dy);

/// 2x2 stride-2 max pooling; argmax holds the flat input index of each output
/// (first maximum on ties).
template <typename T>
Tensor<T> maxpool2_forward(const Tensor<T>& x, std::vector<std::uint32_t>& argmax);

template <typename T>
Tensor<T> maxpool2_backward(const Tensor<T>& dy, const std::vector<std::uint32_t>& argmax,
                            const std::array<std::size_t, 4>& input_shape);

/// 2x2 stride-2 transposed convolution. kernel: (in_ch, out_ch, 2, 2); bias: out_ch.
template <typename T>
Tensor<T> upconv2_forward(const Tensor<T>& x, std::span<const T> kernel, std::span<const T> bias,
                          std::size_t out_channels);

template <typename T>
void upconv2_backward(const Tensor<T>& x, std::span<const T> kernel, const Tensor<T>& dy, Tensor<T>* dx,
                      std::span<T> dkernel, std::span<T> dbias);

/// Channel concatenation [a, b].
template <typename T>
Tensor<T> concat_forward(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
void concat_backward(const Tensor<T>& dy, std::size_t a_channels, Tensor<T>& da, Tensor<T>& db);

/// Mean squared error over all elements; grad = 2 (pred - target) / count.
template <typename T>
struct LossResult {
    double loss = 0.0;
    Tensor<T> grad;
};

template <typename T>
LossResult<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target);

}  // namespace xorinv::nn
