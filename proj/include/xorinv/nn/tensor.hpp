#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "xorinv/error.hpp"

namespace xorinv::nn {

/// Dense NCHW tensor. Scalar type is float for training and double for
/// gradient checks.
template <typename T>
struct Tensor {
    std::array<std::size_t, 4> shape{};
    std::vector<T> data;

    Tensor() = default;
    Tensor(std::size_t n, std::size_t c, std::size_t h, std::size_t w, T fill = T(0))
        : shape{n, c, h, w}, data(n * c * h * w, fill) {}

    std::size_t batch() const { return shape[0]; }
    std::size_t channels() const { return shape[1]; }
    std::size_t height() const { return shape[2]; }
    std::size_t width() const { return shape[3]; }
    std::size_t plane() const { return shape[2] * shape[3]; }
    std::size_t sample_size() const { return shape[1] * shape[2] * shape[3]; }
    std::size_t size() const { return data.size(); }

    T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
        return data[((n * shape[1] + c) * shape[2] + y) * shape[3] + x];
    }
    T at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
        return data[((n * shape[1] + c) * shape[2] + y) * shape[3] + x];
    }

    std::span<T> sample(std::size_t n) { return std::span<T>(data).subspan(n * sample_size(), sample_size()); }
    std::span<const T> sample(std::size_t n) const {
        return std::span<const T>(data).subspan(n * sample_size(), sample_size());
    }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

template <typename T>
std::string shape_string(const Tensor<T>& t) {
    return "(" + std::to_string(t.shape[0]) + "," + std::to_string(t.shape[1]) + "," + std::to_string(t.shape[2]) + "," +
           std::to_string(t.shape[3]) + ")";
}

/// Rows [begin, end) of the batch axis as a new tensor.
template <typename T>
Tensor<T> slice_batch(const Tensor<T>& t, std::size_t begin, std::size_t end) {
    require(begin <= end && end <= t.batch(), "slice_batch: range out of bounds");
    Tensor<T> out(end - begin, t.channels(), t.height(), t.width());
    std::copy(t.data.begin() + static_cast<std::ptrdiff_t>(begin * t.sample_size()),
              t.data.begin() + static_cast<std::ptrdiff_t>(end * t.sample_size()), out.data.begin());
    return out;
}

}  // namespace xorinv::nn
