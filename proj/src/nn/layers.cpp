#include "xorinv/nn/layers.hpp"

// Small products would otherwise take Eigen's coefficient-based path, whose
// reductions depend on buffer alignment; the packed GEMM kernel has a fixed
// summation order, which keeps training bit-reproducible.
#define EIGEN_GEMM_TO_COEFFBASED_THRESHOLD 1
#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace xorinv::nn {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// col: (C*k*k) x (H*W), zero outside the image.
template <typename T>
void im2col(const T* x, std::size_t c, std::size_t h, std::size_t w, std::size_t k, T* col) {
    const auto pad = static_cast<std::ptrdiff_t>(k / 2);
    const auto hh = static_cast<std::ptrdiff_t>(h), ww = static_cast<std::ptrdiff_t>(w);
    for (std::size_t ci = 0; ci < c; ++ci) {
        const T* plane = x + ci * h * w;
        for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
                T* row = col + ((ci * k + ky) * k + kx) * h * w;
                const auto dy = static_cast<std::ptrdiff_t>(ky) - pad;
                const auto dx = static_cast<std::ptrdiff_t>(kx) - pad;
                for (std::ptrdiff_t y = 0; y < hh; ++y) {
                    const std::ptrdiff_t sy = y + dy;
                    T* out = row + y * ww;
                    if (sy < 0 || sy >= hh) {
                        std::fill(out, out + ww, T(0));
                        continue;
                    }
                    const T* src = plane + sy * ww;
                    // Kernels wider than the image leave an empty valid range.
                    const std::ptrdiff_t x0 = std::clamp<std::ptrdiff_t>(-dx, 0, ww);
                    const std::ptrdiff_t x1 = std::clamp<std::ptrdiff_t>(ww - dx, x0, ww);
                    std::fill(out, out + x0, T(0));
                    for (std::ptrdiff_t xx = x0; xx < x1; ++xx) out[xx] = src[xx + dx];
                    std::fill(out + x1, out + ww, T(0));
                }
            }
    }
}

template <typename T>
void col2im_add(const T* col, std::size_t c, std::size_t h, std::size_t w, std::size_t k, T* x) {
    const auto pad = static_cast<std::ptrdiff_t>(k / 2);
    const auto hh = static_cast<std::ptrdiff_t>(h), ww = static_cast<std::ptrdiff_t>(w);
    for (std::size_t ci = 0; ci < c; ++ci) {
        T* plane = x + ci * h * w;
        for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
                const T* row = col + ((ci * k + ky) * k + kx) * h * w;
                const auto dy = static_cast<std::ptrdiff_t>(ky) - pad;
                const auto dx = static_cast<std::ptrdiff_t>(kx) - pad;
                for (std::ptrdiff_t y = 0; y < hh; ++y) {
                    const std::ptrdiff_t sy = y + dy;
                    if (sy < 0 || sy >= hh) continue;
                    T* dst = plane + sy * ww;
                    const T* src = row + y * ww;
                    const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx);
                    const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(ww, ww - dx);
                    for (std::ptrdiff_t xx = x0; xx < x1; ++xx) dst[xx + dx] += src[xx];
                }
            }
    }
}

void check_kernel(std::size_t kernel_size) {
    require(kernel_size % 2 == 1, "conv2d: kernel size must be odd for same padding");
}

}  // namespace

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, std::span<const T> kernel, std::span<const T> bias, std::size_t out_channels,
                         std::size_t kernel_size) {
    check_kernel(kernel_size);
    const std::size_t cin = x.channels(), hw = x.plane(), kk = kernel_size * kernel_size;
    require(kernel.size() == out_channels * cin * kk,
            "conv2d: kernel has " + std::to_string(kernel.size()) + " values, expected " +
                std::to_string(out_channels * cin * kk) + " for input " + shape_string(x));
    require(bias.size() == out_channels, "conv2d: bias size does not match output channels");
    Tensor<T> y(x.batch(), out_channels, x.height(), x.width());
    const ConstMatMap<T> wmat(kernel.data(), static_cast<Eigen::Index>(out_channels), static_cast<Eigen::Index>(cin * kk));
    const Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> b(bias.data(), static_cast<Eigen::Index>(out_channels));
    std::vector<T> col(kernel_size == 1 ? 0 : cin * kk * hw);
    for (std::size_t n = 0; n < x.batch(); ++n) {
        const T* src = x.sample(n).data();
        if (kernel_size != 1) {
            im2col(src, cin, x.height(), x.width(), kernel_size, col.data());
            src = col.data();
        }
        const ConstMatMap<T> cmat(src, static_cast<Eigen::Index>(cin * kk), static_cast<Eigen::Index>(hw));
        MatMap<T> out(y.sample(n).data(), static_cast<Eigen::Index>(out_channels), static_cast<Eigen::Index>(hw));
        out.noalias() = wmat * cmat;
        out.colwise() += b;
    }
    return y;
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, std::span<const T> kernel, const Tensor<T>& dy, std::size_t kernel_size,
                     Tensor<T>* dx, std::span<T> dkernel, std::span<T> dbias) {
    check_kernel(kernel_size);
    const std::size_t cin = x.channels(), cout = dy.channels(), hw = x.plane(), kk = kernel_size * kernel_size;
    require(dy.batch() == x.batch() && dy.height() == x.height() && dy.width() == x.width(),
            "conv2d_backward: output gradient shape " + shape_string(dy) + " does not match input " + shape_string(x));
    require(kernel.size() == cout * cin * kk && dkernel.size() == kernel.size() && dbias.size() == cout,
            "conv2d_backward: parameter buffer size mismatch");
    if (dx) {
        *dx = Tensor<T>(x.batch(), cin, x.height(), x.width());
    }
    const auto rows = static_cast<Eigen::Index>(cin * kk);
    const ConstMatMap<T> wmat(kernel.data(), static_cast<Eigen::Index>(cout), rows);
    MatMap<T> dw(dkernel.data(), static_cast<Eigen::Index>(cout), rows);
    std::vector<T> col(cin * kk * hw);
    for (std::size_t n = 0; n < x.batch(); ++n) {
        const ConstMatMap<T> g(dy.sample(n).data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(hw));
        for (std::size_t o = 0; o < cout; ++o) {
            const T* row = dy.sample(n).data() + o * hw;
            T s = T(0);
            for (std::size_t i = 0; i < hw; ++i) s += row[i];
            dbias[o] += s;
        }
        const T* src = x.sample(n).data();
        if (kernel_size != 1) {
            im2col(src, cin, x.height(), x.width(), kernel_size, col.data());
            src = col.data();
        }
        const ConstMatMap<T> cmat(src, rows, static_cast<Eigen::Index>(hw));
        dw.noalias() += g * cmat.transpose();
        if (dx) {
            if (kernel_size == 1) {
                MatMap<T> dxm(dx->sample(n).data(), rows, static_cast<Eigen::Index>(hw));
                dxm.noalias() = wmat.transpose() * g;
            } else {
                MatMap<T> dcol(col.data(), rows, static_cast<Eigen::Index>(hw));
                dcol.noalias() = wmat.transpose() * g;
                col2im_add(col.data(), cin, x.height(), x.width(), kernel_size, dx->sample(n).data());
            }
        }
    }
}

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x) {
    Tensor<T> y = x;
    for (auto& v : y.data) v = v > T(0) ? v : T(0);
    return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& y, const Tensor<T>& dy) {
    require(y.same_shape(dy), "relu_backward: shape mismatch");
    Tensor<T> dx = dy;
    for (std::size_t i = 0; i < dx.data.size(); ++i)
        if (!(y.data[i] > T(0))) dx.data[i] = T(0);
    return dx;
}

template <typename T>
Tensor<T> maxpool2_forward(const Tensor<T>& x, std::vector<std::uint32_t>& argmax) {
    require(x.height() % 2 == 0 && x.width() % 2 == 0,
            "maxpool2: input " + shape_string(x) + " must have even height and width");
    const std::size_t oh = x.height() / 2, ow = x.width() / 2;
    Tensor<T> y(x.batch(), x.channels(), oh, ow);
    argmax.assign(y.size(), 0);
    std::size_t o = 0;
    for (std::size_t p = 0; p < x.batch() * x.channels(); ++p) {
        const std::size_t base = p * x.plane();
        for (std::size_t r = 0; r < oh; ++r)
            for (std::size_t c = 0; c < ow; ++c, ++o) {
                std::size_t best = base + 2 * r * x.width() + 2 * c;
                for (std::size_t candidate : {best + 1, best + x.width(), best + x.width() + 1})
                    if (x.data[candidate] > x.data[best]) best = candidate;
                y.data[o] = x.data[best];
                argmax[o] = static_cast<std::uint32_t>(best);
            }
    }
    return y;
}

template <typename T>
Tensor<T> maxpool2_backward(const Tensor<T>& dy, const std::vector<std::uint32_t>& argmax,
                            const std::array<std::size_t, 4>& input_shape) {
    require(argmax.size() == dy.size(), "maxpool2_backward: argmax does not match gradient");
    Tensor<T> dx(input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    for (std::size_t i = 0; i < dy.size(); ++i) dx.data[argmax[i]] += dy.data[i];
    return dx;
}

// The transposed convolution is a GEMM: Z = K^T X, Z: (out*4) x (H*W), where
// row (co*4 + a*2 + b) of Z scatters to output pixel (2i+a, 2j+b).
template <typename T>
Tensor<T> upconv2_forward(const Tensor<T>& x, std::span<const T> kernel, std::span<const T> bias,
                          std::size_t out_channels) {
    const std::size_t cin = x.channels(), h = x.height(), w = x.width(), hw = x.plane();
    require(kernel.size() == cin * out_channels * 4,
            "upconv2: kernel has " + std::to_string(kernel.size()) + " values, expected " +
                std::to_string(cin * out_channels * 4) + " for input " + shape_string(x));
    require(bias.size() == out_channels, "upconv2: bias size does not match output channels");
    Tensor<T> y(x.batch(), out_channels, 2 * h, 2 * w);
    const ConstMatMap<T> kmat(kernel.data(), static_cast<Eigen::Index>(cin), static_cast<Eigen::Index>(out_channels * 4));
    RowMat<T> z(static_cast<Eigen::Index>(out_channels * 4), static_cast<Eigen::Index>(hw));
    for (std::size_t n = 0; n < x.batch(); ++n) {
        const ConstMatMap<T> xm(x.sample(n).data(), static_cast<Eigen::Index>(cin), static_cast<Eigen::Index>(hw));
        z.noalias() = kmat.transpose() * xm;
        for (std::size_t co = 0; co < out_channels; ++co)
            for (std::size_t a = 0; a < 2; ++a)
                for (std::size_t b = 0; b < 2; ++b) {
                    const T* zr = z.data() + (co * 4 + a * 2 + b) * hw;
                    for (std::size_t i = 0; i < h; ++i)
                        for (std::size_t j = 0; j < w; ++j) y.at(n, co, 2 * i + a, 2 * j + b) = zr[i * w + j] + bias[co];
                }
    }
    return y;
}

template <typename T>
void upconv2_backward(const Tensor<T>& x, std::span<const T> kernel, const Tensor<T>& dy, Tensor<T>* dx,
                      std::span<T> dkernel, std::span<T> dbias) {
    const std::size_t cin = x.channels(), cout = dy.channels(), h = x.height(), w = x.width(), hw = x.plane();
    require(dy.batch() == x.batch() && dy.height() == 2 * h && dy.width() == 2 * w,
            "upconv2_backward: output gradient shape " + shape_string(dy) + " does not match input " + shape_string(x));
    require(kernel.size() == cin * cout * 4 && dkernel.size() == kernel.size() && dbias.size() == cout,
            "upconv2_backward: parameter buffer size mismatch");
    if (dx) *dx = Tensor<T>(x.batch(), cin, h, w);
    const ConstMatMap<T> kmat(kernel.data(), static_cast<Eigen::Index>(cin), static_cast<Eigen::Index>(cout * 4));
    MatMap<T> dk(dkernel.data(), static_cast<Eigen::Index>(cin), static_cast<Eigen::Index>(cout * 4));
    RowMat<T> dz(static_cast<Eigen::Index>(cout * 4), static_cast<Eigen::Index>(hw));
    for (std::size_t n = 0; n < x.batch(); ++n) {
        for (std::size_t co = 0; co < cout; ++co)
            for (std::size_t a = 0; a < 2; ++a)
                for (std::size_t b = 0; b < 2; ++b) {
                    T* zr = dz.data() + (co * 4 + a * 2 + b) * hw;
                    for (std::size_t i = 0; i < h; ++i)
                        for (std::size_t j = 0; j < w; ++j) {
                            const T g = dy.at(n, co, 2 * i + a, 2 * j + b);
                            zr[i * w + j] = g;
                            dbias[co] += g;
                        }
                }
        const ConstMatMap<T> xm(x.sample(n).data(), static_cast<Eigen::Index>(cin), static_cast<Eigen::Index>(hw));
        dk.noalias() += xm * dz.transpose();
        if (dx) {
            MatMap<T> dxm(dx->sample(n).data(), static_cast<Eigen::Index>(cin), static_cast<Eigen::Index>(hw));
            dxm.noalias() = kmat * dz;
        }
    }
}

template <typename T>
Tensor<T> concat_forward(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.batch() == b.batch() && a.height() == b.height() && a.width() == b.width(),
            "concat: shapes " + shape_string(a) + " and " + shape_string(b) + " differ outside the channel axis");
    Tensor<T> y(a.batch(), a.channels() + b.channels(), a.height(), a.width());
    for (std::size_t n = 0; n < a.batch(); ++n) {
        auto out = y.sample(n);
        std::copy(a.sample(n).begin(), a.sample(n).end(), out.begin());
        std::copy(b.sample(n).begin(), b.sample(n).end(), out.begin() + static_cast<std::ptrdiff_t>(a.sample_size()));
    }
    return y;
}

template <typename T>
void concat_backward(const Tensor<T>& dy, std::size_t a_channels, Tensor<T>& da, Tensor<T>& db) {
    require(a_channels <= dy.channels(), "concat_backward: split point beyond channel count");
    da = Tensor<T>(dy.batch(), a_channels, dy.height(), dy.width());
    db = Tensor<T>(dy.batch(), dy.channels() - a_channels, dy.height(), dy.width());
    for (std::size_t n = 0; n < dy.batch(); ++n) {
        const auto g = dy.sample(n);
        std::copy(g.begin(), g.begin() + static_cast<std::ptrdiff_t>(da.sample_size()), da.sample(n).begin());
        std::copy(g.begin() + static_cast<std::ptrdiff_t>(da.sample_size()), g.end(), db.sample(n).begin());
    }
}

template <typename T>
LossResult<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    require(pred.same_shape(target), "mse_loss: prediction " + shape_string(pred) + " vs target " + shape_string(target));
    require(pred.size() > 0, "mse_loss: empty tensors");
    LossResult<T> r;
    r.grad = Tensor<T>(pred.batch(), pred.channels(), pred.height(), pred.width());
    const double count = static_cast<double>(pred.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = static_cast<double>(pred.data[i]) - static_cast<double>(target.data[i]);
        sum += d * d;
        r.grad.data[i] = static_cast<T>(2.0 * d / count);
    }
    r.loss = sum / count;
    return r;
}

#define XORINV_INSTANTIATE_LAYERS(T)                                                                                   \
    template Tensor<T> conv2d_forward(const Tensor<T>&, std::span<const T>, std::span<const T>, std::size_t,          \
                                      std::size_t);                                                                    \
    template void conv2d_backward(const Tensor<T>&, std::span<const T>, const Tensor<T>&, std::size_t, Tensor<T>*,    \
                                  std::span<T>, std::span<T>);                                                         \
    template Tensor<T> relu_forward(const Tensor<T>&);                                                                 \
    template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                                              \
    template Tensor<T> maxpool2_forward(const Tensor<T>&, std::vector<std::uint32_t>&);                                \
    template Tensor<T> maxpool2_backward(const Tensor<T>&, const std::vector<std::uint32_t>&,                          \
                                         const std::array<std::size_t, 4>&);                                           \
    template Tensor<T> upconv2_forward(const Tensor<T>&, std::span<const T>, std::span<const T>, std::size_t);         \
    template void upconv2_backward(const Tensor<T>&, std::span<const T>, const Tensor<T>&, Tensor<T>*, std::span<T>,  \
                                   std::span<T>);                                                                      \
    template Tensor<T> concat_forward(const Tensor<T>&, const Tensor<T>&);                                             \
    template void concat_backward(const Tensor<T>&, std::size_t, Tensor<T>&, Tensor<T>&);                              \
    template LossResult<T> mse_loss(const Tensor<T>&, const Tensor<T>&);

XORINV_INSTANTIATE_LAYERS(float)
XORINV_INSTANTIATE_LAYERS(double)

}  // namespace xorinv::nn
