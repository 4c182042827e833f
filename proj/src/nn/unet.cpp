#include "xorinv/nn/unet.hpp"

#include <algorithm>
#include <cmath>

#include "xorinv/nn/layers.hpp"
#include "xorinv/rng.hpp"

namespace xorinv::nn {
namespace {

constexpr double kRescaleTop = 1.0 - 0x1.0p-20;  // keeps the interval half-open

// Fixed parameter order; see unet_layout.
struct Index {
    std::size_t depth;
    std::size_t enc(std::size_t level) const { return 4 * level; }
    std::size_t mid() const { return 4 * depth; }
    std::size_t dec(std::size_t level) const { return 4 * depth + 4 + 6 * (depth - 1 - level); }
    std::size_t head() const { return 4 * depth + 4 + 6 * depth; }
};

std::size_t level_width(const UNetConfig& cfg, std::size_t level) { return cfg.base_width << level; }

template <typename T>
std::span<const T> values(const ParameterSet<T>& p, std::size_t i) {
    return p.params[i].value;
}

template <typename T>
typename ForwardCache<T>::Block block_forward(const ParameterSet<T>& p, std::size_t first, const Tensor<T>& input,
                                              std::size_t width, std::size_t k) {
    typename ForwardCache<T>::Block b;
    b.input = input;
    b.hidden = relu_forward(conv2d_forward(input, values(p, first), values(p, first + 1), width, k));
    b.output = relu_forward(conv2d_forward(b.hidden, values(p, first + 2), values(p, first + 3), width, k));
    return b;
}

// Gradient w.r.t. the block input; parameter gradients accumulated.
template <typename T>
Tensor<T> block_backward(const ParameterSet<T>& p, std::size_t first, const typename ForwardCache<T>::Block& b,
                         const Tensor<T>& dout, std::size_t k, Gradients<T>& g) {
    Tensor<T> dh;
    conv2d_backward(b.hidden, values(p, first + 2), relu_backward(b.output, dout), k, &dh, std::span<T>(g[first + 2]),
                    std::span<T>(g[first + 3]));
    Tensor<T> dx;
    conv2d_backward(b.input, values(p, first), relu_backward(b.hidden, dh), k, &dx, std::span<T>(g[first]),
                    std::span<T>(g[first + 1]));
    return dx;
}

template <typename T>
void add_conv(ParameterSet<T>& set, const std::string& name, std::size_t out, std::size_t in, std::size_t k) {
    set.params.push_back({name + ".weight", {out, in, k, k}, std::vector<T>(out * in * k * k)});
    set.params.push_back({name + ".bias", {out}, std::vector<T>(out)});
}

template <typename T>
void add_upconv(ParameterSet<T>& set, const std::string& name, std::size_t in, std::size_t out) {
    set.params.push_back({name + ".weight", {in, out, 2, 2}, std::vector<T>(in * out * 4)});
    set.params.push_back({name + ".bias", {out}, std::vector<T>(out)});
}

}  // namespace

void UNetConfig::validate() const {
    require(depth >= 1, "UNetConfig: depth must be >= 1");
    require(in_channels >= 1 && out_channels >= 1 && base_width >= 1, "UNetConfig: channel counts must be >= 1");
    require(kernel_size == 3, "UNetConfig: kernel_size must be 3");
    require(depth < 16, "UNetConfig: depth too large");
}

void UNetConfig::check_input(std::size_t height, std::size_t width) const {
    const std::size_t div = std::size_t{1} << depth;
    if (height % div != 0 || width % div != 0)
        fail(ErrorKind::InvalidArgument, "U-Net input " + std::to_string(height) + "x" + std::to_string(width) +
                                             " is not divisible by 2^depth = " + std::to_string(div));
}

template <typename T>
std::size_t ParameterSet<T>::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.value.size();
    return n;
}

template <typename T>
const Parameter<T>& ParameterSet<T>::get(const std::string& name) const {
    for (const auto& p : params)
        if (p.name == name) return p;
    fail(ErrorKind::InvalidArgument, "no parameter named '" + name + "'");
}

template <typename T>
Parameter<T>& ParameterSet<T>::get(const std::string& name) {
    return const_cast<Parameter<T>&>(std::as_const(*this).get(name));
}

template <typename T>
Gradients<T> zero_gradients(const ParameterSet<T>& params) {
    Gradients<T> g;
    g.reserve(params.params.size());
    for (const auto& p : params.params) g.emplace_back(p.value.size(), T(0));
    return g;
}

template <typename T>
ParameterSet<T> unet_layout(const UNetConfig& cfg) {
    cfg.validate();
    ParameterSet<T> set;
    const std::size_t k = cfg.kernel_size;
    std::size_t in = cfg.in_channels;
    for (std::size_t l = 0; l < cfg.depth; ++l) {
        const std::size_t w = level_width(cfg, l);
        add_conv(set, "enc" + std::to_string(l) + ".conv1", w, in, k);
        add_conv(set, "enc" + std::to_string(l) + ".conv2", w, w, k);
        in = w;
    }
    const std::size_t wm = level_width(cfg, cfg.depth);
    add_conv(set, "mid.conv1", wm, in, k);
    add_conv(set, "mid.conv2", wm, wm, k);
    for (std::size_t l = cfg.depth; l-- > 0;) {
        const std::size_t w = level_width(cfg, l);
        const std::string name = "dec" + std::to_string(l);
        add_upconv(set, name + ".up", level_width(cfg, l + 1), w);
        add_conv(set, name + ".conv1", w, 2 * w, k);
        add_conv(set, name + ".conv2", w, w, k);
    }
    add_conv(set, "head", cfg.out_channels, cfg.base_width, 1);
    return set;
}

template <typename T>
ParameterSet<T> init_unet(const UNetConfig& cfg, std::uint64_t seed) {
    auto set = unet_layout<T>(cfg);
    Rng rng(seed);
    for (auto& p : set.params) {
        if (p.shape.size() != 4) continue;  // biases stay zero
        // conv weight (out, in, k, k) has fan-in in*k*k; upconv (in, out, 2, 2)
        // feeds each output pixel from `in` inputs.
        const bool is_up = p.name.find(".up.") != std::string::npos;
        const std::size_t fan_in = is_up ? p.shape[0] : p.shape[1] * p.shape[2] * p.shape[3];
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        for (auto& v : p.value) v = static_cast<T>(rng.uniform(-bound, bound));
    }
    return set;
}

template <typename To, typename From>
ParameterSet<To> cast_parameters(const ParameterSet<From>& in) {
    ParameterSet<To> out;
    for (const auto& p : in.params) {
        Parameter<To> q{p.name, p.shape, std::vector<To>(p.value.size())};
        std::transform(p.value.begin(), p.value.end(), q.value.begin(), [](From v) { return static_cast<To>(v); });
        out.params.push_back(std::move(q));
    }
    return out;
}

template <typename T>
Tensor<T> rescale_unit(const Tensor<T>& x) {
    Tensor<T> y = x;
    for (std::size_t n = 0; n < x.batch(); ++n) {
        const auto s = x.sample(n);
        const auto lo = std::min_element(s.begin(), s.end());
        const auto hi = std::max_element(s.begin(), s.end());
        const double range = static_cast<double>(*hi) - static_cast<double>(*lo);
        auto out = y.sample(n);
        if (!(range > 0.0)) {
            std::fill(out.begin(), out.end(), T(0));
            continue;
        }
        const double scale = kRescaleTop / range;
        for (std::size_t i = 0; i < s.size(); ++i)
            out[i] = static_cast<T>((static_cast<double>(s[i]) - static_cast<double>(*lo)) * scale);
    }
    return y;
}

template <typename T>
Tensor<T> rescale_unit_backward(const Tensor<T>& x, const Tensor<T>& dy) {
    require(x.same_shape(dy), "rescale_unit_backward: shape mismatch");
    Tensor<T> dx(x.batch(), x.channels(), x.height(), x.width());
    for (std::size_t n = 0; n < x.batch(); ++n) {
        const auto s = x.sample(n);
        const auto g = dy.sample(n);
        auto out = dx.sample(n);
        const auto lo_it = std::min_element(s.begin(), s.end());
        const auto hi_it = std::max_element(s.begin(), s.end());
        const double lo = *lo_it, hi = *hi_it;
        const double range = hi - lo;
        if (!(range > 0.0)) continue;
        const double scale = kRescaleTop / range;
        // y_j = (x_j - lo) * c / (hi - lo): dy_j/dlo = -scale + y_j/range, dy_j/dhi = -y_j/range.
        double d_lo = 0.0, d_hi = 0.0;
        for (std::size_t j = 0; j < s.size(); ++j) {
            const double yj = (static_cast<double>(s[j]) - lo) * scale;
            d_lo += static_cast<double>(g[j]) * (-scale + yj / range);
            d_hi += static_cast<double>(g[j]) * (-yj / range);
        }
        for (std::size_t j = 0; j < s.size(); ++j) out[j] = static_cast<T>(static_cast<double>(g[j]) * scale);
        out[static_cast<std::size_t>(lo_it - s.begin())] += static_cast<T>(d_lo);
        out[static_cast<std::size_t>(hi_it - s.begin())] += static_cast<T>(d_hi);
    }
    return dx;
}

template <typename T>
Tensor<T> unet_forward(const ParameterSet<T>& params, const UNetConfig& cfg, const Tensor<T>& x, ForwardCache<T>* cache) {
    cfg.validate();
    require(x.channels() == cfg.in_channels, "unet_forward: input has " + std::to_string(x.channels()) +
                                                 " channels, config expects " + std::to_string(cfg.in_channels));
    cfg.check_input(x.height(), x.width());
    const Index idx{cfg.depth};
    require(params.params.size() == idx.head() + 2, "unet_forward: parameter set does not match config");
    const std::size_t k = cfg.kernel_size;

    ForwardCache<T> local;
    ForwardCache<T>& c = cache ? *cache : local;
    c = ForwardCache<T>{};
    c.raw_input = x;
    c.input = cfg.rescale_input ? rescale_unit(x) : x;
    c.pool_argmax.resize(cfg.depth);
    c.up_input.resize(cfg.depth);
    c.decoder.resize(cfg.depth);

    Tensor<T> cur = c.input;
    for (std::size_t l = 0; l < cfg.depth; ++l) {
        c.encoder.push_back(block_forward(params, idx.enc(l), cur, level_width(cfg, l), k));
        cur = maxpool2_forward(c.encoder.back().output, c.pool_argmax[l]);
    }
    c.bottleneck = block_forward(params, idx.mid(), cur, level_width(cfg, cfg.depth), k);
    cur = c.bottleneck.output;
    for (std::size_t l = cfg.depth; l-- > 0;) {
        const std::size_t d = idx.dec(l);
        c.up_input[l] = cur;
        const Tensor<T> up = upconv2_forward(cur, values(params, d), values(params, d + 1), level_width(cfg, l));
        c.decoder[l] = block_forward(params, d + 2, concat_forward(c.encoder[l].output, up), level_width(cfg, l), k);
        cur = c.decoder[l].output;
    }
    return conv2d_forward(cur, values(params, idx.head()), values(params, idx.head() + 1), cfg.out_channels, 1);
}

template <typename T>
Tensor<T> unet_backward(const ParameterSet<T>& params, const UNetConfig& cfg, const ForwardCache<T>& cache,
                        const Tensor<T>& dy, Gradients<T>& grads) {
    const Index idx{cfg.depth};
    require(grads.size() == params.params.size(), "unet_backward: gradient buffers do not match parameters");
    const std::size_t k = cfg.kernel_size;

    Tensor<T> dcur;
    conv2d_backward(cache.decoder[0].output, values(params, idx.head()), dy, 1, &dcur, std::span<T>(grads[idx.head()]),
                    std::span<T>(grads[idx.head() + 1]));

    std::vector<Tensor<T>> dskip(cfg.depth);
    for (std::size_t l = 0; l < cfg.depth; ++l) {
        const std::size_t d = idx.dec(l);
        const Tensor<T> dcat = block_backward(params, d + 2, cache.decoder[l], dcur, k, grads);
        Tensor<T> dup;
        concat_backward(dcat, cache.encoder[l].output.channels(), dskip[l], dup);
        upconv2_backward(cache.up_input[l], values(params, d), dup, &dcur, std::span<T>(grads[d]),
                         std::span<T>(grads[d + 1]));
    }
    dcur = block_backward(params, idx.mid(), cache.bottleneck, dcur, k, grads);
    for (std::size_t l = cfg.depth; l-- > 0;) {
        Tensor<T> dout = maxpool2_backward(dcur, cache.pool_argmax[l], cache.encoder[l].output.shape);
        for (std::size_t i = 0; i < dout.size(); ++i) dout.data[i] += dskip[l].data[i];
        dcur = block_backward(params, idx.enc(l), cache.encoder[l], dout, k, grads);
    }
    return cfg.rescale_input ? rescale_unit_backward(cache.raw_input, dcur) : dcur;
}

#define XORINV_INSTANTIATE_UNET(T)                                                                                     \
    template struct ParameterSet<T>;                                                                                   \
    template Gradients<T> zero_gradients(const ParameterSet<T>&);                                                      \
    template ParameterSet<T> unet_layout(const UNetConfig&);                                                           \
    template ParameterSet<T> init_unet(const UNetConfig&, std::uint64_t);                                              \
    template Tensor<T> rescale_unit(const Tensor<T>&);                                                                 \
    template Tensor<T> rescale_unit_backward(const Tensor<T>&, const Tensor<T>&);                                      \
    template Tensor<T> unet_forward(const ParameterSet<T>&, const UNetConfig&, const Tensor<T>&, ForwardCache<T>*);   \
    template Tensor<T> unet_backward(const ParameterSet<T>&, const UNetConfig&, const ForwardCache<T>&,               \
                                     const Tensor<T>&, Gradients<T>&);

XORINV_INSTANTIATE_UNET(float)
XORINV_INSTANTIATE_UNET(double)
template ParameterSet<double> cast_parameters(const ParameterSet<float>&);
template ParameterSet<float> cast_parameters(const ParameterSet<double>&);

}  // namespace xorinv::nn
