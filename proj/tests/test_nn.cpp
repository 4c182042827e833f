#include <doctest.h>

#include <array>
#include <cmath>
#include <memory>
#include <set>

#include "support/gradcheck.hpp"
#include "xorinv/error.hpp"
#include "xorinv/nn/adam.hpp"
#include "xorinv/nn/layers.hpp"
#include "xorinv/nn/unet.hpp"
#include "xorinv/rng.hpp"

using namespace xorinv;
using namespace xorinv::nn;

namespace {

Tensor<double> random_tensor(Rng& rng, std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    Tensor<double> t(n, c, h, w);
    for (auto& v : t.data) v = rng.uniform(-1.0, 1.0);
    return t;
}

}  // namespace

TEST_CASE("layer gradients agree with finite differences") {
    Rng rng(1);
    const auto results = gradcheck::all_layers(rng, 15);
    CHECK(results.size() >= 100);
    std::size_t checked = 0, skipped = 0;
    for (const auto& r : results) {
        INFO(r.what);
        CHECK(r.rel_error <= 1e-5);
        checked += r.checked;
        skipped += r.skipped;
    }
    CHECK(skipped * 100 <= checked + skipped);
}

TEST_CASE("U-Net gradients agree with finite differences") {
    Rng rng(2);
    std::size_t checked = 0, skipped = 0;
    for (int i = 0; i < 100; ++i) {
        const auto r = gradcheck::unet(rng);
        INFO(r.what);
        CHECK(r.rel_error <= 1e-4);
        checked += r.checked;
        skipped += r.skipped;
    }
    CHECK(skipped * 100 <= checked + skipped);
}

TEST_CASE("conv2d analytic cases") {
    Rng rng(3);
    const auto x = random_tensor(rng, 2, 3, 5, 4);
    std::vector<double> delta(3 * 3 * 9, 0.0), bias(3, 0.0);
    for (std::size_t c = 0; c < 3; ++c) delta[(c * 3 + c) * 9 + 4] = 1.0;
    CHECK(conv2d_forward<double>(x, delta, bias, 3, 3).data == x.data);

    Tensor<double> ones(1, 1, 4, 5, 1.0);
    std::vector<double> k(9, 1.0), b(1, 0.0);
    const auto y = conv2d_forward<double>(ones, k, b, 1, 3);
    CHECK(y.at(0, 0, 1, 1) == 9.0);
    CHECK(y.at(0, 0, 2, 3) == 9.0);
    CHECK(y.at(0, 0, 0, 0) == 4.0);
    CHECK(y.at(0, 0, 3, 4) == 4.0);
    CHECK(y.at(0, 0, 0, 2) == 6.0);

    CHECK_THROWS_AS(conv2d_forward<double>(ones, std::vector<double>(8, 1.0), b, 1, 3), Error);
}

TEST_CASE("conv2d matches a direct convolution when the kernel is wider than the image") {
    Rng rng(31);
    for (const auto [h, w, k] : {std::array<std::size_t, 3>{1, 1, 5}, {2, 1, 5}, {1, 3, 5}, {2, 2, 7}, {3, 1, 3}}) {
        const auto x = random_tensor(rng, 1, 2, h, w);
        std::vector<double> kernel(2 * 2 * k * k), bias(2, 0.0);
        for (auto& v : kernel) v = rng.uniform(-1.0, 1.0);
        const auto y = conv2d_forward<double>(x, kernel, bias, 2, k);
        const auto pad = static_cast<std::ptrdiff_t>(k / 2);
        for (std::size_t o = 0; o < 2; ++o)
            for (std::size_t r = 0; r < h; ++r)
                for (std::size_t c = 0; c < w; ++c) {
                    double want = 0.0;
                    for (std::size_t i = 0; i < 2; ++i)
                        for (std::size_t ky = 0; ky < k; ++ky)
                            for (std::size_t kx = 0; kx < k; ++kx) {
                                const auto sy = static_cast<std::ptrdiff_t>(r + ky) - pad;
                                const auto sx = static_cast<std::ptrdiff_t>(c + kx) - pad;
                                if (sy < 0 || sx < 0 || sy >= static_cast<std::ptrdiff_t>(h) || sx >= static_cast<std::ptrdiff_t>(w))
                                    continue;
                                want += kernel[((o * 2 + i) * k + ky) * k + kx] *
                                        x.at(0, i, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
                            }
                    CHECK(y.at(0, o, r, c) == doctest::Approx(want).epsilon(1e-12));
                }
        Tensor<double> dx;
        std::vector<double> dk(kernel.size(), 0.0), db(2, 0.0);
        conv2d_backward<double>(x, kernel, y, k, &dx, dk, db);
        CHECK(dx.same_shape(x));
    }
}

TEST_CASE("relu, maxpool, upconv and concat analytic cases") {
    Tensor<double> x(1, 1, 1, 3);
    x.data = {-1.0, 0.0, 2.0};
    CHECK(relu_forward(x).data == std::vector<double>{0.0, 0.0, 2.0});

    Tensor<double> p(1, 1, 2, 2);
    p.data = {1.0, 2.0, 3.0, 4.0};
    std::vector<std::uint32_t> argmax;
    const auto pooled = maxpool2_forward(p, argmax);
    CHECK(pooled.data == std::vector<double>{4.0});
    Tensor<double> g(1, 1, 1, 1, 1.0);
    CHECK(maxpool2_backward(g, argmax, p.shape).data == std::vector<double>{0.0, 0.0, 0.0, 1.0});
    Tensor<double> odd(1, 1, 3, 4);
    CHECK_THROWS_AS(maxpool2_forward(odd, argmax), Error);

    Tensor<double> u(1, 1, 1, 1, 2.0);
    std::vector<double> k{1.0, 2.0, 3.0, 4.0}, b{0.5};
    CHECK(upconv2_forward<double>(u, k, b, 1).data == std::vector<double>{2.5, 4.5, 6.5, 8.5});

    Tensor<double> a(1, 1, 2, 2, 1.0), c(1, 2, 2, 2, 2.0);
    const auto cat = concat_forward(a, c);
    CHECK(cat.channels() == 3);
    CHECK(cat.at(0, 0, 1, 1) == 1.0);
    CHECK(cat.at(0, 2, 0, 0) == 2.0);
    CHECK_THROWS_AS(concat_forward(a, Tensor<double>(1, 1, 2, 3)), Error);
}

TEST_CASE("mse loss") {
    Tensor<double> a(2, 1, 2, 2, 0.5), b(2, 1, 2, 2, 0.5);
    CHECK(mse_loss(a, b).loss == 0.0);
    for (auto& v : a.data) v += 0.1;
    CHECK(mse_loss(a, b).loss == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(mse_loss(a, b).grad.data[0] == doctest::Approx(2 * 0.1 / 8).epsilon(1e-12));
    CHECK_THROWS_AS(mse_loss(a, Tensor<double>(1, 1, 2, 2)), Error);
}

TEST_CASE("U-Net shapes and parameters") {
    UNetConfig cfg;
    cfg.in_channels = 1;
    cfg.out_channels = 1;
    cfg.base_width = 4;
    cfg.depth = 2;
    const auto params = init_unet<float>(cfg, 5);
    for (std::size_t side : {4, 8, 16, 20}) {
        Tensor<float> x(2, 1, side, side, 0.25f);
        const auto y = unet_forward(params, cfg, x);
        CHECK(y.shape == std::array<std::size_t, 4>{2, 1, side, side});
    }
    CHECK_THROWS_AS(unet_forward(params, cfg, Tensor<float>(1, 1, 6, 8)), Error);
    CHECK_THROWS_AS(unet_forward(params, cfg, Tensor<float>(1, 2, 8, 8)), Error);

    std::set<std::string> names;
    for (const auto& p : params.params) names.insert(p.name);
    CHECK(names.size() == params.params.size());
    for (const auto& p : params.params)
        if (p.name.find("bias") != std::string::npos)
            for (float v : p.value) CHECK(v == 0.0f);
    CHECK(init_unet<float>(cfg, 5).params[0].value == params.params[0].value);
    CHECK_FALSE(init_unet<float>(cfg, 6).params[0].value == params.params[0].value);

    // Full-size network: 64 base channels, depth 4, 12 -> 3 channels.
    const auto big = unet_layout<float>(UNetConfig{});
    CHECK(big.params.front().shape == std::vector<std::size_t>{64, 12, 3, 3});
    CHECK(big.get("head.weight").shape == std::vector<std::size_t>{3, 64, 1, 1});
    CHECK(big.get("mid.conv1.weight").shape == std::vector<std::size_t>{1024, 512, 3, 3});

    UNetConfig bad = cfg;
    bad.depth = 0;
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("zero parameters output the head bias") {
    UNetConfig cfg;
    cfg.in_channels = 3;
    cfg.out_channels = 2;
    cfg.base_width = 2;
    cfg.depth = 2;
    auto params = unet_layout<float>(cfg);
    params.params.back().value = {0.25f, -0.5f};
    Rng rng(7);
    Tensor<float> x(2, 3, 8, 8);
    for (auto& v : x.data) v = static_cast<float>(rng.uniform());
    const auto y = unet_forward(params, cfg, x);
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t i = 0; i < 64; ++i) {
            CHECK(y.data[n * 128 + i] == 0.25f);
            CHECK(y.data[n * 128 + 64 + i] == -0.5f);
        }
}

TEST_CASE("forward pass is batch invariant") {
    UNetConfig cfg;
    cfg.in_channels = 4;
    cfg.out_channels = 1;
    cfg.base_width = 3;
    cfg.depth = 2;
    const auto params = init_unet<float>(cfg, 9);
    Rng rng(8);
    Tensor<float> x(5, 4, 8, 8);
    for (auto& v : x.data) v = static_cast<float>(rng.uniform(-2.0, 3.0));
    const auto full = unet_forward(params, cfg, x);
    for (std::size_t n = 0; n < 5; ++n) {
        const auto single = unet_forward(params, cfg, slice_batch(x, n, n + 1));
        CHECK(std::equal(single.data.begin(), single.data.end(), full.sample(n).begin()));
    }
    const auto pair = unet_forward(params, cfg, slice_batch(x, 1, 3));
    CHECK(std::equal(pair.data.begin(), pair.data.end(), full.sample(1).begin()));
}

TEST_CASE("input rescaling") {
    Tensor<double> x(2, 1, 2, 2);
    x.data = {-3.0, 1.0, 5.0, 0.0, 2.0, 2.0, 2.0, 2.0};
    const auto r = rescale_unit(x);
    CHECK(r.data[0] == 0.0);
    CHECK(r.data[2] < 1.0);
    CHECK(r.data[2] > 0.999);
    CHECK(r.data[1] == doctest::Approx(0.5).epsilon(1e-5));
    for (std::size_t i = 4; i < 8; ++i) CHECK(r.data[i] == 0.0);
}

TEST_CASE("adam") {
    ParameterSet<double> params;
    params.params.push_back({"w", {3}, {1.0, -2.0, 0.5}});
    SUBCASE("zero gradient leaves parameters unchanged") {
        auto state = AdamState<double>::create(params, {});
        Gradients<double> g{{0.0, 0.0, 0.0}};
        CHECK(adam_step(params, g, state));
        CHECK(params.params[0].value == std::vector<double>{1.0, -2.0, 0.5});
        CHECK(state.step == 1);
    }
    SUBCASE("first step moves by lr against the gradient sign") {
        AdamConfig cfg;
        cfg.lr = 0.01;
        auto state = AdamState<double>::create(params, cfg);
        Gradients<double> g{{3.0, -0.2, 1e-3}};
        adam_step(params, g, state);
        CHECK(params.params[0].value[0] == doctest::Approx(0.99).epsilon(1e-6));
        CHECK(params.params[0].value[1] == doctest::Approx(-1.99).epsilon(1e-6));
        CHECK(params.params[0].value[2] == doctest::Approx(0.49).epsilon(1e-4));
    }
    SUBCASE("non-finite gradients") {
        auto state = AdamState<double>::create(params, {});
        Gradients<double> g{{std::nan(""), 0.0, 0.0}};
        CHECK_FALSE(adam_step(params, g, state));
        CHECK(state.step == 0);
        CHECK(params.params[0].value == std::vector<double>{1.0, -2.0, 0.5});
        AdamConfig strict;
        strict.strict = true;
        auto strict_state = AdamState<double>::create(params, strict);
        CHECK_THROWS_AS(adam_step(params, g, strict_state), Error);
    }
}

TEST_CASE("adam minimises a quadratic") {
    ParameterSet<double> params;
    params.params.push_back({"w", {1}, {0.0}});
    AdamConfig cfg;
    cfg.lr = 0.1;
    auto state = AdamState<double>::create(params, cfg);
    int reached = -1;
    for (int step = 1; step <= 500; ++step) {
        const double w = params.params[0].value[0];
        Gradients<double> g{{2.0 * (w - 3.0)}};
        adam_step(params, g, state);
        if (std::abs(params.params[0].value[0] - 3.0) < 0.01) {
            reached = step;
            break;
        }
    }
    CHECK(reached > 0);
}

TEST_CASE("forward and backward do not depend on buffer placement") {
    // Shifting the heap between runs changes the alignment of every buffer;
    // results must stay bit-identical.
    for (std::size_t side : {2, 4, 8}) {
        UNetConfig cfg;
        cfg.in_channels = 2;
        cfg.out_channels = 1;
        cfg.base_width = 3;
        cfg.depth = 1;
        const auto params = init_unet<float>(cfg, 4);
        Rng rng(side);
        Tensor<float> x(3, 2, side, side), t(3, 1, side, side);
        for (auto& v : x.data) v = static_cast<float>(rng.uniform());
        for (auto& v : t.data) v = static_cast<float>(rng.uniform());
        auto run = [&] {
            ForwardCache<float> cache;
            const auto y = unet_forward(params, cfg, x, &cache);
            auto grads = zero_gradients(params);
            unet_backward(params, cfg, cache, mse_loss(y, t).grad, grads);
            return std::make_pair(y.data, grads);
        };
        const auto reference = run();
        for (std::size_t shift = 1; shift < 24; ++shift) {
            std::vector<std::unique_ptr<char[]>> pad;
            for (std::size_t j = 0; j < shift; ++j) pad.emplace_back(new char[4 * j + 4]);
            const auto again = run();
            CHECK(again.first == reference.first);
            CHECK(again.second == reference.second);
        }
    }
}
