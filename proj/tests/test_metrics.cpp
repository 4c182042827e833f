#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "xorinv/error.hpp"
#include "xorinv/metrics.hpp"
#include "xorinv/rng.hpp"

using namespace xorinv;
using namespace xorinv::metrics;
using codec::ImageShape;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

ImageTensor random_image(Rng& rng, ImageShape shape) {
    ImageTensor img(shape);
    for (auto& v : img.values) v = static_cast<float>(rng.uniform());
    return img;
}

// Direct evaluation: every window position, full 2-D Gaussian weights.
double ssim_brute_force(const ImageTensor& x, const ImageTensor& y) {
    const std::size_t k = 11, h = x.shape.height, w = x.shape.width, ch = x.shape.channels;
    double g[11][11], total = 0.0;
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            const double di = static_cast<double>(i) - 5.0, dj = static_cast<double>(j) - 5.0;
            g[i][j] = std::exp(-(di * di + dj * dj) / (2 * 1.5 * 1.5));
            total += g[i][j];
        }
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double acc = 0.0;
    for (std::size_t c = 0; c < ch; ++c) {
        double s = 0.0;
        for (std::size_t r0 = 0; r0 + k <= h; ++r0)
            for (std::size_t q0 = 0; q0 + k <= w; ++q0) {
                double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
                for (std::size_t i = 0; i < k; ++i)
                    for (std::size_t j = 0; j < k; ++j) {
                        const double wgt = g[i][j] / total;
                        const double a = x.at(r0 + i, q0 + j, c), b = y.at(r0 + i, q0 + j, c);
                        mx += wgt * a;
                        my += wgt * b;
                        xx += wgt * a * a;
                        yy += wgt * b * b;
                        xy += wgt * a * b;
                    }
                const double vx = xx - mx * mx, vy = yy - my * my, cov = xy - mx * my;
                s += (2 * mx * my + c1) * (2 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
        acc += s / static_cast<double>((h - k + 1) * (w - k + 1));
    }
    return acc / static_cast<double>(ch);
}

}  // namespace

TEST_CASE("psnr extended-real policy") {
    Rng rng(1);
    const auto gt = random_image(rng, {8, 8, 3});
    CHECK(psnr(gt, gt) == kInf);
    auto nan_img = gt;
    nan_img.values[17] = std::numeric_limits<float>::quiet_NaN();
    CHECK(psnr(nan_img, gt) == -kInf);
    auto inf_img = gt;
    inf_img.values[0] = std::numeric_limits<float>::infinity();
    CHECK(psnr(inf_img, gt) == -kInf);
    auto huge = gt;
    for (auto& v : huge.values) v = 3e38f;
    CHECK(std::isfinite(psnr(huge, gt)));
    CHECK(psnr(huge, gt) < -700.0);
    CHECK_THROWS_AS(psnr(gt, random_image(rng, {8, 8, 1})), Error);
}

TEST_CASE("psnr of a uniform 0.1 error is 20 dB") {
    ImageTensor gt({4, 4, 1}, 0.5f), recon({4, 4, 1}, 0.6f);
    // float(0.6) - float(0.5) is not exactly 0.1; compare with the exact MSE.
    const double d = static_cast<double>(0.6f) - 0.5;
    CHECK(psnr(recon, gt) == doctest::Approx(10.0 * std::log10(1.0 / (d * d))).epsilon(1e-12));
    CHECK(psnr(recon, gt) == doctest::Approx(20.0).epsilon(1e-6));
}

TEST_CASE("psnr is sign-symmetric and decreasing in the error magnitude") {
    ImageTensor gt({6, 6, 1}, 0.5f);
    double previous = kInf;
    for (int step = 1; step <= 40; ++step) {
        const float e = 0.01f * static_cast<float>(step);
        ImageTensor plus({6, 6, 1}, 0.5f + e), minus({6, 6, 1}, 0.5f - e);
        CHECK(psnr(plus, gt) == doctest::Approx(psnr(minus, gt)).epsilon(1e-5));
        const double p = psnr(plus, gt);
        CHECK(p < previous);
        previous = p;
    }
}

TEST_CASE("ssim basic properties") {
    Rng rng(2);
    const auto a = random_image(rng, {16, 16, 3});
    const auto b = random_image(rng, {16, 16, 3});
    CHECK(ssim(a, a) == 1.0);
    CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));
    auto bad = a;
    bad.values[3] = std::numeric_limits<float>::quiet_NaN();
    CHECK(ssim(bad, a) == 0.0);
    CHECK_THROWS_AS(ssim(random_image(rng, {10, 16, 1}), random_image(rng, {10, 16, 1})), Error);
}

TEST_CASE("ssim of two constant images is the luminance term") {
    for (auto [a, b] : {std::pair{0.2f, 0.7f}, std::pair{0.5f, 0.5f}, std::pair{0.0f, 1.0f}, std::pair{0.9f, 0.85f}}) {
        ImageTensor x({12, 13, 2}, a), y({12, 13, 2}, b);
        const double c1 = 1e-4, da = a, db = b;
        CHECK(ssim(x, y) == doctest::Approx((2 * da * db + c1) / (da * da + db * db + c1)).epsilon(1e-9));
    }
}

TEST_CASE("ssim matches brute-force window evaluation") {
    Rng rng(3);
    for (int trial = 0; trial < 5; ++trial) {
        const ImageShape shape{11 + rng.below(8), 11 + rng.below(8), 1 + rng.below(3)};
        const auto x = random_image(rng, shape);
        auto y = x;
        for (auto& v : y.values) v = std::clamp(v + static_cast<float>(0.2 * rng.normal()), 0.0f, 1.0f);
        CHECK(ssim(x, y) == doctest::Approx(ssim_brute_force(x, y)).epsilon(1e-10));
    }
}

TEST_CASE("ssim agrees with scikit-image on a fixed pattern") {
    // skimage.metrics.structural_similarity(x, y, gaussian_weights=True, sigma=1.5,
    // use_sample_covariance=False, data_range=1.0, channel_axis=2)
    ImageTensor x({24, 20, 3}), y({24, 20, 3});
    for (std::size_t r = 0; r < 24; ++r)
        for (std::size_t c = 0; c < 20; ++c)
            for (std::size_t k = 0; k < 3; ++k) {
                const double rr = static_cast<double>(r), cc = static_cast<double>(c), kk = static_cast<double>(k);
                x.at(r, c, k) = static_cast<float>(0.5 + 0.4 * std::sin(0.3 * rr + 0.7 * cc + kk));
                y.at(r, c, k) = static_cast<float>(0.45 + 0.3 * std::sin(0.3 * rr + 0.7 * cc + kk) +
                                                   0.1 * std::cos(0.9 * rr * cc * 0.1 + kk));
            }
    CHECK(ssim(x, y) == doctest::Approx(0.9193592647433011).epsilon(1e-7));
}

TEST_CASE("aggregate uses extended-real means") {
    auto rec = [](double p, double s) { return MetricsRecord{"", p, s, true}; };
    const std::vector<MetricsRecord> all_inf{rec(kInf, 1.0), rec(kInf, 1.0)};
    const auto r1 = aggregate(all_inf);
    CHECK(r1.mean_psnr == kInf);
    CHECK(r1.mean_ssim == 1.0);
    CHECK(r1.n_pos_inf == 2);

    const std::vector<MetricsRecord> finite{rec(10, 0.2), rec(20, 0.4)};
    CHECK(aggregate(finite).mean_psnr == doctest::Approx(15.0));
    CHECK(aggregate(finite).mean_ssim == doctest::Approx(0.3));

    const std::vector<MetricsRecord> one_neg{rec(10, 0.5), rec(-kInf, 0.0), rec(12, 0.5)};
    const auto r3 = aggregate(one_neg);
    CHECK(r3.mean_psnr == -kInf);
    CHECK(r3.n_neg_inf == 1);
    CHECK(r3.valid);

    const std::vector<MetricsRecord> mixed{rec(kInf, 1.0), rec(-kInf, 0.0)};
    CHECK_FALSE(aggregate(mixed).valid);
    CHECK(std::isnan(aggregate(mixed).mean_psnr));
    CHECK_THROWS_AS(aggregate(std::vector<MetricsRecord>{}), Error);
}

TEST_CASE("aggregate is permutation invariant") {
    Rng rng(4);
    std::vector<MetricsRecord> recs;
    for (int i = 0; i < 500; ++i) recs.push_back({"s", 5.0 + 30.0 * rng.uniform(), rng.uniform(), true});
    const auto base = aggregate(recs);
    for (int trial = 0; trial < 10; ++trial) {
        rng.shuffle(std::span<MetricsRecord>(recs));
        const auto r = aggregate(recs);
        CHECK(r.mean_psnr == base.mean_psnr);
        CHECK(r.mean_ssim == base.mean_ssim);
    }
}

TEST_CASE("CSV and JSON reports serialize infinities as strings") {
    const auto dir = std::filesystem::temp_directory_path() / "xorinv_metrics_test";
    std::filesystem::create_directories(dir);
    const std::vector<MetricsRecord> recs{{"0", kInf, 1.0, true}, {"1", 17.25, 0.5, true}, {"2", -kInf, 0.0, false}};
    write_records_csv(dir / "r.csv", recs);
    const auto back = read_records_csv(dir / "r.csv");
    REQUIRE(back.size() == 3);
    CHECK(back[0].psnr == kInf);
    CHECK(back[1].psnr == 17.25);
    CHECK(back[2].psnr == -kInf);
    CHECK_FALSE(back[2].finite);

    AggregateReport rep;
    rep.n_samples = 3;
    rep.mean_psnr = kInf;
    rep.mean_ssim = 0.5;
    rep.n_pos_inf = 3;
    write_report_json(dir / "r.json", rep, "decrypt");
    std::ifstream in(dir / "r.json");
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(text.find("\"mean_psnr\": \"inf\"") != std::string::npos);
    const auto rep2 = read_report_json(dir / "r.json");
    CHECK(rep2.mean_psnr == kInf);
    CHECK(rep2.n_pos_inf == 3);
    std::filesystem::remove_all(dir);
}
