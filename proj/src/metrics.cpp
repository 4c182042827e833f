#include "xorinv/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "xorinv/error.hpp"

namespace xorinv::metrics {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_same_shape(const ImageTensor& a, const ImageTensor& b, const char* who) {
    require(a.shape == b.shape, std::string(who) + ": shape mismatch");
}

// Neumaier summation over a sorted copy: the result does not depend on input order.
double ordered_sum(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    double sum = 0.0, comp = 0.0;
    for (double x : v) {
        const double t = sum + x;
        comp += std::abs(sum) >= std::abs(x) ? (sum - t) + x : (x - t) + sum;
        sum = t;
    }
    return sum + comp;
}

std::vector<double> gaussian_window(std::size_t size, double sigma) {
    std::vector<double> w(size);
    const double mid = (static_cast<double>(size) - 1.0) / 2.0;
    double total = 0.0;
    for (std::size_t i = 0; i < size; ++i) {
        const double d = static_cast<double>(i) - mid;
        w[i] = std::exp(-d * d / (2.0 * sigma * sigma));
        total += w[i];
    }
    for (auto& x : w) x /= total;
    return w;
}

// Separable 'valid' filtering of one plane.
std::vector<double> filter_valid(const std::vector<double>& plane, std::size_t h, std::size_t w,
                                 const std::vector<double>& win) {
    const std::size_t k = win.size();
    const std::size_t oh = h - k + 1, ow = w - k + 1;
    std::vector<double> rows(h * ow);
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < ow; ++c) {
            double s = 0.0;
            for (std::size_t j = 0; j < k; ++j) s += win[j] * plane[r * w + c + j];
            rows[r * ow + c] = s;
        }
    std::vector<double> out(oh * ow);
    for (std::size_t r = 0; r < oh; ++r)
        for (std::size_t c = 0; c < ow; ++c) {
            double s = 0.0;
            for (std::size_t i = 0; i < k; ++i) s += win[i] * rows[(r + i) * ow + c];
            out[r * ow + c] = s;
        }
    return out;
}

}  // namespace

double psnr(const ImageTensor& recon, const ImageTensor& gt) {
    require_same_shape(recon, gt, "psnr");
    require(!gt.values.empty(), "psnr: empty image");
    if (!recon.all_finite()) return -kInf;
    double sse = 0.0;
    for (std::size_t i = 0; i < gt.values.size(); ++i) {
        const double d = static_cast<double>(recon.values[i]) - static_cast<double>(gt.values[i]);
        sse += d * d;
    }
    const double mse = sse / static_cast<double>(gt.values.size());
    if (!std::isfinite(mse)) return -kInf;
    if (mse == 0.0) return kInf;
    return 10.0 * std::log10(1.0 / mse);
}

double ssim(const ImageTensor& recon, const ImageTensor& gt, const SsimParams& params) {
    require_same_shape(recon, gt, "ssim");
    const auto [h, w, channels] = gt.shape;
    require(h >= params.window && w >= params.window,
            "ssim: image " + std::to_string(h) + "x" + std::to_string(w) + " is smaller than the " +
                std::to_string(params.window) + "x" + std::to_string(params.window) + " window");
    if (!recon.all_finite()) return 0.0;

    const auto win = gaussian_window(params.window, params.sigma);
    const double c1 = std::pow(params.k1 * params.dynamic_range, 2);
    const double c2 = std::pow(params.k2 * params.dynamic_range, 2);
    const std::size_t n = h * w;

    double total = 0.0;
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (std::size_t ch = 0; ch < channels; ++ch) {
        for (std::size_t p = 0; p < n; ++p) {
            x[p] = recon.values[p * channels + ch];
            y[p] = gt.values[p * channels + ch];
            xx[p] = x[p] * x[p];
            yy[p] = y[p] * y[p];
            xy[p] = x[p] * y[p];
        }
        const auto mx = filter_valid(x, h, w, win);
        const auto my = filter_valid(y, h, w, win);
        const auto sxx = filter_valid(xx, h, w, win);
        const auto syy = filter_valid(yy, h, w, win);
        const auto sxy = filter_valid(xy, h, w, win);
        double channel_sum = 0.0;
        for (std::size_t i = 0; i < mx.size(); ++i) {
            const double vx = sxx[i] - mx[i] * mx[i];
            const double vy = syy[i] - my[i] * my[i];
            const double cov = sxy[i] - mx[i] * my[i];
            channel_sum += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
                           ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
        }
        total += channel_sum / static_cast<double>(mx.size());
    }
    return total / static_cast<double>(channels);
}

MetricsRecord evaluate(std::string sample_id, const ImageTensor& recon, const ImageTensor& gt) {
    MetricsRecord rec;
    rec.sample_id = std::move(sample_id);
    rec.finite = recon.all_finite();
    rec.psnr = psnr(recon, gt);
    rec.ssim = ssim(recon, gt);
    return rec;
}

AggregateReport aggregate(std::span<const MetricsRecord> records) {
    require(!records.empty(), "aggregate: no records");
    AggregateReport rep;
    rep.n_samples = records.size();
    std::vector<double> finite_psnr, ssims;
    ssims.reserve(records.size());
    for (const auto& r : records) {
        if (r.psnr == kInf) ++rep.n_pos_inf;
        else if (r.psnr == -kInf) ++rep.n_neg_inf;
        else finite_psnr.push_back(r.psnr);
        ssims.push_back(r.ssim);
    }
    const double n = static_cast<double>(records.size());
    if (rep.n_pos_inf > 0 && rep.n_neg_inf > 0) {
        rep.valid = false;
        rep.mean_psnr = std::numeric_limits<double>::quiet_NaN();
    } else if (rep.n_pos_inf > 0) {
        rep.mean_psnr = kInf;
    } else if (rep.n_neg_inf > 0) {
        rep.mean_psnr = -kInf;
    } else {
        rep.mean_psnr = ordered_sum(std::move(finite_psnr)) / n;
    }
    rep.mean_ssim = ordered_sum(std::move(ssims)) / n;
    return rep;
}

std::string format_extended(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

double parse_extended(const std::string& text) {
    if (text == "inf") return kInf;
    if (text == "-inf") return -kInf;
    if (text == "nan") return std::numeric_limits<double>::quiet_NaN();
    double v = 0.0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc{} || res.ptr != text.data() + text.size())
        fail(ErrorKind::Format, "not an extended real: '" + text + "'");
    return v;
}

void write_records_csv(const std::filesystem::path& path, std::span<const MetricsRecord> records) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot open for writing: " + path.string());
    out << "sample_id,psnr,ssim,finite\n";
    for (const auto& r : records)
        out << r.sample_id << ',' << format_extended(r.psnr) << ',' << format_extended(r.ssim) << ','
            << (r.finite ? 1 : 0) << '\n';
    if (!out) fail(ErrorKind::Io, "write failed: " + path.string());
}

std::vector<MetricsRecord> read_records_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open: " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "sample_id,psnr,ssim,finite")
        fail(ErrorKind::Format, path.string() + ": unexpected CSV header");
    std::vector<MetricsRecord> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string id, p, s, f;
        if (!std::getline(ss, id, ',') || !std::getline(ss, p, ',') || !std::getline(ss, s, ',') || !std::getline(ss, f))
            fail(ErrorKind::Format, path.string() + ": malformed row '" + line + "'");
        out.push_back({id, parse_extended(p), parse_extended(s), f == "1"});
    }
    return out;
}

void write_report_json(const std::filesystem::path& path, const AggregateReport& report, const std::string& method) {
    auto ext = [](double v) -> nlohmann::json {
        if (std::isfinite(v)) return v;
        return format_extended(v);
    };
    nlohmann::ordered_json j;
    j["method"] = method;
    j["n_samples"] = report.n_samples;
    j["mean_psnr"] = ext(report.mean_psnr);
    j["mean_ssim"] = ext(report.mean_ssim);
    j["n_pos_inf"] = report.n_pos_inf;
    j["n_neg_inf"] = report.n_neg_inf;
    j["valid"] = report.valid;
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot open for writing: " + path.string());
    out << j.dump(2) << '\n';
    if (!out) fail(ErrorKind::Io, "write failed: " + path.string());
}

AggregateReport read_report_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open: " + path.string());
    try {
        const auto j = nlohmann::json::parse(in);
        auto ext = [](const nlohmann::json& v) {
            return v.is_string() ? parse_extended(v.get<std::string>()) : v.get<double>();
        };
        AggregateReport rep;
        rep.n_samples = j.at("n_samples").get<std::size_t>();
        rep.mean_psnr = ext(j.at("mean_psnr"));
        rep.mean_ssim = ext(j.at("mean_ssim"));
        rep.n_pos_inf = j.at("n_pos_inf").get<std::size_t>();
        rep.n_neg_inf = j.at("n_neg_inf").get<std::size_t>();
        rep.valid = j.at("valid").get<bool>();
        return rep;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Format, path.string() + ": " + e.what());
    }
}

}  // namespace xorinv::metrics
