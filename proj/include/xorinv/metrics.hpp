#pragma once

// PSNR/SSIM with an explicit extended-real policy:
//   PSNR = +inf  iff MSE == 0
//   PSNR = -inf  iff the reconstruction holds a non-finite value (or MSE overflows)
//   SSIM = 0     whenever the reconstruction holds a non-finite value

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "xorinv/codec.hpp"

namespace xorinv::metrics {

using codec::ImageTensor;

/// 10 log10(1 / MSE), peak 1.0, MSE over all pixels and channels.
double psnr(const ImageTensor& recon, const ImageTensor& gt);

struct SsimParams {
    std::size_t window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;
};

/// Gaussian-windowed SSIM over all valid window positions, averaged per
/// channel and then over channels.
double ssim(const ImageTensor& recon, const ImageTensor& gt, const SsimParams& params = {});

struct MetricsRecord {
    std::string sample_id;
    double psnr = 0.0;
    double ssim = 0.0;
    bool finite = true;  // reconstruction had only finite values
};

MetricsRecord evaluate(std::string sample_id, const ImageTensor& recon, const ImageTensor& gt);

struct AggregateReport {
    std::size_t n_samples = 0;
    double mean_psnr = 0.0;  // extended real; NaN when invalid
    double mean_ssim = 0.0;
    std::size_t n_pos_inf = 0;
    std::size_t n_neg_inf = 0;
    bool valid = true;  // false when both +inf and -inf samples are present
};

AggregateReport aggregate(std::span<const MetricsRecord> records);

/// "inf", "-inf", "nan" or a shortest round-trip decimal.
std::string format_extended(double v);
double parse_extended(const std::string& text);

// Per-sample CSV: header `sample_id,psnr,ssim,finite`.
void write_records_csv(const std::filesystem::path& path, std::span<const MetricsRecord> records);
std::vector<MetricsRecord> read_records_csv(const std::filesystem::path& path);

// Aggregate JSON: {"n_samples", "mean_psnr", "mean_ssim", "n_pos_inf",
// "n_neg_inf", "valid", "method"}; infinities as the strings "inf"/"-inf".
void write_report_json(const std::filesystem::path& path, const AggregateReport& report, const std::string& method);
AggregateReport read_report_json(const std::filesystem::path& path);

}  // namespace xorinv::metrics
