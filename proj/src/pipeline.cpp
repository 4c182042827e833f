#include "xorinv/pipeline.hpp"

#include <cmath>

#include "xorinv/error.hpp"
#include "xorinv/parallel.hpp"
#include "xorinv/rng.hpp"

namespace xorinv::pipeline {

std::string_view to_string(CipherMode mode) { return mode == CipherMode::Ctr ? "ctr" : "cbc"; }

CipherMode parse_cipher_mode(std::string_view text) {
    if (text == "ctr") return CipherMode::Ctr;
    if (text == "cbc") return CipherMode::Cbc;
    fail(ErrorKind::InvalidArgument, "unknown cipher mode '" + std::string(text) + "' (expected ctr or cbc)");
}

CipherImage encrypt_image(const ImageTensor& img, const ForwardSpec& spec, std::uint64_t index) {
    require(spec.noise_sigma >= 0.0, "encrypt_image: noise_sigma must be >= 0");
    const auto plain = codec::image_to_bytes(img, spec.mode);
    const auto cipher = spec.cipher == CipherMode::Ctr ? aes::ctr_apply(plain, spec.key) : aes::cbc_encrypt(plain, spec.key);
    auto ci = codec::bytes_to_cipherimage(cipher, img.shape.height, img.shape.width, spec.mode);
    return codec::add_gaussian(ci, spec.noise_sigma, Rng::stream_seed(spec.seed, index));
}

ImageTensor decrypt_exact(const CipherImage& ci, const ForwardSpec& spec, bool round_first) {
    require(ci.mode == spec.mode, "decrypt_exact: cipherimage encoding mode does not match the forward spec");
    if (!round_first) {
        for (std::size_t i = 0; i < ci.values.size(); ++i) {
            const double scaled = static_cast<double>(ci.values[i]) * 255.0;
            if (!std::isfinite(scaled))
                fail(ErrorKind::InvalidArgument, "decrypt_exact: non-finite cipherimage value (enable rounding)");
            if (std::abs(scaled - std::nearbyint(scaled)) > 1e-3 || scaled < -1e-3 || scaled > 255.001)
                fail(ErrorKind::InvalidArgument, "decrypt_exact: value " + std::to_string(ci.values[i]) +
                                                     " is not a byte level (noisy input needs rounding)");
        }
    }
    const auto cipher = codec::cipherimage_to_bytes(ci);
    const auto plain = spec.cipher == CipherMode::Ctr ? aes::ctr_apply(cipher, spec.key) : aes::cbc_decrypt(cipher, spec.key);
    const ImageShape shape{ci.shape.height, ci.shape.width, codec::plain_channels(ci.shape.channels, spec.mode)};
    return codec::bytes_to_image(plain, shape, spec.mode);
}

std::vector<CipherImage> encrypt_all(std::span<const ImageTensor> images, const ForwardSpec& spec, std::size_t workers,
                                     std::uint64_t first_index) {
    std::vector<CipherImage> out(images.size());
    parallel_for(images.size(), workers, [&](std::size_t i) { out[i] = encrypt_image(images[i], spec, first_index + i); });
    return out;
}

void MeanAccumulator::kahan_add(double& sum, double& comp, double x) {
    const double t = sum + x;
    comp += std::abs(sum) >= std::abs(x) ? (sum - t) + x : (x - t) + sum;
    sum = t;
}

void MeanAccumulator::add(const ImageTensor& img) {
    if (count_ == 0) {
        shape_ = img.shape;
        sum_.assign(img.values.size(), 0.0);
        comp_.assign(img.values.size(), 0.0);
    }
    require(img.shape == shape_, "fit_mean: image shape differs from the first training image");
    for (std::size_t i = 0; i < sum_.size(); ++i) kahan_add(sum_[i], comp_[i], img.values[i]);
    ++count_;
}

void MeanAccumulator::merge(const MeanAccumulator& other) {
    if (other.count_ == 0) return;
    if (count_ == 0) {
        *this = other;
        return;
    }
    require(other.shape_ == shape_, "fit_mean: partial sums have different shapes");
    for (std::size_t i = 0; i < sum_.size(); ++i) {
        kahan_add(sum_[i], comp_[i], other.sum_[i]);
        kahan_add(sum_[i], comp_[i], other.comp_[i]);
    }
    count_ += other.count_;
}

MeanPredictor MeanAccumulator::finish() const {
    require(count_ > 0, "fit_mean: empty training set");
    MeanPredictor mp;
    mp.n_samples = count_;
    mp.mean_image = ImageTensor(shape_);
    for (std::size_t i = 0; i < sum_.size(); ++i)
        mp.mean_image.values[i] = static_cast<float>((sum_[i] + comp_[i]) / static_cast<double>(count_));
    return mp;
}

namespace {
constexpr std::size_t kChunk = 1024;
}

MeanPredictor fit_mean(std::span<const ImageTensor> train, std::size_t workers) {
    require(!train.empty(), "fit_mean: empty training set");
    const std::size_t chunks = (train.size() + kChunk - 1) / kChunk;
    std::vector<MeanAccumulator> partial(chunks);
    parallel_for(chunks, workers, [&](std::size_t c) {
        const std::size_t end = std::min(train.size(), (c + 1) * kChunk);
        for (std::size_t i = c * kChunk; i < end; ++i) partial[c].add(train[i]);
    });
    MeanAccumulator total;
    for (const auto& p : partial) total.merge(p);
    return total.finish();
}

MeanPredictor fit_mean_streaming(std::size_t count, const std::function<ImageTensor(std::size_t)>& load) {
    require(count > 0, "fit_mean: empty training set");
    MeanAccumulator total;
    for (std::size_t begin = 0; begin < count; begin += kChunk) {
        MeanAccumulator chunk;
        for (std::size_t i = begin; i < std::min(count, begin + kChunk); ++i) chunk.add(load(i));
        total.merge(chunk);
    }
    return total.finish();
}

ImageTensor predict_mean(const MeanPredictor& mp, const CipherImage&) { return mp.mean_image; }

}  // namespace xorinv::pipeline
