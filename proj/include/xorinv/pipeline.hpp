#pragma once

// Forward operator (serialize -> encrypt -> reinterpret -> corrupt) and the
// two non-learned reconstructions: keyed decryption and the training-set mean.

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "xorinv/blockcipher.hpp"
#include "xorinv/codec.hpp"

namespace xorinv::pipeline {

using codec::CipherImage;
using codec::EncodingMode;
using codec::ImageShape;
using codec::ImageTensor;

enum class CipherMode : std::uint8_t { Ctr, Cbc };

std::string_view to_string(CipherMode mode);
CipherMode parse_cipher_mode(std::string_view text);

struct ForwardSpec {
    aes::KeyMaterial key;
    EncodingMode mode = EncodingMode::Float32;
    CipherMode cipher = CipherMode::Ctr;
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;
};

/// Cipherimage of `img`. The noise stream of image `index` is seeded with
/// Rng::stream_seed(spec.seed, index), so batches are order independent.
CipherImage encrypt_image(const ImageTensor& img, const ForwardSpec& spec, std::uint64_t index = 0);

/// Keyed inversion. With round_first every value is first rounded to the
/// nearest byte (noisy data). Without it, every value must already be an
/// exact byte level k/255. The output is never clamped or repaired: float32
/// reconstructions of corrupted data may hold NaN/inf.
ImageTensor decrypt_exact(const CipherImage& ci, const ForwardSpec& spec, bool round_first);

std::vector<CipherImage> encrypt_all(std::span<const ImageTensor> images, const ForwardSpec& spec,
                                     std::size_t workers = 1, std::uint64_t first_index = 0);

struct MeanPredictor {
    ImageTensor mean_image;
    std::size_t n_samples = 0;
};

/// Streaming pixelwise mean with Neumaier-compensated double accumulators.
class MeanAccumulator {
public:
    void add(const ImageTensor& img);
    /// Folds another partial sum into this one (used for chunked reductions).
    void merge(const MeanAccumulator& other);
    MeanPredictor finish() const;
    std::size_t count() const { return count_; }

private:
    static void kahan_add(double& sum, double& comp, double x);

    ImageShape shape_;
    std::vector<double> sum_;
    std::vector<double> comp_;
    std::size_t count_ = 0;
};

/// Pixelwise mean of the training images. Partial sums are taken over fixed
/// chunks and merged in chunk order, so the result does not depend on `workers`.
MeanPredictor fit_mean(std::span<const ImageTensor> train, std::size_t workers = 1);

/// Same result as fit_mean, but images are fetched one at a time through
/// `load(i)` so the training set never has to fit in memory.
MeanPredictor fit_mean_streaming(std::size_t count, const std::function<ImageTensor(std::size_t)>& load);

/// Returns the mean image whatever the input.
ImageTensor predict_mean(const MeanPredictor& mp, const CipherImage& ci);

}  // namespace xorinv::pipeline
