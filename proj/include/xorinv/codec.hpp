#pragma once

// Conversions among images, byte payloads and cipherimages.
//
// Serialization order: pixel (0,0) channel 0 first, row-major over
// (row, column, channel). In float32 mode every value is a little-endian
// IEEE-754 single (least significant byte first); in uint8 mode every value
// is one byte round(v * 255).

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "xorinv/blockcipher.hpp"

namespace xorinv::codec {

using aes::ByteBuffer;
using aes::ByteView;

enum class EncodingMode : std::uint8_t { Float32 = 0, Uint8 = 1 };

std::string_view to_string(EncodingMode mode);
EncodingMode parse_encoding_mode(std::string_view text);

/// Bytes per serialized pixel value (= cipher channels per plain channel).
constexpr std::size_t bytes_per_value(EncodingMode mode) { return mode == EncodingMode::Float32 ? 4 : 1; }

struct ImageShape {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;

    std::size_t count() const { return height * width * channels; }
    friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

/// H x W x C real image, row-major (row, column, channel). Ground truth lives
/// in [0,1]; reconstructions may hold non-finite values.
struct ImageTensor {
    ImageShape shape;
    std::vector<float> values;

    ImageTensor() = default;
    explicit ImageTensor(ImageShape s, float fill = 0.0f) : shape(s), values(s.count(), fill) {}
    ImageTensor(ImageShape s, std::vector<float> v);

    float& at(std::size_t row, std::size_t col, std::size_t ch) {
        return values[(row * shape.width + col) * shape.channels + ch];
    }
    float at(std::size_t row, std::size_t col, std::size_t ch) const {
        return values[(row * shape.width + col) * shape.channels + ch];
    }

    bool all_finite() const;
    bool in_unit_range() const;

    friend bool operator==(const ImageTensor&, const ImageTensor&) = default;
};

/// Ciphertext bytes reinterpreted as an image with values b/255; noise (if
/// any) is added on top and left unclamped.
struct CipherImage {
    ImageShape shape;
    std::vector<float> values;
    EncodingMode mode = EncodingMode::Float32;
    double noise_sigma = 0.0;

    bool all_finite() const;
    friend bool operator==(const CipherImage&, const CipherImage&) = default;
};

ByteBuffer image_to_bytes(const ImageTensor& img, EncodingMode mode);
ImageTensor bytes_to_image(ByteView buf, ImageShape shape, EncodingMode mode);

/// Channel count is derived from the buffer length: C' = len / (H*W). In
/// float32 mode C' must be a multiple of 4 (whole serialized values per pixel).
CipherImage bytes_to_cipherimage(ByteView buf, std::size_t height, std::size_t width, EncodingMode mode);

/// Nearest-byte rounding with clamping to [0,255].
ByteBuffer cipherimage_to_bytes(const CipherImage& ci);

/// i.i.d. N(0, sigma^2) on every value, seeded; sigma accumulates into noise_sigma
/// as sqrt(old^2 + sigma^2).
CipherImage add_gaussian(const CipherImage& ci, double sigma, std::uint64_t seed);

/// Plain channel count recovered from a cipherimage's channel count.
std::size_t plain_channels(std::size_t cipher_channels, EncodingMode mode);

}  // namespace xorinv::codec
