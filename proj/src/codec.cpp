#include "xorinv/codec.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "xorinv/error.hpp"
#include "xorinv/rng.hpp"

namespace xorinv::codec {

std::string_view to_string(EncodingMode mode) { return mode == EncodingMode::Float32 ? "float32" : "uint8"; }

EncodingMode parse_encoding_mode(std::string_view text) {
    if (text == "float32") return EncodingMode::Float32;
    if (text == "uint8") return EncodingMode::Uint8;
    fail(ErrorKind::InvalidArgument, "unknown encoding mode '" + std::string(text) + "' (expected float32 or uint8)");
}

ImageTensor::ImageTensor(ImageShape s, std::vector<float> v) : shape(s), values(std::move(v)) {
    require(values.size() == shape.count(), "ImageTensor: value count does not match shape");
}

bool ImageTensor::all_finite() const {
    return std::all_of(values.begin(), values.end(), [](float v) { return std::isfinite(v); });
}

bool ImageTensor::in_unit_range() const {
    return std::all_of(values.begin(), values.end(), [](float v) { return v >= 0.0f && v <= 1.0f; });
}

bool CipherImage::all_finite() const {
    return std::all_of(values.begin(), values.end(), [](float v) { return std::isfinite(v); });
}

namespace {

std::uint8_t quantize(double v) {
    return static_cast<std::uint8_t>(std::clamp(std::nearbyint(v * 255.0), 0.0, 255.0));
}

}  // namespace

ByteBuffer image_to_bytes(const ImageTensor& img, EncodingMode mode) {
    for (float v : img.values) {
        if (!std::isfinite(v) || v < 0.0f || v > 1.0f)
            fail(ErrorKind::InvalidArgument, "image_to_bytes: value " + std::to_string(v) + " outside [0,1]");
    }
    ByteBuffer out(img.values.size() * bytes_per_value(mode));
    if (mode == EncodingMode::Uint8) {
        std::transform(img.values.begin(), img.values.end(), out.begin(), [](float v) { return quantize(v); });
        return out;
    }
    for (std::size_t i = 0; i < img.values.size(); ++i) {
        const auto bits = std::bit_cast<std::uint32_t>(img.values[i]);
        for (std::size_t b = 0; b < 4; ++b) out[4 * i + b] = static_cast<std::uint8_t>(bits >> (8 * b));
    }
    return out;
}

ImageTensor bytes_to_image(ByteView buf, ImageShape shape, EncodingMode mode) {
    const std::size_t expected = shape.count() * bytes_per_value(mode);
    require(buf.size() == expected, "bytes_to_image: buffer has " + std::to_string(buf.size()) + " bytes, expected " +
                                        std::to_string(expected));
    ImageTensor img(shape);
    if (mode == EncodingMode::Uint8) {
        std::transform(buf.begin(), buf.end(), img.values.begin(),
                       [](std::uint8_t b) { return static_cast<float>(b) / 255.0f; });
        return img;
    }
    for (std::size_t i = 0; i < img.values.size(); ++i) {
        std::uint32_t bits = 0;
        for (std::size_t b = 0; b < 4; ++b) bits |= std::uint32_t{buf[4 * i + b]} << (8 * b);
        img.values[i] = std::bit_cast<float>(bits);
    }
    return img;
}

std::size_t plain_channels(std::size_t cipher_channels, EncodingMode mode) {
    const std::size_t per = bytes_per_value(mode);
    require(cipher_channels % per == 0, "cipher channel count " + std::to_string(cipher_channels) +
                                            " is not a multiple of " + std::to_string(per));
    return cipher_channels / per;
}

CipherImage bytes_to_cipherimage(ByteView buf, std::size_t height, std::size_t width, EncodingMode mode) {
    const std::size_t pixels = height * width;
    require(pixels > 0 && buf.size() % pixels == 0,
            "bytes_to_cipherimage: " + std::to_string(buf.size()) + " bytes do not fill a " + std::to_string(height) +
                "x" + std::to_string(width) + " grid");
    CipherImage ci;
    ci.shape = {height, width, buf.size() / pixels};
    plain_channels(ci.shape.channels, mode);
    ci.mode = mode;
    ci.values.resize(buf.size());
    std::transform(buf.begin(), buf.end(), ci.values.begin(),
                   [](std::uint8_t b) { return static_cast<float>(b) / 255.0f; });
    return ci;
}

ByteBuffer cipherimage_to_bytes(const CipherImage& ci) {
    ByteBuffer out(ci.values.size());
    for (std::size_t i = 0; i < ci.values.size(); ++i) {
        const float v = ci.values[i];
        if (!std::isfinite(v)) fail(ErrorKind::InvalidArgument, "cipherimage_to_bytes: non-finite value at " + std::to_string(i));
        out[i] = quantize(v);
    }
    return out;
}

CipherImage add_gaussian(const CipherImage& ci, double sigma, std::uint64_t seed) {
    require(sigma >= 0.0 && std::isfinite(sigma), "add_gaussian: sigma must be finite and >= 0");
    CipherImage out = ci;
    if (sigma == 0.0) return out;
    Rng rng(seed);
    for (auto& v : out.values) v = static_cast<float>(static_cast<double>(v) + sigma * rng.normal());
    out.noise_sigma = std::sqrt(ci.noise_sigma * ci.noise_sigma + sigma * sigma);
    return out;
}

}  // namespace xorinv::codec
