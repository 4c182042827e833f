#include "xorinv/image_export.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>

#include "xorinv/error.hpp"

namespace xorinv::codec {
namespace {

std::vector<std::uint8_t> to_8bit(const ImageTensor& img) {
    const std::size_t c = img.shape.channels;
    require(c == 1 || c == 3, "image export supports 1 or 3 channels, got " + std::to_string(c));
    std::vector<std::uint8_t> out(img.values.size());
    for (std::size_t i = 0; i < img.values.size(); ++i) {
        const float v = img.values[i];
        if (!std::isfinite(v)) {
            out[i] = (c == 3 && i % 3 == 1) ? 0 : (c == 3 ? 255 : 128);
        } else {
            out[i] = static_cast<std::uint8_t>(std::nearbyint(std::clamp(v, 0.0f, 1.0f) * 255.0f));
        }
    }
    return out;
}

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};

}  // namespace

void write_png(const std::filesystem::path& path, const ImageTensor& img) {
    const auto pixels = to_8bit(img);
    std::unique_ptr<std::FILE, FileCloser> file(std::fopen(path.c_str(), "wb"));
    if (!file) fail(ErrorKind::Io, "cannot open for writing: " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        fail(ErrorKind::Io, "libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail(ErrorKind::Io, "libpng failed writing " + path.string());
    }
    png_init_io(png, file.get());
    const int color = img.shape.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.shape.width), static_cast<png_uint_32>(img.shape.height), 8,
                 color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t stride = img.shape.width * img.shape.channels;
    for (std::size_t r = 0; r < img.shape.height; ++r)
        png_write_row(png, const_cast<png_bytep>(pixels.data() + r * stride));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

void write_pnm(const std::filesystem::path& path, const ImageTensor& img) {
    const auto pixels = to_8bit(img);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot open for writing: " + path.string());
    out << (img.shape.channels == 1 ? "P5" : "P6") << '\n' << img.shape.width << ' ' << img.shape.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (!out) fail(ErrorKind::Io, "write failed: " + path.string());
}

ImageTensor cipher_channel(const CipherImage& ci, std::size_t channel) {
    require(channel < ci.shape.channels, "cipher_channel: channel out of range");
    ImageTensor out({ci.shape.height, ci.shape.width, 1});
    for (std::size_t p = 0; p < ci.shape.height * ci.shape.width; ++p)
        out.values[p] = ci.values[p * ci.shape.channels + channel];
    return out;
}

ImageTensor make_panel(const std::vector<ImageTensor>& tiles, std::size_t scale) {
    require(!tiles.empty() && scale >= 1, "make_panel: need at least one tile and scale >= 1");
    constexpr std::size_t gap = 2;
    std::size_t height = 0, width = 0;
    for (const auto& t : tiles) {
        require(t.shape.channels == 1 || t.shape.channels == 3, "make_panel: tiles must have 1 or 3 channels");
        height = std::max(height, t.shape.height * scale);
        width += t.shape.width * scale + gap;
    }
    width -= gap;
    ImageTensor panel({height, width, 3}, 1.0f);
    std::size_t x0 = 0;
    for (const auto& t : tiles) {
        for (std::size_t r = 0; r < t.shape.height * scale; ++r)
            for (std::size_t c = 0; c < t.shape.width * scale; ++c)
                for (std::size_t ch = 0; ch < 3; ++ch)
                    panel.at(r, x0 + c, ch) = t.at(r / scale, c / scale, t.shape.channels == 1 ? 0 : ch);
        x0 += t.shape.width * scale + gap;
    }
    return panel;
}

}  // namespace xorinv::codec
