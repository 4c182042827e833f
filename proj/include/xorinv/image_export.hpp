#pragma once

#include <filesystem>
#include <vector>

#include "xorinv/codec.hpp"

namespace xorinv::codec {

/// 8-bit PNG (gray for 1 channel, RGB for 3). Values are clamped to [0,1];
/// non-finite values are drawn as magenta (RGB) or mid-gray.
void write_png(const std::filesystem::path& path, const ImageTensor& img);

/// Binary PGM (1 channel) or PPM (3 channels), same value policy as write_png.
void write_pnm(const std::filesystem::path& path, const ImageTensor& img);

/// One cipherimage channel as a single-channel image.
ImageTensor cipher_channel(const CipherImage& ci, std::size_t channel);

/// Horizontal strip of tiles with a 2-pixel gap; tiles are promoted to RGB
/// and scaled by an integer nearest-neighbour factor.
ImageTensor make_panel(const std::vector<ImageTensor>& tiles, std::size_t scale = 1);

}  // namespace xorinv::codec
