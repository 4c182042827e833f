#pragma once

// Image stack container (.ximg). All integers and floats little-endian.
//
//   offset  size  field
//   0       8     magic "XORINVI\0"
//   8       4     u32 format version (1)
//   12      1     u8 kind: 0 = image, 1 = cipherimage
//   13      1     u8 encoding mode: 0 = float32, 1 = uint8, 255 = n/a (images)
//   14      2     reserved, zero
//   16      8     u64 image count N
//   24      12    u32 height, width, channels
//   36      8     f64 noise_sigma
//   44      ...   N * H*W*C f32 values, image-major, then (row, col, channel)

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <vector>

#include "xorinv/codec.hpp"

namespace xorinv::codec {

enum class ContainerKind : std::uint8_t { Image = 0, Cipher = 1 };

struct ContainerHeader {
    ContainerKind kind = ContainerKind::Image;
    std::optional<EncodingMode> mode;
    std::uint64_t count = 0;
    ImageShape shape;
    double noise_sigma = 0.0;
};

inline constexpr std::size_t kContainerHeaderSize = 44;
inline constexpr std::uint32_t kContainerVersion = 1;

/// Appends images to a new container; the count is patched on close().
class StackWriter {
public:
    StackWriter(const std::filesystem::path& path, ContainerHeader header);
    ~StackWriter();
    StackWriter(const StackWriter&) = delete;
    StackWriter& operator=(const StackWriter&) = delete;

    void append(const ImageTensor& img);
    void append(const CipherImage& ci);
    void close();

    std::uint64_t count() const { return header_.count; }

private:
    void append_values(ImageShape shape, std::span<const float> values);
    void write_header();

    std::filesystem::path path_;
    std::filesystem::path tmp_path_;
    std::ofstream out_;
    ContainerHeader header_;
    bool closed_ = false;
};

/// Random-access reader; images are loaded one at a time.
class StackReader {
public:
    explicit StackReader(const std::filesystem::path& path);

    const ContainerHeader& header() const { return header_; }
    std::uint64_t size() const { return header_.count; }

    ImageTensor image(std::uint64_t index);
    CipherImage cipher(std::uint64_t index);

private:
    std::vector<float> read_values(std::uint64_t index);

    std::filesystem::path path_;
    std::ifstream in_;
    ContainerHeader header_;
};

void write_images(const std::filesystem::path& path, std::span<const ImageTensor> images);
std::vector<ImageTensor> read_images(const std::filesystem::path& path);
void write_ciphers(const std::filesystem::path& path, std::span<const CipherImage> ciphers);
std::vector<CipherImage> read_ciphers(const std::filesystem::path& path);

/// Peek at a container header without reading the payload.
ContainerHeader read_header(const std::filesystem::path& path);

}  // namespace xorinv::codec
