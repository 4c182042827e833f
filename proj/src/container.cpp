#include "xorinv/container.hpp"

#include <array>
#include <bit>
#include <cstring>

#include "xorinv/error.hpp"

namespace xorinv::codec {
namespace {

constexpr std::array<char, 8> kMagic = {'X', 'O', 'R', 'I', 'N', 'V', 'I', '\0'};
constexpr std::uint8_t kNoMode = 255;

template <typename T>
void put_le(std::uint8_t* p, T v) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
    const auto bits = std::bit_cast<U>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) p[i] = static_cast<std::uint8_t>(bits >> (8 * i));
}

template <typename T>
T get_le(const std::uint8_t* p) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<U>(p[i]) << (8 * i);
    return std::bit_cast<T>(bits);
}

std::array<std::uint8_t, kContainerHeaderSize> encode_header(const ContainerHeader& h) {
    std::array<std::uint8_t, kContainerHeaderSize> b{};
    std::memcpy(b.data(), kMagic.data(), kMagic.size());
    put_le<std::uint32_t>(&b[8], kContainerVersion);
    b[12] = static_cast<std::uint8_t>(h.kind);
    b[13] = h.mode ? static_cast<std::uint8_t>(*h.mode) : kNoMode;
    put_le<std::uint64_t>(&b[16], h.count);
    put_le<std::uint32_t>(&b[24], static_cast<std::uint32_t>(h.shape.height));
    put_le<std::uint32_t>(&b[28], static_cast<std::uint32_t>(h.shape.width));
    put_le<std::uint32_t>(&b[32], static_cast<std::uint32_t>(h.shape.channels));
    put_le<double>(&b[36], h.noise_sigma);
    return b;
}

ContainerHeader decode_header(std::istream& in, const std::filesystem::path& path) {
    std::array<std::uint8_t, kContainerHeaderSize> b{};
    in.read(reinterpret_cast<char*>(b.data()), b.size());
    if (in.gcount() != static_cast<std::streamsize>(b.size()))
        fail(ErrorKind::Format, path.string() + ": truncated container header");
    if (std::memcmp(b.data(), kMagic.data(), kMagic.size()) != 0)
        fail(ErrorKind::Format, path.string() + ": not an image container (bad magic)");
    if (get_le<std::uint32_t>(&b[8]) != kContainerVersion)
        fail(ErrorKind::Format, path.string() + ": unsupported container version");
    ContainerHeader h;
    if (b[12] > 1) fail(ErrorKind::Format, path.string() + ": unknown container kind");
    h.kind = static_cast<ContainerKind>(b[12]);
    if (b[13] == kNoMode) {
        h.mode = std::nullopt;
    } else if (b[13] <= 1) {
        h.mode = static_cast<EncodingMode>(b[13]);
    } else {
        fail(ErrorKind::Format, path.string() + ": unknown encoding mode tag");
    }
    if (h.kind == ContainerKind::Cipher && !h.mode)
        fail(ErrorKind::Format, path.string() + ": cipherimage container without encoding mode");
    h.count = get_le<std::uint64_t>(&b[16]);
    h.shape = {get_le<std::uint32_t>(&b[24]), get_le<std::uint32_t>(&b[28]), get_le<std::uint32_t>(&b[32])};
    h.noise_sigma = get_le<double>(&b[36]);
    return h;
}

}  // namespace

StackWriter::StackWriter(const std::filesystem::path& path, ContainerHeader header)
    : path_(path), tmp_path_(path.string() + ".tmp"), header_(header) {
    header_.count = 0;
    out_.open(tmp_path_, std::ios::binary | std::ios::trunc);
    if (!out_) fail(ErrorKind::Io, "cannot open for writing: " + tmp_path_.string());
    write_header();
}

StackWriter::~StackWriter() {
    if (!closed_) {
        out_.close();
        std::error_code ec;
        std::filesystem::remove(tmp_path_, ec);
    }
}

void StackWriter::write_header() {
    const auto b = encode_header(header_);
    out_.seekp(0);
    out_.write(reinterpret_cast<const char*>(b.data()), b.size());
}

void StackWriter::append_values(ImageShape shape, std::span<const float> values) {
    require(!closed_, "StackWriter: append after close");
    require(shape == header_.shape, "StackWriter: image shape does not match container shape");
    std::vector<std::uint8_t> bytes(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) put_le<float>(&bytes[4 * i], values[i]);
    out_.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out_) fail(ErrorKind::Io, "write failed: " + tmp_path_.string());
    ++header_.count;
}

void StackWriter::append(const ImageTensor& img) {
    require(header_.kind == ContainerKind::Image, "StackWriter: image appended to cipherimage container");
    append_values(img.shape, img.values);
}

void StackWriter::append(const CipherImage& ci) {
    require(header_.kind == ContainerKind::Cipher, "StackWriter: cipherimage appended to image container");
    require(header_.mode == ci.mode, "StackWriter: encoding mode mismatch");
    append_values(ci.shape, ci.values);
}

void StackWriter::close() {
    if (closed_) return;
    write_header();
    out_.close();
    if (!out_) fail(ErrorKind::Io, "write failed: " + tmp_path_.string());
    std::error_code ec;
    std::filesystem::rename(tmp_path_, path_, ec);
    if (ec) fail(ErrorKind::Io, "cannot rename " + tmp_path_.string() + " -> " + path_.string() + ": " + ec.message());
    closed_ = true;
}

StackReader::StackReader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) fail(ErrorKind::Io, "cannot open: " + path.string());
    header_ = decode_header(in_, path);
    const auto expected = kContainerHeaderSize + header_.count * header_.shape.count() * 4;
    std::error_code ec;
    const auto actual = std::filesystem::file_size(path, ec);
    if (ec || actual != expected)
        fail(ErrorKind::Format, path.string() + ": payload size does not match header (" + std::to_string(actual) +
                                    " bytes, expected " + std::to_string(expected) + ")");
}

std::vector<float> StackReader::read_values(std::uint64_t index) {
    require(index < header_.count, "StackReader: index " + std::to_string(index) + " out of range");
    const std::size_t n = header_.shape.count();
    std::vector<std::uint8_t> bytes(4 * n);
    in_.seekg(static_cast<std::streamoff>(kContainerHeaderSize + index * 4 * n));
    in_.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!in_) fail(ErrorKind::Io, "read failed: " + path_.string());
    std::vector<float> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = get_le<float>(&bytes[4 * i]);
    return values;
}

ImageTensor StackReader::image(std::uint64_t index) {
    if (header_.kind != ContainerKind::Image) fail(ErrorKind::Format, path_.string() + ": not an image container");
    return ImageTensor(header_.shape, read_values(index));
}

CipherImage StackReader::cipher(std::uint64_t index) {
    if (header_.kind != ContainerKind::Cipher) fail(ErrorKind::Format, path_.string() + ": not a cipherimage container");
    CipherImage ci;
    ci.shape = header_.shape;
    ci.values = read_values(index);
    ci.mode = *header_.mode;
    ci.noise_sigma = header_.noise_sigma;
    return ci;
}

ContainerHeader read_header(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open: " + path.string());
    return decode_header(in, path);
}

void write_images(const std::filesystem::path& path, std::span<const ImageTensor> images) {
    require(!images.empty(), "write_images: empty sequence");
    StackWriter w(path, {ContainerKind::Image, std::nullopt, 0, images.front().shape, 0.0});
    for (const auto& img : images) w.append(img);
    w.close();
}

std::vector<ImageTensor> read_images(const std::filesystem::path& path) {
    StackReader r(path);
    std::vector<ImageTensor> out;
    out.reserve(r.size());
    for (std::uint64_t i = 0; i < r.size(); ++i) out.push_back(r.image(i));
    return out;
}

void write_ciphers(const std::filesystem::path& path, std::span<const CipherImage> ciphers) {
    require(!ciphers.empty(), "write_ciphers: empty sequence");
    const auto& first = ciphers.front();
    StackWriter w(path, {ContainerKind::Cipher, first.mode, 0, first.shape, first.noise_sigma});
    for (const auto& ci : ciphers) w.append(ci);
    w.close();
}

std::vector<CipherImage> read_ciphers(const std::filesystem::path& path) {
    StackReader r(path);
    std::vector<CipherImage> out;
    out.reserve(r.size());
    for (std::uint64_t i = 0; i < r.size(); ++i) out.push_back(r.cipher(i));
    return out;
}

}  // namespace xorinv::codec
