#pragma once

// AES-128 (FIPS-197) with the CTR and CBC modes used to build cipherimages.
// No padding, no authentication, no key secrecy: the key and iv are fixed
// across a whole dataset so that encryption is a deterministic operator.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace xorinv::aes {

inline constexpr std::size_t kBlockSize = 16;
inline constexpr std::size_t kKeySize = 16;
inline constexpr std::size_t kRounds = 10;

using Block = std::array<std::uint8_t, kBlockSize>;
using ByteBuffer = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

/// Round keys for AES-128: 11 round keys of 16 bytes.
struct KeySchedule {
    std::array<Block, kRounds + 1> round_keys{};

    friend bool operator==(const KeySchedule&, const KeySchedule&) = default;
};

/// Fixed key and iv shared by every image of a dataset.
struct KeyMaterial {
    Block key{};
    Block iv{};

    /// 16 hex chars of SHA-256(key || iv).
    std::string fingerprint() const;

    /// Seeded key generation (reproducible; not suitable for real secrets).
    static KeyMaterial generate(std::uint64_t seed);

    friend bool operator==(const KeyMaterial&, const KeyMaterial&) = default;
};

KeySchedule expand_key(ByteView key);
Block encrypt_block(ByteView block, const KeySchedule& schedule);
Block decrypt_block(ByteView block, const KeySchedule& schedule);

/// First `n` bytes of the CTR keystream. The iv is the initial counter block
/// and is incremented as a 128-bit big-endian integer per block.
ByteBuffer ctr_keystream(const KeyMaterial& km, std::size_t n);

ByteBuffer xor_apply(ByteView data, ByteView keystream);

/// CTR encryption and decryption are the same operation.
ByteBuffer ctr_apply(ByteView data, const KeyMaterial& km);

/// CBC with km.iv as the initial chaining block. Length must be a multiple of 16.
ByteBuffer cbc_encrypt(ByteView data, const KeyMaterial& km);
ByteBuffer cbc_decrypt(ByteView data, const KeyMaterial& km);

std::string to_hex(ByteView bytes);
ByteBuffer from_hex(std::string_view hex);

// Key file: text lines `key = <32 hex>`, `iv = <32 hex>`, `fingerprint = <16 hex>`.
// Blank lines and lines starting with '#' are ignored.
void write_key_file(const std::filesystem::path& path, const KeyMaterial& km);
KeyMaterial read_key_file(const std::filesystem::path& path);

}  // namespace xorinv::aes
