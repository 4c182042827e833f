#include "xorinv/blockcipher.hpp"

#include <openssl/sha.h>

#include <algorithm>

#include "xorinv/error.hpp"
#include "xorinv/kvfile.hpp"
#include "xorinv/rng.hpp"

namespace xorinv::aes {
namespace {

constexpr std::uint8_t gf_mul(std::uint8_t a, std::uint8_t b) {
    std::uint8_t p = 0;
    while (b != 0) {
        if (b & 1) p ^= a;
        const bool hi = (a & 0x80) != 0;
        a = static_cast<std::uint8_t>(a << 1);
        if (hi) a ^= 0x1B;
        b >>= 1;
    }
    return p;
}

constexpr std::uint8_t gf_inv(std::uint8_t a) {
    // a^254 = a^-1 in GF(2^8); 0 maps to 0.
    std::uint8_t result = 1;
    std::uint8_t base = a;
    for (int e = 254; e != 0; e >>= 1) {
        if (e & 1) result = gf_mul(result, base);
        base = gf_mul(base, base);
    }
    return a == 0 ? 0 : result;
}

constexpr std::uint8_t rotl8(std::uint8_t x, int s) {
    return static_cast<std::uint8_t>((x << s) | (x >> (8 - s)));
}

struct Tables {
    std::array<std::uint8_t, 256> sbox{};
    std::array<std::uint8_t, 256> inv_sbox{};
    std::array<std::array<std::uint32_t, 256>, 4> te{};
};

constexpr Tables make_tables() {
    Tables t;
    for (int i = 0; i < 256; ++i) {
        const std::uint8_t b = gf_inv(static_cast<std::uint8_t>(i));
        const auto s = static_cast<std::uint8_t>(b ^ rotl8(b, 1) ^ rotl8(b, 2) ^ rotl8(b, 3) ^ rotl8(b, 4) ^ 0x63);
        t.sbox[i] = s;
        t.inv_sbox[s] = static_cast<std::uint8_t>(i);
    }
    for (int i = 0; i < 256; ++i) {
        const std::uint32_t s = t.sbox[i];
        const std::uint32_t s2 = gf_mul(t.sbox[i], 2);
        const std::uint32_t s3 = gf_mul(t.sbox[i], 3);
        const std::uint32_t w = (s2 << 24) | (s << 16) | (s << 8) | s3;
        t.te[0][i] = w;
        t.te[1][i] = (w >> 8) | (w << 24);
        t.te[2][i] = (w >> 16) | (w << 16);
        t.te[3][i] = (w >> 24) | (w << 8);
    }
    return t;
}

constexpr Tables kTables = make_tables();
static_assert(kTables.sbox[0x00] == 0x63 && kTables.sbox[0x53] == 0xED);

std::uint32_t load_be(const std::uint8_t* p) {
    return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
}

void store_be(std::uint32_t w, std::uint8_t* p) {
    p[0] = static_cast<std::uint8_t>(w >> 24);
    p[1] = static_cast<std::uint8_t>(w >> 16);
    p[2] = static_cast<std::uint8_t>(w >> 8);
    p[3] = static_cast<std::uint8_t>(w);
}

// Whole-block encryption on big-endian column words (T-table formulation).
void encrypt_words(const std::uint8_t* in, std::uint8_t* out, const KeySchedule& ks) {
    const auto& te = kTables.te;
    const auto& sb = kTables.sbox;
    std::uint32_t rk[4 * (kRounds + 1)];
    for (std::size_t r = 0; r <= kRounds; ++r)
        for (int c = 0; c < 4; ++c) rk[4 * r + c] = load_be(&ks.round_keys[r][4 * c]);

    std::uint32_t s0 = load_be(in) ^ rk[0];
    std::uint32_t s1 = load_be(in + 4) ^ rk[1];
    std::uint32_t s2 = load_be(in + 8) ^ rk[2];
    std::uint32_t s3 = load_be(in + 12) ^ rk[3];
    for (std::size_t r = 1; r < kRounds; ++r) {
        const std::uint32_t* k = &rk[4 * r];
        const std::uint32_t t0 = te[0][s0 >> 24] ^ te[1][(s1 >> 16) & 0xFF] ^ te[2][(s2 >> 8) & 0xFF] ^ te[3][s3 & 0xFF] ^ k[0];
        const std::uint32_t t1 = te[0][s1 >> 24] ^ te[1][(s2 >> 16) & 0xFF] ^ te[2][(s3 >> 8) & 0xFF] ^ te[3][s0 & 0xFF] ^ k[1];
        const std::uint32_t t2 = te[0][s2 >> 24] ^ te[1][(s3 >> 16) & 0xFF] ^ te[2][(s0 >> 8) & 0xFF] ^ te[3][s1 & 0xFF] ^ k[2];
        const std::uint32_t t3 = te[0][s3 >> 24] ^ te[1][(s0 >> 16) & 0xFF] ^ te[2][(s1 >> 8) & 0xFF] ^ te[3][s2 & 0xFF] ^ k[3];
        s0 = t0;
        s1 = t1;
        s2 = t2;
        s3 = t3;
    }
    const std::uint32_t* k = &rk[4 * kRounds];
    auto last = [&](std::uint32_t a, std::uint32_t b, std::uint32_t c, std::uint32_t d, std::uint32_t key) {
        return ((std::uint32_t{sb[a >> 24]} << 24) | (std::uint32_t{sb[(b >> 16) & 0xFF]} << 16) |
                (std::uint32_t{sb[(c >> 8) & 0xFF]} << 8) | std::uint32_t{sb[d & 0xFF]}) ^
               key;
    };
    store_be(last(s0, s1, s2, s3, k[0]), out);
    store_be(last(s1, s2, s3, s0, k[1]), out + 4);
    store_be(last(s2, s3, s0, s1, k[2]), out + 8);
    store_be(last(s3, s0, s1, s2, k[3]), out + 12);
}

void add_round_key(Block& s, const Block& k) {
    for (std::size_t i = 0; i < kBlockSize; ++i) s[i] ^= k[i];
}

void inv_shift_rows(Block& s) {
    // State byte (row r, column c) lives at index 4c + r.
    Block t = s;
    for (int r = 1; r < 4; ++r)
        for (int c = 0; c < 4; ++c) s[4 * ((c + r) % 4) + r] = t[4 * c + r];
}

void inv_mix_columns(Block& s) {
    for (int c = 0; c < 4; ++c) {
        std::uint8_t* col = &s[4 * c];
        const std::uint8_t a0 = col[0], a1 = col[1], a2 = col[2], a3 = col[3];
        col[0] = gf_mul(a0, 14) ^ gf_mul(a1, 11) ^ gf_mul(a2, 13) ^ gf_mul(a3, 9);
        col[1] = gf_mul(a0, 9) ^ gf_mul(a1, 14) ^ gf_mul(a2, 11) ^ gf_mul(a3, 13);
        col[2] = gf_mul(a0, 13) ^ gf_mul(a1, 9) ^ gf_mul(a2, 14) ^ gf_mul(a3, 11);
        col[3] = gf_mul(a0, 11) ^ gf_mul(a1, 13) ^ gf_mul(a2, 9) ^ gf_mul(a3, 14);
    }
}

void increment_be(Block& counter) {
    for (std::size_t i = kBlockSize; i-- > 0;)
        if (++counter[i] != 0) break;
}

}  // namespace

KeySchedule expand_key(ByteView key) {
    if (key.size() != kKeySize)
        fail(ErrorKind::InvalidArgument, "invalid key: expected 16 bytes, got " + std::to_string(key.size()));
    std::array<std::uint8_t, 4 * 4 * (kRounds + 1)> w{};
    std::copy(key.begin(), key.end(), w.begin());
    std::uint8_t rcon = 0x01;
    for (std::size_t i = 4; i < 4 * (kRounds + 1); ++i) {
        std::uint8_t t[4] = {w[4 * (i - 1)], w[4 * (i - 1) + 1], w[4 * (i - 1) + 2], w[4 * (i - 1) + 3]};
        if (i % 4 == 0) {
            const std::uint8_t first = t[0];
            t[0] = kTables.sbox[t[1]] ^ rcon;
            t[1] = kTables.sbox[t[2]];
            t[2] = kTables.sbox[t[3]];
            t[3] = kTables.sbox[first];
            rcon = gf_mul(rcon, 2);
        }
        for (int j = 0; j < 4; ++j) w[4 * i + j] = w[4 * (i - 4) + j] ^ t[j];
    }
    KeySchedule ks;
    for (std::size_t r = 0; r <= kRounds; ++r) std::copy_n(&w[16 * r], kBlockSize, ks.round_keys[r].begin());
    return ks;
}

Block encrypt_block(ByteView block, const KeySchedule& schedule) {
    require(block.size() == kBlockSize, "encrypt_block: block must be 16 bytes");
    Block out;
    encrypt_words(block.data(), out.data(), schedule);
    return out;
}

Block decrypt_block(ByteView block, const KeySchedule& schedule) {
    require(block.size() == kBlockSize, "decrypt_block: block must be 16 bytes");
    Block s;
    std::copy(block.begin(), block.end(), s.begin());
    add_round_key(s, schedule.round_keys[kRounds]);
    for (std::size_t r = kRounds; r-- > 0;) {
        inv_shift_rows(s);
        for (auto& b : s) b = kTables.inv_sbox[b];
        add_round_key(s, schedule.round_keys[r]);
        if (r != 0) inv_mix_columns(s);
    }
    return s;
}

ByteBuffer ctr_keystream(const KeyMaterial& km, std::size_t n) {
    const KeySchedule ks = expand_key(km.key);
    ByteBuffer out(n);
    Block counter = km.iv;
    Block block;
    for (std::size_t off = 0; off < n; off += kBlockSize) {
        encrypt_words(counter.data(), block.data(), ks);
        std::copy_n(block.begin(), std::min(kBlockSize, n - off), out.begin() + static_cast<std::ptrdiff_t>(off));
        increment_be(counter);
    }
    return out;
}

ByteBuffer xor_apply(ByteView data, ByteView keystream) {
    require(data.size() == keystream.size(), "xor_apply: length mismatch (" + std::to_string(data.size()) + " vs " +
                                                 std::to_string(keystream.size()) + ")");
    ByteBuffer out(data.size());
    std::transform(data.begin(), data.end(), keystream.begin(), out.begin(),
                   [](std::uint8_t a, std::uint8_t b) { return static_cast<std::uint8_t>(a ^ b); });
    return out;
}

ByteBuffer ctr_apply(ByteView data, const KeyMaterial& km) { return xor_apply(data, ctr_keystream(km, data.size())); }

ByteBuffer cbc_encrypt(ByteView data, const KeyMaterial& km) {
    require(data.size() % kBlockSize == 0, "cbc_encrypt: length " + std::to_string(data.size()) +
                                               " is not a multiple of 16 (no padding scheme)");
    const KeySchedule ks = expand_key(km.key);
    ByteBuffer out(data.size());
    Block chain = km.iv;
    for (std::size_t off = 0; off < data.size(); off += kBlockSize) {
        for (std::size_t i = 0; i < kBlockSize; ++i) chain[i] ^= data[off + i];
        encrypt_words(chain.data(), chain.data(), ks);
        std::copy(chain.begin(), chain.end(), out.begin() + static_cast<std::ptrdiff_t>(off));
    }
    return out;
}

ByteBuffer cbc_decrypt(ByteView data, const KeyMaterial& km) {
    require(data.size() % kBlockSize == 0, "cbc_decrypt: length " + std::to_string(data.size()) +
                                               " is not a multiple of 16 (no padding scheme)");
    const KeySchedule ks = expand_key(km.key);
    ByteBuffer out(data.size());
    Block prev = km.iv;
    for (std::size_t off = 0; off < data.size(); off += kBlockSize) {
        const ByteView cur = data.subspan(off, kBlockSize);
        const Block plain = decrypt_block(cur, ks);
        for (std::size_t i = 0; i < kBlockSize; ++i) out[off + i] = plain[i] ^ prev[i];
        std::copy(cur.begin(), cur.end(), prev.begin());
    }
    return out;
}

std::string to_hex(ByteView bytes) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s;
    s.reserve(2 * bytes.size());
    for (auto b : bytes) {
        s.push_back(digits[b >> 4]);
        s.push_back(digits[b & 0xF]);
    }
    return s;
}

ByteBuffer from_hex(std::string_view hex) {
    auto nibble = [&](char c) -> std::uint8_t {
        if (c >= '0' && c <= '9') return static_cast<std::uint8_t>(c - '0');
        if (c >= 'a' && c <= 'f') return static_cast<std::uint8_t>(c - 'a' + 10);
        if (c >= 'A' && c <= 'F') return static_cast<std::uint8_t>(c - 'A' + 10);
        fail(ErrorKind::Format, "invalid hex digit '" + std::string(1, c) + "'");
    };
    if (hex.size() % 2 != 0) fail(ErrorKind::Format, "hex string has odd length");
    ByteBuffer out(hex.size() / 2);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<std::uint8_t>((nibble(hex[2 * i]) << 4) | nibble(hex[2 * i + 1]));
    return out;
}

std::string KeyMaterial::fingerprint() const {
    std::uint8_t material[2 * kBlockSize];
    std::copy(key.begin(), key.end(), material);
    std::copy(iv.begin(), iv.end(), material + kBlockSize);
    std::uint8_t digest[SHA256_DIGEST_LENGTH];
    SHA256(material, sizeof material, digest);
    return to_hex(ByteView(digest, 8));
}

KeyMaterial KeyMaterial::generate(std::uint64_t seed) {
    Rng rng(seed);
    KeyMaterial km;
    for (auto* part : {&km.key, &km.iv}) {
        for (std::size_t i = 0; i < kBlockSize; i += 8) {
            const std::uint64_t v = rng.next_u64();
            for (std::size_t j = 0; j < 8; ++j) (*part)[i + j] = static_cast<std::uint8_t>(v >> (8 * j));
        }
    }
    return km;
}

void write_key_file(const std::filesystem::path& path, const KeyMaterial& km) {
    KeyValueFile kv;
    kv.set("key", to_hex(km.key));
    kv.set("iv", to_hex(km.iv));
    kv.set("fingerprint", km.fingerprint());
    kv.write(path, "AES-128 key material (fixed key and iv)");
}

KeyMaterial read_key_file(const std::filesystem::path& path) {
    const auto kv = KeyValueFile::read(path);
    kv.check_names({"key", "iv", "fingerprint"});
    const ByteBuffer key = from_hex(kv.get("key"));
    const ByteBuffer iv = from_hex(kv.get("iv"));
    if (key.size() != kKeySize) fail(ErrorKind::Format, path.string() + ": key must be 32 hex digits");
    if (iv.size() != kBlockSize) fail(ErrorKind::Format, path.string() + ": iv must be 32 hex digits");
    KeyMaterial km;
    std::copy(key.begin(), key.end(), km.key.begin());
    std::copy(iv.begin(), iv.end(), km.iv.begin());
    if (const auto fp = kv.find("fingerprint"); fp && *fp != km.fingerprint())
        fail(ErrorKind::Format, path.string() + ": fingerprint does not match key and iv");
    return km;
}

}  // namespace xorinv::aes
