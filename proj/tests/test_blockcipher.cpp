#include <doctest.h>
#include <openssl/evp.h>

#include <filesystem>
#include <fstream>
#include <memory>
#include <set>

#include "xorinv/blockcipher.hpp"
#include "xorinv/error.hpp"
#include "xorinv/rng.hpp"

using namespace xorinv;
using namespace xorinv::aes;

namespace {

ByteBuffer hex(std::string_view s) { return from_hex(s); }

KeyMaterial km_of(std::string_view key, std::string_view iv) {
    KeyMaterial km;
    const auto k = hex(key), v = hex(iv);
    std::copy(k.begin(), k.end(), km.key.begin());
    std::copy(v.begin(), v.end(), km.iv.begin());
    return km;
}

ByteBuffer random_bytes(Rng& rng, std::size_t n) {
    ByteBuffer b(n);
    for (auto& x : b) x = static_cast<std::uint8_t>(rng.below(256));
    return b;
}

// Independent reference: OpenSSL's AES.
ByteBuffer openssl_encrypt(const EVP_CIPHER* cipher, const KeyMaterial& km, ByteView data) {
    std::unique_ptr<EVP_CIPHER_CTX, decltype(&EVP_CIPHER_CTX_free)> ctx(EVP_CIPHER_CTX_new(), &EVP_CIPHER_CTX_free);
    REQUIRE(EVP_EncryptInit_ex(ctx.get(), cipher, nullptr, km.key.data(), km.iv.data()) == 1);
    EVP_CIPHER_CTX_set_padding(ctx.get(), 0);
    ByteBuffer out(data.size() + 16);
    int len = 0, fin = 0;
    REQUIRE(EVP_EncryptUpdate(ctx.get(), out.data(), &len, data.data(), static_cast<int>(data.size())) == 1);
    REQUIRE(EVP_EncryptFinal_ex(ctx.get(), out.data() + len, &fin) == 1);
    out.resize(static_cast<std::size_t>(len + fin));
    return out;
}

const char* kNistKey = "2b7e151628aed2a6abf7158809cf4f3c";
const char* kNistPlain =
    "6bc1bee22e409f96e93d7e117393172aae2d8a571e03ac9c9eb76fac45af8e51"
    "30c81c46a35ce411e5fbc1191a0a52eff69f2445df4f9b17ad2b417be66c3710";

}  // namespace

TEST_CASE("key expansion matches the FIPS-197 Appendix A.1 schedule") {
    const auto ks = expand_key(hex(kNistKey));
    CHECK(to_hex(ks.round_keys[0]) == kNistKey);
    CHECK(to_hex(ks.round_keys[1]) == "a0fafe1788542cb123a339392a6c7605");
    CHECK(to_hex(ks.round_keys[2]) == "f2c295f27a96b9435935807a7359f67f");
    CHECK(to_hex(ks.round_keys[10]) == "d014f9a8c9ee2589e13f0cc8b6630ca6");
}

TEST_CASE("key expansion is deterministic and rejects wrong key sizes") {
    const ByteBuffer zero(16, 0);
    CHECK(expand_key(zero) == expand_key(zero));
    CHECK_THROWS_AS(expand_key(ByteBuffer(15, 0)), Error);
    CHECK_THROWS_AS(expand_key(ByteBuffer(17, 0)), Error);
}

TEST_CASE("block encryption matches FIPS-197 vectors") {
    const auto ks = expand_key(hex(kNistKey));
    CHECK(to_hex(encrypt_block(hex("3243f6a8885a308d313198a2e0370734"), ks)) == "3925841d02dc09fbdc118597196a0b32");
    const auto ks_c1 = expand_key(hex("000102030405060708090a0b0c0d0e0f"));
    const auto c1 = encrypt_block(hex("00112233445566778899aabbccddeeff"), ks_c1);
    CHECK(to_hex(c1) == "69c4e0d86a7b0430d8cdb78070b4c55a");
    CHECK(to_hex(decrypt_block(c1, ks_c1)) == "00112233445566778899aabbccddeeff");
    CHECK(encrypt_block(c1, ks_c1) == encrypt_block(c1, ks_c1));
    CHECK_THROWS_AS(encrypt_block(ByteBuffer(15, 0), ks), Error);
}

TEST_CASE("block encryption is injective on a random sample") {
    Rng rng(7);
    const auto ks = expand_key(random_bytes(rng, 16));
    std::set<Block> inputs, outputs;
    while (inputs.size() < 2000) {
        Block b;
        const auto r = random_bytes(rng, 16);
        std::copy(r.begin(), r.end(), b.begin());
        if (inputs.insert(b).second) outputs.insert(encrypt_block(b, ks));
    }
    CHECK(outputs.size() == inputs.size());
}

TEST_CASE("CTR keystream matches SP 800-38A F.5.1") {
    const auto km = km_of(kNistKey, "f0f1f2f3f4f5f6f7f8f9fafbfcfdfeff");
    CHECK(to_hex(ctr_keystream(km, 64)) ==
          "ec8cdf7398607cb0f2d21675ea9ea1e4362b7c3c6773516318a077d7fc5073ae"
          "6a2cc3787889374fbeb4c81b17ba6c44e89c399ff0f198c6d40a31db156cabfe");
    CHECK(to_hex(ctr_apply(hex(kNistPlain), km)) ==
          "874d6191b620e3261bef6864990db6ce9806f66b7970fdff8617187bb9fffdff"
          "5ae4df3edbd5d35e5b4f09020db03eab1e031dda2fbe03d1792170a0f3009cee");
}

TEST_CASE("CTR counter carries across the full 128 bits") {
    const auto km = km_of(kNistKey, "ffffffffffffffffffffffffffffffff");
    CHECK(to_hex(ctr_keystream(km, 32)) == "8af2860142f786f409307c1a3f7eaaac7df76b0c1ab899b33e42f047b91b546f");
}

TEST_CASE("CTR keystream edge cases") {
    const auto km = KeyMaterial::generate(3);
    CHECK(ctr_keystream(km, 0).empty());
    const auto long_ks = ctr_keystream(km, 48);
    CHECK(ctr_keystream(km, 48) == long_ks);
    for (std::size_t n : {1u, 15u, 16u, 17u, 33u, 48u}) {
        const auto ks = ctr_keystream(km, n);
        CHECK(std::equal(ks.begin(), ks.end(), long_ks.begin()));
    }
}

TEST_CASE("xor_apply") {
    ByteBuffer a(8, 0x0F), b(8, 0xF0);
    CHECK(xor_apply(a, b) == ByteBuffer(8, 0xFF));
    CHECK(xor_apply(a, ByteBuffer(8, 0)) == a);
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const auto d = random_bytes(rng, rng.below(300));
        const auto km = KeyMaterial::generate(rng.next_u64());
        const auto ks = ctr_keystream(km, d.size());
        CHECK(xor_apply(xor_apply(d, ks), ks) == d);
    }
    CHECK_THROWS_AS(xor_apply(a, ByteBuffer(7, 0)), Error);
}

TEST_CASE("CBC matches SP 800-38A F.2.1 and inverts") {
    const auto km = km_of(kNistKey, "000102030405060708090a0b0c0d0e0f");
    const auto ct = cbc_encrypt(hex(kNistPlain), km);
    CHECK(to_hex(ct) ==
          "7649abac8119b246cee98e9b12e9197d5086cb9b507219ee95db113a917678b2"
          "73bed6b8e3c1743b7116e69e222295163ff1caa1681fac09120eca307586e1a7");
    CHECK(to_hex(cbc_decrypt(ct, km)) == kNistPlain);
    CHECK(cbc_encrypt(ByteBuffer{}, km).empty());
    CHECK_THROWS_AS(cbc_encrypt(ByteBuffer(17, 0), km), Error);
    CHECK_THROWS_AS(cbc_decrypt(ByteBuffer(8, 0), km), Error);
}

TEST_CASE("CBC: flipping the first plaintext byte changes every ciphertext block") {
    Rng rng(5);
    const auto km = KeyMaterial::generate(9);
    auto d = random_bytes(rng, 16 * 64);
    const auto before = cbc_encrypt(d, km);
    d[0] ^= 0x01;
    const auto after = cbc_encrypt(d, km);
    for (std::size_t b = 0; b < 64; ++b)
        CHECK_FALSE(std::equal(before.begin() + 16 * b, before.begin() + 16 * (b + 1), after.begin() + 16 * b));
}

TEST_CASE("CTR and CBC agree with OpenSSL on random inputs") {
    Rng rng(21);
    for (int trial = 0; trial < 40; ++trial) {
        const auto km = KeyMaterial::generate(rng.next_u64());
        const auto ctr_data = random_bytes(rng, rng.below(1000));
        CHECK(ctr_apply(ctr_data, km) == openssl_encrypt(EVP_aes_128_ctr(), km, ctr_data));
        const auto cbc_data = random_bytes(rng, 16 * rng.below(60));
        const auto ct = cbc_encrypt(cbc_data, km);
        CHECK(ct == openssl_encrypt(EVP_aes_128_cbc(), km, cbc_data));
        CHECK(cbc_decrypt(ct, km) == cbc_data);
    }
}

TEST_CASE("key material generation and key files") {
    CHECK(KeyMaterial::generate(42) == KeyMaterial::generate(42));
    CHECK_FALSE(KeyMaterial::generate(42) == KeyMaterial::generate(43));
    const auto km = KeyMaterial::generate(42);
    CHECK(km.fingerprint().size() == 16);
    CHECK(km.fingerprint() == KeyMaterial::generate(42).fingerprint());

    const auto dir = std::filesystem::temp_directory_path() / "xorinv_keyfile_test";
    std::filesystem::create_directories(dir);
    const auto path = dir / "key.txt";
    write_key_file(path, km);
    CHECK(read_key_file(path) == km);

    std::ofstream(path) << "key = " << to_hex(km.key) << "\niv = " << to_hex(km.iv) << "\nfingerprint = 0000000000000000\n";
    CHECK_THROWS_AS(read_key_file(path), Error);
    std::ofstream(path) << "key = abcd\niv = " << to_hex(km.iv) << "\n";
    CHECK_THROWS_AS(read_key_file(path), Error);
    std::filesystem::remove_all(dir);
}
