#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "xorinv/container.hpp"
#include "xorinv/datakit.hpp"
#include "xorinv/error.hpp"

using namespace xorinv;
using namespace xorinv::data;

namespace {

std::filesystem::path temp_dir(const char* name) {
    auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

DatasetManifest toy_manifest(const std::filesystem::path& dir, std::size_t count, std::size_t n_train) {
    const ToySpec spec{count, 8, 8, 2, 3};
    codec::write_images(dir / "truth.ximg", synth_toy(spec));
    DatasetManifest m;
    m.name = "toy";
    m.source_path = "truth.ximg";
    m.shape = {8, 8, 2};
    m.count = count;
    m.n_train = n_train;
    return m;
}

pipeline::ForwardSpec ctr_spec(double sigma = 0.0) {
    pipeline::ForwardSpec spec;
    spec.key = aes::KeyMaterial::generate(21);
    spec.mode = codec::EncodingMode::Float32;
    spec.noise_sigma = sigma;
    spec.seed = 4;
    return spec;
}

}  // namespace

TEST_CASE("STL-10 planes are column-major") {
    const auto dir = temp_dir("xorinv_stl10_test");
    std::vector<std::uint8_t> bytes(2 * kStl10ImageBytes, 0);
    bytes[1 * 96 + 0] = 255;                         // red plane, column 1, row 0
    bytes[kStl10ImageBytes + 2 * 9216 + 5] = 51;     // image 1, blue plane, column 0, row 5
    write_bytes(dir / "two.bin", bytes);
    const auto images = load_stl10(dir / "two.bin");
    REQUIRE(images.size() == 2);
    CHECK(images[0].shape == ImageShape{96, 96, 3});
    CHECK(images[0].at(0, 1, 0) == 1.0f);
    CHECK(images[0].at(1, 0, 0) == 0.0f);
    float total = 0.0f;
    for (float v : images[0].values) total += v;
    CHECK(total == 1.0f);
    CHECK(images[1].at(5, 0, 2) == doctest::Approx(0.2f));

    Stl10Reader reader(dir / "two.bin");
    CHECK(reader.size() == 2);
    CHECK(reader.image(1) == images[1]);
    CHECK_THROWS_AS(reader.image(2), Error);

    write_bytes(dir / "empty.bin", {});
    CHECK(load_stl10(dir / "empty.bin").empty());
    write_bytes(dir / "short.bin", std::vector<std::uint8_t>(kStl10ImageBytes + 1));
    CHECK_THROWS_AS(load_stl10(dir / "short.bin"), Error);
    CHECK_THROWS_AS(load_stl10(dir / "missing.bin"), Error);
    std::filesystem::remove_all(dir);
}

TEST_CASE("toy images are deterministic, byte-representable and index-addressable") {
    const ToySpec spec{50, 16, 12, 3, 8};
    const auto a = synth_toy(spec);
    CHECK(a == synth_toy(spec));
    CHECK(a[7] == synth_toy_image({1000, 16, 12, 3, 8}, 7));
    CHECK_FALSE(a[0] == synth_toy({1, 16, 12, 3, 9})[0]);
    for (const auto& img : a) {
        CHECK(img.shape == ImageShape{16, 12, 3});
        CHECK(img.in_unit_range());
        for (float v : img.values) CHECK(static_cast<float>(std::nearbyint(v * 255.0f)) / 255.0f == v);
    }
    // Images actually differ from one another and contain structure.
    CHECK_FALSE(a[0] == a[1]);
    const auto [lo, hi] = std::minmax_element(a[0].values.begin(), a[0].values.end());
    CHECK(*hi > *lo);
}

TEST_CASE("toy mean image is spatially uniform") {
    const auto images = synth_toy({10000, 16, 16, 1, 1});
    const auto mp = pipeline::fit_mean(images);
    const auto [lo, hi] = std::minmax_element(mp.mean_image.values.begin(), mp.mean_image.values.end());
    CHECK(*hi - *lo < 0.1f);
}

TEST_CASE("file-order split") {
    DatasetManifest m;
    m.count = 100000;
    m.shape = {96, 96, 3};
    const auto [train, test] = split(m, 90000);
    CHECK(train.begin == 0);
    CHECK(train.size() == 90000);
    CHECK(test.begin == 90000);
    CHECK(test.size() == 10000);
    CHECK(split(m, 99999).second.size() == 1);
    CHECK_THROWS_AS(split(m, 100000), Error);
    CHECK_THROWS_AS(split(m, 0), Error);
}

TEST_CASE("manifest round trip") {
    const auto dir = temp_dir("xorinv_manifest_test");
    auto m = toy_manifest(dir, 10, 7);
    write_manifest(dir / "m.txt", m);
    const auto back = read_manifest(dir / "m.txt");
    CHECK(back.name == "toy");
    CHECK(back.shape == m.shape);
    CHECK(back.count == 10);
    CHECK(back.n_train == 7);
    CHECK_FALSE(back.forward.has_value());

    std::ofstream(dir / "bad.txt") << "format = something-else\n";
    CHECK_THROWS_AS(read_manifest(dir / "bad.txt"), Error);
    std::filesystem::remove_all(dir);
}

TEST_CASE("materialize is idempotent, verifiable and decryptable") {
    const auto dir = temp_dir("xorinv_materialize_test");
    const auto m = toy_manifest(dir, 30, 20);
    const auto spec = ctr_spec();
    const auto out = materialize(m, dir, spec, dir / "a", 1);
    materialize(m, dir, spec, dir / "b", 3);
    for (const char* f : {"train_cipher.ximg", "train_truth.ximg", "test_cipher.ximg", "test_truth.ximg", "manifest.txt"})
        CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));

    REQUIRE(out.forward.has_value());
    CHECK(out.forward->key_fingerprint == spec.key.fingerprint());
    CHECK_NOTHROW(verify_checksum(out, dir / "a"));
    const auto reread = read_manifest(dir / "a" / "manifest.txt");
    CHECK(reread.checksum == out.checksum);
    CHECK(reread.forward->key_fingerprint == out.forward->key_fingerprint);

    const auto train = load_split(reread, dir / "a", false);
    const auto test = load_split(reread, dir / "a", true);
    CHECK(train.inputs.size() == 20);
    CHECK(test.inputs.size() == 10);
    const auto fwd = forward_spec_of(reread, spec.key);
    for (std::size_t i = 0; i < test.inputs.size(); ++i)
        CHECK(pipeline::decrypt_exact(test.inputs[i], fwd, false) == test.targets[i]);
    // Ground truth in the split files is the source, in file order.
    CHECK(test.targets[0] == synth_toy_image({30, 8, 8, 2, 3}, 20));
    // Test image i is encrypted with the stream of its global index.
    CHECK(test.inputs[3] == pipeline::encrypt_image(test.targets[3], fwd, 23));

    CHECK_THROWS_AS(forward_spec_of(reread, aes::KeyMaterial::generate(22)), Error);

    {
        std::fstream f(dir / "a" / "test_cipher.ximg", std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(100);
        f.put('\x5a');
    }
    CHECK_THROWS_AS(verify_checksum(out, dir / "a"), Error);
    std::filesystem::remove_all(dir);
}

TEST_CASE("materialize with noise records sigma and seed") {
    const auto dir = temp_dir("xorinv_materialize_noise_test");
    const auto m = toy_manifest(dir, 6, 4);
    const auto out = materialize(m, dir, ctr_spec(0.01), dir / "n");
    const auto reread = read_manifest(dir / "n" / "manifest.txt");
    CHECK(reread.forward->noise_sigma == 0.01);
    CHECK(reread.forward->seed == 4);
    const auto test = load_split(reread, dir / "n", true);
    CHECK(test.inputs[0].noise_sigma == doctest::Approx(0.01));
    std::filesystem::remove_all(dir);
}

TEST_CASE("materialize rejects a source that disagrees with the manifest") {
    const auto dir = temp_dir("xorinv_materialize_bad_test");
    auto m = toy_manifest(dir, 6, 4);
    m.count = 7;
    CHECK_THROWS_AS(materialize(m, dir, ctr_spec(), dir / "x"), Error);
    std::filesystem::remove_all(dir);
}
