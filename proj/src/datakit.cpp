#include "xorinv/datakit.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "xorinv/container.hpp"
#include "xorinv/error.hpp"
#include "xorinv/kvfile.hpp"
#include "xorinv/parallel.hpp"
#include "xorinv/rng.hpp"

namespace xorinv::data {
namespace fs = std::filesystem;

ImageTensor decode_stl10(std::span<const std::uint8_t> record) {
    require(record.size() == kStl10ImageBytes, "decode_stl10: record must be 27648 bytes");
    constexpr std::size_t n = kStl10Side;
    ImageTensor img({n, n, 3});
    for (std::size_t ch = 0; ch < 3; ++ch) {
        const std::uint8_t* plane = record.data() + ch * n * n;
        for (std::size_t col = 0; col < n; ++col)
            for (std::size_t row = 0; row < n; ++row)
                img.at(row, col, ch) = static_cast<float>(plane[col * n + row]) / 255.0f;
    }
    return img;
}

Stl10Reader::Stl10Reader(const fs::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) fail(ErrorKind::Io, "cannot open STL-10 file: " + path.string());
    std::error_code ec;
    const auto bytes = fs::file_size(path, ec);
    if (ec) fail(ErrorKind::Io, "cannot stat " + path.string() + ": " + ec.message());
    if (bytes % kStl10ImageBytes != 0)
        fail(ErrorKind::Format, path.string() + ": size " + std::to_string(bytes) + " is not a multiple of 27648");
    count_ = bytes / kStl10ImageBytes;
}

ImageTensor Stl10Reader::image(std::size_t index) {
    require(index < count_, "Stl10Reader: index out of range");
    std::vector<std::uint8_t> record(kStl10ImageBytes);
    in_.seekg(static_cast<std::streamoff>(index * kStl10ImageBytes));
    in_.read(reinterpret_cast<char*>(record.data()), static_cast<std::streamsize>(record.size()));
    if (!in_) fail(ErrorKind::Io, "read failed: " + path_.string());
    return decode_stl10(record);
}

std::vector<ImageTensor> load_stl10(const fs::path& path) {
    Stl10Reader reader(path);
    std::vector<ImageTensor> out;
    out.reserve(reader.size());
    for (std::size_t i = 0; i < reader.size(); ++i) out.push_back(reader.image(i));
    return out;
}

namespace {

struct Color {
    std::vector<double> c;
};

Color random_color(Rng& rng, std::size_t channels) {
    Color col;
    for (std::size_t i = 0; i < channels; ++i) col.c.push_back(rng.uniform());
    return col;
}

// Linear ramp between two colours along a random direction over a box.
struct Ramp {
    Color from, to;
    double dx = 0, dy = 0, lo = 0, span = 1;

    Ramp(Rng& rng, std::size_t channels, double x0, double y0, double x1, double y1)
        : from(random_color(rng, channels)), to(random_color(rng, channels)) {
        const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
        dx = std::cos(angle);
        dy = std::sin(angle);
        const double corners[4] = {dx * x0 + dy * y0, dx * x1 + dy * y0, dx * x0 + dy * y1, dx * x1 + dy * y1};
        lo = *std::min_element(corners, corners + 4);
        span = std::max(*std::max_element(corners, corners + 4) - lo, 1e-9);
    }

    double value(double x, double y, std::size_t ch) const {
        const double t = std::clamp((dx * x + dy * y - lo) / span, 0.0, 1.0);
        return from.c[ch] + (to.c[ch] - from.c[ch]) * t;
    }
};

}  // namespace

ImageTensor synth_toy_image(const ToySpec& spec, std::size_t index) {
    require(spec.height >= 1 && spec.width >= 1 && spec.channels >= 1, "synth_toy: empty image shape");
    Rng rng(Rng::stream_seed(spec.seed, index));
    const std::size_t h = spec.height, w = spec.width, ch = spec.channels;
    const double hd = static_cast<double>(h), wd = static_cast<double>(w);
    std::vector<double> px(h * w * ch);
    auto set = [&](std::size_t r, std::size_t c, std::size_t k, double v) { px[(r * w + c) * ch + k] = v; };

    if (rng.uniform() < 0.5) {
        const Color bg = random_color(rng, ch);
        for (std::size_t r = 0; r < h; ++r)
            for (std::size_t c = 0; c < w; ++c)
                for (std::size_t k = 0; k < ch; ++k) set(r, c, k, bg.c[k]);
    } else {
        const Ramp ramp(rng, ch, 0.0, 0.0, wd, hd);
        for (std::size_t r = 0; r < h; ++r)
            for (std::size_t c = 0; c < w; ++c)
                for (std::size_t k = 0; k < ch; ++k) set(r, c, k, ramp.value(c + 0.5, r + 0.5, k));
    }

    const std::size_t shapes = 1 + static_cast<std::size_t>(rng.below(4));
    for (std::size_t s = 0; s < shapes; ++s) {
        const auto kind = rng.below(3);
        if (kind == 1) {
            const double cx = rng.uniform(0.0, wd), cy = rng.uniform(0.0, hd);
            const double radius = rng.uniform(1.5, std::max(2.0, std::max(hd, wd) / 3.0));
            const Color fill = random_color(rng, ch);
            for (std::size_t r = 0; r < h; ++r)
                for (std::size_t c = 0; c < w; ++c) {
                    const double ddx = c + 0.5 - cx, ddy = r + 0.5 - cy;
                    if (ddx * ddx + ddy * ddy <= radius * radius)
                        for (std::size_t k = 0; k < ch; ++k) set(r, c, k, fill.c[k]);
                }
            continue;
        }
        double x0 = rng.uniform(0.0, wd), x1 = rng.uniform(0.0, wd);
        double y0 = rng.uniform(0.0, hd), y1 = rng.uniform(0.0, hd);
        if (x0 > x1) std::swap(x0, x1);
        if (y0 > y1) std::swap(y0, y1);
        if (kind == 0) {
            const Color fill = random_color(rng, ch);
            for (std::size_t r = 0; r < h; ++r)
                for (std::size_t c = 0; c < w; ++c)
                    if (c + 0.5 >= x0 && c + 0.5 <= x1 && r + 0.5 >= y0 && r + 0.5 <= y1)
                        for (std::size_t k = 0; k < ch; ++k) set(r, c, k, fill.c[k]);
        } else {
            const Ramp ramp(rng, ch, x0, y0, x1, y1);
            for (std::size_t r = 0; r < h; ++r)
                for (std::size_t c = 0; c < w; ++c)
                    if (c + 0.5 >= x0 && c + 0.5 <= x1 && r + 0.5 >= y0 && r + 0.5 <= y1)
                        for (std::size_t k = 0; k < ch; ++k) set(r, c, k, ramp.value(c + 0.5, r + 0.5, k));
        }
    }

    ImageTensor img({h, w, ch});
    for (std::size_t i = 0; i < px.size(); ++i)
        img.values[i] = static_cast<float>(std::nearbyint(std::clamp(px[i], 0.0, 1.0) * 255.0) / 255.0);
    return img;
}

std::vector<ImageTensor> synth_toy(const ToySpec& spec) {
    std::vector<ImageTensor> out;
    out.reserve(spec.n);
    for (std::size_t i = 0; i < spec.n; ++i) out.push_back(synth_toy_image(spec, i));
    return out;
}

void DatasetManifest::validate() const {
    require(count >= 1, "manifest: sample count must be >= 1");
    require(n_train <= count, "manifest: n_train exceeds sample count");
    require(shape.count() > 0, "manifest: empty image shape");
    require(source_kind == "container" || source_kind == "stl10",
            "manifest: unknown source kind '" + source_kind + "'");
}

void write_manifest(const fs::path& path, const DatasetManifest& m) {
    m.validate();
    KeyValueFile kv;
    kv.set("format", "xorinv-dataset-1");
    kv.set("name", m.name);
    kv.set("source_kind", m.source_kind);
    kv.set("source_path", m.source_path);
    kv.set("height", std::uint64_t{m.shape.height});
    kv.set("width", std::uint64_t{m.shape.width});
    kv.set("channels", std::uint64_t{m.shape.channels});
    kv.set("count", std::uint64_t{m.count});
    kv.set("n_train", std::uint64_t{m.n_train});
    kv.set("n_test", std::uint64_t{m.count - m.n_train});
    kv.set("split", "file-order");
    if (m.forward) {
        kv.set("key_fingerprint", m.forward->key_fingerprint);
        kv.set("cipher_mode", std::string(pipeline::to_string(m.forward->cipher)));
        kv.set("encoding_mode", std::string(codec::to_string(m.forward->mode)));
        kv.set("noise_sigma", m.forward->noise_sigma);
        kv.set("noise_seed", m.forward->seed);
    }
    if (m.files) {
        kv.set("train_cipher", m.files->train_cipher);
        kv.set("train_truth", m.files->train_truth);
        kv.set("test_cipher", m.files->test_cipher);
        kv.set("test_truth", m.files->test_truth);
        kv.set("checksum", m.checksum);
    }
    kv.write(path, "xorinv dataset manifest");
}

DatasetManifest read_manifest(const fs::path& path) {
    const auto kv = KeyValueFile::read(path);
    if (kv.get("format") != "xorinv-dataset-1") fail(ErrorKind::Format, path.string() + ": unknown manifest format");
    DatasetManifest m;
    m.name = kv.get("name");
    m.source_kind = kv.get("source_kind");
    m.source_path = kv.get("source_path");
    m.shape = {kv.get_u64("height"), kv.get_u64("width"), kv.get_u64("channels")};
    m.count = kv.get_u64("count");
    m.n_train = kv.get_u64("n_train");
    if (kv.get_u64("n_test") != m.count - m.n_train) fail(ErrorKind::Format, path.string() + ": split sizes do not sum to count");
    if (kv.has("key_fingerprint")) {
        ForwardSummary f;
        f.key_fingerprint = kv.get("key_fingerprint");
        f.cipher = pipeline::parse_cipher_mode(kv.get("cipher_mode"));
        f.mode = codec::parse_encoding_mode(kv.get("encoding_mode"));
        f.noise_sigma = kv.get_double("noise_sigma");
        f.seed = kv.get_u64("noise_seed");
        m.forward = f;
    }
    if (kv.has("train_cipher")) {
        m.files = DatasetFiles{kv.get("train_cipher"), kv.get("train_truth"), kv.get("test_cipher"), kv.get("test_truth")};
        m.checksum = kv.get("checksum");
    }
    try {
        m.validate();
    } catch (const Error& e) {
        fail(ErrorKind::Format, path.string() + ": " + e.what());
    }
    return m;
}

std::pair<SplitView, SplitView> split(const DatasetManifest& manifest, std::size_t n_train) {
    require(n_train >= 1 && n_train < manifest.count,
            "split: n_train " + std::to_string(n_train) + " must be in [1, " + std::to_string(manifest.count) + ")");
    return {SplitView{0, n_train}, SplitView{n_train, manifest.count}};
}

struct ImageSource::Impl {
    std::optional<Stl10Reader> stl10;
    std::optional<codec::StackReader> container;
};

ImageSource::ImageSource(const DatasetManifest& manifest, const fs::path& manifest_dir) : impl_(std::make_unique<Impl>()) {
    fs::path src(manifest.source_path);
    if (src.is_relative()) src = manifest_dir / src;
    if (manifest.source_kind == "stl10") {
        impl_->stl10.emplace(src);
    } else {
        impl_->container.emplace(src);
        if (impl_->container->header().kind != codec::ContainerKind::Image)
            fail(ErrorKind::Format, src.string() + ": source must be a ground-truth image container");
    }
    if (size() < manifest.count)
        fail(ErrorKind::Format, src.string() + ": holds " + std::to_string(size()) + " images, manifest expects " +
                                    std::to_string(manifest.count));
}

ImageSource::~ImageSource() = default;

std::size_t ImageSource::size() const {
    return impl_->stl10 ? impl_->stl10->size() : static_cast<std::size_t>(impl_->container->size());
}

ImageTensor ImageSource::image(std::size_t index) {
    return impl_->stl10 ? impl_->stl10->image(index) : impl_->container->image(index);
}

std::string compute_checksum(const DatasetManifest& manifest, const fs::path& dir) {
    require(manifest.files.has_value(), "compute_checksum: manifest is not materialized");
    const auto& f = *manifest.files;
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) fail(ErrorKind::Io, "SHA-256 init failed");
    std::vector<char> buf(1 << 16);
    for (const auto& name : {f.train_cipher, f.train_truth, f.test_cipher, f.test_truth}) {
        std::ifstream in(dir / name, std::ios::binary);
        if (!in) fail(ErrorKind::Io, "cannot open: " + (dir / name).string());
        while (in) {
            in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
            EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
        }
    }
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), digest, &len);
    return aes::to_hex(aes::ByteView(digest, len));
}

void verify_checksum(const DatasetManifest& manifest, const fs::path& dir) {
    if (compute_checksum(manifest, dir) != manifest.checksum)
        fail(ErrorKind::Format, "dataset in " + dir.string() + " does not match its manifest checksum");
}

DatasetManifest materialize(const DatasetManifest& manifest, const fs::path& manifest_dir,
                            const pipeline::ForwardSpec& spec, const fs::path& out_dir, std::size_t workers) {
    manifest.validate();
    split(manifest, manifest.n_train);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) fail(ErrorKind::Io, "cannot create " + out_dir.string() + ": " + ec.message());

    DatasetManifest out = manifest;
    if (fs::path(out.source_path).is_relative())
        out.source_path = fs::weakly_canonical(manifest_dir / manifest.source_path).string();
    out.files = DatasetFiles{};
    out.forward = ForwardSummary{spec.key.fingerprint(), spec.cipher, spec.mode, spec.noise_sigma, spec.seed};

    ImageSource source(manifest, manifest_dir);
    const ImageShape cipher_shape{manifest.shape.height, manifest.shape.width,
                                  manifest.shape.channels * codec::bytes_per_value(spec.mode)};
    const auto write_split = [&](SplitView view, const std::string& cipher_name, const std::string& truth_name) {
        codec::StackWriter cw(out_dir / cipher_name,
                              {codec::ContainerKind::Cipher, spec.mode, 0, cipher_shape, spec.noise_sigma});
        codec::StackWriter tw(out_dir / truth_name, {codec::ContainerKind::Image, std::nullopt, 0, manifest.shape, 0.0});
        constexpr std::size_t kChunk = 256;
        for (std::size_t b = view.begin; b < view.end; b += kChunk) {
            const std::size_t e = std::min(view.end, b + kChunk);
            std::vector<ImageTensor> truth(e - b);
            for (std::size_t i = b; i < e; ++i) {
                truth[i - b] = source.image(i);
                if (truth[i - b].shape != manifest.shape)
                    fail(ErrorKind::Format, "source image " + std::to_string(i) + " does not match the manifest shape");
            }
            const auto ciphers = pipeline::encrypt_all(truth, spec, workers, b);
            for (std::size_t i = 0; i < truth.size(); ++i) {
                cw.append(ciphers[i]);
                tw.append(truth[i]);
            }
        }
        cw.close();
        tw.close();
    };
    const auto [train_view, test_view] = split(manifest, manifest.n_train);
    write_split(train_view, out.files->train_cipher, out.files->train_truth);
    write_split(test_view, out.files->test_cipher, out.files->test_truth);
    out.checksum = compute_checksum(out, out_dir);
    write_manifest(out_dir / "manifest.txt", out);
    return out;
}

LoadedSplit load_split(const DatasetManifest& manifest, const fs::path& dir, bool test) {
    require(manifest.files.has_value(), "load_split: manifest is not materialized (run encrypt first)");
    const auto& f = *manifest.files;
    LoadedSplit s;
    s.inputs = codec::read_ciphers(dir / (test ? f.test_cipher : f.train_cipher));
    s.targets = codec::read_images(dir / (test ? f.test_truth : f.train_truth));
    if (s.inputs.size() != s.targets.size())
        fail(ErrorKind::Format, dir.string() + ": cipherimage and ground-truth counts differ");
    return s;
}

pipeline::ForwardSpec forward_spec_of(const DatasetManifest& manifest, const aes::KeyMaterial& key) {
    require(manifest.forward.has_value(), "manifest has no forward spec (not materialized)");
    const auto& f = *manifest.forward;
    if (key.fingerprint() != f.key_fingerprint)
        fail(ErrorKind::InvalidArgument, "key fingerprint " + key.fingerprint() + " does not match the dataset's " +
                                             f.key_fingerprint);
    return pipeline::ForwardSpec{key, f.mode, f.cipher, f.noise_sigma, f.seed};
}

}  // namespace xorinv::data
