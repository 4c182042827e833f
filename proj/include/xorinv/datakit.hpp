#pragma once

// Dataset ingestion, synthetic toy images, the train/test split and the
// manifest that ties ground truth, cipherimages and the forward spec together.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <span>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "xorinv/codec.hpp"
#include "xorinv/pipeline.hpp"

namespace xorinv::data {

using codec::ImageShape;
using codec::ImageTensor;

// STL-10 binary: per image three 96x96 colour planes (R, G, B), each plane
// stored column-major, one byte per value.
inline constexpr std::size_t kStl10Side = 96;
inline constexpr std::size_t kStl10ImageBytes = kStl10Side * kStl10Side * 3;

ImageTensor decode_stl10(std::span<const std::uint8_t> record);

/// Random-access reader over an STL-10 binary file.
class Stl10Reader {
public:
    explicit Stl10Reader(const std::filesystem::path& path);
    std::size_t size() const { return count_; }
    ImageTensor image(std::size_t index);

private:
    std::filesystem::path path_;
    std::ifstream in_;
    std::size_t count_ = 0;
};

/// Whole file in memory (small files / tests). Large files: use Stl10Reader.
std::vector<ImageTensor> load_stl10(const std::filesystem::path& path);

struct ToySpec {
    std::size_t n = 0;
    std::size_t height = 16;
    std::size_t width = 16;
    std::size_t channels = 1;
    std::uint64_t seed = 0;
};

/// Image `index` of the toy family: a constant or linear-gradient background
/// with 1-4 rectangles, discs or gradient-filled rectangles. Values are
/// multiples of 1/255 so they survive uint8 serialization exactly. Each image
/// has its own random stream, so image i does not depend on n.
ImageTensor synth_toy_image(const ToySpec& spec, std::size_t index);
std::vector<ImageTensor> synth_toy(const ToySpec& spec);

struct SplitView {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t size() const { return end - begin; }
};

struct DatasetFiles {
    std::string train_cipher = "train_cipher.ximg";
    std::string train_truth = "train_truth.ximg";
    std::string test_cipher = "test_cipher.ximg";
    std::string test_truth = "test_truth.ximg";
};

struct ForwardSummary {
    std::string key_fingerprint;
    pipeline::CipherMode cipher = pipeline::CipherMode::Ctr;
    codec::EncodingMode mode = codec::EncodingMode::Float32;
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;
};

struct DatasetManifest {
    std::string name;
    /// "container" (an image container holding all ground truth) or "stl10".
    std::string source_kind = "container";
    /// Resolved against the manifest directory when relative.
    std::string source_path;
    ImageShape shape;
    std::size_t count = 0;
    std::size_t n_train = 0;
    std::optional<ForwardSummary> forward;  // set once materialized
    std::optional<DatasetFiles> files;      // set once materialized
    std::string checksum;                   // SHA-256 over the files, in order

    void validate() const;
};

void write_manifest(const std::filesystem::path& path, const DatasetManifest& m);
DatasetManifest read_manifest(const std::filesystem::path& path);

/// File-order split: the first n_train samples train, the rest test.
std::pair<SplitView, SplitView> split(const DatasetManifest& manifest, std::size_t n_train);

/// Ground-truth access for the manifest's source.
class ImageSource {
public:
    ImageSource(const DatasetManifest& manifest, const std::filesystem::path& manifest_dir);
    ~ImageSource();
    ImageSource(const ImageSource&) = delete;
    ImageSource& operator=(const ImageSource&) = delete;

    std::size_t size() const;
    ImageTensor image(std::size_t index);

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Writes train/test cipherimage and ground-truth containers plus the
/// updated manifest (out_dir/manifest.txt). Image i is encrypted with noise
/// stream Rng::stream_seed(spec.seed, i). Re-running with identical inputs
/// produces byte-identical files.
DatasetManifest materialize(const DatasetManifest& manifest, const std::filesystem::path& manifest_dir,
                            const pipeline::ForwardSpec& spec, const std::filesystem::path& out_dir,
                            std::size_t workers = 1);

std::string compute_checksum(const DatasetManifest& manifest, const std::filesystem::path& dir);
/// Throws Error(Format) when the files do not match the recorded checksum.
void verify_checksum(const DatasetManifest& manifest, const std::filesystem::path& dir);

/// Materialized split loaded into memory.
struct LoadedSplit {
    std::vector<codec::CipherImage> inputs;
    std::vector<ImageTensor> targets;
};

LoadedSplit load_split(const DatasetManifest& manifest, const std::filesystem::path& dir, bool test);

/// Rebuilds the forward spec of a materialized manifest from its key.
pipeline::ForwardSpec forward_spec_of(const DatasetManifest& manifest, const aes::KeyMaterial& key);

}  // namespace xorinv::data
