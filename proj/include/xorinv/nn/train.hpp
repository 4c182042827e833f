#pragma once

// Supervised training of the U-Net on (cipherimage, image) pairs by
// minimising the mean squared error with Adam, plus checkpoints and
// inference.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "xorinv/codec.hpp"
#include "xorinv/kvfile.hpp"
#include "xorinv/nn/adam.hpp"
#include "xorinv/nn/unet.hpp"

namespace xorinv::nn {

using codec::CipherImage;
using codec::ImageTensor;

struct TrainConfig {
    std::size_t batch_size = 32;
    double lr = 2e-3;
    std::size_t epochs = 35;
    std::uint64_t seed = 0;
    /// Single-threaded, fixed reduction order: the log is a pure function of
    /// (data, configs, seed).
    bool deterministic = true;
    /// Worker threads splitting each batch when not deterministic.
    std::size_t workers = 1;
    /// Snapshot every N epochs through the callback (0: final epoch only).
    std::size_t checkpoint_every = 0;
    /// Non-finite gradients abort instead of skipping the step.
    bool strict = false;

    void validate() const;
};

struct Checkpoint {
    UNetConfig config;
    ParameterSet<float> params;
    std::uint64_t epoch = 0;
};

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_psnr = 0.0;  // extended real
    double wall_time = 0.0;  // seconds since training started
    std::size_t skipped_steps = 0;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<EpochRecord> log;
};

struct PairedView {
    std::span<const CipherImage> inputs;
    std::span<const ImageTensor> targets;
};

/// Called after each epoch; `snapshot` is true when the checkpoint cadence
/// asks for a persisted checkpoint.
using EpochCallback = std::function<void(const EpochRecord&, const Checkpoint&, bool snapshot)>;

/// Trains from a fresh seeded initialisation. Throws Error(Divergence) when
/// the loss becomes non-finite.
TrainResult train(PairedView train_set, PairedView val_set, const UNetConfig& net_cfg, const TrainConfig& tcfg,
                  const EpochCallback& on_epoch = {});

/// NCHW batch from HWC images.
Tensor<float> to_tensor(std::span<const CipherImage> images);
Tensor<float> to_tensor(std::span<const ImageTensor> images);
ImageTensor to_image(const Tensor<float>& t, std::size_t index);

/// Forward pass with outputs clamped to [0,1]; `clamped` (optional) receives
/// the number of clamped values.
std::vector<ImageTensor> predict(const Checkpoint& ckpt, std::span<const CipherImage> inputs, std::size_t* clamped = nullptr,
                                 std::size_t batch_size = 32);
ImageTensor predict(const Checkpoint& ckpt, const CipherImage& input);

// Checkpoint container (little-endian):
//   magic "XORINVC\0", u32 version, u32 in_channels, out_channels,
//   base_width, depth, kernel_size, u8 rescale_input, 3 reserved bytes,
//   u64 epoch, u32 parameter count, then per parameter: u32 name length,
//   name bytes, u32 rank, rank x u32 dims, f32 values.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);
bool is_checkpoint_file(const std::filesystem::path& path);

KeyValueFile to_key_values(const UNetConfig& cfg);
UNetConfig unet_config_from(const KeyValueFile& kv);
KeyValueFile to_key_values(const TrainConfig& cfg);
TrainConfig train_config_from(const KeyValueFile& kv);

/// Training log CSV with header `epoch,train_loss,val_psnr,wall_time`.
void append_log_record(const std::filesystem::path& path, const EpochRecord& rec);
std::vector<EpochRecord> read_log(const std::filesystem::path& path);

}  // namespace xorinv::nn
