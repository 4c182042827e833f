#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace xorinv::cli {

namespace fs = std::filesystem;

struct Common {
    std::size_t workers = 0;  // 0: machine parallelism
    bool deterministic = false;

    std::size_t resolved_workers() const;
};

struct KeygenArgs {
    std::uint64_t seed = 0;
    fs::path out;
    bool force = false;
};

struct SynthArgs {
    std::string name = "toy";
    std::size_t n = 0;
    std::size_t n_train = 0;
    std::size_t height = 16;
    std::size_t width = 16;
    std::size_t channels = 1;
    std::uint64_t seed = 0;
    fs::path out;
};

struct ImportArgs {
    std::string name = "stl10";
    fs::path input;
    std::size_t n_train = 90000;
    std::optional<std::size_t> limit;
    fs::path out;
};

struct EncryptArgs {
    fs::path dataset;
    fs::path key;
    std::string mode = "float32";
    std::string cipher = "ctr";
    double sigma = 0.0;
    std::uint64_t seed = 0;
    fs::path out;
};

struct OutputArgs {
    fs::path out;
    std::string split = "test";
    std::size_t panels = 0;
    bool save_recon = false;
};

struct DecryptArgs {
    fs::path dataset;
    fs::path key;
    bool round = false;
    OutputArgs output;
};

struct BaselineArgs {
    fs::path dataset;
    OutputArgs output;
};

struct TrainArgs {
    fs::path dataset;
    std::optional<fs::path> net_config;
    std::optional<fs::path> train_config;
    std::optional<std::size_t> base_width;
    std::optional<std::size_t> depth;
    std::optional<bool> rescale_input;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> batch_size;
    std::optional<double> lr;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> checkpoint_every;
    std::optional<std::size_t> val_count;
    bool strict = false;
    fs::path out;
};

struct EvalArgs {
    fs::path model;
    fs::path dataset;
    std::size_t batch_size = 32;
    OutputArgs output;
};

struct ExportArgs {
    fs::path input;
    std::size_t index = 0;
    std::optional<std::size_t> channel;
    std::size_t scale = 1;
    fs::path out;
};

void cmd_keygen(const KeygenArgs& a);
void cmd_dataset_synth(const SynthArgs& a, const Common& c);
void cmd_dataset_import_stl10(const ImportArgs& a, const Common& c);
void cmd_encrypt(const EncryptArgs& a, const Common& c);
void cmd_decrypt(const DecryptArgs& a, const Common& c);
void cmd_baseline_mean(const BaselineArgs& a, const Common& c);
void cmd_train(const TrainArgs& a, const Common& c);
void cmd_eval(const EvalArgs& a, const Common& c);
void cmd_export(const ExportArgs& a);

}  // namespace xorinv::cli
