#include "commands.hpp"

#include <cstdio>
#include <functional>
#include <iostream>

#include "xorinv/blockcipher.hpp"
#include "xorinv/container.hpp"
#include "xorinv/datakit.hpp"
#include "xorinv/error.hpp"
#include "xorinv/image_export.hpp"
#include "xorinv/kvfile.hpp"
#include "xorinv/metrics.hpp"
#include "xorinv/nn/train.hpp"
#include "xorinv/parallel.hpp"
#include "xorinv/pipeline.hpp"

namespace xorinv::cli {
namespace {

constexpr std::size_t kChunk = 256;

using codec::CipherImage;
using codec::ImageTensor;

void make_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) fail(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
}

void must_exist(const fs::path& path, const char* what) {
    if (!fs::exists(path)) fail(ErrorKind::Io, std::string(what) + " not found: " + path.string());
}

// A dataset is named by its directory or by the manifest file itself.
struct Dataset {
    fs::path dir;
    data::DatasetManifest manifest;
};

Dataset open_dataset(const fs::path& path) {
    must_exist(path, "dataset");
    const fs::path file = fs::is_directory(path) ? path / "manifest.txt" : path;
    must_exist(file, "manifest");
    return {file.parent_path().empty() ? fs::path(".") : file.parent_path(), data::read_manifest(file)};
}

Dataset open_materialized(const fs::path& path) {
    auto ds = open_dataset(path);
    if (!ds.manifest.files)
        fail(ErrorKind::InvalidArgument, ds.dir.string() + ": dataset has no cipherimages yet (run `xorinv encrypt`)");
    data::verify_checksum(ds.manifest, ds.dir);
    return ds;
}

struct SplitFiles {
    fs::path cipher, truth;
    std::size_t first_index = 0;  // global index of the first sample
};

SplitFiles split_files(const Dataset& ds, const std::string& split) {
    const auto& f = *ds.manifest.files;
    if (split == "test") return {ds.dir / f.test_cipher, ds.dir / f.test_truth, ds.manifest.n_train};
    if (split == "train") return {ds.dir / f.train_cipher, ds.dir / f.train_truth, 0};
    fail(ErrorKind::InvalidArgument, "unknown split '" + split + "' (expected train or test)");
}

void stamp(const fs::path& dir, const std::string& command, KeyValueFile kv) {
    KeyValueFile out;
    out.set("command", command);
    for (const auto& [k, v] : kv.entries()) out.set(k, v);
    out.write(dir / "run_config.txt", "resolved configuration of this run");
}

std::string abs_string(const fs::path& p) { return fs::weakly_canonical(fs::absolute(p)).string(); }

using Predictor = std::function<std::vector<ImageTensor>(const std::vector<CipherImage>&)>;

// Streams a split through `predict`, writing metrics.csv, report.json and the
// optional reconstruction container and panels. Returns the aggregate.
metrics::AggregateReport run_evaluation(const Dataset& ds, const OutputArgs& out, const std::string& method,
                                        const Predictor& predict, std::size_t workers) {
    const auto files = split_files(ds, out.split);
    codec::StackReader ciphers(files.cipher);
    codec::StackReader truths(files.truth);
    if (ciphers.size() != truths.size())
        fail(ErrorKind::Format, ds.dir.string() + ": cipherimage and ground-truth counts differ");
    const std::size_t n = ciphers.size();
    if (n == 0) fail(ErrorKind::InvalidArgument, "split '" + out.split + "' is empty");

    make_dir(out.out);
    std::optional<codec::StackWriter> recon_writer;
    if (out.save_recon)
        recon_writer.emplace(out.out / "recon.ximg", codec::ContainerHeader{codec::ContainerKind::Image, std::nullopt, 0,
                                                                            truths.header().shape, 0.0});
    if (out.panels > 0) make_dir(out.out / "panels");

    std::vector<metrics::MetricsRecord> records(n);
    for (std::size_t b = 0; b < n; b += kChunk) {
        const std::size_t e = std::min(n, b + kChunk);
        std::vector<CipherImage> in;
        std::vector<ImageTensor> gt;
        for (std::size_t i = b; i < e; ++i) {
            in.push_back(ciphers.cipher(i));
            gt.push_back(truths.image(i));
        }
        const auto pred = predict(in);
        if (pred.size() != in.size()) fail(ErrorKind::InvalidArgument, "predictor returned the wrong number of images");
        parallel_for(in.size(), workers, [&](std::size_t k) {
            records[b + k] = metrics::evaluate(std::to_string(files.first_index + b + k), pred[k], gt[k]);
        });
        for (std::size_t k = 0; k < in.size(); ++k) {
            if (recon_writer) recon_writer->append(pred[k]);
            if (b + k < out.panels) {
                std::vector<ImageTensor> tiles{gt[k]};
                for (std::size_t c = 0; c < std::min<std::size_t>(4, in[k].shape.channels); ++c)
                    tiles.push_back(codec::cipher_channel(in[k], c));
                tiles.push_back(pred[k]);
                char name[32];
                std::snprintf(name, sizeof name, "sample_%06zu.png", files.first_index + b + k);
                codec::write_png(out.out / "panels" / name, codec::make_panel(tiles, 2));
            }
        }
    }
    if (recon_writer) recon_writer->close();

    metrics::write_records_csv(out.out / "metrics.csv", records);
    const auto report = metrics::aggregate(records);
    metrics::write_report_json(out.out / "report.json", report, method);
    std::cout << method << " on " << out.split << " split: n=" << report.n_samples
              << " mean_psnr=" << metrics::format_extended(report.mean_psnr)
              << " mean_ssim=" << metrics::format_extended(report.mean_ssim) << " (+inf: " << report.n_pos_inf
              << ", -inf: " << report.n_neg_inf << (report.valid ? "" : ", INVALID mixed infinities") << ")\n";
    return report;
}

KeyValueFile output_kv(const OutputArgs& o) {
    KeyValueFile kv;
    kv.set("out", abs_string(o.out));
    kv.set("split", o.split);
    kv.set("panels", std::uint64_t{o.panels});
    kv.set("save_recon", o.save_recon);
    return kv;
}

void append(KeyValueFile& dst, const KeyValueFile& src, const std::string& prefix = {}) {
    for (const auto& [k, v] : src.entries()) dst.set(prefix + k, v);
}

}  // namespace

std::size_t Common::resolved_workers() const {
    if (deterministic) return 1;
    return workers == 0 ? default_workers() : workers;
}

void cmd_keygen(const KeygenArgs& a) {
    if (fs::exists(a.out) && !a.force)
        fail(ErrorKind::InvalidArgument, a.out.string() + " already exists (use --force to overwrite)");
    if (a.out.has_parent_path()) make_dir(a.out.parent_path());
    const auto km = aes::KeyMaterial::generate(a.seed);
    aes::write_key_file(a.out, km);
    std::cout << "key " << km.fingerprint() << " written to " << a.out.string() << "\n";
}

void cmd_dataset_synth(const SynthArgs& a, const Common&) {
    require(a.n >= 2, "synth: need at least 2 images");
    const std::size_t n_train = a.n_train == 0 ? a.n * 9 / 10 : a.n_train;
    make_dir(a.out);
    const data::ToySpec spec{a.n, a.height, a.width, a.channels, a.seed};
    data::DatasetManifest m;
    m.name = a.name;
    m.source_kind = "container";
    m.source_path = "truth.ximg";
    m.shape = {a.height, a.width, a.channels};
    m.count = a.n;
    m.n_train = n_train;
    data::split(m, n_train);

    codec::StackWriter w(a.out / "truth.ximg", {codec::ContainerKind::Image, std::nullopt, 0, m.shape, 0.0});
    for (std::size_t i = 0; i < a.n; ++i) w.append(data::synth_toy_image(spec, i));
    w.close();
    data::write_manifest(a.out / "manifest.txt", m);

    KeyValueFile kv;
    kv.set("name", a.name);
    kv.set("n", std::uint64_t{a.n});
    kv.set("n_train", std::uint64_t{n_train});
    kv.set("height", std::uint64_t{a.height});
    kv.set("width", std::uint64_t{a.width});
    kv.set("channels", std::uint64_t{a.channels});
    kv.set("seed", a.seed);
    stamp(a.out, "dataset synth", kv);
    std::cout << "synthesized " << a.n << " toy images (" << n_train << " train / " << a.n - n_train << " test) in "
              << a.out.string() << "\n";
}

void cmd_dataset_import_stl10(const ImportArgs& a, const Common&) {
    must_exist(a.input, "STL-10 file");
    data::Stl10Reader reader(a.input);
    const std::size_t count = a.limit ? *a.limit : reader.size();
    if (count > reader.size())
        fail(ErrorKind::InvalidArgument, "--limit " + std::to_string(count) + " exceeds the " +
                                             std::to_string(reader.size()) + " images in " + a.input.string());
    make_dir(a.out);
    data::DatasetManifest m;
    m.name = a.name;
    m.source_kind = "stl10";
    m.source_path = abs_string(a.input);
    m.shape = {data::kStl10Side, data::kStl10Side, 3};
    m.count = count;
    m.n_train = a.n_train;
    data::split(m, a.n_train);
    data::write_manifest(a.out / "manifest.txt", m);

    KeyValueFile kv;
    kv.set("name", a.name);
    kv.set("input", m.source_path);
    kv.set("count", std::uint64_t{count});
    kv.set("n_train", std::uint64_t{a.n_train});
    stamp(a.out, "dataset import-stl10", kv);
    std::cout << "registered " << count << " STL-10 images (" << a.n_train << " train / " << count - a.n_train
              << " test) in " << a.out.string() << "\n";
}

void cmd_encrypt(const EncryptArgs& a, const Common& c) {
    const auto ds = open_dataset(a.dataset);
    must_exist(a.key, "key file");
    if (fs::exists(a.out) && fs::equivalent(a.out, ds.dir))
        fail(ErrorKind::InvalidArgument, "--out must differ from the source dataset directory");
    pipeline::ForwardSpec spec;
    spec.key = aes::read_key_file(a.key);
    spec.mode = codec::parse_encoding_mode(a.mode);
    spec.cipher = pipeline::parse_cipher_mode(a.cipher);
    spec.noise_sigma = a.sigma;
    spec.seed = a.seed;
    require(a.sigma >= 0.0, "--sigma must be >= 0");
    const auto out = data::materialize(ds.manifest, ds.dir, spec, a.out, c.resolved_workers());

    KeyValueFile kv;
    kv.set("dataset", abs_string(ds.dir));
    kv.set("key_fingerprint", spec.key.fingerprint());
    kv.set("mode", a.mode);
    kv.set("cipher", a.cipher);
    kv.set("sigma", a.sigma);
    kv.set("seed", a.seed);
    kv.set("workers", std::uint64_t{c.resolved_workers()});
    stamp(a.out, "encrypt", kv);
    std::cout << "encrypted " << out.count << " images (" << a.cipher << ", " << a.mode << ", sigma " << a.sigma
              << ") into " << a.out.string() << "; checksum " << out.checksum << "\n";
}

void cmd_decrypt(const DecryptArgs& a, const Common& c) {
    const auto ds = open_materialized(a.dataset);
    must_exist(a.key, "key file");
    const auto spec = data::forward_spec_of(ds.manifest, aes::read_key_file(a.key));
    const bool round = a.round;
    const std::size_t workers = c.resolved_workers();
    const Predictor predict = [&](const std::vector<CipherImage>& in) {
        std::vector<ImageTensor> out(in.size());
        parallel_for(in.size(), workers, [&](std::size_t i) { out[i] = pipeline::decrypt_exact(in[i], spec, round); });
        return out;
    };
    try {
        run_evaluation(ds, a.output, "decrypt", predict, workers);
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::InvalidArgument && !round && ds.manifest.forward->noise_sigma > 0)
            fail(ErrorKind::InvalidArgument, std::string(e.what()) + " (noisy dataset: pass --round)");
        throw;
    }
    auto kv = output_kv(a.output);
    kv.set("dataset", abs_string(ds.dir));
    kv.set("key_fingerprint", spec.key.fingerprint());
    kv.set("round", round);
    stamp(a.output.out, "decrypt", kv);
}

void cmd_baseline_mean(const BaselineArgs& a, const Common& c) {
    const auto ds = open_materialized(a.dataset);
    codec::StackReader train_truth(ds.dir / ds.manifest.files->train_truth);
    const auto mp =
        pipeline::fit_mean_streaming(train_truth.size(), [&](std::size_t i) { return train_truth.image(i); });
    make_dir(a.output.out);
    codec::write_images(a.output.out / "mean.ximg", std::vector<ImageTensor>{mp.mean_image});
    codec::write_png(a.output.out / "mean.png", mp.mean_image);
    const Predictor predict = [&](const std::vector<CipherImage>& in) {
        std::vector<ImageTensor> out;
        for (const auto& ci : in) out.push_back(pipeline::predict_mean(mp, ci));
        return out;
    };
    run_evaluation(ds, a.output, "mean", predict, c.resolved_workers());
    auto kv = output_kv(a.output);
    kv.set("dataset", abs_string(ds.dir));
    kv.set("n_fit", std::uint64_t{mp.n_samples});
    stamp(a.output.out, "baseline-mean", kv);
}

void cmd_train(const TrainArgs& a, const Common& c) {
    const auto ds = open_materialized(a.dataset);
    auto split = data::load_split(ds.manifest, ds.dir, false);
    const std::size_t n = split.inputs.size();

    nn::UNetConfig net;
    if (a.net_config) {
        const auto kv = KeyValueFile::read(*a.net_config);
        kv.check_names({"in_channels", "out_channels", "base_width", "depth", "kernel_size", "rescale_input"});
        net = nn::unet_config_from(kv);
    }
    const std::size_t in_ch = split.inputs.front().shape.channels, out_ch = split.targets.front().shape.channels;
    if (a.net_config) {
        const auto kv = KeyValueFile::read(*a.net_config);
        if (kv.has("in_channels") && net.in_channels != in_ch)
            fail(ErrorKind::InvalidArgument, "net config in_channels " + std::to_string(net.in_channels) +
                                                 " but the dataset has " + std::to_string(in_ch) + " cipher channels");
        if (kv.has("out_channels") && net.out_channels != out_ch)
            fail(ErrorKind::InvalidArgument, "net config out_channels " + std::to_string(net.out_channels) +
                                                 " but the dataset has " + std::to_string(out_ch) + " image channels");
    }
    net.in_channels = in_ch;
    net.out_channels = out_ch;
    if (a.base_width) net.base_width = *a.base_width;
    if (a.depth) net.depth = *a.depth;
    if (a.rescale_input) net.rescale_input = *a.rescale_input;
    net.validate();
    net.check_input(ds.manifest.shape.height, ds.manifest.shape.width);

    nn::TrainConfig tc;
    if (a.train_config) {
        const auto kv = KeyValueFile::read(*a.train_config);
        kv.check_names({"batch_size", "lr", "epochs", "seed", "deterministic", "workers", "checkpoint_every", "strict"});
        tc = nn::train_config_from(kv);
    }
    if (a.epochs) tc.epochs = *a.epochs;
    if (a.batch_size) tc.batch_size = *a.batch_size;
    if (a.lr) tc.lr = *a.lr;
    if (a.seed) tc.seed = *a.seed;
    if (a.checkpoint_every) tc.checkpoint_every = *a.checkpoint_every;
    if (a.strict) tc.strict = true;
    if (c.deterministic) tc.deterministic = true;
    tc.workers = tc.deterministic ? 1 : c.resolved_workers();
    tc.validate();

    const std::size_t val_count = a.val_count ? *a.val_count : std::max<std::size_t>(1, n / 10);
    require(val_count < n, "--val-count must leave at least one training image");
    const std::size_t n_fit = n - val_count;
    const nn::PairedView fit{std::span(split.inputs).first(n_fit), std::span(split.targets).first(n_fit)};
    const nn::PairedView val{std::span(split.inputs).subspan(n_fit), std::span(split.targets).subspan(n_fit)};

    make_dir(a.out);
    make_dir(a.out / "checkpoints");
    KeyValueFile kv;
    kv.set("dataset", abs_string(ds.dir));
    kv.set("n_fit", std::uint64_t{n_fit});
    kv.set("n_val", std::uint64_t{val_count});
    kv.set("validation", "last n_val images of the train split");
    append(kv, nn::to_key_values(net), "net.");
    append(kv, nn::to_key_values(tc), "train.");
    stamp(a.out, "train", kv);
    nn::to_key_values(net).write(a.out / "net_config.txt", "U-Net configuration");
    nn::to_key_values(tc).write(a.out / "train_config.txt", "training configuration");

    const auto log_path = a.out / "log.csv";
    fs::remove(log_path);
    std::cout << "training on " << n_fit << " images, validating on " << val_count << " (" << tc.epochs
              << " epochs, batch " << tc.batch_size << ", lr " << format_double(tc.lr) << ")\n";
    const auto result = nn::train(fit, val, net, tc, [&](const nn::EpochRecord& rec, const nn::Checkpoint& ckpt, bool snap) {
        nn::append_log_record(log_path, rec);
        if (snap) {
            char name[32];
            std::snprintf(name, sizeof name, "epoch_%04zu.ckpt", rec.epoch);
            nn::save_checkpoint(a.out / "checkpoints" / name, ckpt);
        }
        std::cout << "epoch " << rec.epoch << "/" << tc.epochs << "  loss " << rec.train_loss << "  val_psnr "
                  << metrics::format_extended(rec.val_psnr) << "  " << rec.wall_time << " s"
                  << (rec.skipped_steps ? "  skipped steps " + std::to_string(rec.skipped_steps) : "") << std::endl;
    });
    nn::save_checkpoint(a.out / "model.ckpt", result.checkpoint);
    std::cout << "checkpoint written to " << (a.out / "model.ckpt").string() << "\n";
}

void cmd_eval(const EvalArgs& a, const Common& c) {
    must_exist(a.model, "model");
    const auto ds = open_materialized(a.dataset);
    const std::size_t workers = c.resolved_workers();
    auto kv = output_kv(a.output);
    kv.set("dataset", abs_string(ds.dir));
    kv.set("model", abs_string(a.model));

    if (nn::is_checkpoint_file(a.model)) {
        const auto ckpt = nn::load_checkpoint(a.model);
        std::size_t clamped = 0;
        const Predictor predict = [&](const std::vector<CipherImage>& in) {
            std::size_t chunk_clamped = 0;
            auto out = nn::predict(ckpt, in, &chunk_clamped, a.batch_size);
            clamped += chunk_clamped;
            return out;
        };
        run_evaluation(ds, a.output, "unet", predict, workers);
        kv.set("model_kind", "unet");
        kv.set("clamped_values", std::uint64_t{clamped});
        std::cout << clamped << " predicted values were clamped to [0,1]\n";
    } else {
        const auto header = codec::read_header(a.model);
        if (header.kind != codec::ContainerKind::Image || header.count != 1)
            fail(ErrorKind::Format, a.model.string() + ": expected a checkpoint or a one-image mean container");
        pipeline::MeanPredictor mp;
        mp.mean_image = codec::read_images(a.model).front();
        mp.n_samples = 1;
        const Predictor predict = [&](const std::vector<CipherImage>& in) {
            std::vector<ImageTensor> out;
            for (const auto& ci : in) out.push_back(pipeline::predict_mean(mp, ci));
            return out;
        };
        run_evaluation(ds, a.output, "mean", predict, workers);
        kv.set("model_kind", "mean");
    }
    stamp(a.output.out, "eval", kv);
}

void cmd_export(const ExportArgs& a) {
    codec::StackReader reader(a.input);
    require(a.index < reader.size(), "--index " + std::to_string(a.index) + " out of range (container holds " +
                                         std::to_string(reader.size()) + " images)");
    ImageTensor img;
    if (reader.header().kind == codec::ContainerKind::Cipher) {
        const auto ci = reader.cipher(a.index);
        if (a.channel) {
            img = codec::cipher_channel(ci, *a.channel);
        } else {
            std::vector<ImageTensor> tiles;
            for (std::size_t ch = 0; ch < ci.shape.channels; ++ch) tiles.push_back(codec::cipher_channel(ci, ch));
            img = codec::make_panel(tiles, 1);
        }
    } else {
        img = reader.image(a.index);
        if (a.channel) {
            require(*a.channel < img.shape.channels, "--channel out of range");
            ImageTensor one({img.shape.height, img.shape.width, 1});
            for (std::size_t p = 0; p < one.values.size(); ++p) one.values[p] = img.values[p * img.shape.channels + *a.channel];
            img = one;
        }
    }
    if (a.scale > 1) img = codec::make_panel({img}, a.scale);
    if (a.out.has_parent_path()) make_dir(a.out.parent_path());
    const auto ext = a.out.extension().string();
    if (ext == ".ppm" || ext == ".pgm")
        codec::write_pnm(a.out, img);
    else
        codec::write_png(a.out, img);
    std::cout << "wrote " << a.out.string() << "\n";
}

}  // namespace xorinv::cli
