// xorinv command-line entry point. See docs/cli.md for the full reference.
//
// Exit codes: 0 success, 1 unexpected failure, 2 usage or invalid argument,
// 3 I/O error, 4 malformed input file, 5 training diverged.
// Failures print exactly one line to stderr:
//   xorinv: error kind=<kind> message="<text>"

#include <CLI11.hpp>

#include <iostream>
#include <string>

#include "commands.hpp"
#include "xorinv/error.hpp"

namespace {

using namespace xorinv;
using namespace xorinv::cli;

int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidArgument: return 2;
        case ErrorKind::Io: return 3;
        case ErrorKind::Format: return 4;
        case ErrorKind::Divergence: return 5;
    }
    return 1;
}

void report(std::string_view kind, std::string message) {
    for (auto& ch : message)
        if (ch == '\n' || ch == '\r') ch = ' ';
    std::string escaped;
    for (char ch : message) {
        if (ch == '"' || ch == '\\') escaped += '\\';
        escaped += ch;
    }
    std::cerr << "xorinv: error kind=" << kind << " message=\"" << escaped << "\"" << std::endl;
}

void add_output(CLI::App* cmd, OutputArgs& o, bool recon_default) {
    o.save_recon = recon_default;
    cmd->add_option("--out", o.out, "Output directory")->required();
    cmd->add_option("--split", o.split, "Split to evaluate: test or train")->check(CLI::IsMember({"test", "train"}));
    cmd->add_option("--panels", o.panels, "Write PNG panels for the first N samples");
    cmd->add_flag("--save-recon,!--no-save-recon", o.save_recon, "Write reconstructions to recon.ximg");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"xorinv: XOR decryption as an image-to-image inverse problem"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", "xorinv 1.0.0");

    Common common;
    app.add_option("--workers", common.workers, "Worker threads (default: machine parallelism)");
    app.add_flag("--deterministic", common.deterministic, "Single worker, fixed reduction order");

    KeygenArgs keygen;
    auto* c_keygen = app.add_subcommand("keygen", "Generate an AES-128 key and iv from a seed");
    c_keygen->add_option("--seed", keygen.seed, "Seed")->required();
    c_keygen->add_option("--out", keygen.out, "Key file to write")->required();
    c_keygen->add_flag("--force", keygen.force, "Overwrite an existing key file");

    auto* c_dataset = app.add_subcommand("dataset", "Create a dataset manifest");
    c_dataset->require_subcommand(1);
    c_dataset->fallthrough();
    SynthArgs synth;
    auto* c_synth = c_dataset->add_subcommand("synth", "Synthetic toy images");
    c_synth->add_option("--n", synth.n, "Number of images")->required();
    c_synth->add_option("--n-train", synth.n_train, "Training images (default 90%)");
    c_synth->add_option("--height", synth.height, "Image height");
    c_synth->add_option("--width", synth.width, "Image width");
    c_synth->add_option("--channels", synth.channels, "Channels (1 or 3)");
    c_synth->add_option("--seed", synth.seed, "Generator seed");
    c_synth->add_option("--name", synth.name, "Dataset name");
    c_synth->add_option("--out", synth.out, "Output directory")->required();
    ImportArgs import;
    auto* c_import = c_dataset->add_subcommand("import-stl10", "Register an STL-10 binary file");
    c_import->add_option("--input", import.input, "STL-10 binary (e.g. unlabeled_X.bin)")->required();
    c_import->add_option("--n-train", import.n_train, "Training images (file order)");
    c_import->add_option("--limit", import.limit, "Use only the first N images");
    c_import->add_option("--name", import.name, "Dataset name");
    c_import->add_option("--out", import.out, "Output directory")->required();

    EncryptArgs encrypt;
    auto* c_encrypt = app.add_subcommand("encrypt", "Encrypt a dataset into cipherimages");
    c_encrypt->add_option("--dataset", encrypt.dataset, "Dataset directory or manifest")->required();
    c_encrypt->add_option("--key", encrypt.key, "Key file")->required();
    c_encrypt->add_option("--mode", encrypt.mode, "Serialization: float32 or uint8")->check(CLI::IsMember({"float32", "uint8"}));
    c_encrypt->add_option("--cipher", encrypt.cipher, "Block cipher mode: ctr or cbc")->check(CLI::IsMember({"ctr", "cbc"}));
    c_encrypt->add_option("--sigma", encrypt.sigma, "Gaussian noise std on the [0,1] cipherimage scale");
    c_encrypt->add_option("--seed", encrypt.seed, "Noise seed");
    c_encrypt->add_option("--out", encrypt.out, "Output directory")->required();

    DecryptArgs decrypt;
    auto* c_decrypt = app.add_subcommand("decrypt", "Keyed decryption baseline");
    c_decrypt->add_option("--dataset", decrypt.dataset, "Encrypted dataset")->required();
    c_decrypt->add_option("--key", decrypt.key, "Key file")->required();
    c_decrypt->add_flag("--round", decrypt.round, "Round to the nearest byte first (noisy data)");
    add_output(c_decrypt, decrypt.output, true);

    BaselineArgs baseline;
    auto* c_baseline = app.add_subcommand("baseline-mean", "Training-set mean baseline");
    c_baseline->add_option("--dataset", baseline.dataset, "Encrypted dataset")->required();
    add_output(c_baseline, baseline.output, false);

    TrainArgs train;
    auto* c_train = app.add_subcommand("train", "Train the U-Net on cipherimage/image pairs");
    c_train->add_option("--dataset", train.dataset, "Encrypted dataset")->required();
    c_train->add_option("--net-config", train.net_config, "U-Net key=value file");
    c_train->add_option("--train-config", train.train_config, "Training key=value file");
    c_train->add_option("--base-width", train.base_width, "Channels at the first level");
    c_train->add_option("--depth", train.depth, "Down/up levels");
    c_train->add_option("--rescale-input", train.rescale_input, "Rescale inputs to [0,1) (true/false)");
    c_train->add_option("--epochs", train.epochs, "Epochs");
    c_train->add_option("--batch-size", train.batch_size, "Batch size");
    c_train->add_option("--lr", train.lr, "Adam learning rate");
    c_train->add_option("--seed", train.seed, "Initialization and shuffle seed");
    c_train->add_option("--checkpoint-every", train.checkpoint_every, "Snapshot every N epochs");
    c_train->add_option("--val-count", train.val_count, "Validation images taken from the end of the train split");
    c_train->add_flag("--strict", train.strict, "Abort on non-finite gradients instead of skipping the step");
    c_train->add_option("--out", train.out, "Output directory")->required();

    EvalArgs eval;
    auto* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint or mean image on a split");
    c_eval->add_option("--model", eval.model, "model.ckpt or mean.ximg")->required();
    c_eval->add_option("--dataset", eval.dataset, "Encrypted dataset")->required();
    c_eval->add_option("--batch-size", eval.batch_size, "Inference batch size");
    add_output(c_eval, eval.output, false);

    ExportArgs exp;
    auto* c_export = app.add_subcommand("export", "Write one image or cipherimage of a container as PNG/PNM");
    c_export->add_option("--input", exp.input, "Container (.ximg)")->required();
    c_export->add_option("--index", exp.index, "Image index");
    c_export->add_option("--channel", exp.channel, "Single channel to export");
    c_export->add_option("--scale", exp.scale, "Integer upscaling");
    c_export->add_option("--out", exp.out, "Output .png, .pgm or .ppm")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        report("usage", e.what());
        return 2;
    }

    try {
        if (c_keygen->parsed()) cmd_keygen(keygen);
        else if (c_synth->parsed()) cmd_dataset_synth(synth, common);
        else if (c_import->parsed()) cmd_dataset_import_stl10(import, common);
        else if (c_encrypt->parsed()) cmd_encrypt(encrypt, common);
        else if (c_decrypt->parsed()) cmd_decrypt(decrypt, common);
        else if (c_baseline->parsed()) cmd_baseline_mean(baseline, common);
        else if (c_train->parsed()) cmd_train(train, common);
        else if (c_eval->parsed()) cmd_eval(eval, common);
        else if (c_export->parsed()) cmd_export(exp);
    } catch (const Error& e) {
        report(to_string(e.kind()), e.what());
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        report("internal", e.what());
        return 1;
    }
    return 0;
}
