#include "xorinv/nn/train.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "xorinv/error.hpp"
#include "xorinv/metrics.hpp"
#include "xorinv/nn/layers.hpp"
#include "xorinv/parallel.hpp"
#include "xorinv/rng.hpp"

namespace xorinv::nn {
namespace {

constexpr std::uint64_t kInitStream = 0x1A17;
constexpr std::uint64_t kShuffleStream = 0x5A0F;

template <typename Image>
Tensor<float> images_to_tensor(std::span<const Image> images) {
    require(!images.empty(), "to_tensor: no images");
    const auto shape = images.front().shape;
    Tensor<float> t(images.size(), shape.channels, shape.height, shape.width);
    const std::size_t hw = shape.height * shape.width;
    for (std::size_t n = 0; n < images.size(); ++n) {
        require(images[n].shape == shape, "to_tensor: images have different shapes");
        auto out = t.sample(n);
        for (std::size_t p = 0; p < hw; ++p)
            for (std::size_t c = 0; c < shape.channels; ++c) out[c * hw + p] = images[n].values[p * shape.channels + c];
    }
    return t;
}

Tensor<float> gather(const Tensor<float>& all, std::span<const std::size_t> rows) {
    Tensor<float> out(rows.size(), all.channels(), all.height(), all.width());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto src = all.sample(rows[i]);
        std::copy(src.begin(), src.end(), out.sample(i).begin());
    }
    return out;
}

void check_pairs(PairedView set, const UNetConfig& cfg, const char* what) {
    require(set.inputs.size() == set.targets.size(), std::string(what) + ": input/target counts differ");
    if (set.inputs.empty()) return;
    const auto& in = set.inputs.front().shape;
    const auto& gt = set.targets.front().shape;
    require(in.height == gt.height && in.width == gt.width, std::string(what) + ": input and target sizes differ");
    require(in.channels == cfg.in_channels, std::string(what) + ": input channels do not match the U-Net config");
    require(gt.channels == cfg.out_channels, std::string(what) + ": target channels do not match the U-Net config");
    cfg.check_input(in.height, in.width);
}

// Loss and parameter gradients for one batch; grads are reset first.
double batch_gradients(const ParameterSet<float>& params, const UNetConfig& cfg, const Tensor<float>& x,
                       const Tensor<float>& y, std::size_t workers, Gradients<float>& grads) {
    for (auto& g : grads) std::fill(g.begin(), g.end(), 0.0f);
    const std::size_t n = x.batch();
    workers = std::min(workers, n);
    if (workers <= 1) {
        ForwardCache<float> cache;
        const auto pred = unet_forward(params, cfg, x, &cache);
        auto loss = mse_loss(pred, y);
        unet_backward(params, cfg, cache, loss.grad, grads);
        return loss.loss;
    }
    std::vector<Gradients<float>> partial(workers, zero_gradients(params));
    std::vector<double> losses(workers, 0.0);
    parallel_for(workers, workers, [&](std::size_t w) {
        const std::size_t begin = n * w / workers, end = n * (w + 1) / workers;
        const auto xs = slice_batch(x, begin, end);
        const auto ys = slice_batch(y, begin, end);
        ForwardCache<float> cache;
        const auto pred = unet_forward(params, cfg, xs, &cache);
        auto loss = mse_loss(pred, ys);
        const float share = static_cast<float>(end - begin) / static_cast<float>(n);
        for (auto& g : loss.grad.data) g *= share;
        unet_backward(params, cfg, cache, loss.grad, partial[w]);
        losses[w] = loss.loss * static_cast<double>(end - begin) / static_cast<double>(n);
    });
    double total = 0.0;
    for (std::size_t w = 0; w < workers; ++w) {
        total += losses[w];
        for (std::size_t i = 0; i < grads.size(); ++i)
            for (std::size_t j = 0; j < grads[i].size(); ++j) grads[i][j] += partial[w][i][j];
    }
    return total;
}

double mean_val_psnr(const Checkpoint& ckpt, PairedView val) {
    if (val.inputs.empty()) return std::numeric_limits<double>::quiet_NaN();
    const auto preds = predict(ckpt, val.inputs);
    std::vector<metrics::MetricsRecord> recs(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) recs[i].psnr = metrics::psnr(preds[i], val.targets[i]);
    return metrics::aggregate(recs).mean_psnr;
}

template <typename T>
void put(std::string& buf, T v) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
    const auto bits = std::bit_cast<U>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

class ByteReader {
public:
    ByteReader(std::string data, std::string origin) : data_(std::move(data)), origin_(std::move(origin)) {}

    template <typename T>
    T get() {
        using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
        need(sizeof(T));
        U bits = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i)
            bits |= static_cast<U>(static_cast<std::uint8_t>(data_[pos_ + i])) << (8 * i);
        pos_ += sizeof(T);
        return std::bit_cast<T>(bits);
    }

    std::string bytes(std::size_t n) {
        need(n);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == data_.size(); }

private:
    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) fail(ErrorKind::Format, origin_ + ": truncated checkpoint");
    }

    std::string data_;
    std::string origin_;
    std::size_t pos_ = 0;
};

constexpr std::array<char, 8> kCheckpointMagic = {'X', 'O', 'R', 'I', 'N', 'V', 'C', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

void TrainConfig::validate() const {
    require(batch_size >= 1, "TrainConfig: batch_size must be >= 1");
    require(epochs >= 1, "TrainConfig: epochs must be >= 1");
    require(lr > 0.0 && std::isfinite(lr), "TrainConfig: lr must be positive");
    require(workers >= 1, "TrainConfig: workers must be >= 1");
}

Tensor<float> to_tensor(std::span<const CipherImage> images) { return images_to_tensor(images); }
Tensor<float> to_tensor(std::span<const ImageTensor> images) { return images_to_tensor(images); }

ImageTensor to_image(const Tensor<float>& t, std::size_t index) {
    ImageTensor img({t.height(), t.width(), t.channels()});
    const auto s = t.sample(index);
    const std::size_t hw = t.plane();
    for (std::size_t p = 0; p < hw; ++p)
        for (std::size_t c = 0; c < t.channels(); ++c) img.values[p * t.channels() + c] = s[c * hw + p];
    return img;
}

TrainResult train(PairedView train_set, PairedView val_set, const UNetConfig& net_cfg, const TrainConfig& tcfg,
                  const EpochCallback& on_epoch) {
    net_cfg.validate();
    tcfg.validate();
    require(!train_set.inputs.empty(), "train: empty training set");
    check_pairs(train_set, net_cfg, "train");
    check_pairs(val_set, net_cfg, "validation");

    const auto x_all = to_tensor(train_set.inputs);
    const auto y_all = to_tensor(train_set.targets);
    const std::size_t n = x_all.batch();
    const std::size_t workers = tcfg.deterministic ? 1 : tcfg.workers;

    TrainResult result;
    result.checkpoint.config = net_cfg;
    result.checkpoint.params = init_unet<float>(net_cfg, Rng::stream_seed(tcfg.seed, kInitStream));
    auto& params = result.checkpoint.params;
    AdamConfig adam_cfg;
    adam_cfg.lr = tcfg.lr;
    adam_cfg.strict = tcfg.strict;
    auto adam = AdamState<float>::create(params, adam_cfg);
    auto grads = zero_gradients(params);

    Rng shuffler(Rng::stream_seed(tcfg.seed, kShuffleStream));
    std::vector<std::size_t> order(n);
    const auto start = std::chrono::steady_clock::now();

    for (std::size_t epoch = 1; epoch <= tcfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        shuffler.shuffle(std::span<std::size_t>(order));
        double weighted_loss = 0.0;
        std::size_t skipped = 0;
        for (std::size_t b = 0; b < n; b += tcfg.batch_size) {
            const auto rows = std::span<const std::size_t>(order).subspan(b, std::min(tcfg.batch_size, n - b));
            const double loss = batch_gradients(params, net_cfg, gather(x_all, rows), gather(y_all, rows), workers, grads);
            if (!std::isfinite(loss))
                fail(ErrorKind::Divergence, "training diverged: non-finite loss at epoch " + std::to_string(epoch) +
                                                ", batch starting at position " + std::to_string(b) +
                                                " (try a smaller learning rate)");
            weighted_loss += loss * static_cast<double>(rows.size());
            if (!adam_step(params, grads, adam)) ++skipped;
        }
        result.checkpoint.epoch = epoch;
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = weighted_loss / static_cast<double>(n);
        rec.val_psnr = mean_val_psnr(result.checkpoint, val_set);
        rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        rec.skipped_steps = skipped;
        result.log.push_back(rec);
        if (on_epoch) {
            const bool snapshot =
                epoch == tcfg.epochs || (tcfg.checkpoint_every != 0 && epoch % tcfg.checkpoint_every == 0);
            on_epoch(rec, result.checkpoint, snapshot);
        }
    }
    return result;
}

std::vector<ImageTensor> predict(const Checkpoint& ckpt, std::span<const CipherImage> inputs, std::size_t* clamped,
                                 std::size_t batch_size) {
    require(batch_size >= 1, "predict: batch_size must be >= 1");
    std::vector<ImageTensor> out;
    out.reserve(inputs.size());
    std::size_t n_clamped = 0;
    for (std::size_t b = 0; b < inputs.size(); b += batch_size) {
        const auto chunk = inputs.subspan(b, std::min(batch_size, inputs.size() - b));
        require(chunk.front().shape.channels == ckpt.config.in_channels,
                "predict: cipherimage has " + std::to_string(chunk.front().shape.channels) +
                    " channels, checkpoint expects " + std::to_string(ckpt.config.in_channels));
        const auto y = unet_forward(ckpt.params, ckpt.config, to_tensor(chunk));
        for (std::size_t i = 0; i < chunk.size(); ++i) {
            auto img = to_image(y, i);
            for (auto& v : img.values) {
                const float c = std::clamp(v, 0.0f, 1.0f);
                if (c != v) ++n_clamped;
                v = c;
            }
            out.push_back(std::move(img));
        }
    }
    if (clamped) *clamped = n_clamped;
    return out;
}

ImageTensor predict(const Checkpoint& ckpt, const CipherImage& input) {
    return predict(ckpt, std::span<const CipherImage>(&input, 1)).front();
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::string buf(kCheckpointMagic.begin(), kCheckpointMagic.end());
    put<std::uint32_t>(buf, kCheckpointVersion);
    const auto& c = ckpt.config;
    for (std::size_t v : {c.in_channels, c.out_channels, c.base_width, c.depth, c.kernel_size})
        put<std::uint32_t>(buf, static_cast<std::uint32_t>(v));
    put<std::uint8_t>(buf, c.rescale_input ? 1 : 0);
    buf.append(3, '\0');
    put<std::uint64_t>(buf, ckpt.epoch);
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(ckpt.params.params.size()));
    for (const auto& p : ckpt.params.params) {
        put<std::uint32_t>(buf, static_cast<std::uint32_t>(p.name.size()));
        buf += p.name;
        put<std::uint32_t>(buf, static_cast<std::uint32_t>(p.shape.size()));
        for (auto d : p.shape) put<std::uint32_t>(buf, static_cast<std::uint32_t>(d));
        for (float v : p.value) put<float>(buf, v);
    }
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorKind::Io, "cannot open for writing: " + tmp.string());
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (!out) fail(ErrorKind::Io, "write failed: " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) fail(ErrorKind::Io, "cannot rename " + tmp.string() + " -> " + path.string() + ": " + ec.message());
}

bool is_checkpoint_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::array<char, 8> magic{};
    in.read(magic.data(), magic.size());
    return in && magic == kCheckpointMagic;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    ByteReader r(ss.str(), path.string());
    if (r.bytes(8) != std::string(kCheckpointMagic.begin(), kCheckpointMagic.end()))
        fail(ErrorKind::Format, path.string() + ": not a checkpoint (bad magic)");
    if (r.get<std::uint32_t>() != kCheckpointVersion) fail(ErrorKind::Format, path.string() + ": unsupported version");
    Checkpoint ckpt;
    auto& c = ckpt.config;
    c.in_channels = r.get<std::uint32_t>();
    c.out_channels = r.get<std::uint32_t>();
    c.base_width = r.get<std::uint32_t>();
    c.depth = r.get<std::uint32_t>();
    c.kernel_size = r.get<std::uint32_t>();
    c.rescale_input = r.get<std::uint8_t>() != 0;
    r.bytes(3);
    ckpt.epoch = r.get<std::uint64_t>();
    try {
        ckpt.params = unet_layout<float>(c);
    } catch (const Error& e) {
        fail(ErrorKind::Format, path.string() + ": invalid network config: " + e.what());
    }
    const auto count = r.get<std::uint32_t>();
    if (count != ckpt.params.params.size()) fail(ErrorKind::Format, path.string() + ": parameter count mismatch");
    for (auto& p : ckpt.params.params) {
        const std::string name = r.bytes(r.get<std::uint32_t>());
        if (name != p.name) fail(ErrorKind::Format, path.string() + ": expected parameter '" + p.name + "', found '" + name + "'");
        std::vector<std::size_t> shape(r.get<std::uint32_t>());
        for (auto& d : shape) d = r.get<std::uint32_t>();
        if (shape != p.shape) fail(ErrorKind::Format, path.string() + ": shape mismatch for '" + name + "'");
        for (auto& v : p.value) v = r.get<float>();
    }
    if (!r.done()) fail(ErrorKind::Format, path.string() + ": trailing bytes");
    return ckpt;
}

KeyValueFile to_key_values(const UNetConfig& cfg) {
    KeyValueFile kv;
    kv.set("in_channels", std::uint64_t{cfg.in_channels});
    kv.set("out_channels", std::uint64_t{cfg.out_channels});
    kv.set("base_width", std::uint64_t{cfg.base_width});
    kv.set("depth", std::uint64_t{cfg.depth});
    kv.set("kernel_size", std::uint64_t{cfg.kernel_size});
    kv.set("rescale_input", cfg.rescale_input);
    return kv;
}

UNetConfig unet_config_from(const KeyValueFile& kv) {
    kv.check_names({"in_channels", "out_channels", "base_width", "depth", "kernel_size", "rescale_input"});
    UNetConfig c;
    c.in_channels = kv.get_u64("in_channels", c.in_channels);
    c.out_channels = kv.get_u64("out_channels", c.out_channels);
    c.base_width = kv.get_u64("base_width", c.base_width);
    c.depth = kv.get_u64("depth", c.depth);
    c.kernel_size = kv.get_u64("kernel_size", c.kernel_size);
    c.rescale_input = kv.get_bool("rescale_input", c.rescale_input);
    c.validate();
    return c;
}

KeyValueFile to_key_values(const TrainConfig& cfg) {
    KeyValueFile kv;
    kv.set("batch_size", std::uint64_t{cfg.batch_size});
    kv.set("lr", cfg.lr);
    kv.set("epochs", std::uint64_t{cfg.epochs});
    kv.set("seed", cfg.seed);
    kv.set("deterministic", cfg.deterministic);
    kv.set("workers", std::uint64_t{cfg.workers});
    kv.set("checkpoint_every", std::uint64_t{cfg.checkpoint_every});
    kv.set("strict", cfg.strict);
    return kv;
}

TrainConfig train_config_from(const KeyValueFile& kv) {
    kv.check_names({"batch_size", "lr", "epochs", "seed", "deterministic", "workers", "checkpoint_every", "strict"});
    TrainConfig c;
    c.batch_size = kv.get_u64("batch_size", c.batch_size);
    c.lr = kv.get_double("lr", c.lr);
    c.epochs = kv.get_u64("epochs", c.epochs);
    c.seed = kv.get_u64("seed", c.seed);
    c.deterministic = kv.get_bool("deterministic", c.deterministic);
    c.workers = kv.get_u64("workers", c.workers);
    c.checkpoint_every = kv.get_u64("checkpoint_every", c.checkpoint_every);
    c.strict = kv.get_bool("strict", c.strict);
    c.validate();
    return c;
}

void append_log_record(const std::filesystem::path& path, const EpochRecord& rec) {
    const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    std::ofstream out(path, std::ios::app);
    if (!out) fail(ErrorKind::Io, "cannot open for appending: " + path.string());
    if (fresh) out << "epoch,train_loss,val_psnr,wall_time\n";
    out << rec.epoch << ',' << format_double(rec.train_loss) << ',' << metrics::format_extended(rec.val_psnr) << ','
        << format_double(rec.wall_time) << '\n';
    if (!out) fail(ErrorKind::Io, "write failed: " + path.string());
}

std::vector<EpochRecord> read_log(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open: " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "epoch,train_loss,val_psnr,wall_time")
        fail(ErrorKind::Format, path.string() + ": unexpected log header");
    std::vector<EpochRecord> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string f[4];
        for (auto& s : f)
            if (!std::getline(ss, s, ',')) fail(ErrorKind::Format, path.string() + ": malformed row '" + line + "'");
        EpochRecord rec;
        rec.epoch = static_cast<std::size_t>(std::stoull(f[0]));
        rec.train_loss = metrics::parse_extended(f[1]);
        rec.val_psnr = metrics::parse_extended(f[2]);
        rec.wall_time = metrics::parse_extended(f[3]);
        out.push_back(rec);
    }
    return out;
}

}  // namespace xorinv::nn
