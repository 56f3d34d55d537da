#include "csnet/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "csnet/ops.hpp"

namespace csnet {

namespace {

bool zero_fingerprint(const std::array<std::uint8_t, 32>& fp) {
    for (std::uint8_t b : fp)
        if (b) return false;
    return true;
}

/// Copies the selected images into a contiguous batch tensor.
Tensor32 gather_batch(const Tensor32& images, const std::vector<std::int64_t>& order,
                      std::int64_t first, std::int64_t count, std::vector<int>* labels_out,
                      const std::vector<int>& labels) {
    const Shape4 s = images.shape();
    const std::int64_t stride = s.c * s.h * s.w;
    Tensor32 batch({count, s.c, s.h, s.w});
    if (labels_out) labels_out->resize(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i) {
        const std::int64_t src = order[static_cast<std::size_t>(first + i)];
        std::memcpy(batch.data() + i * stride, images.data() + src * stride,
                    static_cast<std::size_t>(stride) * sizeof(float));
        if (labels_out)
            (*labels_out)[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(src)];
    }
    return batch;
}

std::int64_t count_mistakes(const std::vector<int>& predictions, const std::vector<int>& labels) {
    std::int64_t wrong = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i)
        if (predictions[i] != labels[i]) ++wrong;
    return wrong;
}

void check_dataset_fits(const NetworkSpec& net, const Dataset& ds, const char* role) {
    ds.check_valid();
    const Shape4 s = ds.images.shape();
    if (s.n == 0) throw ValidationError(std::string("train: ") + role + " dataset is empty");
    if (s.c != net.input.c || s.h != net.input.h || s.w != net.input.w)
        throw ShapeError(std::string("train: ") + role + " images are " + std::to_string(s.c) +
                         "x" + std::to_string(s.h) + "x" + std::to_string(s.w) +
                         " but the network expects " + std::to_string(net.input.c) + "x" +
                         std::to_string(net.input.h) + "x" + std::to_string(net.input.w));
    if (ds.class_count != net.class_count)
        throw ValidationError(std::string("train: ") + role + " dataset has " +
                              std::to_string(ds.class_count) + " classes but the network emits " +
                              std::to_string(net.class_count));
}

}  // namespace

void TrainConfig::check_valid() const {
    if (batch_size < 1) throw ValidationError("train config: batch_size must be at least 1");
    if (momentum < 0.0 || momentum >= 1.0)
        throw ValidationError("train config: momentum must lie in [0, 1)");
    if (!(learning_rate >= 0.0))
        throw ValidationError("train config: learning rate must be non-negative");
    if (weight_decay < 0.0)
        throw ValidationError("train config: weight decay must be non-negative");
    if (epochs < 1) throw ValidationError("train config: epochs must be at least 1");
    if (dropout < 0.0 || dropout >= 1.0)
        throw ValidationError("train config: dropout rate must lie in [0, 1)");
    if (augment_pad < 0) throw ValidationError("train config: augment_pad must be non-negative");
    for (const LrMilestone& m : schedule) {
        if (m.epoch < 0) throw ValidationError("train config: schedule epochs must be >= 0");
        if (!(m.multiplier > 0.0))
            throw ValidationError("train config: schedule multipliers must be positive");
    }
}

std::vector<LrMilestone> default_schedule(std::int64_t epochs) {
    std::vector<LrMilestone> out;
    for (std::int64_t at : {epochs / 2, 3 * epochs / 4})
        if (at >= 1) out.push_back({at, 0.1});
    return out;
}

double learning_rate_at(const TrainConfig& cfg, std::int64_t epoch) {
    const std::vector<LrMilestone> schedule =
        !cfg.schedule.empty() ? cfg.schedule
        : cfg.auto_schedule   ? default_schedule(cfg.epochs)
                              : std::vector<LrMilestone>{};
    double lr = cfg.learning_rate;
    for (const LrMilestone& m : schedule)
        if (m.epoch <= epoch) lr *= m.multiplier;
    return lr;
}

std::string metrics_csv_header() {
    return "epoch,train_loss,train_error_pct,eval_error_pct,learning_rate,wall_time_sec";
}

std::string metrics_csv_line(const MetricsRecord& r) {
    char buf[192];
    std::snprintf(buf, sizeof(buf), "%lld,%.6f,%.4f,%.4f,%.8g,%.3f",
                  static_cast<long long>(r.epoch), r.train_loss, r.train_error_pct,
                  r.eval_error_pct, r.learning_rate, r.wall_time_sec);
    return buf;
}

std::vector<MetricsRecord> parse_metrics_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != metrics_csv_header())
        throw FormatError("metrics csv: missing or unexpected header row");
    std::vector<MetricsRecord> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        MetricsRecord r;
        long long epoch = 0;
        if (std::sscanf(line.c_str(), "%lld,%lf,%lf,%lf,%lf,%lf", &epoch, &r.train_loss,
                        &r.train_error_pct, &r.eval_error_pct, &r.learning_rate,
                        &r.wall_time_sec) != 6)
            throw FormatError("metrics csv: malformed row '" + line + "'");
        r.epoch = epoch;
        out.push_back(r);
    }
    return out;
}

template <typename T>
void sgd_momentum_step(ParamStore<T>& params, const ParamStore<T>& grads,
                       ParamStore<T>& velocity, double lr, double momentum,
                       double weight_decay) {
    if (velocity.empty())
        for (const std::string& name : params.names())
            velocity.add(name, Tensor<T>(params.get(name).shape()));

    for (const std::string& name : params.names()) {
        Tensor<T>& w = params.get(name);
        const Tensor<T>& g = grads.get(name);
        Tensor<T>& v = velocity.get(name);
        if (g.shape() != w.shape() || v.shape() != w.shape())
            throw ShapeError("sgd: shape mismatch for '" + name + "'");
        if (!g.all_finite()) throw Error("sgd: non-finite gradient in '" + name + "'");
        for (std::int64_t i = 0; i < w.size(); ++i) {
            const double vi = momentum * static_cast<double>(v.data()[i]) +
                              static_cast<double>(g.data()[i]) +
                              weight_decay * static_cast<double>(w.data()[i]);
            v.data()[i] = static_cast<T>(vi);
            w.data()[i] = static_cast<T>(static_cast<double>(w.data()[i]) - lr * vi);
        }
    }
}

template <typename T>
double evaluate(const NetworkSpec& net, const ModelParams<T>& state, const Dataset& ds,
                std::int64_t batch_size) {
    validate(net);
    ds.check_valid();
    if (batch_size < 1) throw ValidationError("evaluate: batch_size must be at least 1");
    const Shape4 s = ds.images.shape();
    if (s.n == 0) throw ValidationError("evaluate: empty dataset");

    const std::int64_t stride = s.c * s.h * s.w;
    std::int64_t wrong = 0;
    for (std::int64_t start = 0; start < s.n; start += batch_size) {
        const std::int64_t count = std::min(batch_size, s.n - start);
        Tensor<T> batch({count, s.c, s.h, s.w});
        for (std::int64_t i = 0; i < count * stride; ++i)
            batch.data()[i] = static_cast<T>(ds.images.data()[start * stride + i]);
        const std::vector<int> predictions = argmax_classes(forward_inference(net, state, batch));
        for (std::int64_t i = 0; i < count; ++i)
            if (predictions[static_cast<std::size_t>(i)] !=
                ds.labels[static_cast<std::size_t>(start + i)])
                ++wrong;
    }
    return 100.0 * static_cast<double>(wrong) / static_cast<double>(s.n);
}

TrainResult train(const NetworkSpec& net_in, const TrainConfig& cfg, const Dataset& train_ds,
                  const Dataset& eval_ds) {
    cfg.check_valid();

    NetworkSpec net = net_in;
    for (LayerSpec& layer : net.layers)
        if (layer.kind == LayerKind::dropout) layer.dropout_rate = cfg.dropout;
    validate(net);

    check_dataset_fits(net, train_ds, "training");
    check_dataset_fits(net, eval_ds, "evaluation");
    if (train_ds.split != Split::train)
        throw ValidationError("train: training data must carry the train split tag");
    if (!zero_fingerprint(train_ds.stats_fingerprint) &&
        !zero_fingerprint(eval_ds.stats_fingerprint) &&
        train_ds.stats_fingerprint != eval_ds.stats_fingerprint)
        throw ValidationError(
            "train: the datasets were normalized with different fitted statistics");

    const std::int64_t n = train_ds.images.shape().n;
    if (n < cfg.batch_size)
        throw ValidationError("train: training set is smaller than one batch");

    Rng rng(cfg.seed);
    TrainResult out;
    out.state = init_params<float>(net, rng);

    std::ofstream metrics_file;
    if (!cfg.metrics_path.empty()) {
        metrics_file.open(cfg.metrics_path, std::ios::trunc);
        if (!metrics_file) throw Error("train: cannot open metrics file " + cfg.metrics_path);
        metrics_file << metrics_csv_header() << '\n';
    }
    if (!cfg.quiet) std::cout << metrics_csv_header() << std::endl;

    if (!cfg.checkpoint_dir.empty()) std::filesystem::create_directories(cfg.checkpoint_dir);

    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    const std::int64_t batches = n / cfg.batch_size;

    for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        const double lr = learning_rate_at(cfg, epoch);
        rng.shuffle(order.begin(), order.end());

        double loss_sum = 0.0;
        std::int64_t wrong = 0;
        std::vector<int> labels;
        for (std::int64_t b = 0; b < batches; ++b) {
            Tensor32 batch = gather_batch(train_ds.images, order, b * cfg.batch_size,
                                          cfg.batch_size, &labels, train_ds.labels);
            if (cfg.augment) batch = augment_batch(batch, rng, cfg.augment_pad);

            ForwardCache<float> cache;
            const Tensor32 logits = forward_train(net, out.state, batch, rng, &cache);
            const SoftmaxLossResult<float> loss = softmax_cross_entropy(logits, labels);
            if (!std::isfinite(loss.loss))
                throw Error("train: diverged with loss " + std::to_string(loss.loss) +
                            " at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b));
            loss_sum += loss.loss;
            out.batch_losses.push_back(loss.loss);
            wrong += count_mistakes(argmax_classes(logits), labels);

            const BackwardResult<float> back = backward(net, out.state, cache, loss.grad_logits);
            sgd_momentum_step(out.state.params, back.grads, out.velocity, lr, cfg.momentum,
                              cfg.weight_decay);
        }

        MetricsRecord record;
        record.epoch = epoch;
        record.train_loss = loss_sum / static_cast<double>(batches);
        record.train_error_pct =
            100.0 * static_cast<double>(wrong) / static_cast<double>(batches * cfg.batch_size);
        record.eval_error_pct = evaluate(net, out.state, eval_ds, cfg.batch_size);
        record.learning_rate = lr;
        record.wall_time_sec =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        out.metrics.push_back(record);

        const std::string line = metrics_csv_line(record);
        if (metrics_file.is_open()) metrics_file << line << '\n' << std::flush;
        if (!cfg.quiet) std::cout << line << std::endl;

        if (out.best_epoch < 0 || record.eval_error_pct < out.best_eval_error_pct) {
            out.best_epoch = epoch;
            out.best_eval_error_pct = record.eval_error_pct;
            if (!cfg.checkpoint_dir.empty()) {
                out.best_checkpoint_path = cfg.checkpoint_dir + "/best.ckpt";
                save_checkpoint(out.best_checkpoint_path, net, out.state, out.velocity,
                                {static_cast<std::uint64_t>(epoch + 1), rng.serialize()});
            }
        }
    }

    if (!cfg.checkpoint_dir.empty()) {
        out.final_checkpoint_path = cfg.checkpoint_dir + "/final.ckpt";
        save_checkpoint(out.final_checkpoint_path, net, out.state, out.velocity,
                        {static_cast<std::uint64_t>(cfg.epochs), rng.serialize()});
    }
    return out;
}

#define CSNET_INSTANTIATE_TRAIN(T)                                                          \
    template void sgd_momentum_step<T>(ParamStore<T>&, const ParamStore<T>&, ParamStore<T>&, \
                                       double, double, double);                             \
    template double evaluate<T>(const NetworkSpec&, const ModelParams<T>&, const Dataset&,  \
                                std::int64_t);

CSNET_INSTANTIATE_TRAIN(float)
CSNET_INSTANTIATE_TRAIN(double)

#undef CSNET_INSTANTIATE_TRAIN

}  // namespace csnet
