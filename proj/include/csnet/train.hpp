#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "csnet/data.hpp"
#include "csnet/model.hpp"

namespace csnet {

/// Multiplies the learning rate by `multiplier` from `epoch` (0-based) onward.
struct LrMilestone {
    std::int64_t epoch = 0;
    double multiplier = 1.0;
};

struct TrainConfig {
    std::int64_t batch_size = 100;
    double momentum = 0.9;
    double learning_rate = 0.1;
    double weight_decay = 1e-4;
    std::int64_t epochs = 1;
    std::uint64_t seed = 0;
    /// Rate applied to every dropout layer of the network being trained.
    double dropout = 0.5;
    /// Explicit schedule. When empty and auto_schedule is set, the rate drops
    /// tenfold at 50% and 75% of the epoch budget.
    std::vector<LrMilestone> schedule;
    bool auto_schedule = true;
    bool augment = false;
    int augment_pad = 4;
    /// CSV metrics file, written when nonempty.
    std::string metrics_path;
    /// Directory for best/final checkpoints, written when nonempty.
    std::string checkpoint_dir;
    /// Suppresses the standard-output metrics mirror.
    bool quiet = false;

    void check_valid() const;
};

std::vector<LrMilestone> default_schedule(std::int64_t epochs);
double learning_rate_at(const TrainConfig& cfg, std::int64_t epoch);

struct MetricsRecord {
    std::int64_t epoch = 0;
    double train_loss = 0.0;
    double train_error_pct = 0.0;
    double eval_error_pct = 0.0;
    double learning_rate = 0.0;
    double wall_time_sec = 0.0;
};

std::string metrics_csv_header();
std::string metrics_csv_line(const MetricsRecord& record);
std::vector<MetricsRecord> parse_metrics_csv(const std::string& text);

/// Heavy-ball update: v <- momentum*v + (g + weight_decay*w); w <- w - lr*v.
/// An empty velocity store is zero-initialized to match `params`.
template <typename T>
void sgd_momentum_step(ParamStore<T>& params, const ParamStore<T>& grads,
                       ParamStore<T>& velocity, double lr, double momentum, double weight_decay);

/// Top-1 error in percent over the full dataset, single view, inference mode.
/// The result is independent of the batch partitioning.
template <typename T>
double evaluate(const NetworkSpec& net, const ModelParams<T>& state, const Dataset& ds,
                std::int64_t batch_size = 100);

struct TrainResult {
    ModelParams<float> state;
    ParamStore<float> velocity;
    std::vector<MetricsRecord> metrics;
    std::vector<double> batch_losses;
    std::int64_t best_epoch = -1;
    double best_eval_error_pct = 100.0;
    std::string best_checkpoint_path;
    std::string final_checkpoint_path;
};

/// Runs the full loop: seeded shuffling, optional crop/flip augmentation,
/// train-mode forwards, heavy-ball updates, one evaluation pass per epoch.
/// Training batches that would be incomplete are dropped; evaluation sees
/// every example. Throws on divergence (non-finite loss) and on mismatched
/// preprocessing fingerprints between the two datasets.
TrainResult train(const NetworkSpec& net, const TrainConfig& cfg, const Dataset& train_ds,
                  const Dataset& eval_ds);

}  // namespace csnet
