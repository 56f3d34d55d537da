#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "csnet/csconv.hpp"

namespace csnet {

enum class LayerKind { csconv, maxpool, dropout, global_avg_pool, softmax_head };

std::string layer_kind_name(LayerKind kind);

/// One network layer. kind selects which payload fields are meaningful.
struct LayerSpec {
    LayerKind kind = LayerKind::csconv;
    std::string name;

    // csconv payload
    CsconvSpec csconv;
    PadPolicy pad_policy = PadPolicy::preserve;
    bool batch_norm = false;

    // maxpool payload
    int pool_kh = 3, pool_kw = 3;
    int pool_sh = 2, pool_sw = 2;
    bool pool_cover_edges = true;

    // dropout payload
    double dropout_rate = 0.5;
};

struct InputShape {
    int c = 0, h = 0, w = 0;
};

struct NetworkSpec {
    InputShape input;
    int class_count = 0;
    std::vector<LayerSpec> layers;
};

struct ShapeTraceEntry {
    std::string name;
    LayerKind kind;
    std::int64_t c = 0, h = 0, w = 0;  // output extents, batch axis omitted
};

/// Propagates shapes through every layer and enforces the structural rules:
/// unique names, a global-average-pool + softmax-head tail, the last csconv
/// emitting class_count channels. Throws naming the first failing layer.
std::vector<ShapeTraceEntry> validate(const NetworkSpec& net);

std::string shape_trace_to_string(const std::vector<ShapeTraceEntry>& trace);

/// Network description document (JSON) shared by presets and user networks.
NetworkSpec parse_network_json(const std::string& text);
std::string network_to_json(const NetworkSpec& net, bool pretty = true);

/// Compact, key-sorted document form used for fingerprinting.
std::string canonical_network_json(const NetworkSpec& net);
std::array<std::uint8_t, 32> network_fingerprint(const NetworkSpec& net);

struct PresetOptions {
    int class_count = 0;       // 0 keeps the preset's default (10)
    InputShape input{0, 0, 0}; // zeros keep the preset's default
};

/// Bundled network documents: csnet_s, csnet_m, csnet_l (32×32 RGB) and
/// csnet_tiny (28×28 grayscale, desk-scale). class_count overrides rewrite the
/// final channel filter; input overrides rewire the first stage's input depth.
NetworkSpec preset(const std::string& name, const PresetOptions& options = {});
std::vector<std::string> preset_names();

/// Named tensors in stable insertion order.
template <typename T>
class ParamStore {
  public:
    Tensor<T>& add(const std::string& name, Tensor<T> value);
    Tensor<T>& get(const std::string& name);
    const Tensor<T>& get(const std::string& name) const;
    bool contains(const std::string& name) const { return by_name_.count(name) > 0; }
    const std::vector<std::string>& names() const { return order_; }
    std::size_t size() const { return order_.size(); }
    bool empty() const { return order_.empty(); }

  private:
    std::vector<std::string> order_;
    std::unordered_map<std::string, Tensor<T>> by_name_;
};

/// Trainable parameters plus batch-norm running statistics.
template <typename T>
struct ModelParams {
    ParamStore<T> params;
    ParamStore<T> running;
};

/// Parameter names are "<layer>.s<i>.{spatial,channel}.{w,b}" plus, with batch
/// norm, "<layer>.s<i>.{bn1,bn2}.{gamma,beta}" and running "....{mean,var}".
template <typename T>
ModelParams<T> init_params(const NetworkSpec& net, Rng& rng);

enum class ExecMode {
    train,      // batch-stat BN with running update, dropout active
    inference,  // running-stat BN, dropout identity
    gradcheck,  // batch-stat BN without running update, dropout identity
};

/// Everything the backward pass needs, captured layer by layer.
template <typename T>
struct LayerCache {
    // csconv: per stage
    std::vector<Tensor<T>> inputs;        // tensor entering each stage
    std::vector<Tensor<T>> spatial_pre;   // spatial conv output
    std::vector<Tensor<T>> spatial_norm;  // after BN (or alias of spatial_pre), before ReLU
    std::vector<Tensor<T>> mid;           // channel filter input
    std::vector<Tensor<T>> channel_pre;
    std::vector<Tensor<T>> channel_norm;
    std::vector<BatchNormCache<T>> bn1, bn2;

    // maxpool
    MaxPoolResult<T> pool;
    Shape4 pool_in{1, 1, 1, 1};

    // dropout
    Tensor<T> dropout_mask;

    // global average pool
    Shape4 gap_in{1, 1, 1, 1};
};

template <typename T>
struct ForwardCache {
    ExecMode mode = ExecMode::train;
    std::vector<LayerCache<T>> layers;
};

template <typename T>
Tensor<T> forward_train(const NetworkSpec& net, ModelParams<T>& state, const Tensor<T>& batch,
                        Rng& rng, ForwardCache<T>* cache = nullptr);

template <typename T>
Tensor<T> forward_inference(const NetworkSpec& net, const ModelParams<T>& state,
                            const Tensor<T>& batch);

/// Batch-statistics forward that leaves running stats and the RNG untouched,
/// for finite-difference comparisons.
template <typename T>
Tensor<T> forward_gradcheck(const NetworkSpec& net, const ModelParams<T>& state,
                            const Tensor<T>& batch, ForwardCache<T>* cache = nullptr);

template <typename T>
struct BackwardResult {
    ParamStore<T> grads;   // one entry per trainable parameter, same names
    Tensor<T> grad_input;
};

template <typename T>
BackwardResult<T> backward(const NetworkSpec& net, const ModelParams<T>& state,
                           const ForwardCache<T>& cache, const Tensor<T>& grad_logits);

/// Checkpoint file: magic "CSNETCKP", u32 version, 32-byte network
/// fingerprint, a record per tensor (u32 name length, name, u8 dtype, u8 rank,
/// u32 dims, raw little-endian payload), and a trailing u64 byte-length
/// checksum. Records cover params, running stats, optimizer state, the epoch
/// counter, and the RNG state.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
    std::uint64_t epoch = 0;
    std::string rng_state;
};

template <typename T>
void save_checkpoint(const std::string& path, const NetworkSpec& net, const ModelParams<T>& state,
                     const ParamStore<T>& opt_state, const CheckpointMeta& meta);

template <typename T>
CheckpointMeta load_checkpoint(const std::string& path, const NetworkSpec& net,
                               ModelParams<T>& state, ParamStore<T>& opt_state);

}  // namespace csnet
