#include "csnet/model.hpp"

#include "csnet/sha256.hpp"
#include "json.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace csnet {

namespace {

using njson = nlohmann::json;

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.9;

}  // namespace

std::string layer_kind_name(LayerKind kind) {
    switch (kind) {
        case LayerKind::csconv: return "csconv";
        case LayerKind::maxpool: return "maxpool";
        case LayerKind::dropout: return "dropout";
        case LayerKind::global_avg_pool: return "global_avg_pool";
        case LayerKind::softmax_head: return "softmax_head";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Validation

std::vector<ShapeTraceEntry> validate(const NetworkSpec& net) {
    if (net.input.c < 1 || net.input.h < 1 || net.input.w < 1)
        throw ValidationError("input extents must be positive, got " + std::to_string(net.input.c) +
                              "x" + std::to_string(net.input.h) + "x" + std::to_string(net.input.w));
    if (net.class_count < 1)
        throw ValidationError("class_count must be positive, got " + std::to_string(net.class_count));
    if (net.layers.empty())
        throw ValidationError("network has no layers; a global_avg_pool + softmax_head tail is required");

    std::set<std::string> seen;
    for (const LayerSpec& l : net.layers) {
        if (l.name.empty()) throw ValidationError("every layer needs a non-empty name");
        if (!seen.insert(l.name).second)
            throw ValidationError("duplicate layer name '" + l.name + "'");
    }

    std::vector<ShapeTraceEntry> trace;
    std::int64_t c = net.input.c, h = net.input.h, w = net.input.w;
    const LayerSpec* last_csconv = nullptr;
    int gap_count = 0, head_count = 0;

    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const LayerSpec& l = net.layers[i];
        const std::string where = "layer '" + l.name + "': ";
        switch (l.kind) {
            case LayerKind::csconv: {
                try {
                    plan_cascade(l.csconv);
                } catch (const CascadeError& e) {
                    throw CascadeError(where + e.what(), e.stage_index);
                } catch (const ValidationError& e) {
                    throw ValidationError(where + e.what());
                }
                if (l.csconv.stages.front().in_channels != c)
                    throw ValidationError(where + "expects " +
                                          std::to_string(l.csconv.stages.front().in_channels) +
                                          " input channels but receives " + std::to_string(c));
                for (std::size_t j = 0; j < l.csconv.stages.size(); ++j) {
                    const SubpatchFilterSpec& s = l.csconv.stages[j];
                    std::pair<int, int> pad;
                    try {
                        pad = stage_padding(s, l.pad_policy);
                    } catch (const ValidationError& e) {
                        throw ValidationError(where + e.what());
                    }
                    h = h + 2 * pad.first - s.spatial_kh + 1;
                    w = w + 2 * pad.second - s.spatial_kw + 1;
                    if (h < 1 || w < 1)
                        throw ValidationError(where + "stage " + std::to_string(j) +
                                              " shrinks the feature map below 1x1");
                }
                c = l.csconv.stages.back().out_channels;
                last_csconv = &l;
                break;
            }
            case LayerKind::maxpool: {
                if (l.pool_kh < 1 || l.pool_kw < 1 || l.pool_sh < 1 || l.pool_sw < 1)
                    throw ValidationError(where + "pooling window and stride must be positive");
                if (l.pool_kh > h || l.pool_kw > w)
                    throw ValidationError(where + "pooling window " + std::to_string(l.pool_kh) +
                                          "x" + std::to_string(l.pool_kw) + " exceeds the " +
                                          std::to_string(h) + "x" + std::to_string(w) +
                                          " feature map");
                if (l.pool_cover_edges) {
                    h = (h - l.pool_kh + l.pool_sh - 1) / l.pool_sh + 1;
                    w = (w - l.pool_kw + l.pool_sw - 1) / l.pool_sw + 1;
                } else {
                    h = (h - l.pool_kh) / l.pool_sh + 1;
                    w = (w - l.pool_kw) / l.pool_sw + 1;
                }
                break;
            }
            case LayerKind::dropout: {
                if (l.dropout_rate < 0.0 || l.dropout_rate >= 1.0)
                    throw ValidationError(where + "dropout rate must be in [0, 1)");
                break;
            }
            case LayerKind::global_avg_pool: {
                ++gap_count;
                h = 1;
                w = 1;
                break;
            }
            case LayerKind::softmax_head: {
                ++head_count;
                break;
            }
        }
        trace.push_back({l.name, l.kind, c, h, w});
    }

    if (gap_count != 1 || head_count != 1 || net.layers.size() < 2 ||
        net.layers[net.layers.size() - 2].kind != LayerKind::global_avg_pool ||
        net.layers.back().kind != LayerKind::softmax_head)
        throw ValidationError(
            "network must end with exactly one global_avg_pool followed by exactly one "
            "softmax_head");
    if (!last_csconv) throw ValidationError("network has no csconv layer");
    if (last_csconv->csconv.stages.back().out_channels != net.class_count)
        throw ValidationError("last csconv layer '" + last_csconv->name + "' emits " +
                              std::to_string(last_csconv->csconv.stages.back().out_channels) +
                              " channels but class_count is " + std::to_string(net.class_count));
    return trace;
}

std::string shape_trace_to_string(const std::vector<ShapeTraceEntry>& trace) {
    std::ostringstream out;
    for (const ShapeTraceEntry& e : trace)
        out << e.name << " (" << layer_kind_name(e.kind) << ") -> " << e.c << "x" << e.h << "x"
            << e.w << "\n";
    return out.str();
}

// ---------------------------------------------------------------------------
// Network documents

namespace {

const njson& require_key(const njson& j, const char* key, const std::string& where) {
    auto it = j.find(key);
    if (it == j.end()) throw FormatError(where + ": missing \"" + key + "\"");
    return *it;
}

int int_field(const njson& j, const char* key, const std::string& where) {
    const njson& v = require_key(j, key, where);
    if (!v.is_number_integer())
        throw FormatError(where + ": \"" + key + "\" must be an integer");
    return v.get<int>();
}

std::vector<int> int_array(const njson& j, const char* key, std::size_t len,
                           const std::string& where) {
    const njson& v = require_key(j, key, where);
    if (!v.is_array() || v.size() != len)
        throw FormatError(where + ": \"" + key + "\" must be an array of " + std::to_string(len) +
                          " integers");
    std::vector<int> out;
    for (const njson& e : v) {
        if (!e.is_number_integer())
            throw FormatError(where + ": \"" + key + "\" must contain only integers");
        out.push_back(e.get<int>());
    }
    return out;
}

bool bool_field(const njson& j, const char* key, bool fallback, const std::string& where) {
    auto it = j.find(key);
    if (it == j.end()) return fallback;
    if (!it->is_boolean()) throw FormatError(where + ": \"" + key + "\" must be a boolean");
    return it->get<bool>();
}

LayerSpec parse_layer(const njson& j, std::size_t index) {
    const std::string where = "layers[" + std::to_string(index) + "]";
    if (!j.is_object()) throw FormatError(where + ": layer entries must be objects");

    LayerSpec layer;
    const njson& kind = require_key(j, "kind", where);
    const njson& name = require_key(j, "name", where);
    if (!kind.is_string() || !name.is_string())
        throw FormatError(where + ": \"kind\" and \"name\" must be strings");
    layer.name = name.get<std::string>();
    const std::string k = kind.get<std::string>();

    if (k == "csconv") {
        layer.kind = LayerKind::csconv;
        const njson& stages = require_key(j, "stages", where);
        if (!stages.is_array() || stages.empty())
            throw FormatError(where + ": \"stages\" must be a non-empty array");
        int sum_h = 0, sum_w = 0;
        for (std::size_t s = 0; s < stages.size(); ++s) {
            const std::string swhere = where + ".stages[" + std::to_string(s) + "]";
            const auto spatial = int_array(stages[s], "spatial", 4, swhere);
            const auto channel = int_array(stages[s], "channel", 2, swhere);
            if (channel[0] != spatial[3])
                throw FormatError(swhere + ": channel filter input " + std::to_string(channel[0]) +
                                  " does not match the spatial filter's " +
                                  std::to_string(spatial[3]) + " output channels");
            SubpatchFilterSpec stage;
            stage.spatial_kh = spatial[0];
            stage.spatial_kw = spatial[1];
            stage.in_channels = spatial[2];
            stage.mid_channels = spatial[3];
            stage.out_channels = channel[1];
            stage.relu_after_each = bool_field(stages[s], "relu", true, swhere);
            layer.csconv.stages.push_back(stage);
            sum_h += stage.spatial_kh - 1;
            sum_w += stage.spatial_kw - 1;
        }
        if (j.contains("patch")) {
            const auto patch = int_array(j, "patch", 2, where);
            layer.csconv.input_h = patch[0];
            layer.csconv.input_w = patch[1];
        } else {
            layer.csconv.input_h = sum_h + 1;
            layer.csconv.input_w = sum_w + 1;
        }
        layer.batch_norm = bool_field(j, "batch_norm", false, where);
        if (j.contains("pad_policy")) {
            const njson& p = j["pad_policy"];
            if (p == "preserve")
                layer.pad_policy = PadPolicy::preserve;
            else if (p == "valid")
                layer.pad_policy = PadPolicy::valid;
            else
                throw FormatError(where + ": pad_policy must be \"preserve\" or \"valid\"");
        }
    } else if (k == "maxpool") {
        layer.kind = LayerKind::maxpool;
        const auto window = int_array(j, "window", 2, where);
        const auto stride = int_array(j, "stride", 2, where);
        layer.pool_kh = window[0];
        layer.pool_kw = window[1];
        layer.pool_sh = stride[0];
        layer.pool_sw = stride[1];
        layer.pool_cover_edges = bool_field(j, "cover_edges", false, where);
    } else if (k == "dropout") {
        layer.kind = LayerKind::dropout;
        const njson& rate = require_key(j, "rate", where);
        if (!rate.is_number()) throw FormatError(where + ": \"rate\" must be a number");
        layer.dropout_rate = rate.get<double>();
    } else if (k == "global_avg_pool") {
        layer.kind = LayerKind::global_avg_pool;
    } else if (k == "softmax_head") {
        layer.kind = LayerKind::softmax_head;
    } else {
        throw FormatError(where + ": unknown layer kind \"" + k + "\"");
    }
    return layer;
}

njson layer_to_json(const LayerSpec& l) {
    njson j;
    j["kind"] = layer_kind_name(l.kind);
    j["name"] = l.name;
    switch (l.kind) {
        case LayerKind::csconv: {
            j["patch"] = {l.csconv.input_h, l.csconv.input_w};
            j["pad_policy"] = l.pad_policy == PadPolicy::preserve ? "preserve" : "valid";
            j["batch_norm"] = l.batch_norm;
            njson stages = njson::array();
            for (const SubpatchFilterSpec& s : l.csconv.stages) {
                njson stage;
                stage["spatial"] = {s.spatial_kh, s.spatial_kw, s.in_channels, s.mid_channels};
                stage["channel"] = {s.mid_channels, s.out_channels};
                stage["relu"] = s.relu_after_each;
                stages.push_back(stage);
            }
            j["stages"] = stages;
            break;
        }
        case LayerKind::maxpool:
            j["window"] = {l.pool_kh, l.pool_kw};
            j["stride"] = {l.pool_sh, l.pool_sw};
            j["cover_edges"] = l.pool_cover_edges;
            break;
        case LayerKind::dropout:
            j["rate"] = l.dropout_rate;
            break;
        case LayerKind::global_avg_pool:
        case LayerKind::softmax_head:
            break;
    }
    return j;
}

njson network_to_json_value(const NetworkSpec& net) {
    njson doc;
    doc["input"] = {net.input.c, net.input.h, net.input.w};
    doc["class_count"] = net.class_count;
    njson layers = njson::array();
    for (const LayerSpec& l : net.layers) layers.push_back(layer_to_json(l));
    doc["layers"] = layers;
    return doc;
}

}  // namespace

NetworkSpec parse_network_json(const std::string& text) {
    njson doc;
    try {
        doc = njson::parse(text);
    } catch (const njson::exception& e) {
        throw FormatError(std::string("network document is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw FormatError("network document must be a JSON object");

    NetworkSpec net;
    const auto input = int_array(doc, "input", 3, "document");
    net.input = {input[0], input[1], input[2]};
    net.class_count = int_field(doc, "class_count", "document");
    const njson& layers = require_key(doc, "layers", "document");
    if (!layers.is_array()) throw FormatError("document: \"layers\" must be an array");
    for (std::size_t i = 0; i < layers.size(); ++i) net.layers.push_back(parse_layer(layers[i], i));
    return net;
}

std::string network_to_json(const NetworkSpec& net, bool pretty) {
    return network_to_json_value(net).dump(pretty ? 2 : -1);
}

std::string canonical_network_json(const NetworkSpec& net) {
    return network_to_json_value(net).dump();
}

std::array<std::uint8_t, 32> network_fingerprint(const NetworkSpec& net) {
    return sha256(canonical_network_json(net));
}

// ---------------------------------------------------------------------------
// Presets

namespace {

constexpr const char* kPresetS = R"({
  "input": [3, 32, 32],
  "class_count": 10,
  "layers": [
    {"kind": "csconv", "name": "c1", "patch": [5, 5], "pad_policy": "preserve", "batch_norm": true,
     "stages": [{"spatial": [3, 3, 3, 192], "channel": [192, 96]},
                {"spatial": [3, 3, 96, 192], "channel": [192, 96]}]},
    {"kind": "maxpool", "name": "p1", "window": [3, 3], "stride": [2, 2], "cover_edges": true},
    {"kind": "dropout", "name": "d1", "rate": 0.5},
    {"kind": "csconv", "name": "c2", "patch": [5, 5], "pad_policy": "preserve", "batch_norm": true,
     "stages": [{"spatial": [3, 3, 96, 192], "channel": [192, 96]},
                {"spatial": [3, 3, 96, 192], "channel": [192, 96]}]},
    {"kind": "maxpool", "name": "p2", "window": [3, 3], "stride": [2, 2], "cover_edges": true},
    {"kind": "dropout", "name": "d2", "rate": 0.5},
    {"kind": "csconv", "name": "c3", "patch": [5, 5], "pad_policy": "preserve", "batch_norm": true,
     "stages": [{"spatial": [3, 3, 96, 192], "channel": [192, 96]},
                {"spatial": [3, 3, 96, 192], "channel": [192, 10]}]},
    {"kind": "global_avg_pool", "name": "gap"},
    {"kind": "softmax_head", "name": "head"}
  ]
})";

constexpr const char* kPresetM = R"({
  "input": [3, 32, 32],
  "class_count": 10,
  "layers": [
    {"kind": "csconv", "name": "c1", "patch": [5, 5], "pad_policy": "preserve", "batch_norm": true,
     "stages": [{"spatial": [3, 3, 3, 192], "channel": [192, 192]},
                {"spatial": [3, 3, 192, 192], "channel": [192, 192]}]},
    {"kind": "maxpool", "name": "p1", "window": [3, 3], "stride": [2, 2], "cover_edges": true},
    {"kind": "dropout", "name": "d1", "rate": 0.5},
    {"kind": "csconv", "name": "c2", "patch": [5, 5], "pad_policy": "preserve", "batch_norm": true,
     "stages": [{"spatial": [3, 3, 192, 192], "channel": [192, 192]},
                {"spatial": [3, 3, 192, 192], "channel": [192, 192]}]},
    {"kind": "maxpool", "name": "p2", "window": [3, 3], "stride": [2, 2], "cover_edges": true},
    {"kind": "dropout", "name": "d2", "rate": 0.5},
    {"kind": "csconv", "name": "c3", "patch": [5, 5], "pad_policy": "preserve", "batch_norm": true,
     "stages": [{"spatial": [3, 3, 192, 192], "channel": [192, 192]},
                {"spatial": [3, 3, 192, 192], "channel": [192, 10]}]},
    {"kind": "global_avg_pool", "name": "gap"},
    {"kind": "softmax_head", "name": "head"}
  ]
})";

constexpr const char* kPresetL = R"({
  "input": [3, 32, 32],
  "class_count": 10,
  "layers": [
    {"kind": "csconv", "name": "c1", "patch": [5, 5], "pad_policy": "preserve", "batch_norm": true,
     "stages": [{"spatial": [3, 3, 3, 224], "channel": [224, 224]},
                {"spatial": [3, 3, 224, 224], "channel": [224, 224]}]},
    {"kind": "maxpool", "name": "p1", "window": [3, 3], "stride": [2, 2], "cover_edges": true},
    {"kind": "dropout", "name": "d1", "rate": 0.5},
    {"kind": "csconv", "name": "c2", "patch": [5, 5], "pad_policy": "preserve", "batch_norm": true,
     "stages": [{"spatial": [3, 3, 224, 224], "channel": [224, 224]},
                {"spatial": [3, 3, 224, 224], "channel": [224, 224]}]},
    {"kind": "maxpool", "name": "p2", "window": [3, 3], "stride": [2, 2], "cover_edges": true},
    {"kind": "dropout", "name": "d2", "rate": 0.5},
    {"kind": "csconv", "name": "c3", "patch": [5, 5], "pad_policy": "preserve", "batch_norm": true,
     "stages": [{"spatial": [3, 3, 224, 224], "channel": [224, 224]},
                {"spatial": [3, 3, 224, 224], "channel": [224, 224]}]},
    {"kind": "csconv", "name": "c4", "patch": [5, 5], "pad_policy": "preserve", "batch_norm": true,
     "stages": [{"spatial": [3, 3, 224, 224], "channel": [224, 224]},
                {"spatial": [3, 3, 224, 224], "channel": [224, 10]}]},
    {"kind": "global_avg_pool", "name": "gap"},
    {"kind": "softmax_head", "name": "head"}
  ]
})";

constexpr const char* kPresetTiny = R"({
  "input": [1, 28, 28],
  "class_count": 10,
  "layers": [
    {"kind": "csconv", "name": "c1", "patch": [5, 5], "pad_policy": "preserve", "batch_norm": true,
     "stages": [{"spatial": [3, 3, 1, 32], "channel": [32, 32]},
                {"spatial": [3, 3, 32, 32], "channel": [32, 32]}]},
    {"kind": "maxpool", "name": "p1", "window": [3, 3], "stride": [2, 2], "cover_edges": true},
    {"kind": "csconv", "name": "c2", "patch": [5, 5], "pad_policy": "preserve", "batch_norm": true,
     "stages": [{"spatial": [3, 3, 32, 32], "channel": [32, 32]},
                {"spatial": [3, 3, 32, 32], "channel": [32, 10]}]},
    {"kind": "global_avg_pool", "name": "gap"},
    {"kind": "softmax_head", "name": "head"}
  ]
})";

}  // namespace

std::vector<std::string> preset_names() {
    return {"csnet_s", "csnet_m", "csnet_l", "csnet_tiny"};
}

NetworkSpec preset(const std::string& name, const PresetOptions& options) {
    const char* doc = nullptr;
    if (name == "csnet_s") doc = kPresetS;
    else if (name == "csnet_m") doc = kPresetM;
    else if (name == "csnet_l") doc = kPresetL;
    else if (name == "csnet_tiny") doc = kPresetTiny;
    if (!doc) {
        std::string known;
        for (const std::string& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
        throw ValidationError("unknown preset '" + name + "' (known: " + known + ")");
    }

    NetworkSpec net = parse_network_json(doc);
    if (options.class_count > 0) {
        net.class_count = options.class_count;
        for (auto it = net.layers.rbegin(); it != net.layers.rend(); ++it)
            if (it->kind == LayerKind::csconv) {
                it->csconv.stages.back().out_channels = options.class_count;
                break;
            }
    }
    if (options.input.c > 0 && options.input.h > 0 && options.input.w > 0) {
        net.input = options.input;
        for (LayerSpec& l : net.layers)
            if (l.kind == LayerKind::csconv) {
                l.csconv.stages.front().in_channels = options.input.c;
                break;
            }
    }
    validate(net);
    return net;
}

// ---------------------------------------------------------------------------
// Parameters

template <typename T>
Tensor<T>& ParamStore<T>::add(const std::string& name, Tensor<T> value) {
    if (by_name_.count(name)) throw Error("parameter '" + name + "' already exists");
    order_.push_back(name);
    return by_name_.emplace(name, std::move(value)).first->second;
}

template <typename T>
Tensor<T>& ParamStore<T>::get(const std::string& name) {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw Error("unknown parameter '" + name + "'");
    return it->second;
}

template <typename T>
const Tensor<T>& ParamStore<T>::get(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw Error("unknown parameter '" + name + "'");
    return it->second;
}

namespace {

std::string stage_prefix(const LayerSpec& layer, std::size_t stage) {
    return layer.name + ".s" + std::to_string(stage);
}

}  // namespace

template <typename T>
ModelParams<T> init_params(const NetworkSpec& net, Rng& rng) {
    validate(net);
    ModelParams<T> mp;
    for (const LayerSpec& l : net.layers) {
        if (l.kind != LayerKind::csconv) continue;
        for (std::size_t j = 0; j < l.csconv.stages.size(); ++j) {
            const SubpatchFilterSpec& s = l.csconv.stages[j];
            const std::string p = stage_prefix(l, j);

            Tensor<T> sw({s.mid_channels, s.in_channels, s.spatial_kh, s.spatial_kw});
            const double s_std =
                std::sqrt(2.0 / (static_cast<double>(s.in_channels) * s.spatial_kh * s.spatial_kw));
            for (std::int64_t i = 0; i < sw.size(); ++i)
                sw.data()[i] = static_cast<T>(rng.gaussian() * s_std);
            mp.params.add(p + ".spatial.w", std::move(sw));
            mp.params.add(p + ".spatial.b", Tensor<T>({1, s.mid_channels, 1, 1}));
            if (l.batch_norm) {
                mp.params.add(p + ".bn1.gamma", Tensor<T>({1, s.mid_channels, 1, 1}, T(1)));
                mp.params.add(p + ".bn1.beta", Tensor<T>({1, s.mid_channels, 1, 1}));
                mp.running.add(p + ".bn1.mean", Tensor<T>({1, s.mid_channels, 1, 1}));
                mp.running.add(p + ".bn1.var", Tensor<T>({1, s.mid_channels, 1, 1}, T(1)));
            }

            Tensor<T> cw({s.out_channels, s.mid_channels, 1, 1});
            const double c_std = std::sqrt(2.0 / static_cast<double>(s.mid_channels));
            for (std::int64_t i = 0; i < cw.size(); ++i)
                cw.data()[i] = static_cast<T>(rng.gaussian() * c_std);
            mp.params.add(p + ".channel.w", std::move(cw));
            mp.params.add(p + ".channel.b", Tensor<T>({1, s.out_channels, 1, 1}));
            if (l.batch_norm) {
                mp.params.add(p + ".bn2.gamma", Tensor<T>({1, s.out_channels, 1, 1}, T(1)));
                mp.params.add(p + ".bn2.beta", Tensor<T>({1, s.out_channels, 1, 1}));
                mp.running.add(p + ".bn2.mean", Tensor<T>({1, s.out_channels, 1, 1}));
                mp.running.add(p + ".bn2.var", Tensor<T>({1, s.out_channels, 1, 1}, T(1)));
            }
        }
    }
    return mp;
}

// ---------------------------------------------------------------------------
// Execution

namespace {

template <typename T>
ConvWeights<T> conv_weights_view(const ParamStore<T>& params, const std::string& prefix) {
    ConvWeights<T> w;
    w.kernel = params.get(prefix + ".w");
    w.bias = params.get(prefix + ".b");
    return w;
}

template <typename T>
Tensor<T> run_forward(const NetworkSpec& net, const ModelParams<T>& state, const Tensor<T>& batch,
                      ExecMode mode, Rng* rng, ForwardCache<T>* cache,
                      ParamStore<T>* running_mut) {
    validate(net);
    const Shape4& in = batch.shape();
    if (in.c != net.input.c || in.h != net.input.h || in.w != net.input.w)
        throw ShapeError("batch shape " + in.str() + " does not match the network input " +
                         std::to_string(net.input.c) + "x" + std::to_string(net.input.h) + "x" +
                         std::to_string(net.input.w));

    if (cache) {
        cache->mode = mode;
        cache->layers.assign(net.layers.size(), LayerCache<T>{});
    }

    Tensor<T> x = batch;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const LayerSpec& l = net.layers[i];
        LayerCache<T>* lc = cache ? &cache->layers[i] : nullptr;
        switch (l.kind) {
            case LayerKind::csconv: {
                for (std::size_t j = 0; j < l.csconv.stages.size(); ++j) {
                    const SubpatchFilterSpec& s = l.csconv.stages[j];
                    const std::string p = stage_prefix(l, j);
                    const auto [ph, pw] = stage_padding(s, l.pad_policy);

                    Tensor<T> pre = conv_forward(x, conv_weights_view(state.params, p + ".spatial"),
                                                 ph, pw);
                    if (lc) lc->inputs.push_back(std::move(x));

                    Tensor<T> norm;
                    BatchNormCache<T> bn_cache;
                    if (l.batch_norm) {
                        const Tensor<T>& gamma = state.params.get(p + ".bn1.gamma");
                        const Tensor<T>& beta = state.params.get(p + ".bn1.beta");
                        if (mode == ExecMode::inference) {
                            norm = batchnorm_forward_inference(
                                pre, gamma, beta, state.running.get(p + ".bn1.mean"),
                                state.running.get(p + ".bn1.var"), static_cast<T>(kBnEps));
                        } else {
                            Tensor<T>* rm = running_mut ? &running_mut->get(p + ".bn1.mean") : nullptr;
                            Tensor<T>* rv = running_mut ? &running_mut->get(p + ".bn1.var") : nullptr;
                            norm = batchnorm_forward_train(pre, gamma, beta, static_cast<T>(kBnEps),
                                                           lc ? &bn_cache : nullptr, rm, rv,
                                                           static_cast<T>(kBnMomentum));
                        }
                    } else {
                        norm = pre;
                    }
                    Tensor<T> mid = s.relu_after_each ? relu_forward(norm) : norm;
                    if (lc) {
                        lc->spatial_pre.push_back(std::move(pre));
                        lc->spatial_norm.push_back(std::move(norm));
                        lc->bn1.push_back(std::move(bn_cache));
                    }

                    Tensor<T> cpre =
                        conv_forward(mid, conv_weights_view(state.params, p + ".channel"));
                    if (lc) lc->mid.push_back(std::move(mid));

                    Tensor<T> cnorm;
                    BatchNormCache<T> bn2_cache;
                    if (l.batch_norm) {
                        const Tensor<T>& gamma = state.params.get(p + ".bn2.gamma");
                        const Tensor<T>& beta = state.params.get(p + ".bn2.beta");
                        if (mode == ExecMode::inference) {
                            cnorm = batchnorm_forward_inference(
                                cpre, gamma, beta, state.running.get(p + ".bn2.mean"),
                                state.running.get(p + ".bn2.var"), static_cast<T>(kBnEps));
                        } else {
                            Tensor<T>* rm = running_mut ? &running_mut->get(p + ".bn2.mean") : nullptr;
                            Tensor<T>* rv = running_mut ? &running_mut->get(p + ".bn2.var") : nullptr;
                            cnorm = batchnorm_forward_train(cpre, gamma, beta,
                                                            static_cast<T>(kBnEps),
                                                            lc ? &bn2_cache : nullptr, rm, rv,
                                                            static_cast<T>(kBnMomentum));
                        }
                    } else {
                        cnorm = cpre;
                    }
                    x = s.relu_after_each ? relu_forward(cnorm) : cnorm;
                    if (lc) {
                        lc->channel_pre.push_back(std::move(cpre));
                        lc->channel_norm.push_back(std::move(cnorm));
                        lc->bn2.push_back(std::move(bn2_cache));
                    }
                }
                break;
            }
            case LayerKind::maxpool: {
                MaxPoolResult<T> r = maxpool_forward(x, l.pool_kh, l.pool_kw, l.pool_sh, l.pool_sw,
                                                     l.pool_cover_edges);
                if (lc) {
                    lc->pool_in = x.shape();
                    lc->pool.argmax = std::move(r.argmax);
                }
                x = std::move(r.output);
                if (lc) lc->pool.output = x;  // kept for the backward shape check
                break;
            }
            case LayerKind::dropout: {
                if (mode == ExecMode::train && l.dropout_rate > 0.0) {
                    DropoutResult<T> r = dropout_forward(x, l.dropout_rate, true, *rng);
                    if (lc) lc->dropout_mask = std::move(r.mask);
                    x = std::move(r.output);
                }
                break;
            }
            case LayerKind::global_avg_pool: {
                if (lc) lc->gap_in = x.shape();
                x = global_avg_pool_forward(x);
                break;
            }
            case LayerKind::softmax_head:
                break;
        }
    }
    return x;
}

}  // namespace

template <typename T>
Tensor<T> forward_train(const NetworkSpec& net, ModelParams<T>& state, const Tensor<T>& batch,
                        Rng& rng, ForwardCache<T>* cache) {
    return run_forward<T>(net, state, batch, ExecMode::train, &rng, cache, &state.running);
}

template <typename T>
Tensor<T> forward_inference(const NetworkSpec& net, const ModelParams<T>& state,
                            const Tensor<T>& batch) {
    return run_forward<T>(net, state, batch, ExecMode::inference, nullptr, nullptr, nullptr);
}

template <typename T>
Tensor<T> forward_gradcheck(const NetworkSpec& net, const ModelParams<T>& state,
                            const Tensor<T>& batch, ForwardCache<T>* cache) {
    return run_forward<T>(net, state, batch, ExecMode::gradcheck, nullptr, cache, nullptr);
}

template <typename T>
BackwardResult<T> backward(const NetworkSpec& net, const ModelParams<T>& state,
                           const ForwardCache<T>& cache, const Tensor<T>& grad_logits) {
    if (cache.mode == ExecMode::inference)
        throw Error("backward requires a cache from a train or gradcheck forward pass");
    if (cache.layers.size() != net.layers.size())
        throw Error("forward cache does not match the network's layer count");

    BackwardResult<T> result;
    for (const std::string& name : state.params.names())
        result.grads.add(name, Tensor<T>(state.params.get(name).shape()));

    Tensor<T> g = grad_logits;
    for (std::size_t ri = 0; ri < net.layers.size(); ++ri) {
        const std::size_t i = net.layers.size() - 1 - ri;
        const LayerSpec& l = net.layers[i];
        const LayerCache<T>& lc = cache.layers[i];
        switch (l.kind) {
            case LayerKind::csconv: {
                for (std::size_t rj = 0; rj < l.csconv.stages.size(); ++rj) {
                    const std::size_t j = l.csconv.stages.size() - 1 - rj;
                    const SubpatchFilterSpec& s = l.csconv.stages[j];
                    const std::string p = stage_prefix(l, j);
                    const auto [ph, pw] = stage_padding(s, l.pad_policy);

                    if (s.relu_after_each) g = relu_backward(lc.channel_norm[j], g);
                    if (l.batch_norm) {
                        BatchNormGrads<T> bg =
                            batchnorm_backward(g, state.params.get(p + ".bn2.gamma"), lc.bn2[j]);
                        result.grads.get(p + ".bn2.gamma") = std::move(bg.gamma);
                        result.grads.get(p + ".bn2.beta") = std::move(bg.beta);
                        g = std::move(bg.input);
                    }
                    ConvGrads<T> gc =
                        conv_backward(lc.mid[j], conv_weights_view(state.params, p + ".channel"), g);
                    result.grads.get(p + ".channel.w") = std::move(gc.weights.kernel);
                    result.grads.get(p + ".channel.b") = std::move(gc.weights.bias);
                    g = std::move(gc.input);

                    if (s.relu_after_each) g = relu_backward(lc.spatial_norm[j], g);
                    if (l.batch_norm) {
                        BatchNormGrads<T> bg =
                            batchnorm_backward(g, state.params.get(p + ".bn1.gamma"), lc.bn1[j]);
                        result.grads.get(p + ".bn1.gamma") = std::move(bg.gamma);
                        result.grads.get(p + ".bn1.beta") = std::move(bg.beta);
                        g = std::move(bg.input);
                    }
                    ConvGrads<T> gs = conv_backward(
                        lc.inputs[j], conv_weights_view(state.params, p + ".spatial"), g, ph, pw);
                    result.grads.get(p + ".spatial.w") = std::move(gs.weights.kernel);
                    result.grads.get(p + ".spatial.b") = std::move(gs.weights.bias);
                    g = std::move(gs.input);
                }
                break;
            }
            case LayerKind::maxpool:
                g = maxpool_backward(lc.pool_in, lc.pool, g);
                break;
            case LayerKind::dropout:
                g = dropout_backward(lc.dropout_mask, g);
                break;
            case LayerKind::global_avg_pool:
                g = global_avg_pool_backward(lc.gap_in, g);
                break;
            case LayerKind::softmax_head:
                break;
        }
    }
    result.grad_input = std::move(g);
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'C', 'S', 'N', 'E', 'T', 'C', 'K', 'P'};

template <typename T>
constexpr std::uint8_t dtype_code() {
    if constexpr (std::is_same_v<T, float>) return 1;
    else if constexpr (std::is_same_v<T, double>) return 2;
    else if constexpr (std::is_same_v<T, std::uint64_t>) return 3;
    else return 4;  // std::uint8_t
}

struct ByteWriter {
    std::string bytes;

    void u8(std::uint8_t v) { bytes.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void raw(const void* p, std::size_t n) {
        bytes.append(static_cast<const char*>(p), n);
    }
    template <typename T>
    void scalars(const T* p, std::size_t n) {
        if constexpr (sizeof(T) == 1) {
            raw(p, n);
        } else {
            for (std::size_t i = 0; i < n; ++i) {
                if constexpr (sizeof(T) == 4) {
                    u32(std::bit_cast<std::uint32_t>(p[i]));
                } else {
                    u64(std::bit_cast<std::uint64_t>(p[i]));
                }
            }
        }
    }
};

template <typename T>
void write_tensor_record(ByteWriter& w, const std::string& name, const Tensor<T>& t) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.raw(name.data(), name.size());
    w.u8(dtype_code<T>());
    w.u8(4);
    const Shape4& s = t.shape();
    w.u32(static_cast<std::uint32_t>(s.n));
    w.u32(static_cast<std::uint32_t>(s.c));
    w.u32(static_cast<std::uint32_t>(s.h));
    w.u32(static_cast<std::uint32_t>(s.w));
    w.scalars(t.data(), static_cast<std::size_t>(t.size()));
}

struct ByteReader {
    const std::uint8_t* p;
    std::size_t len;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > len) throw FormatError("checkpoint is truncated or corrupt");
    }
    std::uint8_t u8() {
        need(1);
        return p[pos++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(p[pos++]) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(p[pos++]) << (8 * i);
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(p + pos), n);
        pos += n;
        return s;
    }
    template <typename T>
    void scalars(T* out, std::size_t n) {
        if constexpr (sizeof(T) == 1) {
            need(n);
            std::memcpy(out, p + pos, n);
            pos += n;
        } else {
            for (std::size_t i = 0; i < n; ++i) {
                if constexpr (sizeof(T) == 4) {
                    out[i] = std::bit_cast<T>(u32());
                } else {
                    out[i] = std::bit_cast<T>(u64());
                }
            }
        }
    }
};

}  // namespace

template <typename T>
void save_checkpoint(const std::string& path, const NetworkSpec& net, const ModelParams<T>& state,
                     const ParamStore<T>& opt_state, const CheckpointMeta& meta) {
    ByteWriter w;
    w.raw(kMagic, sizeof(kMagic));
    w.u32(kCheckpointVersion);
    const auto fp = network_fingerprint(net);
    w.raw(fp.data(), fp.size());

    for (const std::string& name : state.params.names())
        write_tensor_record(w, "param/" + name, state.params.get(name));
    for (const std::string& name : state.running.names())
        write_tensor_record(w, "running/" + name, state.running.get(name));
    for (const std::string& name : opt_state.names())
        write_tensor_record(w, "opt/" + name, opt_state.get(name));

    const std::string epoch_name = "meta/epoch";
    w.u32(static_cast<std::uint32_t>(epoch_name.size()));
    w.raw(epoch_name.data(), epoch_name.size());
    w.u8(dtype_code<std::uint64_t>());
    w.u8(0);
    w.u64(meta.epoch);

    const std::string rng_name = "meta/rng";
    w.u32(static_cast<std::uint32_t>(rng_name.size()));
    w.raw(rng_name.data(), rng_name.size());
    w.u8(dtype_code<std::uint8_t>());
    w.u8(1);
    w.u32(static_cast<std::uint32_t>(meta.rng_state.size()));
    w.raw(meta.rng_state.data(), meta.rng_state.size());

    w.u64(static_cast<std::uint64_t>(w.bytes.size()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    out.write(w.bytes.data(), static_cast<std::streamsize>(w.bytes.size()));
    if (!out) throw Error("failed to write checkpoint '" + path + "'");
}

template <typename T>
CheckpointMeta load_checkpoint(const std::string& path, const NetworkSpec& net,
                               ModelParams<T>& state, ParamStore<T>& opt_state) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint '" + path + "'");
    std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (blob.size() < sizeof(kMagic) + 4 + 32 + 8)
        throw FormatError("checkpoint is truncated or corrupt");
    ByteReader r{reinterpret_cast<const std::uint8_t*>(blob.data()), blob.size() - 8};

    if (std::memcmp(blob.data(), kMagic, sizeof(kMagic)) != 0)
        throw FormatError("not a checkpoint file (bad magic)");
    r.pos = sizeof(kMagic);
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version) +
                          " (expected " + std::to_string(kCheckpointVersion) + ")");
    const std::string fp = r.str(32);
    const auto want_fp = network_fingerprint(net);
    if (std::memcmp(fp.data(), want_fp.data(), 32) != 0)
        throw ValidationError("checkpoint fingerprint does not match this network");

    ByteReader tail{reinterpret_cast<const std::uint8_t*>(blob.data()) + blob.size() - 8, 8};
    if (tail.u64() != blob.size() - 8) throw FormatError("checkpoint length checksum mismatch");

    CheckpointMeta meta;
    std::set<std::string> filled;
    while (r.pos < r.len) {
        const std::uint32_t name_len = r.u32();
        if (name_len > 4096) throw FormatError("checkpoint record name is implausibly long");
        const std::string name = r.str(name_len);
        const std::uint8_t dtype = r.u8();
        const std::uint8_t rank = r.u8();
        std::vector<std::uint32_t> dims;
        for (std::uint8_t d = 0; d < rank; ++d) dims.push_back(r.u32());

        if (name == "meta/epoch") {
            if (dtype != dtype_code<std::uint64_t>() || rank != 0)
                throw FormatError("malformed meta/epoch record");
            meta.epoch = r.u64();
            continue;
        }
        if (name == "meta/rng") {
            if (dtype != dtype_code<std::uint8_t>() || rank != 1)
                throw FormatError("malformed meta/rng record");
            meta.rng_state = r.str(dims[0]);
            continue;
        }

        if (dtype != dtype_code<T>())
            throw FormatError("record '" + name + "' has dtype code " + std::to_string(dtype) +
                              " but this model stores code " + std::to_string(dtype_code<T>()));
        if (rank != 4) throw FormatError("record '" + name + "' must be rank 4");
        const Shape4 shape{dims[0], dims[1], dims[2], dims[3]};

        Tensor<T>* dst = nullptr;
        if (name.rfind("param/", 0) == 0) {
            dst = &state.params.get(name.substr(6));
        } else if (name.rfind("running/", 0) == 0) {
            dst = &state.running.get(name.substr(8));
        } else if (name.rfind("opt/", 0) == 0) {
            const std::string base = name.substr(4);
            dst = opt_state.contains(base) ? &opt_state.get(base)
                                           : &opt_state.add(base, Tensor<T>(shape));
        } else {
            throw FormatError("unknown checkpoint record '" + name + "'");
        }
        if (!(dst->shape() == shape))
            throw FormatError("record '" + name + "' shape " + shape.str() +
                              " does not match the model's " + dst->shape().str());
        r.scalars(dst->data(), static_cast<std::size_t>(dst->size()));
        filled.insert(name);
    }
    if (r.pos != r.len) throw FormatError("checkpoint is truncated or corrupt");

    for (const std::string& name : state.params.names())
        if (!filled.count("param/" + name))
            throw FormatError("checkpoint is missing parameter '" + name + "'");
    for (const std::string& name : state.running.names())
        if (!filled.count("running/" + name))
            throw FormatError("checkpoint is missing running statistic '" + name + "'");
    return meta;
}

// ---------------------------------------------------------------------------

#define CSNET_INSTANTIATE_MODEL(T)                                                              \
    template class ParamStore<T>;                                                               \
    template ModelParams<T> init_params<T>(const NetworkSpec&, Rng&);                           \
    template Tensor<T> forward_train<T>(const NetworkSpec&, ModelParams<T>&, const Tensor<T>&,  \
                                        Rng&, ForwardCache<T>*);                               \
    template Tensor<T> forward_inference<T>(const NetworkSpec&, const ModelParams<T>&,          \
                                            const Tensor<T>&);                                 \
    template Tensor<T> forward_gradcheck<T>(const NetworkSpec&, const ModelParams<T>&,          \
                                            const Tensor<T>&, ForwardCache<T>*);               \
    template BackwardResult<T> backward<T>(const NetworkSpec&, const ModelParams<T>&,           \
                                           const ForwardCache<T>&, const Tensor<T>&);          \
    template void save_checkpoint<T>(const std::string&, const NetworkSpec&,                    \
                                     const ModelParams<T>&, const ParamStore<T>&,              \
                                     const CheckpointMeta&);                                   \
    template CheckpointMeta load_checkpoint<T>(const std::string&, const NetworkSpec&,          \
                                               ModelParams<T>&, ParamStore<T>&);

CSNET_INSTANTIATE_MODEL(float)
CSNET_INSTANTIATE_MODEL(double)

}  // namespace csnet
