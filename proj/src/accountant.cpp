#include "csnet/accountant.hpp"

#include "json.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

namespace csnet {

void ParamReport::add(LayerParamCount entry) {
    total_weights += entry.weights;
    total_with_bias += entry.weights + entry.biases;
    total_with_norm += entry.weights + entry.biases + entry.norm;
    per_layer.push_back(std::move(entry));
}

std::int64_t count_conventional(int kh, int kw, int n1, int n2) {
    if (kh < 1 || kw < 1 || n1 < 1 || n2 < 1)
        throw ValidationError("count_conventional: all arguments must be positive");
    return std::int64_t(kh) * kw * n1 * n2;
}

ParamReport count_csconv(const CsconvSpec& spec, bool batch_norm) {
    plan_cascade(spec);
    ParamReport report;
    for (std::size_t i = 0; i < spec.stages.size(); ++i) {
        const SubpatchFilterSpec& s = spec.stages[i];
        LayerParamCount entry;
        entry.name = "s" + std::to_string(i);
        entry.weights = std::int64_t(s.spatial_kh) * s.spatial_kw * s.in_channels * s.mid_channels +
                        std::int64_t(s.mid_channels) * s.out_channels;
        entry.biases = std::int64_t(s.mid_channels) + s.out_channels;
        if (batch_norm) entry.norm = 2 * (std::int64_t(s.mid_channels) + s.out_channels);
        report.add(std::move(entry));
    }
    return report;
}

std::int64_t compare_costs(int kh, int kw, int n1, int n2, const CsconvSpec& spec) {
    if (spec.input_h != kh || spec.input_w != kw)
        throw ValidationError("compare_costs: the cascade consumes a " +
                              std::to_string(spec.input_h) + "x" + std::to_string(spec.input_w) +
                              " patch but the conventional filter is " + std::to_string(kh) + "x" +
                              std::to_string(kw));
    if (spec.stages.empty() || spec.stages.front().in_channels != n1 ||
        spec.stages.back().out_channels != n2)
        throw ValidationError("compare_costs: the cascade must map " + std::to_string(n1) + " to " +
                              std::to_string(n2) + " channels");
    return count_conventional(kh, kw, n1, n2) - count_csconv(spec).total_weights;
}

ParamReport count_network(const NetworkSpec& net) {
    ParamReport report;
    if (net.layers.empty()) return report;
    validate(net);
    for (const LayerSpec& l : net.layers) {
        LayerParamCount entry;
        entry.name = l.name;
        if (l.kind == LayerKind::csconv) {
            const ParamReport inner = count_csconv(l.csconv, l.batch_norm);
            entry.weights = inner.total_weights;
            entry.biases = inner.total_with_bias - inner.total_weights;
            entry.norm = inner.total_with_norm - inner.total_with_bias;
        }
        report.add(std::move(entry));
    }
    return report;
}

CsconvSpec reference_cascade_widen_first(int n1, int n2) {
    SubpatchFilterSpec lead{3, 3, n1, n2, n2, true};
    SubpatchFilterSpec rest{3, 3, n2, n2, n2, true};
    return CsconvSpec{7, 7, {lead, rest, rest}};
}

CsconvSpec reference_cascade_widen_last(int n1, int n2) {
    SubpatchFilterSpec body{3, 3, n1, n1, n1, true};
    SubpatchFilterSpec tail{3, 3, n1, n1, n2, true};
    return CsconvSpec{7, 7, {body, body, tail}};
}

std::string report_to_text(const ParamReport& report) {
    std::size_t name_width = 5;  // "layer"
    for (const LayerParamCount& e : report.per_layer)
        name_width = std::max(name_width, e.name.size());

    std::ostringstream out;
    out << std::left << std::setw(static_cast<int>(name_width + 2)) << "layer" << std::right
        << std::setw(12) << "weights" << std::setw(10) << "biases" << std::setw(8) << "norm"
        << "\n";
    for (const LayerParamCount& e : report.per_layer)
        out << std::left << std::setw(static_cast<int>(name_width + 2)) << e.name << std::right
            << std::setw(12) << e.weights << std::setw(10) << e.biases << std::setw(8) << e.norm
            << "\n";
    out << "totals: weights " << report.total_weights << ", with biases "
        << report.total_with_bias << ", with normalization " << report.total_with_norm << "\n";
    return out.str();
}

std::string report_to_json(const ParamReport& report) {
    nlohmann::json doc;
    nlohmann::json layers = nlohmann::json::array();
    for (const LayerParamCount& e : report.per_layer) {
        nlohmann::json entry;
        entry["name"] = e.name;
        entry["weights"] = e.weights;
        entry["biases"] = e.biases;
        entry["norm"] = e.norm;
        layers.push_back(entry);
    }
    doc["layers"] = layers;
    doc["total_weights"] = report.total_weights;
    doc["total_with_bias"] = report.total_with_bias;
    doc["total_with_norm"] = report.total_with_norm;
    return doc.dump(2);
}


std::int64_t preset_design_budget(const std::string& preset_name) {
    if (preset_name == "csnet_s") return 960000;
    if (preset_name == "csnet_m") return 1600000;
    if (preset_name == "csnet_l") return 3500000;
    return 0;
}

}  // namespace csnet
