#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "csnet/model.hpp"

namespace csnet {

struct LayerParamCount {
    std::string name;
    std::int64_t weights = 0;
    std::int64_t biases = 0;
    std::int64_t norm = 0;  // batch-norm scale/shift parameters
};

struct ParamReport {
    std::vector<LayerParamCount> per_layer;
    std::int64_t total_weights = 0;
    std::int64_t total_with_bias = 0;
    std::int64_t total_with_norm = 0;

    void add(LayerParamCount entry);
};

/// Weight count of a single conventional kh x kw convolution from n1 to n2
/// channels (weights only, no bias).
std::int64_t count_conventional(int kh, int kw, int n1, int n2);

/// Structural parameter count of one cascade: per stage, the
/// h*w*N*M spatial kernel plus the M*Q channel kernel, with one bias per
/// filter output and, when batch_norm is set, scale/shift pairs after both
/// filters. One per_layer entry per stage.
ParamReport count_csconv(const CsconvSpec& spec, bool batch_norm = false);

/// Signed weight saving of a cascade over one conventional kh x kw filter
/// mapping n1 to n2 channels: count_conventional minus the cascade's weights.
/// Positive means the cascade is cheaper. The cascade must consume the same
/// kh x kw receptive field and the same channel endpoints.
std::int64_t compare_costs(int kh, int kw, int n1, int n2, const CsconvSpec& spec);

/// Sums count_csconv over every csconv layer of a network; pooling, dropout,
/// and head layers appear with zero counts.
ParamReport count_network(const NetworkSpec& net);

/// The two reference ways to spend channels in a three-stage (3x3, 1x1)
/// cascade over a 7x7 patch. The first widens to n2 immediately and runs n2
/// everywhere after (9*n1*n2 + 21*n2^2 weights); the second stays at n1 and
/// widens only at the final channel filter (29*n1^2 + n1*n2 weights).
CsconvSpec reference_cascade_widen_first(int n1, int n2);
CsconvSpec reference_cascade_widen_last(int n1, int n2);

std::string report_to_text(const ParamReport& report);
std::string report_to_json(const ParamReport& report);

/// Intended approximate weight count a preset was sized for, or 0 when the
/// preset has no stated budget. Counted weights can deviate; deviations above
/// a few percent are worth flagging in reports.
std::int64_t preset_design_budget(const std::string& preset_name);

}  // namespace csnet
