#pragma once

#include <functional>
#include <string>
#include <vector>

#include "csnet/model.hpp"

namespace csnet {

struct GradCheckOptions {
    std::int64_t batch = 2;
    std::uint64_t seed = 1;
    /// Seeds tried until the ReLU preactivations clear the kink margin. Each
    /// failed attempt costs one forward pass.
    int seed_tries = 120;
    double step = 1e-5;
    double tolerance = 1e-4;
    double kink_margin = 1e-3;
    /// Test hook: mutates the analytic gradients before comparison so the
    /// detector itself can be exercised. Not reachable from the CLI.
    std::function<void(ParamStore<double>&)> tamper;
};

enum class GradCheckMethod {
    finite_difference,
    /// Convolution biases under batch norm: normalization cancels constant
    /// shifts, so the analytic gradient must vanish outright.
    null_gradient,
};

inline constexpr double kNullGradientTolerance = 1e-8;

struct GradCheckEntry {
    std::string name;
    GradCheckMethod method = GradCheckMethod::finite_difference;
    /// Worst relative error against central differences, or the largest
    /// absolute analytic component for null_gradient entries.
    double worst = 0.0;
    bool passed = false;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;  // one per trainable tensor, store order
    std::uint64_t seed_used = 0;
    double kink_margin = 0.0;
    double worst_relative_error = 0.0;
    bool passed = false;
};

/// Shrinks every hidden channel width to at most `cap`, keeping the stage
/// chain consistent and the emitted class count intact.
NetworkSpec cap_channels(const NetworkSpec& net, int cap);

/// Whole-network 64-bit finite-difference check of backward() against central
/// differences of the loss. Biases and batch-norm shifts are randomized first
/// so no preactivation sits on a ReLU kink.
GradCheckReport gradcheck_network(const NetworkSpec& net, const GradCheckOptions& opt = {});

std::string gradcheck_report_to_text(const GradCheckReport& report);

}  // namespace csnet
