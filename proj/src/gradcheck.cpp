#include "csnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "csnet/ops.hpp"

namespace csnet {

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void jitter(ParamStore<double>& store, Rng& rng) {
    for (const std::string& name : store.names()) {
        Tensor64& t = store.get(name);
        if (ends_with(name, ".b") || ends_with(name, ".beta")) {
            for (std::int64_t i = 0; i < t.size(); ++i) t.data()[i] += rng.uniform(-0.5, 0.5);
        } else if (ends_with(name, ".gamma")) {
            for (std::int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(0.8, 1.2);
        }
    }
}

double min_abs(const Tensor64& t) {
    double m = std::numeric_limits<double>::infinity();
    for (std::int64_t i = 0; i < t.size(); ++i) m = std::min(m, std::abs(t.data()[i]));
    return m;
}

/// Smallest |preactivation| feeding a ReLU anywhere in the network.
double kink_margin(const NetworkSpec& net, const ForwardCache<double>& cache) {
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const LayerSpec& layer = net.layers[l];
        if (layer.kind != LayerKind::csconv) continue;
        const LayerCache<double>& lc = cache.layers[l];
        for (std::size_t s = 0; s < layer.csconv.stages.size(); ++s) {
            if (!layer.csconv.stages[s].relu_after_each) continue;
            m = std::min(m, min_abs(lc.spatial_norm[s]));
            m = std::min(m, min_abs(lc.channel_norm[s]));
        }
    }
    return m;
}

/// Conv biases are shift-invariant under the batch norm that follows them.
bool bias_nulled_by_norm(const NetworkSpec& net, const std::string& name) {
    if (!ends_with(name, ".spatial.b") && !ends_with(name, ".channel.b")) return false;
    const std::string layer_name = name.substr(0, name.find('.'));
    for (const LayerSpec& layer : net.layers)
        if (layer.name == layer_name) return layer.batch_norm;
    return false;
}

double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

}  // namespace

NetworkSpec cap_channels(const NetworkSpec& net, int cap) {
    if (cap < 1) throw ValidationError("cap_channels: cap must be at least 1");
    NetworkSpec out = net;

    std::size_t last_csconv = out.layers.size();
    for (std::size_t l = 0; l < out.layers.size(); ++l)
        if (out.layers[l].kind == LayerKind::csconv) last_csconv = l;

    int channels = out.input.c;
    for (std::size_t l = 0; l < out.layers.size(); ++l) {
        LayerSpec& layer = out.layers[l];
        if (layer.kind != LayerKind::csconv) continue;
        for (std::size_t s = 0; s < layer.csconv.stages.size(); ++s) {
            SubpatchFilterSpec& stage = layer.csconv.stages[s];
            stage.in_channels = channels;
            stage.mid_channels = std::min(stage.mid_channels, cap);
            const bool emits_logits = l == last_csconv && s + 1 == layer.csconv.stages.size();
            if (!emits_logits) stage.out_channels = std::min(stage.out_channels, cap);
            channels = stage.out_channels;
        }
    }
    validate(out);
    return out;
}

GradCheckReport gradcheck_network(const NetworkSpec& net, const GradCheckOptions& opt) {
    validate(net);
    if (opt.batch < 1) throw ValidationError("gradcheck: batch must be at least 1");
    if (!(opt.step > 0.0) || !(opt.tolerance > 0.0))
        throw ValidationError("gradcheck: step and tolerance must be positive");

    for (int attempt = 0; attempt < opt.seed_tries; ++attempt) {
        const std::uint64_t seed = opt.seed + static_cast<std::uint64_t>(attempt);
        Rng rng(seed);
        ModelParams<double> state = init_params<double>(net, rng);
        jitter(state.params, rng);

        Tensor64 batch({opt.batch, net.input.c, net.input.h, net.input.w});
        for (std::int64_t i = 0; i < batch.size(); ++i) batch.data()[i] = rng.uniform(-1.0, 1.0);
        std::vector<int> labels(static_cast<std::size_t>(opt.batch));
        for (int& l : labels)
            l = static_cast<int>(rng.index(static_cast<std::uint64_t>(net.class_count)));

        ForwardCache<double> cache;
        const Tensor64 logits = forward_gradcheck(net, state, batch, &cache);
        const double margin = kink_margin(net, cache);
        if (!(margin > opt.kink_margin)) continue;

        const SoftmaxLossResult<double> loss = softmax_cross_entropy(logits, labels);
        BackwardResult<double> back = backward(net, state, cache, loss.grad_logits);
        if (opt.tamper) opt.tamper(back.grads);

        const auto loss_at = [&]() {
            return softmax_cross_entropy(forward_gradcheck(net, state, batch), labels).loss;
        };

        GradCheckReport report;
        report.seed_used = seed;
        report.kink_margin = margin;
        report.passed = true;
        for (const std::string& name : state.params.names()) {
            const Tensor64& g = back.grads.get(name);
            GradCheckEntry entry;
            entry.name = name;
            if (bias_nulled_by_norm(net, name)) {
                entry.method = GradCheckMethod::null_gradient;
                for (std::int64_t i = 0; i < g.size(); ++i)
                    entry.worst = std::max(entry.worst, std::abs(g.data()[i]));
                entry.passed = entry.worst <= kNullGradientTolerance;
            } else {
                Tensor64& w = state.params.get(name);
                for (std::int64_t i = 0; i < w.size(); ++i) {
                    const double v = w.data()[i];
                    w.data()[i] = v + opt.step;
                    const double up = loss_at();
                    w.data()[i] = v - opt.step;
                    const double down = loss_at();
                    w.data()[i] = v;
                    const double fd = (up - down) / (2.0 * opt.step);
                    entry.worst = std::max(entry.worst, rel_err(fd, g.data()[i]));
                }
                entry.passed = entry.worst <= opt.tolerance;
                report.worst_relative_error = std::max(report.worst_relative_error, entry.worst);
            }
            report.passed = report.passed && entry.passed;
            report.entries.push_back(std::move(entry));
        }
        return report;
    }
    throw Error("gradcheck: no seed in [" + std::to_string(opt.seed) + ", " +
                std::to_string(opt.seed + static_cast<std::uint64_t>(opt.seed_tries)) +
                ") kept every ReLU preactivation clear of the kink margin " +
                std::to_string(opt.kink_margin));
}

std::string gradcheck_report_to_text(const GradCheckReport& report) {
    std::size_t width = 4;
    for (const GradCheckEntry& e : report.entries) width = std::max(width, e.name.size());

    std::ostringstream out;
    char line[256];
    for (const GradCheckEntry& e : report.entries) {
        const char* what =
            e.method == GradCheckMethod::finite_difference ? "rel err" : "null |g|";
        std::snprintf(line, sizeof(line), "%-*s  %-8s  %11.4e  %s\n", static_cast<int>(width),
                      e.name.c_str(), what, e.worst, e.passed ? "ok" : "FAIL");
        out << line;
    }
    std::snprintf(line, sizeof(line),
                  "seed %llu, kink margin %.3e, worst relative error %.4e: %s\n",
                  static_cast<unsigned long long>(report.seed_used), report.kink_margin,
                  report.worst_relative_error, report.passed ? "PASS" : "FAIL");
    out << line;
    return out.str();
}

}  // namespace csnet
