// Acceptance gate: one line per criterion, exit 0 only if every criterion
// passes. Where the pinned corpora are not present (MNIST, CIFAR-10), the
// affected criteria run against clearly labeled synthetic surrogates; point
// CSNET_MNIST_DIR / CSNET_CIFAR_DIR at the real files to lift that.

#include <Eigen/Dense>

#include <chrono>
#include <cstdarg>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "csnet/accountant.hpp"
#include "csnet/csconv.hpp"
#include "csnet/data.hpp"
#include "csnet/gradcheck.hpp"
#include "csnet/model.hpp"
#include "csnet/ops.hpp"
#include "csnet/synthdata.hpp"
#include "csnet/train.hpp"

using namespace csnet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool passed = false;
    std::string note;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string format(const char* fmt, ...) {
    char buf[512];
    va_list args;
    va_start(args, fmt);
    std::vsnprintf(buf, sizeof(buf), fmt, args);
    va_end(args);
    return buf;
}

fs::path scratch() {
    static const fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / "csnet_acceptance";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

SubpatchFilterSpec stage(int kh, int kw) { return {kh, kw, 1, 1, 1, true}; }

Tensor64 random_tensor(Shape4 shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor64 t(shape);
    for (std::int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(lo, hi);
    return t;
}

double rel_err(double a, double b) {
    const double scale = std::max({std::abs(a), std::abs(b), 1e-6});
    return std::abs(a - b) / scale;
}

double dot(const Tensor64& a, const Tensor64& b) {
    double acc = 0;
    for (std::int64_t i = 0; i < a.size(); ++i) acc += a.data()[i] * b.data()[i];
    return acc;
}

// Central-difference check of every element of x against the analytic
// gradient; loss() recomputes the scalar from x's current contents.
double fd_worst(Tensor64& x, const Tensor64& analytic, const std::function<double()>& loss,
                double step = 1e-5) {
    double worst = 0;
    for (std::int64_t i = 0; i < x.size(); ++i) {
        const double keep = x.data()[i];
        x.data()[i] = keep + step;
        const double up = loss();
        x.data()[i] = keep - step;
        const double down = loss();
        x.data()[i] = keep;
        worst = std::max(worst, rel_err((up - down) / (2 * step), analytic.data()[i]));
    }
    return worst;
}

// ---------------------------------------------------------------------------
// 1. Shape recurrence

Outcome criterion_shapes() {
    const auto start = std::chrono::steady_clock::now();
    using Sizes = std::vector<std::pair<int, int>>;

    const CascadePlan a = plan_cascade({7, 7, {stage(5, 5), stage(3, 3)}});
    const CascadePlan b = plan_cascade({7, 7, {stage(3, 3), stage(3, 3), stage(3, 3)}});
    const CascadePlan c = plan_cascade({5, 5, {stage(3, 3), stage(3, 3)}});

    const bool ok = a.sizes == Sizes{{3, 3}, {1, 1}} &&
                    b.sizes == Sizes{{5, 5}, {3, 3}, {1, 1}} && c.sizes == Sizes{{3, 3}, {1, 1}};
    const double sec = seconds_since(start);
    if (!ok) return {false, "a cascade chain deviates from 7->3->1, 7->5->3->1, 5->3->1"};
    if (sec >= 1.0) return {false, format("chains correct but took %.2f s (limit 1 s)", sec)};
    return {true, format("chains 7->3->1, 7->5->3->1, 5->3->1 exact (%.3f s)", sec)};
}

// ---------------------------------------------------------------------------
// 2. Closed-form structural counts over the full grid

Outcome criterion_count_formulas() {
    const auto start = std::chrono::steady_clock::now();
    for (std::int64_t n1 = 1; n1 <= 64; ++n1) {
        for (std::int64_t n2 = 1; n2 <= 64; ++n2) {
            const std::int64_t conventional = count_conventional(7, 7, n1, n2);
            if (conventional != 49 * n1 * n2)
                return {false, format("conventional(%lld,%lld) != 49*n1*n2", n1, n2)};

            const std::int64_t widen_first =
                count_csconv(reference_cascade_widen_first(n1, n2)).total_weights;
            if (widen_first != 9 * n1 * n2 + 21 * n2 * n2)
                return {false, format("widen-first(%lld,%lld) != 9*n1*n2 + 21*n2^2", n1, n2)};

            const std::int64_t widen_last =
                count_csconv(reference_cascade_widen_last(n1, n2)).total_weights;
            if (widen_last != n1 * n2 + 29 * n1 * n1)
                return {false, format("widen-last(%lld,%lld) != n1*n2 + 29*n1^2", n1, n2)};

            if (n1 == n2 && (widen_first != 30 * n1 * n1 || widen_last != 30 * n1 * n1))
                return {false, format("equal-width count at n=%lld is not 30*n^2", n1)};
        }
    }
    const double sec = seconds_since(start);
    if (sec >= 5.0) return {false, format("counts correct but took %.2f s (limit 5 s)", sec)};
    return {true, format("49*n1*n2, 9*n1*n2+21*n2^2, n1*n2+29*n1^2, 30*n^2 exact on 1..64 (%.3f s)", sec)};
}

// ---------------------------------------------------------------------------
// 3. Crossover signs

int sign_of(std::int64_t v) { return v > 0 ? 1 : (v < 0 ? -1 : 0); }

Outcome criterion_crossovers() {
    for (int n1 = 1; n1 <= 64; ++n1) {
        for (int n2 = 1; n2 <= 64; ++n2) {
            const std::int64_t first =
                compare_costs(7, 7, n1, n2, reference_cascade_widen_first(n1, n2));
            if (sign_of(first) != sign_of(40LL * n1 - 21LL * n2))
                return {false, format("widen-first saving sign breaks at (%d,%d)", n1, n2)};

            const std::int64_t last =
                compare_costs(7, 7, n1, n2, reference_cascade_widen_last(n1, n2));
            if (sign_of(last) != sign_of(48LL * n2 - 29LL * n1))
                return {false, format("widen-last saving sign breaks at (%d,%d)", n1, n2)};
        }
    }
    if (compare_costs(7, 7, 21, 40, reference_cascade_widen_first(21, 40)) != 0)
        return {false, "widen-first saving is not zero at (21,40)"};
    if (compare_costs(7, 7, 48, 29, reference_cascade_widen_last(48, 29)) != 0)
        return {false, "widen-last saving is not zero at (48,29)"};
    return {true, "signs match sign(40*n1-21*n2) / sign(48*n2-29*n1), zeros at (21,40) and (48,29)"};
}

// ---------------------------------------------------------------------------
// 4. Preset budgets

Outcome criterion_budgets() {
    const auto start = std::chrono::steady_clock::now();
    const std::int64_t l = count_network(preset("csnet_l")).total_weights;
    const std::int64_t s = count_network(preset("csnet_s")).total_weights;
    const std::int64_t m = count_network(preset("csnet_m")).total_weights;

    if (l != 3520608) return {false, format("csnet_l counted %lld, expected 3520608", l)};
    if (std::abs(l - 3500000) > 0.02 * 3500000)
        return {false, "csnet_l deviates more than 2% from its 3.5M budget"};
    if (s != 928704) return {false, format("csnet_s counted %lld, expected 928704", s)};
    if (std::abs(s - 960000) > 0.05 * 960000)
        return {false, "csnet_s deviates more than 5% from its 0.96M budget"};
    if (m != 1850304) return {false, format("csnet_m counted %lld, expected 1850304", m)};

    // csnet_m's count exceeds its design budget; the reporting path must
    // carry that discrepancy rather than hide it.
    const std::int64_t budget = preset_design_budget("csnet_m");
    if (budget != 1600000) return {false, format("csnet_m budget is %lld, expected 1600000", budget)};
    const double deviation = static_cast<double>(m - budget) / static_cast<double>(budget);
    if (!(deviation > 0.05))
        return {false, "csnet_m deviation did not trip the over-budget flag"};

    const double sec = seconds_since(start);
    if (sec >= 1.0) return {false, format("budgets correct but took %.2f s (limit 1 s)", sec)};
    return {true, format("3520608 / 928704 exact; csnet_m 1850304 flagged +%.1f%% over its 1600000 budget",
                         100.0 * deviation)};
}

// ---------------------------------------------------------------------------
// 5. Convolution against direct summation

Tensor64 conv_reference(const Tensor64& input, const ConvWeights<double>& w) {
    const Shape4 is = input.shape();
    const Shape4 ks = w.kernel.shape();
    const std::int64_t oh = is.h - ks.h + 1, ow = is.w - ks.w + 1;
    Tensor64 out({is.n, ks.n, oh, ow});
    for (std::int64_t n = 0; n < is.n; ++n)
        for (std::int64_t m = 0; m < ks.n; ++m)
            for (std::int64_t y = 0; y < oh; ++y)
                for (std::int64_t x = 0; x < ow; ++x) {
                    double acc = w.has_bias() ? w.bias.at(0, m, 0, 0) : 0.0;
                    for (std::int64_t c = 0; c < ks.c; ++c)
                        for (std::int64_t dy = 0; dy < ks.h; ++dy)
                            for (std::int64_t dx = 0; dx < ks.w; ++dx)
                                acc += input.at(n, c, y + dy, x + dx) *
                                       w.kernel.at(m, c, dy, dx);
                    out.at(n, m, y, x) = acc;
                }
    return out;
}

Outcome criterion_conv_oracle() {
    Rng rng(501);
    double worst = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::int64_t h = 1 + rng.index(6), w = 1 + rng.index(6);
        const std::int64_t kh = 1 + rng.index(h), kw = 1 + rng.index(w);
        const std::int64_t n = 1 + rng.index(2);
        const std::int64_t cin = 1 + rng.index(3), cout = 1 + rng.index(3);

        const Tensor64 input = random_tensor({n, cin, h, w}, rng);
        ConvWeights<double> weights;
        weights.kernel = random_tensor({cout, cin, kh, kw}, rng);
        if (rng.bernoulli(0.5)) weights.bias = random_tensor({1, cout, 1, 1}, rng);

        const Tensor64 got = conv_forward(input, weights);
        const Tensor64 want = conv_reference(input, weights);
        if (got.shape() != want.shape()) return {false, format("shape mismatch in trial %d", trial)};
        for (std::int64_t i = 0; i < got.size(); ++i)
            worst = std::max(worst, std::abs(got.data()[i] - want.data()[i]));
    }
    if (worst > 1e-12) return {false, format("worst deviation %.3e exceeds 1e-12", worst)};
    return {true, format("200 randomized cases, worst deviation %.3e <= 1e-12", worst)};
}

// ---------------------------------------------------------------------------
// 6. Sliding-window equivalence

Outcome criterion_sliding_window() {
    Rng rng(601);
    double worst = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const int k1 = 2 + static_cast<int>(rng.index(2));
        const int k2 = 2 + static_cast<int>(rng.index(k1 - 1));  // never grows
        const int n_stages = 1 + static_cast<int>(rng.index(2));

        CsconvSpec spec;
        const int c_in = 1 + static_cast<int>(rng.index(3));
        const int c_mid = 1 + static_cast<int>(rng.index(3));
        const int c_out = 1 + static_cast<int>(rng.index(3));
        spec.stages.push_back({k1, k1, c_in, c_mid, n_stages == 1 ? c_out : c_mid, true});
        if (n_stages == 2) spec.stages.push_back({k2, k2, c_mid, c_mid, c_out, true});
        spec.input_h = spec.input_w = 1;
        for (const SubpatchFilterSpec& st : spec.stages) spec.input_h += st.spatial_kh - 1;
        spec.input_w = spec.input_h;
        plan_cascade(spec);

        const std::int64_t n = 1 + rng.index(2);
        const std::int64_t h = spec.input_h + rng.index(4);
        const std::int64_t w = spec.input_w + rng.index(4);
        const Tensor64 image = random_tensor({n, c_in, h, w}, rng);
        Rng wrng(rng.next_u64());
        const CsconvWeights<double> weights = init_csconv_weights<double>(spec, wrng);

        const Tensor64 full = csconv_layer_forward(image, spec, weights, PadPolicy::valid);
        const std::int64_t oh = h - spec.input_h + 1, ow = w - spec.input_w + 1;
        if (full.shape() != Shape4{n, full.shape().c, oh, ow})
            return {false, format("layer output shape off in trial %d", trial)};

        for (std::int64_t y = 0; y < oh; ++y)
            for (std::int64_t x = 0; x < ow; ++x) {
                Tensor64 patch({n, c_in, spec.input_h, spec.input_w});
                for (std::int64_t b = 0; b < n; ++b)
                    for (std::int64_t c = 0; c < c_in; ++c)
                        for (std::int64_t dy = 0; dy < spec.input_h; ++dy)
                            for (std::int64_t dx = 0; dx < spec.input_w; ++dx)
                                patch.at(b, c, dy, dx) = image.at(b, c, y + dy, x + dx);
                const Tensor64 one = csconv_forward_patchwise(patch, spec, weights);
                for (std::int64_t b = 0; b < n; ++b)
                    for (std::int64_t q = 0; q < full.shape().c; ++q)
                        worst = std::max(worst,
                                         std::abs(full.at(b, q, y, x) - one.at(b, q, 0, 0)));
            }
    }
    if (worst > 1e-10) return {false, format("worst window deviation %.3e exceeds 1e-10", worst)};
    return {true, format("50 randomized layers, worst window deviation %.3e <= 1e-10", worst)};
}

// ---------------------------------------------------------------------------
// 7. Gradient soundness

Outcome criterion_gradients() {
    const auto start = std::chrono::steady_clock::now();
    Rng rng(701);
    double worst = 0;
    std::string worst_op = "none";
    const auto track = [&](const char* op, double err) {
        if (err > worst) {
            worst = err;
            worst_op = op;
        }
    };

    {  // convolution: kernel, bias, input, with and without padding
        for (int pad = 0; pad <= 1; ++pad) {
            Tensor64 input = random_tensor({2, 3, 5, 5}, rng);
            ConvWeights<double> w;
            w.kernel = random_tensor({4, 3, 3, 3}, rng);
            w.bias = random_tensor({1, 4, 1, 1}, rng);
            const Tensor64 co = random_tensor(conv_forward(input, w, pad, pad).shape(), rng);
            const auto loss = [&] { return dot(conv_forward(input, w, pad, pad), co); };
            const ConvGrads<double> g = conv_backward(input, w, co, pad, pad);
            track("conv.kernel", fd_worst(w.kernel, g.weights.kernel, loss));
            track("conv.bias", fd_worst(w.bias, g.weights.bias, loss));
            track("conv.input", fd_worst(input, g.input, loss));
        }
    }
    {  // relu, inputs held clear of the kink
        Tensor64 input({2, 3, 4, 4});
        for (std::int64_t i = 0; i < input.size(); ++i) {
            const double mag = rng.uniform(0.1, 1.0);
            input.data()[i] = rng.bernoulli(0.5) ? mag : -mag;
        }
        const Tensor64 co = random_tensor(input.shape(), rng);
        const auto loss = [&] { return dot(relu_forward(input), co); };
        const Tensor64 g = relu_backward(input, co);
        track("relu.input", fd_worst(input, g, loss));
    }
    {  // maxpool, distinct values so the window argmax never moves
        for (const bool cover : {false, true}) {
            Tensor64 input({2, 2, 6, 6});
            std::vector<double> levels(input.size());
            for (std::size_t i = 0; i < levels.size(); ++i)
                levels[i] = 0.01 * static_cast<double>(i) - 0.7;
            rng.shuffle(levels.begin(), levels.end());
            std::copy(levels.begin(), levels.end(), input.data());

            const int kh = cover ? 3 : 2, stride = 2;
            const auto loss = [&] {
                const MaxPoolResult<double> r =
                    maxpool_forward(input, kh, kh, stride, stride, cover);
                Tensor64 co(r.output.shape(), 0.0);
                Rng co_rng(33);
                for (std::int64_t i = 0; i < co.size(); ++i)
                    co.data()[i] = co_rng.uniform(-1.0, 1.0);
                return dot(r.output, co);
            };
            const MaxPoolResult<double> r = maxpool_forward(input, kh, kh, stride, stride, cover);
            Tensor64 co(r.output.shape(), 0.0);
            Rng co_rng(33);
            for (std::int64_t i = 0; i < co.size(); ++i) co.data()[i] = co_rng.uniform(-1.0, 1.0);
            const Tensor64 g = maxpool_backward(input.shape(), r, co);
            track("maxpool.input", fd_worst(input, g, loss));
        }
    }
    {  // global average pooling
        Tensor64 input = random_tensor({2, 3, 4, 4}, rng);
        const Tensor64 co = random_tensor({2, 3, 1, 1}, rng);
        const auto loss = [&] { return dot(global_avg_pool_forward(input), co); };
        const Tensor64 g = global_avg_pool_backward(input.shape(), co);
        track("global_avg_pool.input", fd_worst(input, g, loss));
    }
    {  // batch norm (training statistics): input, gamma, beta
        Tensor64 input = random_tensor({3, 2, 4, 4}, rng);
        Tensor64 gamma = random_tensor({1, 2, 1, 1}, rng, 0.8, 1.2);
        Tensor64 beta = random_tensor({1, 2, 1, 1}, rng, -0.5, 0.5);
        const Tensor64 co = random_tensor(input.shape(), rng);
        const auto loss = [&] {
            BatchNormCache<double> cache;
            return dot(batchnorm_forward_train(input, gamma, beta, 1e-5, &cache), co);
        };
        BatchNormCache<double> cache;
        batchnorm_forward_train(input, gamma, beta, 1e-5, &cache);
        const BatchNormGrads<double> g = batchnorm_backward(co, gamma, cache);
        track("batchnorm.input", fd_worst(input, g.input, loss));
        track("batchnorm.gamma", fd_worst(gamma, g.gamma, loss));
        track("batchnorm.beta", fd_worst(beta, g.beta, loss));
    }
    {  // dropout against its own captured mask
        Tensor64 input = random_tensor({2, 3, 4, 4}, rng);
        Rng drng(7);
        const DropoutResult<double> r = dropout_forward(input, 0.4, true, drng);
        for (std::int64_t i = 0; i < input.size(); ++i) {
            const double want = input.data()[i] * r.mask.data()[i];
            if (r.output.data()[i] != want)
                return {false, "dropout output is not exactly mask times input"};
        }
        const Tensor64 co = random_tensor(input.shape(), rng);
        const auto loss = [&] {
            double acc = 0;
            for (std::int64_t i = 0; i < input.size(); ++i)
                acc += input.data()[i] * r.mask.data()[i] * co.data()[i];
            return acc;
        };
        const Tensor64 g = dropout_backward(r.mask, co);
        track("dropout.input", fd_worst(input, g, loss));
    }
    {  // softmax cross-entropy on its own loss
        Tensor64 logits = random_tensor({4, 6, 1, 1}, rng, -2.0, 2.0);
        std::vector<int> labels;
        for (int i = 0; i < 4; ++i) labels.push_back(static_cast<int>(rng.index(6)));
        const auto loss = [&] { return softmax_cross_entropy(logits, labels).loss; };
        const SoftmaxLossResult<double> r = softmax_cross_entropy(logits, labels);
        track("softmax_cross_entropy.logits", fd_worst(logits, r.grad_logits, loss));
    }

    // Whole network at reduced width and extent.
    NetworkSpec net = cap_channels(preset("csnet_tiny"), 4);
    net.input.h = 8;
    net.input.w = 8;
    validate(net);
    const GradCheckReport report = gradcheck_network(net);
    if (!report.passed)
        return {false, format("whole-network check failed, worst %.3e", report.worst_relative_error)};
    track("csnet_tiny(reduced)", report.worst_relative_error);

    const double sec = seconds_since(start);
    if (worst > 1e-4)
        return {false, format("worst relative error %.3e at %s exceeds 1e-4", worst, worst_op.c_str())};
    if (sec >= 120.0) return {false, format("gradients sound but took %.1f s (limit 120 s)", sec)};
    return {true, format("all primitive ops and reduced csnet_tiny, worst %.3e at %s (%.1f s)", worst,
                         worst_op.c_str(), sec)};
}

// ---------------------------------------------------------------------------
// 8. Preprocessing properties

Dataset correlated_surrogate(std::int64_t n, int c, int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    const std::int64_t d = static_cast<std::int64_t>(c) * h * w;
    const int k = 40;
    std::vector<double> basis(static_cast<std::size_t>(k) * d);
    for (double& v : basis) v = rng.gaussian();

    Dataset ds;
    ds.images = Tensor32({n, c, h, w});
    for (std::int64_t i = 0; i < n; ++i) {
        float* img = ds.images.data() + i * d;
        for (std::int64_t j = 0; j < d; ++j) img[j] = static_cast<float>(0.2 * rng.gaussian());
        for (int b = 0; b < k; ++b) {
            const double alpha = 0.05 * rng.gaussian();
            for (std::int64_t j = 0; j < d; ++j)
                img[j] += static_cast<float>(alpha * basis[static_cast<std::size_t>(b) * d + j]);
        }
        ds.labels.push_back(static_cast<int>(rng.index(10)));
    }
    ds.split = Split::train;
    return ds;
}

Dataset leading_subset(const Dataset& ds, std::int64_t n) {
    const Shape4 s = ds.images.shape();
    Dataset out;
    out.images = Tensor32({n, s.c, s.h, s.w});
    std::copy(ds.images.data(), ds.images.data() + n * s.c * s.h * s.w, out.images.data());
    out.labels.assign(ds.labels.begin(), ds.labels.begin() + n);
    out.split = ds.split;
    out.class_count = ds.class_count;
    out.stats_fingerprint = ds.stats_fingerprint;
    return out;
}

Outcome criterion_preprocessing() {
    {  // GCN: per-image zero mean, unit standard deviation
        Rng rng(801);
        Dataset ds;
        ds.images = Tensor32({64, 3, 8, 8});
        for (std::int64_t i = 0; i < ds.images.size(); ++i)
            ds.images.data()[i] = static_cast<float>(rng.uniform(0.0, 1.0));
        ds.labels.assign(64, 0);
        const Dataset out = global_contrast_normalize(ds);
        const std::int64_t d = 3 * 8 * 8;
        for (std::int64_t i = 0; i < 64; ++i) {
            const float* img = out.images.data() + i * d;
            double mean = 0;
            for (std::int64_t j = 0; j < d; ++j) mean += img[j];
            mean /= static_cast<double>(d);
            double var = 0;
            for (std::int64_t j = 0; j < d; ++j) var += (img[j] - mean) * (img[j] - mean);
            const double stdev = std::sqrt(var / static_cast<double>(d));
            if (std::abs(mean) > 1e-6) return {false, format("image %lld mean %.2e after GCN", i, mean)};
            if (std::abs(stdev - 1.0) > 1e-6)
                return {false, format("image %lld std %.8f after GCN", i, stdev)};
        }
    }

    // ZCA on a 10k subset: whitened covariance within 1e-3 of identity on
    // directions the eps floor does not dominate.
    std::string zca_source;
    Dataset fit_set;
    const char* cifar_dir = std::getenv("CSNET_CIFAR_DIR");
    if (cifar_dir != nullptr) {
        std::vector<std::string> paths;
        for (int i = 1; i <= 5; ++i)
            paths.push_back(std::string(cifar_dir) + "/data_batch_" + std::to_string(i) + ".bin");
        fit_set = leading_subset(load_cifar10_bin(paths, Split::train), 10000);
        zca_source = "CIFAR-10";
    } else {
        fit_set = correlated_surrogate(10000, 3, 12, 12, 802);
        zca_source = "synthetic surrogate (set CSNET_CIFAR_DIR for the real corpus)";
    }
    const Shape4 fs = fit_set.images.shape();
    const std::int64_t n = fs.n, d = fs.c * fs.h * fs.w;

    const ZcaTransform t = zca_fit(fit_set, 1e-5, n);
    const Dataset white = zca_apply(t, fit_set);

    Eigen::MatrixXd X(n, d), Z(n, d);
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < d; ++j) {
            X(i, j) = static_cast<double>(fit_set.images.data()[i * d + j]) - t.mean[static_cast<std::size_t>(j)];
            Z(i, j) = static_cast<double>(white.images.data()[i * d + j]);
        }
    const Eigen::MatrixXd cov_orig = X.transpose() * X / static_cast<double>(n);
    const Eigen::MatrixXd cov_white = Z.transpose() * Z / static_cast<double>(n);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig_orig(cov_orig);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig_white(cov_white);
    if (eig_orig.info() != Eigen::Success || eig_white.info() != Eigen::Success)
        return {false, "eigendecomposition failed"};

    // Both spectra ascend; direction i of the whitened covariance carries
    // lambda_i / (lambda_i + eps), which is 1 up to eps domination.
    double worst = 0;
    std::int64_t checked = 0;
    for (std::int64_t i = 0; i < d; ++i) {
        if (eig_orig.eigenvalues()(i) <= 1e-2) continue;  // eps-dominated
        worst = std::max(worst, std::abs(eig_white.eigenvalues()(i) - 1.0));
        ++checked;
    }
    if (checked == 0) return {false, "no direction rose above the eps floor"};
    if (worst > 1e-3)
        return {false, format("whitened covariance off identity by %.3e on %s", worst, zca_source.c_str())};

    {  // augmentation identities, bitwise
        Rng rng(803);
        Tensor32 images({4, 3, 9, 9});
        for (std::int64_t i = 0; i < images.size(); ++i)
            images.data()[i] = static_cast<float>(rng.uniform(0.0, 1.0));
        const int pad = 4;
        const Tensor32 center = augment_image(images, pad, pad, false, pad);
        const Tensor32 flip_once = augment_image(images, pad, pad, true, pad);
        const Tensor32 flip_twice = augment_image(flip_once, pad, pad, true, pad);
        for (std::int64_t i = 0; i < images.size(); ++i) {
            if (center.data()[i] != images.data()[i]) return {false, "center crop is not the identity"};
            if (flip_twice.data()[i] != images.data()[i]) return {false, "double flip is not the identity"};
        }
    }

    return {true, format("GCN moments exact to 1e-6; ZCA covariance off identity %.3e <= 1e-3 on %lld "
                         "directions (%s); crop and flip identities bitwise", worst, checked,
                         zca_source.c_str())};
}

// ---------------------------------------------------------------------------
// 9. Desk-scale training

Outcome criterion_desk_scale() {
    const auto start = std::chrono::steady_clock::now();
    Dataset train_ds, test_ds;
    std::string source;
    const char* mnist_dir = std::getenv("CSNET_MNIST_DIR");
    if (mnist_dir != nullptr) {
        const std::string dir(mnist_dir);
        Dataset full = load_mnist_idx(dir + "/train-images-idx3-ubyte",
                                      dir + "/train-labels-idx1-ubyte", Split::train);
        test_ds = load_mnist_idx(dir + "/t10k-images-idx3-ubyte", dir + "/t10k-labels-idx1-ubyte",
                                 Split::test);
        // Seeded 10k subset: carve the rest away, keep the remainder.
        train_ds = split_validation(full, full.images.shape().n - 10000, 90210).first;
        source = "MNIST";
    } else {
        train_ds = synth::glyph_digits(10000, 90210, Split::train);
        test_ds = synth::glyph_digits(10000, 90211, Split::test);
        source = "synthetic surrogate (set CSNET_MNIST_DIR for the real corpus)";
    }

    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.seed = 0;
    cfg.quiet = true;
    cfg.metrics_path = (scratch() / "desk_metrics.csv").string();
    const TrainResult result = train(preset("csnet_tiny"), cfg, train_ds, test_ds);

    double best = result.metrics.front().eval_error_pct;
    for (const MetricsRecord& m : result.metrics) best = std::min(best, m.eval_error_pct);
    const double minutes = seconds_since(start) / 60.0;
    if (best > 3.0)
        return {false, format("best top-1 error %.4f%% exceeds 3%% on %s", best, source.c_str())};
    return {true, format("best top-1 error %.4f%% <= 3%% in %.1f min on %s", best, minutes,
                         source.c_str())};
}

// ---------------------------------------------------------------------------
// 10. Determinism

std::string strip_wall_time(const std::string& csv) {
    std::istringstream in(csv);
    std::ostringstream out;
    std::string line;
    while (std::getline(in, line)) {
        const std::size_t cut = line.rfind(',');
        out << line.substr(0, cut) << '\n';
    }
    return out.str();
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

Outcome criterion_determinism() {
    const Dataset train_ds = synth::glyph_digits(600, 42, Split::train);
    const Dataset test_ds = synth::glyph_digits(200, 43, Split::test);
    const NetworkSpec net = preset("csnet_tiny");

    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 50;
    cfg.seed = 11;
    cfg.quiet = true;

    TrainConfig cfg_a = cfg;
    cfg_a.metrics_path = (scratch() / "det_a.csv").string();
    cfg_a.checkpoint_dir = (scratch() / "det_a").string();
    fs::create_directories(cfg_a.checkpoint_dir);
    TrainConfig cfg_b = cfg;
    cfg_b.metrics_path = (scratch() / "det_b.csv").string();
    cfg_b.checkpoint_dir = (scratch() / "det_b").string();
    fs::create_directories(cfg_b.checkpoint_dir);

    const TrainResult a = train(net, cfg_a, train_ds, test_ds);
    const TrainResult b = train(net, cfg_b, train_ds, test_ds);

    for (std::size_t i = 0; i < a.metrics.size(); ++i) {
        if (a.metrics[i].train_loss != b.metrics[i].train_loss ||
            a.metrics[i].train_error_pct != b.metrics[i].train_error_pct ||
            a.metrics[i].eval_error_pct != b.metrics[i].eval_error_pct ||
            a.metrics[i].learning_rate != b.metrics[i].learning_rate)
            return {false, format("metrics diverge at epoch %zu across identical seeds", i)};
    }
    if (strip_wall_time(read_file(cfg_a.metrics_path)) !=
        strip_wall_time(read_file(cfg_b.metrics_path)))
        return {false, "metrics files differ beyond the wall-time column"};

    // Checkpoint round trip: load the final checkpoint, re-save it with the
    // same metadata, and demand identical bytes.
    Rng init_rng(0);
    ModelParams<float> state = init_params<float>(net, init_rng);
    ParamStore<float> velocity;
    const CheckpointMeta meta = load_checkpoint(a.final_checkpoint_path, net, state, velocity);

    for (const std::string& name : state.params.names()) {
        const Tensor32& got = state.params.get(name);
        const Tensor32& want = a.state.params.get(name);
        for (std::int64_t i = 0; i < got.size(); ++i)
            if (got.data()[i] != want.data()[i])
                return {false, format("parameter %s changed across the round trip", name.c_str())};
    }

    const fs::path resaved = scratch() / "det_resaved.ckpt";
    save_checkpoint(resaved.string(), net, state, velocity, meta);
    if (read_file(a.final_checkpoint_path) != read_file(resaved))
        return {false, "re-saved checkpoint bytes differ from the original"};

    return {true, "identical metrics for identical seeds; checkpoint round trip is bit-exact"};
}

}  // namespace

int main() {
    struct Row {
        int id;
        const char* title;
        std::function<Outcome()> run;
    };
    const std::vector<Row> rows = {
        {1, "shape recurrence", criterion_shapes},
        {2, "structural count formulas", criterion_count_formulas},
        {3, "crossover signs", criterion_crossovers},
        {4, "preset budgets", criterion_budgets},
        {5, "convolution oracle", criterion_conv_oracle},
        {6, "sliding-window equivalence", criterion_sliding_window},
        {7, "gradient soundness", criterion_gradients},
        {8, "preprocessing properties", criterion_preprocessing},
        {9, "desk-scale training", criterion_desk_scale},
        {10, "determinism", criterion_determinism},
    };

    int failures = 0;
    for (const Row& row : rows) {
        Outcome outcome;
        try {
            outcome = row.run();
        } catch (const std::exception& e) {
            outcome = {false, std::string("threw: ") + e.what()};
        }
        if (!outcome.passed) ++failures;
        std::printf("criterion %2d (%s): %s: %s\n", row.id, row.title,
                    outcome.passed ? "PASS" : "FAIL", outcome.note.c_str());
        std::fflush(stdout);
    }
    if (failures > 0) {
        std::printf("%d of %zu criteria failed\n", failures, rows.size());
        return 1;
    }
    std::printf("all %zu criteria passed\n", rows.size());
    return 0;
}
