#include "csnet/csconv.hpp"

#include <cmath>

namespace csnet {

std::int64_t count_subpatches(int H, int W, int h, int w) {
    if (h < 1 || w < 1) throw ShapeError("count_subpatches: kernel extents must be positive");
    if (h > H || w > W)
        throw ShapeError("count_subpatches: kernel " + std::to_string(h) + "x" + std::to_string(w) +
                         " exceeds patch " + std::to_string(H) + "x" + std::to_string(W));
    return static_cast<std::int64_t>(H - h + 1) * static_cast<std::int64_t>(W - w + 1);
}

namespace {

void validate_spec(const CsconvSpec& spec) {
    if (spec.stages.empty()) throw ValidationError("csconv spec has no stages");
    if (spec.input_h < 1 || spec.input_w < 1)
        throw ValidationError("csconv patch extents must be positive, got " +
                              std::to_string(spec.input_h) + "x" + std::to_string(spec.input_w));
    for (std::size_t i = 0; i < spec.stages.size(); ++i) {
        const SubpatchFilterSpec& s = spec.stages[i];
        const std::string where = "stage " + std::to_string(i);
        if (s.spatial_kh < 1 || s.spatial_kw < 1)
            throw ValidationError(where + ": kernel extents must be positive");
        if (s.spatial_kh == 1 && s.spatial_kw == 1)
            throw ValidationError(where + ": spatial filter must exceed 1x1 in at least one extent");
        if (s.in_channels < 1 || s.mid_channels < 1 || s.out_channels < 1)
            throw ValidationError(where + ": channel counts must be positive");
        if (i > 0 && spec.stages[i - 1].out_channels != s.in_channels)
            throw ValidationError(where + ": expects " + std::to_string(s.in_channels) +
                                  " input channels but the previous stage emits " +
                                  std::to_string(spec.stages[i - 1].out_channels));
    }
}

}  // namespace

CascadePlan plan_cascade(const CsconvSpec& spec, CascadeMode mode,
                         std::vector<std::string>* warnings) {
    validate_spec(spec);

    CascadePlan plan;
    int h = spec.input_h, w = spec.input_w;
    for (std::size_t i = 0; i < spec.stages.size(); ++i) {
        const SubpatchFilterSpec& s = spec.stages[i];
        const int idx = static_cast<int>(i);
        if (i > 0) {
            const SubpatchFilterSpec& prev = spec.stages[i - 1];
            if (s.spatial_kh > prev.spatial_kh || s.spatial_kw > prev.spatial_kw) {
                const std::string msg = "stage " + std::to_string(i) + " kernel " +
                                        std::to_string(s.spatial_kh) + "x" +
                                        std::to_string(s.spatial_kw) +
                                        " grows beyond the previous stage's " +
                                        std::to_string(prev.spatial_kh) + "x" +
                                        std::to_string(prev.spatial_kw);
                if (mode == CascadeMode::strict) throw CascadeError(msg, idx);
                if (warnings) warnings->push_back(msg);
            }
        }
        const int nh = h - s.spatial_kh + 1;
        const int nw = w - s.spatial_kw + 1;
        if (nh < 1 || nw < 1)
            throw CascadeError("stage " + std::to_string(i) + " kernel " +
                                   std::to_string(s.spatial_kh) + "x" + std::to_string(s.spatial_kw) +
                                   " overshoots the remaining " + std::to_string(h) + "x" +
                                   std::to_string(w) + " patch",
                               idx);
        plan.subpatch_counts.push_back(count_subpatches(h, w, s.spatial_kh, s.spatial_kw));
        h = nh;
        w = nw;
        plan.sizes.emplace_back(h, w);
    }
    if (h != 1 || w != 1)
        throw CascadeError("cascade stalls at " + std::to_string(h) + "x" + std::to_string(w) +
                               " after the last stage instead of collapsing to 1x1",
                           static_cast<int>(spec.stages.size()) - 1);

    // Shrink-recurrence consequence: the size entering the last stage equals
    // that stage's kernel extents.
    const auto before_last = spec.stages.size() > 1 ? plan.sizes[spec.stages.size() - 2]
                                                    : std::make_pair(spec.input_h, spec.input_w);
    const SubpatchFilterSpec& last = spec.stages.back();
    if (before_last.first != last.spatial_kh || before_last.second != last.spatial_kw)
        throw CascadeError("penultimate size does not match the last stage's kernel", -1);
    return plan;
}

namespace {

template <typename T>
void check_stage_weights(const SubpatchFilterSpec& stage, const SubpatchWeights<T>& w,
                         std::size_t index) {
    const std::string where = "stage " + std::to_string(index);
    const Shape4 want_spatial{stage.mid_channels, stage.in_channels, stage.spatial_kh,
                              stage.spatial_kw};
    if (!(w.spatial.kernel.shape() == want_spatial))
        throw ValidationError(where + ": spatial kernel shape " + w.spatial.kernel.shape().str() +
                              " does not match spec " + want_spatial.str());
    const Shape4 want_channel{stage.out_channels, stage.mid_channels, 1, 1};
    if (!(w.channel.kernel.shape() == want_channel))
        throw ValidationError(where + ": channel kernel shape " + w.channel.kernel.shape().str() +
                              " does not match spec " + want_channel.str());
}

}  // namespace

template <typename T>
CsconvWeights<T> init_csconv_weights(const CsconvSpec& spec, Rng& rng, bool with_bias) {
    validate_spec(spec);
    CsconvWeights<T> out;
    for (const SubpatchFilterSpec& s : spec.stages) {
        SubpatchWeights<T> w;
        w.spatial.kernel = Tensor<T>({s.mid_channels, s.in_channels, s.spatial_kh, s.spatial_kw});
        const double spatial_std =
            std::sqrt(2.0 / (static_cast<double>(s.in_channels) * s.spatial_kh * s.spatial_kw));
        for (std::int64_t i = 0; i < w.spatial.kernel.size(); ++i)
            w.spatial.kernel.data()[i] = static_cast<T>(rng.gaussian() * spatial_std);

        w.channel.kernel = Tensor<T>({s.out_channels, s.mid_channels, 1, 1});
        const double channel_std = std::sqrt(2.0 / static_cast<double>(s.mid_channels));
        for (std::int64_t i = 0; i < w.channel.kernel.size(); ++i)
            w.channel.kernel.data()[i] = static_cast<T>(rng.gaussian() * channel_std);

        if (with_bias) {
            w.spatial.bias = Tensor<T>({1, s.mid_channels, 1, 1});
            w.channel.bias = Tensor<T>({1, s.out_channels, 1, 1});
        }
        out.stages.push_back(std::move(w));
    }
    return out;
}

std::pair<int, int> stage_padding(const SubpatchFilterSpec& stage, PadPolicy policy) {
    if (policy == PadPolicy::valid) return {0, 0};
    if (stage.spatial_kh % 2 == 0 || stage.spatial_kw % 2 == 0)
        throw ValidationError("preserve pad policy requires odd kernel extents, got " +
                              std::to_string(stage.spatial_kh) + "x" +
                              std::to_string(stage.spatial_kw));
    return {(stage.spatial_kh - 1) / 2, (stage.spatial_kw - 1) / 2};
}

template <typename T>
Tensor<T> subpatch_forward(const Tensor<T>& input, const SubpatchFilterSpec& stage,
                           const SubpatchWeights<T>& weights, int pad_h, int pad_w) {
    check_stage_weights(stage, weights, 0);
    Tensor<T> x = conv_forward(input, weights.spatial, pad_h, pad_w);
    if (stage.relu_after_each) x = relu_forward(x);
    x = conv_forward(x, weights.channel);
    if (stage.relu_after_each) x = relu_forward(x);
    return x;
}

template <typename T>
Tensor<T> csconv_layer_forward(const Tensor<T>& image, const CsconvSpec& spec,
                               const CsconvWeights<T>& weights, PadPolicy policy,
                               CsconvLayerCache<T>* cache) {
    plan_cascade(spec, CascadeMode::permissive);
    if (weights.stages.size() != spec.stages.size())
        throw ValidationError("csconv weights carry " + std::to_string(weights.stages.size()) +
                              " stages for a " + std::to_string(spec.stages.size()) + "-stage spec");
    if (cache) *cache = CsconvLayerCache<T>{};

    Tensor<T> x = image;
    for (std::size_t i = 0; i < spec.stages.size(); ++i) {
        const SubpatchFilterSpec& s = spec.stages[i];
        check_stage_weights(s, weights.stages[i], i);
        const auto [ph, pw] = stage_padding(s, policy);

        Tensor<T> spatial_pre = conv_forward(x, weights.stages[i].spatial, ph, pw);
        Tensor<T> mid = s.relu_after_each ? relu_forward(spatial_pre) : spatial_pre;
        Tensor<T> channel_pre = conv_forward(mid, weights.stages[i].channel);
        Tensor<T> out = s.relu_after_each ? relu_forward(channel_pre) : channel_pre;

        if (cache) {
            cache->inputs.push_back(std::move(x));
            cache->spatial_pre.push_back(std::move(spatial_pre));
            cache->mid.push_back(std::move(mid));
            cache->channel_pre.push_back(std::move(channel_pre));
        }
        x = std::move(out);
    }
    return x;
}

template <typename T>
Tensor<T> csconv_forward_patchwise(const Tensor<T>& patch, const CsconvSpec& spec,
                                   const CsconvWeights<T>& weights) {
    if (patch.shape().h != spec.input_h || patch.shape().w != spec.input_w)
        throw ShapeError("csconv_forward_patchwise: patch extents " +
                         std::to_string(patch.shape().h) + "x" + std::to_string(patch.shape().w) +
                         " do not match the spec's " + std::to_string(spec.input_h) + "x" +
                         std::to_string(spec.input_w));
    return csconv_layer_forward(patch, spec, weights, PadPolicy::valid);
}

template <typename T>
CsconvLayerGrads<T> csconv_layer_backward(const CsconvSpec& spec, const CsconvWeights<T>& weights,
                                          PadPolicy policy, const CsconvLayerCache<T>& cache,
                                          const Tensor<T>& grad_out) {
    const std::size_t n = spec.stages.size();
    if (cache.inputs.size() != n || cache.spatial_pre.size() != n || cache.mid.size() != n ||
        cache.channel_pre.size() != n)
        throw ValidationError("csconv_layer_backward: cache does not cover all stages");

    CsconvLayerGrads<T> grads;
    grads.stages.resize(n);

    Tensor<T> g = grad_out;
    for (std::size_t ri = 0; ri < n; ++ri) {
        const std::size_t i = n - 1 - ri;
        const SubpatchFilterSpec& s = spec.stages[i];
        const auto [ph, pw] = stage_padding(s, policy);

        if (s.relu_after_each) g = relu_backward(cache.channel_pre[i], g);
        ConvGrads<T> gc = conv_backward(cache.mid[i], weights.stages[i].channel, g);
        grads.stages[i].channel = std::move(gc.weights);

        g = std::move(gc.input);
        if (s.relu_after_each) g = relu_backward(cache.spatial_pre[i], g);
        ConvGrads<T> gs = conv_backward(cache.inputs[i], weights.stages[i].spatial, g, ph, pw);
        grads.stages[i].spatial = std::move(gs.weights);
        g = std::move(gs.input);
    }
    grads.input = std::move(g);
    return grads;
}

#define CSNET_INSTANTIATE_CSCONV(T)                                                               \
    template CsconvWeights<T> init_csconv_weights<T>(const CsconvSpec&, Rng&, bool);              \
    template Tensor<T> subpatch_forward<T>(const Tensor<T>&, const SubpatchFilterSpec&,           \
                                           const SubpatchWeights<T>&, int, int);                  \
    template Tensor<T> csconv_forward_patchwise<T>(const Tensor<T>&, const CsconvSpec&,           \
                                                   const CsconvWeights<T>&);                      \
    template Tensor<T> csconv_layer_forward<T>(const Tensor<T>&, const CsconvSpec&,               \
                                               const CsconvWeights<T>&, PadPolicy,               \
                                               CsconvLayerCache<T>*);                             \
    template CsconvLayerGrads<T> csconv_layer_backward<T>(const CsconvSpec&,                      \
                                                          const CsconvWeights<T>&, PadPolicy,     \
                                                          const CsconvLayerCache<T>&,             \
                                                          const Tensor<T>&);

CSNET_INSTANTIATE_CSCONV(float)
CSNET_INSTANTIATE_CSCONV(double)

}  // namespace csnet
