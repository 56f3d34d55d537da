#pragma once

#include <string>
#include <utility>
#include <vector>

#include "csnet/ops.hpp"

namespace csnet {

/// One subpatch filter: an h×w spatial convolution (N -> M channels) followed
/// by a 1×1 channel convolution (M -> Q channels), each optionally ReLU'd.
struct SubpatchFilterSpec {
    int spatial_kh = 3;
    int spatial_kw = 3;
    int in_channels = 0;   // N
    int mid_channels = 0;  // M
    int out_channels = 0;  // Q
    bool relu_after_each = true;
};

/// An n-stage cascade that collapses an input_h × input_w patch to 1×1.
struct CsconvSpec {
    int input_h = 0;
    int input_w = 0;
    std::vector<SubpatchFilterSpec> stages;
};

/// Result of walking the shrink recurrence H_i = H_{i-1} - h_i + 1.
struct CascadePlan {
    std::vector<std::pair<int, int>> sizes;      // patch size after each stage, ends at (1, 1)
    std::vector<std::int64_t> subpatch_counts;   // overlapping subpatches seen by each stage
};

enum class CascadeMode { strict, permissive };

/// Number of overlapping h×w subpatches in an H×W patch: (H-h+1)*(W-w+1).
std::int64_t count_subpatches(int H, int W, int h, int w);

/// Validates the spec (channel chain, positive extents) and walks the shrink
/// recurrence stage by stage. Succeeds only if the final size is exactly 1×1;
/// otherwise reports the offending stage and residual size. Strict mode
/// rejects cascades whose kernel extents grow from one stage to the next;
/// permissive mode records a warning instead.
CascadePlan plan_cascade(const CsconvSpec& spec, CascadeMode mode = CascadeMode::strict,
                         std::vector<std::string>* warnings = nullptr);

template <typename T>
struct SubpatchWeights {
    ConvWeights<T> spatial;  // kernel (M, N, h, w)
    ConvWeights<T> channel;  // kernel (Q, M, 1, 1)
};

template <typename T>
struct CsconvWeights {
    std::vector<SubpatchWeights<T>> stages;
};

/// Gaussian init with std sqrt(2 / fan_in) for both filters, biases zero.
template <typename T>
CsconvWeights<T> init_csconv_weights(const CsconvSpec& spec, Rng& rng, bool with_bias = true);

/// How a csconv layer pads each spatial stage when sliding over a full image.
/// valid: no padding (the patch-level semantics). preserve: pad (h-1)/2 per
/// stage (odd kernels only) so feature map extents are unchanged.
enum class PadPolicy { valid, preserve };

std::pair<int, int> stage_padding(const SubpatchFilterSpec& stage, PadPolicy policy);

/// One stage: spatial conv, ReLU, 1×1 conv, ReLU (ReLUs subject to the stage
/// flag). Spatial padding is explicit; the 1×1 filter never pads.
template <typename T>
Tensor<T> subpatch_forward(const Tensor<T>& input, const SubpatchFilterSpec& stage,
                           const SubpatchWeights<T>& weights, int pad_h = 0, int pad_w = 0);

/// The whole cascade applied to a batch of exact-size patches; output is
/// (n, Q_last, 1, 1).
template <typename T>
Tensor<T> csconv_forward_patchwise(const Tensor<T>& patch, const CsconvSpec& spec,
                                   const CsconvWeights<T>& weights);

/// Intermediate tensors saved by csconv_layer_forward for the backward pass.
template <typename T>
struct CsconvLayerCache {
    std::vector<Tensor<T>> inputs;       // feature map entering each stage
    std::vector<Tensor<T>> spatial_pre;  // spatial conv output, before ReLU
    std::vector<Tensor<T>> mid;          // input to the channel filter
    std::vector<Tensor<T>> channel_pre;  // channel conv output, before ReLU
};

/// The csconv filter slid over a full image, computed as full-feature-map
/// convolutions stage by stage. With pad 0 this equals running
/// csconv_forward_patchwise over every input_h × input_w window.
template <typename T>
Tensor<T> csconv_layer_forward(const Tensor<T>& image, const CsconvSpec& spec,
                               const CsconvWeights<T>& weights, PadPolicy policy,
                               CsconvLayerCache<T>* cache = nullptr);

template <typename T>
struct CsconvLayerGrads {
    Tensor<T> input;
    std::vector<SubpatchWeights<T>> stages;
};

template <typename T>
CsconvLayerGrads<T> csconv_layer_backward(const CsconvSpec& spec, const CsconvWeights<T>& weights,
                                          PadPolicy policy, const CsconvLayerCache<T>& cache,
                                          const Tensor<T>& grad_out);

}  // namespace csnet
