#pragma once

#include <type_traits>
#include <utility>
#include <vector>

#include "csnet/tensor.hpp"

namespace csnet {

/// Convolution kernel plus optional per-output-channel bias.
/// kernel shape: (out_channels, in_channels, kh, kw); bias shape: (1, out_channels, 1, 1).
template <typename T>
struct ConvWeights {
    Tensor<T> kernel;
    Tensor<T> bias;  // empty when the filter carries no bias

    bool has_bias() const { return !bias.empty(); }
    std::int64_t out_channels() const { return kernel.shape().n; }
    std::int64_t in_channels() const { return kernel.shape().c; }
    std::int64_t kh() const { return kernel.shape().h; }
    std::int64_t kw() const { return kernel.shape().w; }
};

template <typename T>
struct ConvGrads {
    Tensor<T> input;
    ConvWeights<T> weights;
};

/// Valid convolution with optional symmetric zero padding per spatial axis.
/// Output extent: h + 2*pad_h - kh + 1 by w + 2*pad_w - kw + 1.
template <typename T>
Tensor<T> conv_forward(const Tensor<T>& input, const ConvWeights<T>& weights,
                       int pad_h = 0, int pad_w = 0);

/// Gradients of sum(grad_out * conv_forward(input, weights)) w.r.t. input, kernel, bias.
template <typename T>
ConvGrads<T> conv_backward(const Tensor<T>& input, const ConvWeights<T>& weights,
                           const Tensor<T>& grad_out, int pad_h = 0, int pad_w = 0);

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input);

/// Passes gradient where input > 0; subgradient at exactly 0 is 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out);

template <typename T>
struct MaxPoolResult {
    Tensor<T> output;
    std::vector<std::int64_t> argmax;  // flat input index per output element
};

/// Max pooling. Default geometry is floor((dim - k)/s) + 1. With cover_edges,
/// extra partial windows are added so every input row/column is covered
/// (windows clip at the border); output extent becomes ceil((dim - k)/s) + 1.
/// Ties select the first maximum in row-major window scan.
template <typename T>
MaxPoolResult<T> maxpool_forward(const Tensor<T>& input, int kh, int kw, int sh, int sw,
                                 bool cover_edges = false);

template <typename T>
Tensor<T> maxpool_backward(const Shape4& input_shape, const MaxPoolResult<T>& result,
                           const Tensor<T>& grad_out);

/// Mean over each channel's spatial map: (n, c, h, w) -> (n, c, 1, 1).
template <typename T>
Tensor<T> global_avg_pool_forward(const Tensor<T>& input);

template <typename T>
Tensor<T> global_avg_pool_backward(const Shape4& input_shape, const Tensor<T>& grad_out);

template <typename T>
struct BatchNormCache {
    Tensor<T> x_hat;
    std::vector<T> inv_std;  // per channel
};

template <typename T>
struct BatchNormGrads {
    Tensor<T> input;
    Tensor<T> gamma;
    Tensor<T> beta;
};

/// Per-channel standardization over (n, h, w) with batch statistics, then affine
/// scale/shift. gamma/beta/running stats have shape (1, c, 1, 1). When
/// running_mean/running_var are given they are updated in place by exponential
/// moving average with the given momentum. Requires n*h*w >= 2.
template <typename T>
Tensor<T> batchnorm_forward_train(const Tensor<T>& input, const Tensor<T>& gamma,
                                  const Tensor<T>& beta, std::type_identity_t<T> eps,
                                  BatchNormCache<std::type_identity_t<T>>* cache,
                                  Tensor<std::type_identity_t<T>>* running_mean = nullptr,
                                  Tensor<std::type_identity_t<T>>* running_var = nullptr,
                                  std::type_identity_t<T> momentum = T(0.9));

/// Standardizes with the stored running statistics instead of batch statistics.
template <typename T>
Tensor<T> batchnorm_forward_inference(const Tensor<T>& input, const Tensor<T>& gamma,
                                      const Tensor<T>& beta, const Tensor<T>& running_mean,
                                      const Tensor<T>& running_var, std::type_identity_t<T> eps);

template <typename T>
BatchNormGrads<T> batchnorm_backward(const Tensor<T>& grad_out, const Tensor<T>& gamma,
                                     const BatchNormCache<T>& cache);

template <typename T>
struct DropoutResult {
    Tensor<T> output;
    Tensor<T> mask;  // element values: 0 or 1/(1-rate)
};

/// Inverted dropout: training zeroes each element with probability rate and
/// scales survivors by 1/(1-rate); inference is the identity.
template <typename T>
DropoutResult<T> dropout_forward(const Tensor<T>& input, double rate, bool train, Rng& rng);

template <typename T>
Tensor<T> dropout_backward(const Tensor<T>& mask, const Tensor<T>& grad_out);

template <typename T>
struct SoftmaxLossResult {
    double loss = 0.0;          // mean over the batch of -log softmax(logit)[label]
    Tensor<T> grad_logits;      // (softmax - one_hot) / n
};

/// Softmax cross-entropy over logits of shape (n, classes, 1, 1), computed with
/// max-subtraction stabilization.
template <typename T>
SoftmaxLossResult<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels);

/// Predicted class per batch row (first maximum wins on ties).
template <typename T>
std::vector<int> argmax_classes(const Tensor<T>& logits);

}  // namespace csnet
