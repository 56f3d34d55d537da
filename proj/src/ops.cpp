#include "csnet/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace csnet {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;

template <typename T>
void require_finite(const Tensor<T>& t, const char* op) {
    if (!t.all_finite()) throw Error(std::string(op) + ": non-finite input");
}

// Unpacks one image (C, H, W) into columns: row (c*kh + ki)*kw + kj holds the
// (ki, kj) tap of channel c for every output location, zero where the tap
// falls into padding.
template <typename T>
void im2col(const T* im, std::int64_t C, std::int64_t H, std::int64_t W,
            std::int64_t kh, std::int64_t kw, int pad_h, int pad_w,
            std::int64_t oh, std::int64_t ow, T* col) {
    T* dst = col;
    for (std::int64_t c = 0; c < C; ++c) {
        const T* src = im + c * H * W;
        for (std::int64_t ki = 0; ki < kh; ++ki) {
            for (std::int64_t kj = 0; kj < kw; ++kj) {
                for (std::int64_t y = 0; y < oh; ++y) {
                    const std::int64_t ih = y + ki - pad_h;
                    if (ih < 0 || ih >= H) {
                        std::fill(dst, dst + ow, T(0));
                        dst += ow;
                        continue;
                    }
                    const std::int64_t x0 = std::max<std::int64_t>(0, pad_w - kj);
                    const std::int64_t x1 = std::min<std::int64_t>(ow, W + pad_w - kj);
                    std::fill(dst, dst + std::min(x0, ow), T(0));
                    if (x1 > x0)
                        std::memcpy(dst + x0, src + ih * W + x0 + kj - pad_w,
                                    static_cast<std::size_t>(x1 - x0) * sizeof(T));
                    if (x1 < ow) std::fill(dst + std::max(x1, std::int64_t(0)), dst + ow, T(0));
                    dst += ow;
                }
            }
        }
    }
}

// Transpose of im2col: scatters column gradients back onto the image, summing
// where receptive fields overlap.
template <typename T>
void col2im_add(const T* col, std::int64_t C, std::int64_t H, std::int64_t W,
                std::int64_t kh, std::int64_t kw, int pad_h, int pad_w,
                std::int64_t oh, std::int64_t ow, T* im) {
    const T* src = col;
    for (std::int64_t c = 0; c < C; ++c) {
        T* dst = im + c * H * W;
        for (std::int64_t ki = 0; ki < kh; ++ki) {
            for (std::int64_t kj = 0; kj < kw; ++kj) {
                for (std::int64_t y = 0; y < oh; ++y) {
                    const std::int64_t ih = y + ki - pad_h;
                    if (ih < 0 || ih >= H) {
                        src += ow;
                        continue;
                    }
                    const std::int64_t x0 = std::max<std::int64_t>(0, pad_w - kj);
                    const std::int64_t x1 = std::min<std::int64_t>(ow, W + pad_w - kj);
                    T* row = dst + ih * W + kj - pad_w;
                    for (std::int64_t x = x0; x < x1; ++x) row[x] += src[x];
                    src += ow;
                }
            }
        }
    }
}

template <typename T>
void check_conv_args(const Tensor<T>& input, const ConvWeights<T>& w, int pad_h, int pad_w,
                     std::int64_t& oh, std::int64_t& ow) {
    if (pad_h < 0 || pad_w < 0) throw ShapeError("conv: padding must be non-negative");
    const Shape4& in = input.shape();
    const Shape4& k = w.kernel.shape();
    if (in.c != k.c)
        throw ShapeError("conv: input has " + std::to_string(in.c) + " channels but kernel expects " +
                         std::to_string(k.c));
    oh = in.h + 2 * pad_h - k.h + 1;
    ow = in.w + 2 * pad_w - k.w + 1;
    if (oh < 1 || ow < 1)
        throw ShapeError("conv: kernel " + std::to_string(k.h) + "x" + std::to_string(k.w) +
                         " exceeds padded input " + std::to_string(in.h + 2 * pad_h) + "x" +
                         std::to_string(in.w + 2 * pad_w));
    if (w.has_bias() && !(w.bias.shape() == Shape4{1, k.n, 1, 1}))
        throw ShapeError("conv: bias shape " + w.bias.shape().str() + " does not match " +
                         std::to_string(k.n) + " output channels");
}

}  // namespace

template <typename T>
Tensor<T> conv_forward(const Tensor<T>& input, const ConvWeights<T>& weights, int pad_h, int pad_w) {
    std::int64_t oh = 0, ow = 0;
    check_conv_args(input, weights, pad_h, pad_w, oh, ow);
    require_finite(input, "conv_forward");

    const Shape4& in = input.shape();
    const std::int64_t M = weights.out_channels();
    const std::int64_t C = in.c, kh = weights.kh(), kw = weights.kw();
    const std::int64_t ckk = C * kh * kw, ohw = oh * ow;

    Tensor<T> out({in.n, M, oh, ow});
    ConstMap<T> wmat(weights.kernel.data(), M, ckk);

    const bool direct = (kh == 1 && kw == 1 && pad_h == 0 && pad_w == 0);
    std::vector<T> col(direct ? 0 : static_cast<std::size_t>(ckk * ohw));

    for (std::int64_t n = 0; n < in.n; ++n) {
        const T* im = input.data() + n * C * in.h * in.w;
        const T* cols = im;
        if (!direct) {
            im2col(im, C, in.h, in.w, kh, kw, pad_h, pad_w, oh, ow, col.data());
            cols = col.data();
        }
        MutMap<T> out_n(out.data() + n * M * ohw, M, ohw);
        out_n.noalias() = wmat * ConstMap<T>(cols, ckk, ohw);
        if (weights.has_bias()) {
            const T* b = weights.bias.data();
            for (std::int64_t m = 0; m < M; ++m) out_n.row(m).array() += b[m];
        }
    }
    return out;
}

template <typename T>
ConvGrads<T> conv_backward(const Tensor<T>& input, const ConvWeights<T>& weights,
                           const Tensor<T>& grad_out, int pad_h, int pad_w) {
    std::int64_t oh = 0, ow = 0;
    check_conv_args(input, weights, pad_h, pad_w, oh, ow);
    const Shape4& in = input.shape();
    const std::int64_t M = weights.out_channels();
    if (!(grad_out.shape() == Shape4{in.n, M, oh, ow}))
        throw ShapeError("conv_backward: grad_out shape " + grad_out.shape().str() + " expected " +
                         Shape4{in.n, M, oh, ow}.str());

    const std::int64_t C = in.c, kh = weights.kh(), kw = weights.kw();
    const std::int64_t ckk = C * kh * kw, ohw = oh * ow;

    ConvGrads<T> g;
    g.input = Tensor<T>(in);
    g.weights.kernel = Tensor<T>(weights.kernel.shape());
    if (weights.has_bias()) g.weights.bias = Tensor<T>(weights.bias.shape());

    ConstMap<T> wmat(weights.kernel.data(), M, ckk);
    MutMap<T> gk(g.weights.kernel.data(), M, ckk);

    const bool direct = (kh == 1 && kw == 1 && pad_h == 0 && pad_w == 0);
    std::vector<T> col(direct ? 0 : static_cast<std::size_t>(ckk * ohw));
    std::vector<T> dcol(direct ? 0 : static_cast<std::size_t>(ckk * ohw));

    for (std::int64_t n = 0; n < in.n; ++n) {
        const T* im = input.data() + n * C * in.h * in.w;
        ConstMap<T> gout_n(grad_out.data() + n * M * ohw, M, ohw);

        if (direct) {
            gk.noalias() += gout_n * ConstMap<T>(im, ckk, ohw).transpose();
            MutMap<T>(g.input.data() + n * C * in.h * in.w, ckk, ohw).noalias() =
                wmat.transpose() * gout_n;
        } else {
            im2col(im, C, in.h, in.w, kh, kw, pad_h, pad_w, oh, ow, col.data());
            gk.noalias() += gout_n * ConstMap<T>(col.data(), ckk, ohw).transpose();
            MutMap<T>(dcol.data(), ckk, ohw).noalias() = wmat.transpose() * gout_n;
            col2im_add(dcol.data(), C, in.h, in.w, kh, kw, pad_h, pad_w, oh, ow,
                       g.input.data() + n * C * in.h * in.w);
        }
        if (weights.has_bias()) {
            // Strict-order accumulation: Eigen's vectorized sum splits by the
            // buffer address, which makes repeated runs drift in the last bits.
            T* gb = g.weights.bias.data();
            const T* go = grad_out.data() + n * M * ohw;
            for (std::int64_t m = 0; m < M; ++m) {
                T acc = 0;
                for (std::int64_t i = 0; i < ohw; ++i) acc += go[m * ohw + i];
                gb[m] += acc;
            }
        }
    }
    return g;
}

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input) {
    require_finite(input, "relu_forward");
    Tensor<T> out(input.shape());
    const T* x = input.data();
    T* y = out.data();
    for (std::int64_t i = 0; i < input.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
    return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out) {
    if (!(input.shape() == grad_out.shape()))
        throw ShapeError("relu_backward: grad shape " + grad_out.shape().str() + " vs input " +
                         input.shape().str());
    Tensor<T> out(input.shape());
    const T* x = input.data();
    const T* g = grad_out.data();
    T* y = out.data();
    for (std::int64_t i = 0; i < input.size(); ++i) y[i] = x[i] > T(0) ? g[i] : T(0);
    return out;
}

template <typename T>
MaxPoolResult<T> maxpool_forward(const Tensor<T>& input, int kh, int kw, int sh, int sw,
                                 bool cover_edges) {
    const Shape4& in = input.shape();
    if (kh < 1 || kw < 1 || sh < 1 || sw < 1) throw ShapeError("maxpool: window and stride must be positive");
    if (kh > in.h || kw > in.w)
        throw ShapeError("maxpool: window " + std::to_string(kh) + "x" + std::to_string(kw) +
                         " exceeds input " + std::to_string(in.h) + "x" + std::to_string(in.w));
    const std::int64_t oh = cover_edges ? (in.h - kh + sh - 1) / sh + 1 : (in.h - kh) / sh + 1;
    const std::int64_t ow = cover_edges ? (in.w - kw + sw - 1) / sw + 1 : (in.w - kw) / sw + 1;

    MaxPoolResult<T> res;
    res.output = Tensor<T>({in.n, in.c, oh, ow});
    res.argmax.resize(static_cast<std::size_t>(res.output.size()));

    T* out = res.output.data();
    std::int64_t* arg = res.argmax.data();
    std::int64_t o = 0;
    for (std::int64_t n = 0; n < in.n; ++n) {
        for (std::int64_t c = 0; c < in.c; ++c) {
            const T* plane = input.data() + (n * in.c + c) * in.h * in.w;
            const std::int64_t base = (n * in.c + c) * in.h * in.w;
            for (std::int64_t y = 0; y < oh; ++y) {
                const std::int64_t h0 = y * sh;
                const std::int64_t h1 = std::min<std::int64_t>(h0 + kh, in.h);
                for (std::int64_t x = 0; x < ow; ++x) {
                    const std::int64_t w0 = x * sw;
                    const std::int64_t w1 = std::min<std::int64_t>(w0 + kw, in.w);
                    T best = plane[h0 * in.w + w0];
                    std::int64_t best_idx = h0 * in.w + w0;
                    for (std::int64_t i = h0; i < h1; ++i)
                        for (std::int64_t j = w0; j < w1; ++j) {
                            const T v = plane[i * in.w + j];
                            if (v > best) {
                                best = v;
                                best_idx = i * in.w + j;
                            }
                        }
                    out[o] = best;
                    arg[o] = base + best_idx;
                    ++o;
                }
            }
        }
    }
    return res;
}

template <typename T>
Tensor<T> maxpool_backward(const Shape4& input_shape, const MaxPoolResult<T>& result,
                           const Tensor<T>& grad_out) {
    if (!(grad_out.shape() == result.output.shape()))
        throw ShapeError("maxpool_backward: grad shape " + grad_out.shape().str() + " vs output " +
                         result.output.shape().str());
    Tensor<T> gin(input_shape);
    const T* g = grad_out.data();
    for (std::int64_t i = 0; i < grad_out.size(); ++i)
        gin.data()[result.argmax[static_cast<std::size_t>(i)]] += g[i];
    return gin;
}

template <typename T>
Tensor<T> global_avg_pool_forward(const Tensor<T>& input) {
    const Shape4& in = input.shape();
    Tensor<T> out({in.n, in.c, 1, 1});
    const std::int64_t hw = in.h * in.w;
    for (std::int64_t nc = 0; nc < in.n * in.c; ++nc) {
        const T* plane = input.data() + nc * hw;
        T s = T(0);
        for (std::int64_t i = 0; i < hw; ++i) s += plane[i];
        out.data()[nc] = s / static_cast<T>(hw);
    }
    return out;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Shape4& input_shape, const Tensor<T>& grad_out) {
    if (!(grad_out.shape() == Shape4{input_shape.n, input_shape.c, 1, 1}))
        throw ShapeError("global_avg_pool_backward: grad shape " + grad_out.shape().str());
    Tensor<T> gin(input_shape);
    const std::int64_t hw = input_shape.h * input_shape.w;
    for (std::int64_t nc = 0; nc < input_shape.n * input_shape.c; ++nc) {
        const T v = grad_out.data()[nc] / static_cast<T>(hw);
        T* plane = gin.data() + nc * hw;
        for (std::int64_t i = 0; i < hw; ++i) plane[i] = v;
    }
    return gin;
}

namespace {

template <typename T>
void check_bn_args(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta) {
    const Shape4 want{1, input.shape().c, 1, 1};
    if (!(gamma.shape() == want) || !(beta.shape() == want))
        throw ShapeError("batchnorm: gamma/beta must have shape " + want.str());
}

}  // namespace

template <typename T>
Tensor<T> batchnorm_forward_train(const Tensor<T>& input, const Tensor<T>& gamma,
                                  const Tensor<T>& beta, std::type_identity_t<T> eps,
                                  BatchNormCache<std::type_identity_t<T>>* cache,
                                  Tensor<std::type_identity_t<T>>* running_mean,
                                  Tensor<std::type_identity_t<T>>* running_var,
                                  std::type_identity_t<T> momentum) {
    check_bn_args(input, gamma, beta);
    require_finite(input, "batchnorm_forward_train");
    const Shape4& in = input.shape();
    const std::int64_t m = in.n * in.h * in.w;
    if (m < 2) throw Error("batchnorm_forward_train: batch*h*w must be >= 2, got " + std::to_string(m));

    Tensor<T> out(in);
    Tensor<T> x_hat(in);
    std::vector<T> inv_stds(static_cast<std::size_t>(in.c));
    const std::int64_t hw = in.h * in.w;

    for (std::int64_t c = 0; c < in.c; ++c) {
        double sum = 0.0;
        for (std::int64_t n = 0; n < in.n; ++n) {
            const T* plane = input.data() + (n * in.c + c) * hw;
            for (std::int64_t i = 0; i < hw; ++i) sum += static_cast<double>(plane[i]);
        }
        const double mean = sum / static_cast<double>(m);
        double var = 0.0;
        for (std::int64_t n = 0; n < in.n; ++n) {
            const T* plane = input.data() + (n * in.c + c) * hw;
            for (std::int64_t i = 0; i < hw; ++i) {
                const double d = static_cast<double>(plane[i]) - mean;
                var += d * d;
            }
        }
        var /= static_cast<double>(m);  // biased, matching the normalization below

        const T mu = static_cast<T>(mean);
        const T inv_std = T(1) / std::sqrt(static_cast<T>(var) + eps);
        inv_stds[static_cast<std::size_t>(c)] = inv_std;
        const T g = gamma.data()[c], b = beta.data()[c];
        for (std::int64_t n = 0; n < in.n; ++n) {
            const T* plane = input.data() + (n * in.c + c) * hw;
            T* xh = x_hat.data() + (n * in.c + c) * hw;
            T* y = out.data() + (n * in.c + c) * hw;
            for (std::int64_t i = 0; i < hw; ++i) {
                xh[i] = (plane[i] - mu) * inv_std;
                y[i] = g * xh[i] + b;
            }
        }
        if (running_mean && running_var) {
            running_mean->data()[c] = momentum * running_mean->data()[c] + (T(1) - momentum) * mu;
            running_var->data()[c] =
                momentum * running_var->data()[c] + (T(1) - momentum) * static_cast<T>(var);
        }
    }
    if (cache) {
        cache->x_hat = std::move(x_hat);
        cache->inv_std = std::move(inv_stds);
    }
    return out;
}

template <typename T>
Tensor<T> batchnorm_forward_inference(const Tensor<T>& input, const Tensor<T>& gamma,
                                      const Tensor<T>& beta, const Tensor<T>& running_mean,
                                      const Tensor<T>& running_var, std::type_identity_t<T> eps) {
    check_bn_args(input, gamma, beta);
    require_finite(input, "batchnorm_forward_inference");
    const Shape4& in = input.shape();
    Tensor<T> out(in);
    const std::int64_t hw = in.h * in.w;
    for (std::int64_t c = 0; c < in.c; ++c) {
        const T mu = running_mean.data()[c];
        const T inv_std = T(1) / std::sqrt(running_var.data()[c] + eps);
        const T g = gamma.data()[c], b = beta.data()[c];
        for (std::int64_t n = 0; n < in.n; ++n) {
            const T* plane = input.data() + (n * in.c + c) * hw;
            T* y = out.data() + (n * in.c + c) * hw;
            for (std::int64_t i = 0; i < hw; ++i) y[i] = g * (plane[i] - mu) * inv_std + b;
        }
    }
    return out;
}

template <typename T>
BatchNormGrads<T> batchnorm_backward(const Tensor<T>& grad_out, const Tensor<T>& gamma,
                                     const BatchNormCache<T>& cache) {
    const Shape4& in = cache.x_hat.shape();
    if (!(grad_out.shape() == in))
        throw ShapeError("batchnorm_backward: grad shape " + grad_out.shape().str() + " vs " + in.str());

    BatchNormGrads<T> g;
    g.input = Tensor<T>(in);
    g.gamma = Tensor<T>({1, in.c, 1, 1});
    g.beta = Tensor<T>({1, in.c, 1, 1});
    const std::int64_t hw = in.h * in.w;
    const std::int64_t m = in.n * hw;

    for (std::int64_t c = 0; c < in.c; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::int64_t n = 0; n < in.n; ++n) {
            const T* dy = grad_out.data() + (n * in.c + c) * hw;
            const T* xh = cache.x_hat.data() + (n * in.c + c) * hw;
            for (std::int64_t i = 0; i < hw; ++i) {
                sum_dy += static_cast<double>(dy[i]);
                sum_dy_xhat += static_cast<double>(dy[i]) * static_cast<double>(xh[i]);
            }
        }
        g.beta.data()[c] = static_cast<T>(sum_dy);
        g.gamma.data()[c] = static_cast<T>(sum_dy_xhat);

        const T k = gamma.data()[c] * cache.inv_std[static_cast<std::size_t>(c)];
        const T mean_dy = static_cast<T>(sum_dy / static_cast<double>(m));
        const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / static_cast<double>(m));
        for (std::int64_t n = 0; n < in.n; ++n) {
            const T* dy = grad_out.data() + (n * in.c + c) * hw;
            const T* xh = cache.x_hat.data() + (n * in.c + c) * hw;
            T* dx = g.input.data() + (n * in.c + c) * hw;
            for (std::int64_t i = 0; i < hw; ++i)
                dx[i] = k * (dy[i] - mean_dy - xh[i] * mean_dy_xhat);
        }
    }
    return g;
}

template <typename T>
DropoutResult<T> dropout_forward(const Tensor<T>& input, double rate, bool train, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0)
        throw Error("dropout_forward: rate must be in [0, 1), got " + std::to_string(rate));
    DropoutResult<T> res;
    if (!train || rate == 0.0) {
        res.output = input;  // identity; no RNG draws, mask left empty
        return res;
    }
    res.output = Tensor<T>(input.shape());
    res.mask = Tensor<T>(input.shape());
    const T scale = static_cast<T>(1.0 / (1.0 - rate));
    const T* x = input.data();
    T* y = res.output.data();
    T* msk = res.mask.data();
    for (std::int64_t i = 0; i < input.size(); ++i) {
        msk[i] = rng.uniform() < rate ? T(0) : scale;
        y[i] = x[i] * msk[i];
    }
    return res;
}

template <typename T>
Tensor<T> dropout_backward(const Tensor<T>& mask, const Tensor<T>& grad_out) {
    if (mask.empty()) return grad_out;  // forward was identity
    if (!(mask.shape() == grad_out.shape()))
        throw ShapeError("dropout_backward: grad shape " + grad_out.shape().str() + " vs mask " +
                         mask.shape().str());
    Tensor<T> gin(grad_out.shape());
    for (std::int64_t i = 0; i < grad_out.size(); ++i)
        gin.data()[i] = grad_out.data()[i] * mask.data()[i];
    return gin;
}

template <typename T>
SoftmaxLossResult<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
    const Shape4& in = logits.shape();
    if (in.h != 1 || in.w != 1)
        throw ShapeError("softmax_cross_entropy: logits must be (n, classes, 1, 1), got " + in.str());
    if (static_cast<std::int64_t>(labels.size()) != in.n)
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                         std::to_string(in.n));
    require_finite(logits, "softmax_cross_entropy");

    SoftmaxLossResult<T> res;
    res.grad_logits = Tensor<T>(in);
    double total = 0.0;
    const std::int64_t C = in.c;
    for (std::int64_t n = 0; n < in.n; ++n) {
        const int label = labels[static_cast<std::size_t>(n)];
        if (label < 0 || label >= C)
            throw Error("softmax_cross_entropy: label " + std::to_string(label) + " out of range [0, " +
                        std::to_string(C) + ")");
        const T* z = logits.data() + n * C;
        T zmax = z[0];
        for (std::int64_t c = 1; c < C; ++c) zmax = std::max(zmax, z[c]);
        double denom = 0.0;
        for (std::int64_t c = 0; c < C; ++c) denom += std::exp(static_cast<double>(z[c] - zmax));
        const double log_denom = std::log(denom);
        total += log_denom - static_cast<double>(z[label] - zmax);

        T* g = res.grad_logits.data() + n * C;
        for (std::int64_t c = 0; c < C; ++c) {
            const double p = std::exp(static_cast<double>(z[c] - zmax)) / denom;
            g[c] = static_cast<T>((p - (c == label ? 1.0 : 0.0)) / static_cast<double>(in.n));
        }
    }
    res.loss = total / static_cast<double>(in.n);
    return res;
}

template <typename T>
std::vector<int> argmax_classes(const Tensor<T>& logits) {
    const Shape4& in = logits.shape();
    if (in.h != 1 || in.w != 1)
        throw ShapeError("argmax_classes: logits must be (n, classes, 1, 1), got " + in.str());
    std::vector<int> out(static_cast<std::size_t>(in.n));
    for (std::int64_t n = 0; n < in.n; ++n) {
        const T* z = logits.data() + n * in.c;
        int best = 0;
        for (std::int64_t c = 1; c < in.c; ++c)
            if (z[c] > z[best]) best = static_cast<int>(c);
        out[static_cast<std::size_t>(n)] = best;
    }
    return out;
}

#define CSNET_INSTANTIATE_OPS(T)                                                                      \
    template Tensor<T> conv_forward<T>(const Tensor<T>&, const ConvWeights<T>&, int, int);            \
    template ConvGrads<T> conv_backward<T>(const Tensor<T>&, const ConvWeights<T>&, const Tensor<T>&, \
                                           int, int);                                                 \
    template Tensor<T> relu_forward<T>(const Tensor<T>&);                                             \
    template Tensor<T> relu_backward<T>(const Tensor<T>&, const Tensor<T>&);                          \
    template MaxPoolResult<T> maxpool_forward<T>(const Tensor<T>&, int, int, int, int, bool);         \
    template Tensor<T> maxpool_backward<T>(const Shape4&, const MaxPoolResult<T>&, const Tensor<T>&); \
    template Tensor<T> global_avg_pool_forward<T>(const Tensor<T>&);                                  \
    template Tensor<T> global_avg_pool_backward<T>(const Shape4&, const Tensor<T>&);                  \
    template Tensor<T> batchnorm_forward_train<T>(const Tensor<T>&, const Tensor<T>&,                 \
                                                  const Tensor<T>&, T, BatchNormCache<T>*,            \
                                                  Tensor<T>*, Tensor<T>*, T);                         \
    template Tensor<T> batchnorm_forward_inference<T>(const Tensor<T>&, const Tensor<T>&,             \
                                                      const Tensor<T>&, const Tensor<T>&,             \
                                                      const Tensor<T>&, T);                           \
    template BatchNormGrads<T> batchnorm_backward<T>(const Tensor<T>&, const Tensor<T>&,              \
                                                     const BatchNormCache<T>&);                       \
    template DropoutResult<T> dropout_forward<T>(const Tensor<T>&, double, bool, Rng&);               \
    template Tensor<T> dropout_backward<T>(const Tensor<T>&, const Tensor<T>&);                       \
    template SoftmaxLossResult<T> softmax_cross_entropy<T>(const Tensor<T>&, const std::vector<int>&); \
    template std::vector<int> argmax_classes<T>(const Tensor<T>&);

CSNET_INSTANTIATE_OPS(float)
CSNET_INSTANTIATE_OPS(double)

}  // namespace csnet
