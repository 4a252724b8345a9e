#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <utility>

#include "mvfcnn/tensor.hpp"

namespace mvfcnn {

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

template <class T>
struct ConvParams {
    Tensor<T> weights;      // (K, C_in, k_h, k_w)
    std::vector<T> bias;    // length K
    int stride = 1;
    int padding = 0;

    int out_channels() const { return weights.n; }
    int in_channels() const { return weights.c; }

    void validate() const {
        if (weights.n < 1 || weights.h < 1 || weights.w < 1)
            throw std::invalid_argument("ConvParams: kernel dims must be >= 1");
        if (static_cast<int>(bias.size()) != weights.n)
            throw std::invalid_argument("ConvParams: bias length " +
                                        std::to_string(bias.size()) +
                                        " != filter count " + std::to_string(weights.n));
        if (stride < 1) throw std::invalid_argument("ConvParams: stride must be >= 1");
        if (padding < 0) throw std::invalid_argument("ConvParams: negative padding");
    }
};

template <class T>
inline std::pair<int, int> conv2d_out_dims(const Tensor<T>& input, const ConvParams<T>& p) {
    int oh = (input.h + 2 * p.padding - p.weights.h) / p.stride + 1;
    int ow = (input.w + 2 * p.padding - p.weights.w) / p.stride + 1;
    return {oh, ow};
}

template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const ConvParams<T>& p) {
    p.validate();
    if (input.c != p.in_channels())
        throw std::invalid_argument("conv2d: input channels " + input.shape_str() +
                                    " do not match kernel " + p.weights.shape_str());
    auto [oh, ow] = conv2d_out_dims(input, p);
    if (oh < 1 || ow < 1)
        throw std::invalid_argument("conv2d: output dims degenerate for input " +
                                    input.shape_str() + " kernel " + p.weights.shape_str());
    const int K = p.out_channels(), C = input.c, kh = p.weights.h, kw = p.weights.w;
    Tensor<T> out(input.n, K, oh, ow);
    for (int in = 0; in < input.n; ++in)
        for (int k = 0; k < K; ++k)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    T acc = p.bias[k];
                    const int y0 = oy * p.stride - p.padding;
                    const int x0 = ox * p.stride - p.padding;
                    for (int ic = 0; ic < C; ++ic)
                        for (int ky = 0; ky < kh; ++ky) {
                            const int iy = y0 + ky;
                            if (iy < 0 || iy >= input.h) continue;
                            for (int kx = 0; kx < kw; ++kx) {
                                const int ix = x0 + kx;
                                if (ix < 0 || ix >= input.w) continue;
                                acc += p.weights.at(k, ic, ky, kx) * input.at(in, ic, iy, ix);
                            }
                        }
                    out.at(in, k, oy, ox) = acc;
                }
    return out;
}

template <class T>
struct ConvGrads {
    Tensor<T> input;
    Tensor<T> weights;
    std::vector<T> bias;
};

template <class T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const ConvParams<T>& p,
                             const Tensor<T>& grad_out) {
    p.validate();
    auto [oh, ow] = conv2d_out_dims(input, p);
    if (grad_out.n != input.n || grad_out.c != p.out_channels() ||
        grad_out.h != oh || grad_out.w != ow)
        throw std::invalid_argument("conv2d_backward: grad_out " + grad_out.shape_str() +
                                    " does not match forward output shape");
    ConvGrads<T> g;
    g.input = Tensor<T>(input.n, input.c, input.h, input.w);
    g.weights = Tensor<T>(p.weights.n, p.weights.c, p.weights.h, p.weights.w);
    g.bias.assign(p.bias.size(), T(0));
    const int K = p.out_channels(), C = input.c, kh = p.weights.h, kw = p.weights.w;
    for (int in = 0; in < input.n; ++in)
        for (int k = 0; k < K; ++k)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    const T go = grad_out.at(in, k, oy, ox);
                    if (go == T(0)) continue;
                    g.bias[k] += go;
                    const int y0 = oy * p.stride - p.padding;
                    const int x0 = ox * p.stride - p.padding;
                    for (int ic = 0; ic < C; ++ic)
                        for (int ky = 0; ky < kh; ++ky) {
                            const int iy = y0 + ky;
                            if (iy < 0 || iy >= input.h) continue;
                            for (int kx = 0; kx < kw; ++kx) {
                                const int ix = x0 + kx;
                                if (ix < 0 || ix >= input.w) continue;
                                g.weights.at(k, ic, ky, kx) += go * input.at(in, ic, iy, ix);
                                g.input.at(in, ic, iy, ix) += go * p.weights.at(k, ic, ky, kx);
                            }
                        }
                }
    return g;
}

// ---------------------------------------------------------------------------
// Max pooling
// ---------------------------------------------------------------------------

template <class T>
struct MaxPoolResult {
    Tensor<T> output;
    // flat index into the input tensor for each output cell
    std::vector<std::size_t> argmax;
    int in_n = 0, in_c = 0, in_h = 0, in_w = 0;
};

template <class T>
MaxPoolResult<T> maxpool_forward(const Tensor<T>& input, int win_h, int win_w, int stride) {
    if (win_h < 1 || win_w < 1 || stride < 1)
        throw std::invalid_argument("maxpool: window/stride must be >= 1");
    if (win_h > input.h || win_w > input.w)
        throw std::invalid_argument("maxpool: window " + std::to_string(win_h) + "x" +
                                    std::to_string(win_w) + " larger than input " +
                                    input.shape_str());
    const int oh = (input.h - win_h) / stride + 1;
    const int ow = (input.w - win_w) / stride + 1;
    MaxPoolResult<T> r;
    r.output = Tensor<T>(input.n, input.c, oh, ow);
    r.argmax.resize(r.output.size());
    r.in_n = input.n; r.in_c = input.c; r.in_h = input.h; r.in_w = input.w;
    std::size_t oi = 0;
    for (int in = 0; in < input.n; ++in)
        for (int ic = 0; ic < input.c; ++ic)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox, ++oi) {
                    T best{};
                    std::size_t best_idx = 0;
                    bool first = true;
                    for (int ky = 0; ky < win_h; ++ky)
                        for (int kx = 0; kx < win_w; ++kx) {
                            const int iy = oy * stride + ky;
                            const int ix = ox * stride + kx;
                            const std::size_t idx =
                                ((static_cast<std::size_t>(in) * input.c + ic) * input.h + iy) *
                                    input.w + ix;
                            const T v = input.data[idx];
                            if (first || v > best) {  // ties keep first in row-major scan
                                best = v;
                                best_idx = idx;
                                first = false;
                            }
                        }
                    r.output.data[oi] = best;
                    r.argmax[oi] = best_idx;
                }
    return r;
}

template <class T>
Tensor<T> maxpool_backward(const MaxPoolResult<T>& fwd, const Tensor<T>& grad_out) {
    check_same_shape(fwd.output, grad_out, "maxpool_backward");
    Tensor<T> grad_in(fwd.in_n, fwd.in_c, fwd.in_h, fwd.in_w);
    for (std::size_t i = 0; i < grad_out.size(); ++i)
        grad_in.data[fwd.argmax[i]] += grad_out.data[i];
    return grad_in;
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> relu(const Tensor<T>& input) {
    Tensor<T> out = input;
    for (T& v : out.data) v = std::max(T(0), v);
    return out;
}

template <class T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out) {
    check_same_shape(input, grad_out, "relu_backward");
    Tensor<T> grad_in(input.n, input.c, input.h, input.w);
    for (std::size_t i = 0; i < input.size(); ++i)
        grad_in.data[i] = input.data[i] > T(0) ? grad_out.data[i] : T(0);
    return grad_in;
}

// ---------------------------------------------------------------------------
// Fully connected
// ---------------------------------------------------------------------------

template <class T>
struct FcParams {
    // weights laid out (out_dim x in_dim), row-major
    std::vector<T> weights;
    std::vector<T> bias;
    int in_dim = 0, out_dim = 0;

    void validate() const {
        if (static_cast<int>(bias.size()) != out_dim)
            throw std::invalid_argument("FcParams: bias length != out_dim");
        if (weights.size() != static_cast<std::size_t>(in_dim) * out_dim)
            throw std::invalid_argument("FcParams: weight count != in_dim*out_dim");
    }
};

template <class T>
std::vector<T> fc_forward(const std::vector<T>& input, const FcParams<T>& p) {
    p.validate();
    if (static_cast<int>(input.size()) != p.in_dim)
        throw std::invalid_argument("fc_forward: input length " +
                                    std::to_string(input.size()) + " != in_dim " +
                                    std::to_string(p.in_dim));
    std::vector<T> out(p.out_dim);
    for (int k = 0; k < p.out_dim; ++k) {
        T acc = p.bias[k];
        const T* row = p.weights.data() + static_cast<std::size_t>(k) * p.in_dim;
        for (int l = 0; l < p.in_dim; ++l) acc += row[l] * input[l];
        out[k] = acc;
    }
    return out;
}

template <class T>
struct FcGrads {
    std::vector<T> input;
    std::vector<T> weights;
    std::vector<T> bias;
};

template <class T>
FcGrads<T> fc_backward(const std::vector<T>& input, const FcParams<T>& p,
                       const std::vector<T>& grad_out) {
    p.validate();
    if (static_cast<int>(grad_out.size()) != p.out_dim)
        throw std::invalid_argument("fc_backward: grad_out length != out_dim");
    FcGrads<T> g;
    g.input.assign(p.in_dim, T(0));
    g.weights.assign(p.weights.size(), T(0));
    g.bias = grad_out;
    for (int k = 0; k < p.out_dim; ++k) {
        const T go = grad_out[k];
        const T* row = p.weights.data() + static_cast<std::size_t>(k) * p.in_dim;
        T* grow = g.weights.data() + static_cast<std::size_t>(k) * p.in_dim;
        for (int l = 0; l < p.in_dim; ++l) {
            g.input[l] += go * row[l];
            grow[l] += go * input[l];
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Dropout (inverted: survivors scaled by 1/(1-p) at train time)
// ---------------------------------------------------------------------------

struct DropoutState {
    double rate = 0.0;
    bool train = false;
    std::uint64_t rng_seed = 0;
};

template <class T>
struct DropoutResult {
    Tensor<T> output;
    std::vector<std::uint8_t> keep;  // empty in eval mode
    double scale = 1.0;
};

template <class T>
DropoutResult<T> dropout_forward(const Tensor<T>& input, const DropoutState& st) {
    if (st.rate < 0.0 || st.rate >= 1.0)
        throw std::invalid_argument("dropout: rate must be in [0,1)");
    DropoutResult<T> r;
    if (!st.train || st.rate == 0.0) {
        r.output = input;
        return r;
    }
    r.scale = 1.0 / (1.0 - st.rate);
    r.output = Tensor<T>(input.n, input.c, input.h, input.w);
    r.keep.resize(input.size());
    std::mt19937_64 rng(st.rng_seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (std::size_t i = 0; i < input.size(); ++i) {
        const bool k = uni(rng) >= st.rate;
        r.keep[i] = k ? 1 : 0;
        r.output.data[i] = k ? static_cast<T>(input.data[i] * r.scale) : T(0);
    }
    return r;
}

template <class T>
Tensor<T> dropout_backward(const DropoutResult<T>& fwd, const Tensor<T>& grad_out) {
    if (fwd.keep.empty()) return grad_out;  // eval / p=0: identity
    check_same_shape(fwd.output, grad_out, "dropout_backward");
    Tensor<T> grad_in(grad_out.n, grad_out.c, grad_out.h, grad_out.w);
    for (std::size_t i = 0; i < grad_out.size(); ++i)
        grad_in.data[i] = fwd.keep[i] ? static_cast<T>(grad_out.data[i] * fwd.scale) : T(0);
    return grad_in;
}

// ---------------------------------------------------------------------------
// Softmax and cross-entropy
// ---------------------------------------------------------------------------

template <class T>
std::vector<T> softmax(const std::vector<T>& logits) {
    if (logits.empty()) throw std::invalid_argument("softmax: empty input");
    T m = logits[0];
    for (T v : logits) m = std::max(m, v);
    std::vector<T> out(logits.size());
    T sum = T(0);
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - m);
        sum += out[i];
    }
    for (T& v : out) v /= sum;
    return out;
}

// Softmax over the channel dimension, independently per (n, y, x) position.
template <class T>
Tensor<T> softmax_channels(const Tensor<T>& logits) {
    Tensor<T> out(logits.n, logits.c, logits.h, logits.w);
    for (int in = 0; in < logits.n; ++in)
        for (int iy = 0; iy < logits.h; ++iy)
            for (int ix = 0; ix < logits.w; ++ix) {
                T m = logits.at(in, 0, iy, ix);
                for (int ic = 1; ic < logits.c; ++ic)
                    m = std::max(m, logits.at(in, ic, iy, ix));
                T sum = T(0);
                for (int ic = 0; ic < logits.c; ++ic) {
                    const T e = std::exp(logits.at(in, ic, iy, ix) - m);
                    out.at(in, ic, iy, ix) = e;
                    sum += e;
                }
                for (int ic = 0; ic < logits.c; ++ic) out.at(in, ic, iy, ix) /= sum;
            }
    return out;
}

template <class T>
struct CrossEntropyResult {
    double loss = 0.0;
    std::vector<T> grad_logits;  // softmax(z) - onehot, same layout as pred
    bool clamped = false;        // a true-class probability hit the 1e-12 floor
};

// pred: class probabilities (softmax output), truth: one-hot, both length K.
template <class T>
CrossEntropyResult<T> cross_entropy_loss(const std::vector<T>& pred,
                                         const std::vector<T>& truth) {
    if (pred.size() != truth.size())
        throw std::invalid_argument("cross_entropy: length mismatch");
    CrossEntropyResult<T> r;
    r.grad_logits.resize(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        r.grad_logits[i] = pred[i] - truth[i];
        if (truth[i] > T(0)) {
            double p = static_cast<double>(pred[i]);
            if (p < 1e-12) {
                p = 1e-12;
                r.clamped = true;
            }
            r.loss -= static_cast<double>(truth[i]) * std::log(p);
        }
    }
    return r;
}

// Pixel-wise softmax + cross-entropy against an integer label map.
// labels: (h*w) class indices per batch item; label < 0 means unlabeled (skipped).
// Loss and gradient are averaged over labeled positions when `average` is set.
template <class T>
struct PixelwiseCeResult {
    double loss = 0.0;
    Tensor<T> grad_logits;
    std::size_t labeled = 0;
};

// Optional class_weights (one per channel) rescale each labeled position's
// contribution; averaging then divides by the sum of applied weights so the
// unweighted case is the all-ones special case.
template <class T>
PixelwiseCeResult<T> softmax_cross_entropy_map(const Tensor<T>& logits,
                                               const std::vector<int>& labels,
                                               bool average = true,
                                               const std::vector<double>& class_weights = {}) {
    if (labels.size() != static_cast<std::size_t>(logits.n) * logits.h * logits.w)
        throw std::invalid_argument("softmax_cross_entropy_map: label count mismatch");
    if (!class_weights.empty() &&
        class_weights.size() != static_cast<std::size_t>(logits.c))
        throw std::invalid_argument("softmax_cross_entropy_map: class weight count mismatch");
    PixelwiseCeResult<T> r;
    r.grad_logits = Tensor<T>(logits.n, logits.c, logits.h, logits.w);
    Tensor<T> probs = softmax_channels(logits);
    double weight_sum = 0.0;
    std::size_t li = 0;
    for (int in = 0; in < logits.n; ++in)
        for (int iy = 0; iy < logits.h; ++iy)
            for (int ix = 0; ix < logits.w; ++ix, ++li) {
                const int lab = labels[li];
                if (lab < 0) continue;
                if (lab >= logits.c)
                    throw std::invalid_argument("softmax_cross_entropy_map: label out of range");
                ++r.labeled;
                const double w = class_weights.empty() ? 1.0 : class_weights[lab];
                weight_sum += w;
                for (int ic = 0; ic < logits.c; ++ic) {
                    T g = probs.at(in, ic, iy, ix);
                    if (ic == lab) g -= T(1);
                    r.grad_logits.at(in, ic, iy, ix) = static_cast<T>(w) * g;
                }
                const double p = std::max(1e-12, static_cast<double>(probs.at(in, lab, iy, ix)));
                r.loss -= w * std::log(p);
            }
    if (average && weight_sum > 0.0) {
        r.loss /= weight_sum;
        const T inv = static_cast<T>(1.0 / weight_sum);
        for (T& v : r.grad_logits.data) v *= inv;
    }
    return r;
}

// ---------------------------------------------------------------------------
// Upsampling (fractionally-strided convolution, factor f, kernel 2f per axis)
// ---------------------------------------------------------------------------

// Separable analytic bilinear tap weights for factor f: k[u] = 1 - |u - f| / f,
// u in [0, 2f).  k[f] = 1, k[0] = 0, so f-strided subsampling of the output at
// grid points recovers the input exactly.
template <class T>
std::vector<T> bilinear_kernel_1d(int factor) {
    std::vector<T> k(2 * factor);
    for (int u = 0; u < 2 * factor; ++u)
        k[u] = T(1) - static_cast<T>(std::abs(u - factor)) / static_cast<T>(factor);
    return k;
}

template <class T>
struct UpsampleParams {
    int factor = 1;
    Tensor<T> kernel;  // (C, 1, 2f, 2f), one kernel per channel (depthwise)
    bool trainable = false;

    static UpsampleParams bilinear(int factor, int channels, bool trainable = false) {
        if (factor < 1) throw std::invalid_argument("upsample: factor must be >= 1");
        UpsampleParams p;
        p.factor = factor;
        p.trainable = trainable;
        p.kernel = Tensor<T>(channels, 1, 2 * factor, 2 * factor);
        const auto k1 = bilinear_kernel_1d<T>(factor);
        for (int c = 0; c < channels; ++c)
            for (int u = 0; u < 2 * factor; ++u)
                for (int v = 0; v < 2 * factor; ++v)
                    p.kernel.at(c, 0, u, v) = k1[u] * k1[v];
        return p;
    }

    void validate(int channels) const {
        if (factor < 1) throw std::invalid_argument("upsample: factor must be >= 1");
        if (kernel.n != channels || kernel.h != 2 * factor || kernel.w != 2 * factor)
            throw std::invalid_argument("upsample: kernel " + kernel.shape_str() +
                                        " does not fit factor/channels");
    }
};

// Each output pixel (i,j) mixes the four input taps (floor(i/f)+a, floor(j/f)+b),
// a,b in {0,1}, with kernel rows u = i%f + f*(1-a).  Border taps are edge-clamped,
// which keeps constants constant and makes f=1 the identity.
template <class T>
Tensor<T> upsample_forward(const Tensor<T>& input, const UpsampleParams<T>& p) {
    p.validate(input.c);
    const int f = p.factor;
    Tensor<T> out(input.n, input.c, input.h * f, input.w * f);
    for (int in = 0; in < input.n; ++in)
        for (int ic = 0; ic < input.c; ++ic)
            for (int oy = 0; oy < out.h; ++oy) {
                const int my = oy / f, ry = oy % f;
                for (int ox = 0; ox < out.w; ++ox) {
                    const int mx = ox / f, rx = ox % f;
                    T acc = T(0);
                    for (int a = 0; a < 2; ++a) {
                        const int iy = std::min(my + a, input.h - 1);
                        const int u = ry + f * (1 - a);
                        for (int b = 0; b < 2; ++b) {
                            const int ix = std::min(mx + b, input.w - 1);
                            const int v = rx + f * (1 - b);
                            acc += p.kernel.at(ic, 0, u, v) * input.at(in, ic, iy, ix);
                        }
                    }
                    out.at(in, ic, oy, ox) = acc;
                }
            }
    return out;
}

template <class T>
struct UpsampleGrads {
    Tensor<T> input;
    Tensor<T> kernel;  // zero-shaped when not trainable
};

template <class T>
UpsampleGrads<T> upsample_backward(const Tensor<T>& input, const UpsampleParams<T>& p,
                                   const Tensor<T>& grad_out) {
    p.validate(input.c);
    const int f = p.factor;
    if (grad_out.n != input.n || grad_out.c != input.c ||
        grad_out.h != input.h * f || grad_out.w != input.w * f)
        throw std::invalid_argument("upsample_backward: grad_out " + grad_out.shape_str() +
                                    " does not match output shape");
    UpsampleGrads<T> g;
    g.input = Tensor<T>(input.n, input.c, input.h, input.w);
    if (p.trainable) g.kernel = Tensor<T>(p.kernel.n, 1, p.kernel.h, p.kernel.w);
    for (int in = 0; in < input.n; ++in)
        for (int ic = 0; ic < input.c; ++ic)
            for (int oy = 0; oy < grad_out.h; ++oy) {
                const int my = oy / f, ry = oy % f;
                for (int ox = 0; ox < grad_out.w; ++ox) {
                    const int mx = ox / f, rx = ox % f;
                    const T go = grad_out.at(in, ic, oy, ox);
                    if (go == T(0)) continue;
                    for (int a = 0; a < 2; ++a) {
                        const int iy = std::min(my + a, input.h - 1);
                        const int u = ry + f * (1 - a);
                        for (int b = 0; b < 2; ++b) {
                            const int ix = std::min(mx + b, input.w - 1);
                            const int v = rx + f * (1 - b);
                            g.input.at(in, ic, iy, ix) += go * p.kernel.at(ic, 0, u, v);
                            if (p.trainable)
                                g.kernel.at(ic, 0, u, v) += go * input.at(in, ic, iy, ix);
                        }
                    }
                }
            }
    return g;
}

// ---------------------------------------------------------------------------
// Skip fusion: elementwise sum of coarse and fine score maps
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> skip_fuse(const Tensor<T>& coarse, const Tensor<T>& fine) {
    check_same_shape(coarse, fine, "skip_fuse");
    Tensor<T> out = coarse;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += fine.data[i];
    return out;
}

}  // namespace mvfcnn
