#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvfcnn/layers.hpp"
#include "mvfcnn/optim.hpp"
#include "mvfcnn/tensor.hpp"

namespace mvfcnn {

enum class FcnVariant { Fcn32s, Fcn16s, Fcn8s };

inline const char* to_string(FcnVariant v) {
    switch (v) {
        case FcnVariant::Fcn32s: return "fcn32s";
        case FcnVariant::Fcn16s: return "fcn16s";
        case FcnVariant::Fcn8s: return "fcn8s";
    }
    return "?";
}

inline FcnVariant fcn_variant_from_string(const std::string& s) {
    if (s == "fcn32s") return FcnVariant::Fcn32s;
    if (s == "fcn16s") return FcnVariant::Fcn16s;
    if (s == "fcn8s") return FcnVariant::Fcn8s;
    throw std::invalid_argument("unknown FCN variant: " + s);
}

// Serializable description of a network: kind, hyperparameters and the ordered
// layer list.  The digest pins checkpoints to a compatible topology.
struct NetworkSpec {
    std::string kind;     // "mini_cnn" | "mini_fcn"
    std::string variant;  // fcn only
    int input_size = 0;   // cnn only (square)
    int n_classes = 0;
    std::vector<int> widths;
    int fc_hidden = 0;  // cnn only
    double dropout_rate = 0.5;

    nlohmann::json to_json() const {
        nlohmann::json layers = nlohmann::json::array();
        if (kind == "mini_cnn") {
            for (std::size_t i = 0; i < widths.size(); ++i) {
                layers.push_back({{"op", "conv3x3"}, {"out", widths[i]},
                                  {"params", "conv" + std::to_string(i + 1)}});
                layers.push_back({{"op", "relu"}});
                layers.push_back({{"op", "maxpool2"}});
            }
            layers.push_back({{"op", "fc"}, {"out", fc_hidden}, {"params", "fc1"}});
            layers.push_back({{"op", "relu"}});
            layers.push_back({{"op", "dropout"}, {"rate", dropout_rate}});
            layers.push_back({{"op", "fc"}, {"out", n_classes}, {"params", "fc2"}});
            layers.push_back({{"op", "softmax"}});
        } else {
            for (std::size_t i = 0; i < widths.size(); ++i) {
                layers.push_back({{"op", "conv3x3"}, {"out", widths[i]},
                                  {"params", "enc" + std::to_string(i + 1)}});
                layers.push_back({{"op", "relu"}});
                layers.push_back({{"op", "maxpool2"}});
            }
            layers.push_back({{"op", "score1x1"}, {"tap", 5}, {"params", "score5"}});
            if (variant != "fcn32s") {
                layers.push_back({{"op", "upsample"}, {"factor", 2}});
                layers.push_back({{"op", "score1x1"}, {"tap", 4}, {"params", "score4"}});
                layers.push_back({{"op", "skip_fuse"}});
            }
            if (variant == "fcn8s") {
                layers.push_back({{"op", "upsample"}, {"factor", 2}});
                layers.push_back({{"op", "score1x1"}, {"tap", 3}, {"params", "score3"}});
                layers.push_back({{"op", "skip_fuse"}});
            }
            const int final_up = variant == "fcn32s" ? 32 : variant == "fcn16s" ? 16 : 8;
            layers.push_back({{"op", "upsample"}, {"factor", final_up}});
        }
        return nlohmann::json{{"kind", kind},         {"variant", variant},
                              {"input_size", input_size}, {"n_classes", n_classes},
                              {"widths", widths},     {"fc_hidden", fc_hidden},
                              {"dropout_rate", dropout_rate}, {"layers", layers}};
    }

    std::string digest() const {
        // FNV-1a 64 over the canonical JSON text
        const std::string s = to_json().dump();
        std::uint64_t h = 1469598103934665603ull;
        for (unsigned char ch : s) {
            h ^= ch;
            h *= 1099511628211ull;
        }
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
        return buf;
    }

    static NetworkSpec from_json(const nlohmann::json& j) {
        NetworkSpec s;
        s.kind = j.at("kind").get<std::string>();
        s.variant = j.value("variant", "");
        s.input_size = j.value("input_size", 0);
        s.n_classes = j.at("n_classes").get<int>();
        s.widths = j.at("widths").get<std::vector<int>>();
        s.fc_hidden = j.value("fc_hidden", 0);
        s.dropout_rate = j.value("dropout_rate", 0.5);
        return s;
    }
};

namespace detail {

template <class T>
void gaussian_fill(std::vector<T>& v, double sigma, std::mt19937_64& rng) {
    std::normal_distribution<double> nd(0.0, sigma);
    for (T& x : v) x = static_cast<T>(nd(rng));
}

template <class T>
ConvParams<T> make_conv(int out_c, int in_c, int k, int pad, double sigma,
                        std::mt19937_64& rng) {
    ConvParams<T> p;
    p.weights = Tensor<T>(out_c, in_c, k, k);
    p.bias.assign(out_c, T(0));
    p.stride = 1;
    p.padding = pad;
    if (sigma > 0) gaussian_fill(p.weights.data, sigma, rng);
    return p;
}

template <class T>
double he_sigma(int in_c, int k) {
    return std::sqrt(2.0 / (static_cast<double>(in_c) * k * k));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Miniature classification CNN: 3x(conv3x3 -> relu -> maxpool2), fc, relu,
// dropout, fc, softmax head.
// ---------------------------------------------------------------------------

template <class T>
class MiniCnn {
public:
    struct Config {
        int input_size = 32;
        int n_classes = 4;
        std::vector<int> widths{8, 16, 32};
        int fc_hidden = 64;
        double dropout_rate = 0.5;
    };

    MiniCnn(const Config& cfg, std::uint64_t seed) : cfg_(cfg) {
        if (cfg.input_size < 16)
            throw std::invalid_argument("MiniCnn: input must be at least 16 px square");
        if (cfg.widths.size() != 3)
            throw std::invalid_argument("MiniCnn: expected 3 conv widths");
        std::mt19937_64 rng(seed);
        int in_c = 1, side = cfg.input_size;
        for (int i = 0; i < 3; ++i) {
            const int out_c = cfg.widths[i];
            convs_.push_back(detail::make_conv<T>(out_c, in_c, 3, 1,
                                                  detail::he_sigma<T>(in_c, 3), rng));
            conv_gw_.emplace_back(out_c, in_c, 3, 3);
            conv_gb_.emplace_back(out_c, T(0));
            in_c = out_c;
            if (side < 2) throw std::invalid_argument("MiniCnn: input too small for three pools");
            side /= 2;
        }
        flat_dim_ = in_c * side * side;
        side_after_pools_ = side;
        fc1_.in_dim = flat_dim_;
        fc1_.out_dim = cfg.fc_hidden;
        fc1_.weights.assign(static_cast<std::size_t>(flat_dim_) * cfg.fc_hidden, T(0));
        fc1_.bias.assign(cfg.fc_hidden, T(0));
        detail::gaussian_fill(fc1_.weights, std::sqrt(2.0 / flat_dim_), rng);
        fc2_.in_dim = cfg.fc_hidden;
        fc2_.out_dim = cfg.n_classes;
        fc2_.weights.assign(static_cast<std::size_t>(cfg.fc_hidden) * cfg.n_classes, T(0));
        fc2_.bias.assign(cfg.n_classes, T(0));
        detail::gaussian_fill(fc2_.weights, 0.01, rng);
        fc1_gw_.assign(fc1_.weights.size(), T(0));
        fc1_gb_.assign(fc1_.bias.size(), T(0));
        fc2_gw_.assign(fc2_.weights.size(), T(0));
        fc2_gb_.assign(fc2_.bias.size(), T(0));
    }

    const Config& config() const { return cfg_; }

    NetworkSpec spec() const {
        NetworkSpec s;
        s.kind = "mini_cnn";
        s.input_size = cfg_.input_size;
        s.n_classes = cfg_.n_classes;
        s.widths = cfg_.widths;
        s.fc_hidden = cfg_.fc_hidden;
        s.dropout_rate = cfg_.dropout_rate;
        return s;
    }

    // forward in eval mode: returns class logits
    std::vector<T> forward(const Tensor<T>& image) const {
        Tensor<T> x = image;
        for (const auto& cp : convs_) {
            x = relu(conv2d_forward(x, cp));
            x = maxpool_forward(x, 2, 2, 2).output;
        }
        std::vector<T> flat(x.data.begin(), x.data.end());
        std::vector<T> h = fc_forward(flat, fc1_);
        for (T& v : h) v = std::max(T(0), v);
        return fc_forward(h, fc2_);
    }

    std::vector<T> predict_probs(const Tensor<T>& image) const {
        return softmax(forward(image));
    }

    // one training sample: forward with dropout, cross-entropy loss, backward
    // into the gradient buffers (overwriting them)
    double train_step(const Tensor<T>& image, int label, std::uint64_t dropout_seed) {
        if (label < 0 || label >= cfg_.n_classes)
            throw std::invalid_argument("MiniCnn: label out of range");
        // forward with caches
        std::vector<Tensor<T>> conv_in, conv_out;
        std::vector<MaxPoolResult<T>> pools;
        Tensor<T> x = image;
        for (const auto& cp : convs_) {
            conv_in.push_back(x);
            Tensor<T> c = conv2d_forward(x, cp);
            conv_out.push_back(c);
            auto pr = maxpool_forward(relu(c), 2, 2, 2);
            x = pr.output;
            pools.push_back(std::move(pr));
        }
        std::vector<T> flat(x.data.begin(), x.data.end());
        std::vector<T> h1 = fc_forward(flat, fc1_);
        std::vector<T> h1r = h1;
        for (T& v : h1r) v = std::max(T(0), v);
        Tensor<T> h1t(1, 1, 1, static_cast<int>(h1r.size()));
        h1t.data = h1r;
        DropoutState ds{cfg_.dropout_rate, true, dropout_seed};
        auto dr = dropout_forward(h1t, ds);
        std::vector<T> logits = fc_forward(dr.output.data, fc2_);
        std::vector<T> probs = softmax(logits);
        std::vector<T> onehot(cfg_.n_classes, T(0));
        onehot[label] = T(1);
        auto ce = cross_entropy_loss(probs, onehot);

        // backward
        auto g2 = fc_backward(dr.output.data, fc2_, ce.grad_logits);
        fc2_gw_ = g2.weights;
        fc2_gb_ = g2.bias;
        Tensor<T> gdrop(1, 1, 1, static_cast<int>(g2.input.size()));
        gdrop.data = g2.input;
        Tensor<T> gh1r = dropout_backward(dr, gdrop);
        std::vector<T> gh1(h1.size());
        for (std::size_t i = 0; i < h1.size(); ++i)
            gh1[i] = h1[i] > T(0) ? gh1r.data[i] : T(0);
        auto g1 = fc_backward(flat, fc1_, gh1);
        fc1_gw_ = g1.weights;
        fc1_gb_ = g1.bias;
        Tensor<T> gx(x.n, x.c, x.h, x.w);
        gx.data = g1.input;
        for (int i = 2; i >= 0; --i) {
            Tensor<T> gpool = maxpool_backward(pools[i], gx);
            Tensor<T> grelu = relu_backward(conv_out[i], gpool);
            auto cg = conv2d_backward(conv_in[i], convs_[i], grelu);
            conv_gw_[i] = cg.weights;
            conv_gb_[i] = cg.bias;
            gx = cg.input;
        }
        return ce.loss;
    }

    std::vector<ParamView<T>> params() {
        std::vector<ParamView<T>> out;
        for (int i = 0; i < 3; ++i) {
            auto& cp = convs_[i];
            out.push_back({"conv" + std::to_string(i + 1) + ".w", cp.weights.data.data(),
                           conv_gw_[i].data.data(), cp.weights.size(),
                           {cp.weights.n, cp.weights.c, cp.weights.h, cp.weights.w}});
            out.push_back({"conv" + std::to_string(i + 1) + ".b", cp.bias.data(),
                           conv_gb_[i].data(), cp.bias.size(),
                           {1, 1, 1, static_cast<int>(cp.bias.size())}});
        }
        out.push_back({"fc1.w", fc1_.weights.data(), fc1_gw_.data(), fc1_.weights.size(),
                       {1, 1, fc1_.out_dim, fc1_.in_dim}});
        out.push_back({"fc1.b", fc1_.bias.data(), fc1_gb_.data(), fc1_.bias.size(),
                       {1, 1, 1, fc1_.out_dim}});
        out.push_back({"fc2.w", fc2_.weights.data(), fc2_gw_.data(), fc2_.weights.size(),
                       {1, 1, fc2_.out_dim, fc2_.in_dim}});
        out.push_back({"fc2.b", fc2_.bias.data(), fc2_gb_.data(), fc2_.bias.size(),
                       {1, 1, 1, fc2_.out_dim}});
        return out;
    }

    // classifier-head parameter names, re-initialized when fine-tuning onto a
    // different class set
    std::vector<std::string> head_param_names() const { return {"fc2.w", "fc2.b"}; }

    std::size_t parameter_count() {
        std::size_t total = 0;
        for (const auto& p : params()) total += p.size;
        return total;
    }

private:
    Config cfg_;
    std::vector<ConvParams<T>> convs_;
    std::vector<Tensor<T>> conv_gw_;
    std::vector<std::vector<T>> conv_gb_;
    FcParams<T> fc1_, fc2_;
    std::vector<T> fc1_gw_, fc1_gb_, fc2_gw_, fc2_gb_;
    int flat_dim_ = 0;
    int side_after_pools_ = 0;
};

// ---------------------------------------------------------------------------
// Miniature FCN: five conv/pool stages (32x total downsample), 1x1 score
// convolutions at the deepest tap plus optional skips A (pool4) and B (pool3),
// fixed bilinear upsampling back to input resolution.
// ---------------------------------------------------------------------------

template <class T>
class MiniFcn {
public:
    static constexpr int kTotalStride = 32;

    struct Config {
        int n_classes = 5;  // constituent classes + matrix
        std::vector<int> widths{8, 16, 32, 64, 64};
        FcnVariant variant = FcnVariant::Fcn8s;
    };

    MiniFcn(const Config& cfg, std::uint64_t seed) : cfg_(cfg) {
        if (cfg.widths.size() != 5)
            throw std::invalid_argument("MiniFcn: expected 5 encoder widths");
        std::mt19937_64 rng(seed);
        int in_c = 1;
        for (int i = 0; i < 5; ++i) {
            const int out_c = cfg.widths[i];
            enc_.push_back(detail::make_conv<T>(out_c, in_c, 3, 1,
                                                detail::he_sigma<T>(in_c, 3), rng));
            enc_gw_.emplace_back(out_c, in_c, 3, 3);
            enc_gb_.emplace_back(out_c, T(0));
            in_c = out_c;
        }
        // score layers start at zero so a freshly added skip contributes nothing
        score5_ = detail::make_conv<T>(cfg.n_classes, cfg.widths[4], 1, 0, 0.0, rng);
        score5_gw_ = Tensor<T>(cfg.n_classes, cfg.widths[4], 1, 1);
        score5_gb_.assign(cfg.n_classes, T(0));
        if (has_skip_a()) {
            score4_ = detail::make_conv<T>(cfg.n_classes, cfg.widths[3], 1, 0, 0.0, rng);
            score4_gw_ = Tensor<T>(cfg.n_classes, cfg.widths[3], 1, 1);
            score4_gb_.assign(cfg.n_classes, T(0));
        }
        if (has_skip_b()) {
            score3_ = detail::make_conv<T>(cfg.n_classes, cfg.widths[2], 1, 0, 0.0, rng);
            score3_gw_ = Tensor<T>(cfg.n_classes, cfg.widths[2], 1, 1);
            score3_gb_.assign(cfg.n_classes, T(0));
        }
        up2_ = UpsampleParams<T>::bilinear(2, cfg.n_classes);
        up8_ = UpsampleParams<T>::bilinear(8, cfg.n_classes);
    }

    const Config& config() const { return cfg_; }
    bool has_skip_a() const { return cfg_.variant != FcnVariant::Fcn32s; }
    bool has_skip_b() const { return cfg_.variant == FcnVariant::Fcn8s; }

    NetworkSpec spec() const {
        NetworkSpec s;
        s.kind = "mini_fcn";
        s.variant = to_string(cfg_.variant);
        s.n_classes = cfg_.n_classes;
        s.widths = cfg_.widths;
        return s;
    }

    struct Cache {
        std::vector<Tensor<T>> conv_in, conv_out;
        std::vector<MaxPoolResult<T>> pools;
        Tensor<T> s5, fused_a, fused_b;
        int pad_top = 0, pad_left = 0, orig_h = 0, orig_w = 0;
    };

    // logits at input resolution; inputs not divisible by 32 are symmetrically
    // zero-padded and the output cropped back.  All variants share one
    // upsampling chain (2x, 2x, 8x); the skips only add score maps, so a
    // zero-initialized skip leaves the parent variant's function untouched.
    Tensor<T> forward(const Tensor<T>& image, Cache* cache = nullptr) const {
        Cache local;
        Cache& cc = cache ? *cache : local;
        cc.orig_h = image.h;
        cc.orig_w = image.w;
        Tensor<T> x = pad_to_stride(image, cc.pad_top, cc.pad_left);
        for (int i = 0; i < 5; ++i) {
            cc.conv_in.push_back(x);
            Tensor<T> c = conv2d_forward(x, enc_[i]);
            cc.conv_out.push_back(c);
            auto pr = maxpool_forward(relu(c), 2, 2, 2);
            x = pr.output;
            cc.pools.push_back(std::move(pr));
        }
        cc.s5 = conv2d_forward(x, score5_);
        Tensor<T> u1 = upsample_forward(cc.s5, up2_);
        cc.fused_a = has_skip_a()
                         ? skip_fuse(u1, conv2d_forward(cc.pools[3].output, score4_))
                         : std::move(u1);
        Tensor<T> u2 = upsample_forward(cc.fused_a, up2_);
        cc.fused_b = has_skip_b()
                         ? skip_fuse(u2, conv2d_forward(cc.pools[2].output, score3_))
                         : std::move(u2);
        Tensor<T> y = upsample_forward(cc.fused_b, up8_);
        return crop(y, cc.pad_top, cc.pad_left, cc.orig_h, cc.orig_w);
    }

    // backward from d(loss)/d(logits); accumulates into the gradient buffers
    // (call zero_grads() first)
    void backward(const Cache& cc, const Tensor<T>& grad_logits) {
        Tensor<T> gy = uncrop(grad_logits, cc);
        Tensor<T> gp4_skip, gp3_skip;
        Tensor<T> gfb = upsample_backward(cc.fused_b, up8_, gy).input;
        if (has_skip_b()) {
            auto bg = conv2d_backward(cc.pools[2].output, score3_, gfb);
            accumulate(score3_gw_, bg.weights);
            accumulate(score3_gb_, bg.bias);
            gp3_skip = std::move(bg.input);
        }
        Tensor<T> gfa = upsample_backward(cc.fused_a, up2_, gfb).input;
        if (has_skip_a()) {
            auto ag = conv2d_backward(cc.pools[3].output, score4_, gfa);
            accumulate(score4_gw_, ag.weights);
            accumulate(score4_gb_, ag.bias);
            gp4_skip = std::move(ag.input);
        }
        Tensor<T> gs5 = upsample_backward(cc.s5, up2_, gfa).input;
        auto sg = conv2d_backward(cc.pools[4].output, score5_, gs5);
        accumulate(score5_gw_, sg.weights);
        accumulate(score5_gb_, sg.bias);
        Tensor<T> gp5 = std::move(sg.input);
        // encoder, deepest stage first
        Tensor<T> g = gp5;
        for (int i = 4; i >= 0; --i) {
            if (i == 3 && gp4_skip.size() > 0) add_into(g, gp4_skip);
            if (i == 2 && gp3_skip.size() > 0) add_into(g, gp3_skip);
            Tensor<T> gpool = maxpool_backward(pools_of(cc, i), g);
            Tensor<T> grelu = relu_backward(cc.conv_out[i], gpool);
            auto cg = conv2d_backward(cc.conv_in[i], enc_[i], grelu);
            accumulate(enc_gw_[i], cg.weights);
            accumulate(enc_gb_[i], cg.bias);
            g = std::move(cg.input);
        }
    }

    double train_step(const Tensor<T>& image, const std::vector<int>& labels,
                      const std::vector<double>& class_weights = {}) {
        Cache cc;
        Tensor<T> logits = forward(image, &cc);
        auto ce = softmax_cross_entropy_map(logits, labels, /*average=*/true, class_weights);
        zero_grads();
        backward(cc, ce.grad_logits);
        return ce.loss;
    }

    void zero_grads() {
        for (auto& t : enc_gw_) std::fill(t.data.begin(), t.data.end(), T(0));
        for (auto& b : enc_gb_) std::fill(b.begin(), b.end(), T(0));
        std::fill(score5_gw_.data.begin(), score5_gw_.data.end(), T(0));
        std::fill(score5_gb_.begin(), score5_gb_.end(), T(0));
        if (has_skip_a()) {
            std::fill(score4_gw_.data.begin(), score4_gw_.data.end(), T(0));
            std::fill(score4_gb_.begin(), score4_gb_.end(), T(0));
        }
        if (has_skip_b()) {
            std::fill(score3_gw_.data.begin(), score3_gw_.data.end(), T(0));
            std::fill(score3_gb_.begin(), score3_gb_.end(), T(0));
        }
    }

    std::vector<ParamView<T>> params() {
        std::vector<ParamView<T>> out;
        for (int i = 0; i < 5; ++i) {
            auto& cp = enc_[i];
            out.push_back({"enc" + std::to_string(i + 1) + ".w", cp.weights.data.data(),
                           enc_gw_[i].data.data(), cp.weights.size(),
                           {cp.weights.n, cp.weights.c, cp.weights.h, cp.weights.w}});
            out.push_back({"enc" + std::to_string(i + 1) + ".b", cp.bias.data(),
                           enc_gb_[i].data(), cp.bias.size(),
                           {1, 1, 1, static_cast<int>(cp.bias.size())}});
        }
        push_score(out, "score5", score5_, score5_gw_, score5_gb_);
        if (has_skip_a()) push_score(out, "score4", score4_, score4_gw_, score4_gb_);
        if (has_skip_b()) push_score(out, "score3", score3_, score3_gw_, score3_gb_);
        return out;
    }

    std::vector<std::string> head_param_names() const {
        std::vector<std::string> names{"score5.w", "score5.b"};
        if (has_skip_a()) { names.push_back("score4.w"); names.push_back("score4.b"); }
        if (has_skip_b()) { names.push_back("score3.w"); names.push_back("score3.b"); }
        return names;
    }

private:
    static Tensor<T> pad_to_stride(const Tensor<T>& x, int& pad_top, int& pad_left) {
        const int H = (x.h + kTotalStride - 1) / kTotalStride * kTotalStride;
        const int W = (x.w + kTotalStride - 1) / kTotalStride * kTotalStride;
        pad_top = (H - x.h) / 2;
        pad_left = (W - x.w) / 2;
        if (H == x.h && W == x.w) return x;
        Tensor<T> out(x.n, x.c, H, W);
        for (int in = 0; in < x.n; ++in)
            for (int ic = 0; ic < x.c; ++ic)
                for (int iy = 0; iy < x.h; ++iy)
                    for (int ix = 0; ix < x.w; ++ix)
                        out.at(in, ic, iy + pad_top, ix + pad_left) = x.at(in, ic, iy, ix);
        return out;
    }

    static Tensor<T> crop(const Tensor<T>& x, int top, int left, int h, int w) {
        if (x.h == h && x.w == w) return x;
        Tensor<T> out(x.n, x.c, h, w);
        for (int in = 0; in < x.n; ++in)
            for (int ic = 0; ic < x.c; ++ic)
                for (int iy = 0; iy < h; ++iy)
                    for (int ix = 0; ix < w; ++ix)
                        out.at(in, ic, iy, ix) = x.at(in, ic, iy + top, ix + left);
        return out;
    }

    static Tensor<T> uncrop(const Tensor<T>& g, const Cache& cc) {
        const int H = cc.conv_in[0].h, W = cc.conv_in[0].w;
        if (g.h == H && g.w == W) return g;
        Tensor<T> out(g.n, g.c, H, W);
        for (int in = 0; in < g.n; ++in)
            for (int ic = 0; ic < g.c; ++ic)
                for (int iy = 0; iy < g.h; ++iy)
                    for (int ix = 0; ix < g.w; ++ix)
                        out.at(in, ic, iy + cc.pad_top, ix + cc.pad_left) = g.at(in, ic, iy, ix);
        return out;
    }

    static const MaxPoolResult<T>& pools_of(const Cache& cc, int i) { return cc.pools[i]; }

    static void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
        for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] += src.data[i];
    }
    static void accumulate(std::vector<T>& dst, const std::vector<T>& src) {
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
    static void add_into(Tensor<T>& dst, const Tensor<T>& src) {
        check_same_shape(dst, src, "MiniFcn: skip gradient");
        for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] += src.data[i];
    }

    void push_score(std::vector<ParamView<T>>& out, const std::string& name,
                    ConvParams<T>& cp, Tensor<T>& gw, std::vector<T>& gb) {
        out.push_back({name + ".w", cp.weights.data.data(), gw.data.data(),
                       cp.weights.size(),
                       {cp.weights.n, cp.weights.c, cp.weights.h, cp.weights.w}});
        out.push_back({name + ".b", cp.bias.data(), gb.data(), cp.bias.size(),
                       {1, 1, 1, static_cast<int>(cp.bias.size())}});
    }

    Config cfg_;
    std::vector<ConvParams<T>> enc_;
    std::vector<Tensor<T>> enc_gw_;
    std::vector<std::vector<T>> enc_gb_;
    ConvParams<T> score5_, score4_, score3_;
    Tensor<T> score5_gw_, score4_gw_, score3_gw_;
    std::vector<T> score5_gb_, score4_gb_, score3_gb_;
    UpsampleParams<T> up2_, up8_;
};

}  // namespace mvfcnn
