#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mvfcnn/checkpoint.hpp"
#include "mvfcnn/dataset.hpp"
#include "mvfcnn/net.hpp"
#include "mvfcnn/optim.hpp"
#include "mvfcnn/pipeline.hpp"
#include "mvfcnn/synth.hpp"

namespace mvfcnn {

// ---------------------------------------------------------------------------
// Stride-balanced patch extraction
// ---------------------------------------------------------------------------

// Per-class strides chosen so every class reaches `target_per_class` patches,
// then a seeded uniform subsample brings each class to exactly that count.
inline std::vector<LabeledPatch> build_balanced_patches(
    const std::vector<MicrographSample>& train_samples, int patch,
    std::size_t target_per_class, std::uint64_t seed, bool augment) {
    std::map<int, std::vector<const MicrographSample*>> by_class;
    for (const auto& s : train_samples) {
        if (!s.sample_class) throw std::runtime_error("balanced patches: sample without class");
        by_class[*s.sample_class].push_back(&s);
    }
    std::vector<int> classes;
    std::vector<std::vector<std::pair<int, int>>> dims;
    for (const auto& [cls, samples] : by_class) {
        classes.push_back(cls);
        std::vector<std::pair<int, int>> d;
        for (const auto* s : samples) d.emplace_back(s->image.h, s->image.w);
        dims.push_back(std::move(d));
    }
    const std::vector<int> strides = solve_balancing_stride(dims, patch, target_per_class);
    std::vector<LabeledPatch> out;
    for (std::size_t ci = 0; ci < classes.size(); ++ci) {
        std::vector<LabeledPatch> cls_patches;
        for (const auto* s : by_class[classes[ci]]) {
            if (s->image.h < patch || s->image.w < patch) continue;
            const PatchGrid grid =
                compute_patch_grid(s->image.h, s->image.w, patch, strides[ci]);
            for (const auto& [oy, ox] : grid.origins) {
                LabeledPatch p;
                p.image = Image8(patch, patch);
                p.labels = Image8(patch, patch);
                for (int y = 0; y < patch; ++y)
                    for (int x = 0; x < patch; ++x) {
                        p.image.at(y, x) = s->image.at(oy + y, ox + x);
                        p.labels.at(y, x) = s->label_map.at(oy + y, ox + x);
                    }
                cls_patches.push_back(std::move(p));
            }
        }
        const auto keep = subsample_indices(cls_patches.size(), target_per_class,
                                            seed ^ (0x5151ull * (classes[ci] + 1)));
        for (std::size_t k : keep) out.push_back(std::move(cls_patches[k]));
    }
    if (augment) out = augment_rotations(out);
    return out;
}

// Median-frequency balancing: w_c = median(freq) / freq_c over classes present
// in the patch labels.  Without it the matrix class dominates the pixel loss
// and training settles on the all-matrix prediction.
inline std::vector<double> median_frequency_weights(
    const std::vector<LabeledPatch>& patches, int n_classes) {
    std::vector<std::size_t> counts(n_classes, 0);
    std::size_t total = 0;
    for (const auto& p : patches)
        for (auto v : p.labels.px) {
            if (v >= static_cast<unsigned>(n_classes))
                throw std::invalid_argument("median_frequency_weights: label out of range");
            ++counts[v];
            ++total;
        }
    std::vector<double> freqs;
    for (std::size_t c : counts)
        if (c > 0) freqs.push_back(static_cast<double>(c) / total);
    if (freqs.empty()) throw std::invalid_argument("median_frequency_weights: no labels");
    std::sort(freqs.begin(), freqs.end());
    const double median = freqs.size() % 2
                              ? freqs[freqs.size() / 2]
                              : 0.5 * (freqs[freqs.size() / 2 - 1] + freqs[freqs.size() / 2]);
    std::vector<double> w(n_classes, 0.0);
    for (int c = 0; c < n_classes; ++c)
        if (counts[c] > 0) w[c] = median / (static_cast<double>(counts[c]) / total);
    return w;
}

// ---------------------------------------------------------------------------
// FCN training
// ---------------------------------------------------------------------------

template <class T>
struct StageOutcome {
    TrainStatus status = TrainStatus::Completed;
    std::vector<std::pair<std::size_t, double>> loss_history;
};

// Batch size 1: one patch per iteration, visiting patches in a seeded shuffled
// order, reshuffled each epoch.
template <class T>
StageOutcome<T> train_fcn_stage(MiniFcn<T>& net, const std::vector<LabeledPatch>& patches,
                                TrainState<T>& state, const SgdConfig& cfg,
                                std::uint64_t seed,
                                const std::vector<double>& class_weights = {}) {
    if (patches.empty()) throw std::runtime_error("train_fcn_stage: empty patch set");
    auto params = net.params();
    std::mt19937_64 order_rng(seed);
    std::vector<std::size_t> order(patches.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), order_rng);
    std::size_t cursor = 0;
    auto result = train_loop(params, state, cfg, [&](std::size_t /*iter*/) {
        if (cursor == order.size()) {
            std::shuffle(order.begin(), order.end(), order_rng);
            cursor = 0;
        }
        const LabeledPatch& p = patches[order[cursor++]];
        Tensor<T> x = image_to_tensor<T>(p.image);
        std::vector<int> labels(p.labels.px.begin(), p.labels.px.end());
        return net.train_step(x, labels, class_weights);
    });
    StageOutcome<T> out;
    out.status = result.status;
    out.loss_history = std::move(result.loss_history);
    return out;
}

struct StagedTrainConfig {
    std::vector<int> stage_iterations{2000, 800, 800};    // fcn32s, fcn16s, fcn8s
    std::vector<double> stage_learning_rates{0.02, 0.01, 0.005};  // strictly decreasing
    double momentum = 0.9;
    double weight_decay = 1e-4;
    int patch = 96;
    std::size_t target_per_class = 24;
    bool augment = false;
    bool balance_loss = true;
    double balance_exponent = 0.5;  // softens median-frequency weights
    std::uint64_t seed = 42;
    int n_classes = 5;
    std::vector<int> widths{8, 16, 32, 64, 64};
    int stages = 3;  // 1 = fcn32s only, 2 = through fcn16s, 3 = through fcn8s

    void validate() const {
        if (stage_iterations.size() != 3 || stage_learning_rates.size() != 3)
            throw std::invalid_argument("staged training: expected 3 stages");
        if (stages < 1 || stages > 3)
            throw std::invalid_argument("staged training: stages must be in 1..3");
        for (int i = 1; i < 3; ++i)
            if (stage_learning_rates[i] >= stage_learning_rates[i - 1])
                throw std::invalid_argument(
                    "staged training: stage learning rates must be strictly decreasing");
    }
};

template <class T>
struct StagedTrainResult {
    Checkpoint checkpoint;  // final (or last non-diverged) stage
    FcnVariant reached = FcnVariant::Fcn32s;
    bool diverged = false;
    std::vector<std::pair<std::size_t, double>> loss_history;  // all stages
};

// FCN-32s from scratch (or a checkpoint), then 16s and 8s each initialized
// from the previous stage with the new skip scores starting at zero.
template <class T>
StagedTrainResult<T> staged_train(const std::vector<MicrographSample>& train_samples,
                                  const StagedTrainConfig& cfg,
                                  const Checkpoint* start_from = nullptr) {
    cfg.validate();
    const std::vector<LabeledPatch> patches = build_balanced_patches(
        train_samples, cfg.patch, cfg.target_per_class, cfg.seed, cfg.augment);
    std::vector<double> class_weights;
    if (cfg.balance_loss) {
        class_weights = median_frequency_weights(patches, cfg.n_classes);
        for (double& w : class_weights) w = std::pow(w, cfg.balance_exponent);
    }
    StagedTrainResult<T> result;
    const FcnVariant variants[3] = {FcnVariant::Fcn32s, FcnVariant::Fcn16s,
                                    FcnVariant::Fcn8s};
    Checkpoint prev;
    bool have_prev = false;
    if (start_from) {
        prev = *start_from;
        have_prev = true;
    }
    for (int stage = 0; stage < cfg.stages; ++stage) {
        typename MiniFcn<T>::Config ncfg;
        ncfg.n_classes = cfg.n_classes;
        ncfg.widths = cfg.widths;
        ncfg.variant = variants[stage];
        MiniFcn<T> net(ncfg, cfg.seed);
        TrainState<T> state;
        if (have_prev)
            apply_checkpoint(net, static_cast<TrainState<T>*>(nullptr), prev,
                             LoadMode::Subset);
        SgdConfig sgd;
        sgd.learning_rate = cfg.stage_learning_rates[stage];
        sgd.momentum = cfg.momentum;
        sgd.weight_decay = cfg.weight_decay;
        sgd.max_iterations = std::max(1, cfg.stage_iterations[stage]);
        StageOutcome<T> outcome;
        if (cfg.stage_iterations[stage] > 0) {
            outcome = train_fcn_stage(net, patches, state, sgd,
                                      cfg.seed ^ (0xabcdull * (stage + 1)), class_weights);
        }
        for (auto& e : outcome.loss_history) result.loss_history.push_back(e);
        if (outcome.status == TrainStatus::Diverged) {
            result.diverged = true;
            if (have_prev) result.checkpoint = prev;
            return result;
        }
        prev = make_checkpoint(net, &state);
        have_prev = true;
        result.reached = variants[stage];
        result.checkpoint = prev;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Object-based CNN training
// ---------------------------------------------------------------------------

struct CnnTrainConfig {
    int input_size = 32;
    int n_classes = 4;
    std::vector<int> widths{8, 16, 32};
    int fc_hidden = 64;
    double dropout_rate = 0.5;
    SgdConfig sgd{0.01, 0.9, 0.004, 600};
    int min_object_area = 30;
    std::uint64_t seed = 42;
};

template <class T>
struct CnnTrainResult {
    Checkpoint checkpoint;
    bool diverged = false;
    std::vector<std::pair<std::size_t, double>> loss_history;
};

// Crops every object in the train split, warps it to the net input size, and
// trains with one object per iteration in seeded shuffled order.  Object class
// labels are 0-based (constituent class - 1).
template <class T>
CnnTrainResult<T> train_object_cnn(const std::vector<MicrographSample>& train_samples,
                                   const CnnTrainConfig& cfg) {
    std::vector<std::pair<Image8, int>> objects;
    for (const auto& s : train_samples) {
        if (!s.sample_class) throw std::runtime_error("cnn training: sample without class");
        for (const auto& r : connected_components(s.mask, cfg.min_object_area)) {
            Image8 warped = warp_resize(crop_object(s, r), cfg.input_size, cfg.input_size);
            objects.emplace_back(std::move(warped), *s.sample_class - 1);
        }
    }
    if (objects.empty()) throw std::runtime_error("cnn training: no objects in train split");
    typename MiniCnn<T>::Config ncfg;
    ncfg.input_size = cfg.input_size;
    ncfg.n_classes = cfg.n_classes;
    ncfg.widths = cfg.widths;
    ncfg.fc_hidden = cfg.fc_hidden;
    ncfg.dropout_rate = cfg.dropout_rate;
    MiniCnn<T> net(ncfg, cfg.seed);
    TrainState<T> state;
    auto params = net.params();
    std::mt19937_64 order_rng(cfg.seed ^ 0xc11full);
    std::vector<std::size_t> order(objects.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), order_rng);
    std::size_t cursor = 0;
    auto result = train_loop(params, state, cfg.sgd, [&](std::size_t iter) {
        if (cursor == order.size()) {
            std::shuffle(order.begin(), order.end(), order_rng);
            cursor = 0;
        }
        const auto& [img, label] = objects[order[cursor++]];
        return net.train_step(image_to_tensor<T>(img), label,
                              cfg.seed ^ (0xd09ull + iter));
    });
    CnnTrainResult<T> out;
    out.diverged = result.status == TrainStatus::Diverged;
    out.loss_history = std::move(result.loss_history);
    out.checkpoint = make_checkpoint(net, &state);
    return out;
}

}  // namespace mvfcnn
