// mvfcnn: synthesis, training, segmentation, classification and evaluation of
// micrograph constituent maps from one binary.
//
// Subcommands read an optional JSON config (--config); command-line flags win
// over config values.  Every run writes its resolved configuration to
// <out>/run.json so results can be reproduced from the artifacts alone.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "mvfcnn/checkpoint.hpp"
#include "mvfcnn/dataset.hpp"
#include "mvfcnn/metrics.hpp"
#include "mvfcnn/net.hpp"
#include "mvfcnn/pipeline.hpp"
#include "mvfcnn/synth.hpp"
#include "mvfcnn/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mvfcnn;

namespace {

bool verbose_logging() {
    const char* v = std::getenv("MVFCNN_LOG");
    return v && *v && std::string(v) != "0" && std::string(v) != "quiet";
}

void log_line(const std::string& msg) {
    if (verbose_logging()) std::cerr << "[mvfcnn] " << msg << "\n";
}

json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config: " + path);
    return json::parse(f);
}

void write_json_file(const fs::path& path, const json& j) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << j.dump(2) << "\n";
}

// run.json deliberately omits --threads: thread count must not affect results,
// so it is not part of the run's identity
void write_run_json(const std::string& out_dir, json resolved) {
    fs::create_directories(out_dir);
    write_json_file(fs::path(out_dir) / "run.json", std::move(resolved));
}

std::string strip_suffix(const std::string& name) {
    const auto dot = name.find_last_of('.');
    return dot == std::string::npos ? name : name.substr(0, dot);
}

std::vector<MicrographSample> load_split(const Manifest& manifest,
                                         const std::string& base_dir,
                                         const std::string& split) {
    std::vector<MicrographSample> out;
    for (const auto& e : manifest.split(split)) out.push_back(load_sample(base_dir, e));
    if (out.empty())
        throw std::runtime_error("manifest has no '" + split + "' entries");
    return out;
}

MiniFcn<float>::Config fcn_config_from(const Checkpoint& ck) {
    NetworkSpec spec = NetworkSpec::from_json(ck.spec_json);
    if (spec.kind != "mini_fcn")
        throw std::runtime_error("checkpoint holds a '" + spec.kind +
                                 "' network, expected mini_fcn");
    MiniFcn<float>::Config cfg;
    cfg.n_classes = spec.n_classes;
    cfg.widths = spec.widths;
    cfg.variant = fcn_variant_from_string(spec.variant);
    return cfg;
}

MiniCnn<float>::Config cnn_config_from(const Checkpoint& ck) {
    NetworkSpec spec = NetworkSpec::from_json(ck.spec_json);
    if (spec.kind != "mini_cnn")
        throw std::runtime_error("checkpoint holds a '" + spec.kind +
                                 "' network, expected mini_cnn");
    MiniCnn<float>::Config cfg;
    cfg.input_size = spec.input_size;
    cfg.n_classes = spec.n_classes;
    cfg.widths = spec.widths;
    cfg.fc_hidden = spec.fc_hidden;
    cfg.dropout_rate = spec.dropout_rate;
    return cfg;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
    std::string config, out;
    std::optional<std::uint64_t> seed;
};

int run_synth(const SynthArgs& a) {
    SynthConfig cfg = SynthConfig::from_json(load_config(a.config));
    if (a.seed) cfg.rng_seed = *a.seed;
    log_line("generating " + std::to_string(cfg.train_images + cfg.test_images) +
             " samples into " + a.out);
    Manifest m = generate_dataset(cfg, a.out);
    write_run_json(a.out, {{"command", "synth"}, {"config", cfg.to_json()}});
    std::cout << "wrote " << m.entries.size() << " samples to " << a.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string config, manifest, out, variant = "fcn8s", checkpoint;
    std::optional<std::uint64_t> seed;
    std::optional<int> patch;
    std::optional<bool> augment;
    bool reinit_head = false;
};

StagedTrainConfig staged_config_from(const json& j, const TrainArgs& a) {
    StagedTrainConfig cfg;
    const json s = j.value("staged", json::object());
    cfg.stage_iterations = s.value("stage_iterations", cfg.stage_iterations);
    cfg.stage_learning_rates = s.value("stage_learning_rates", cfg.stage_learning_rates);
    cfg.momentum = s.value("momentum", cfg.momentum);
    cfg.weight_decay = s.value("weight_decay", cfg.weight_decay);
    cfg.patch = s.value("patch", cfg.patch);
    cfg.target_per_class = s.value("target_per_class", cfg.target_per_class);
    cfg.augment = s.value("augment", cfg.augment);
    cfg.balance_loss = s.value("balance_loss", cfg.balance_loss);
    cfg.balance_exponent = s.value("balance_exponent", cfg.balance_exponent);
    cfg.seed = s.value("seed", cfg.seed);
    cfg.n_classes = s.value("n_classes", cfg.n_classes);
    cfg.widths = s.value("widths", cfg.widths);
    if (a.seed) cfg.seed = *a.seed;
    if (a.patch) cfg.patch = *a.patch;
    if (a.augment) cfg.augment = *a.augment;
    if (a.variant == "fcn32s") cfg.stages = 1;
    else if (a.variant == "fcn16s") cfg.stages = 2;
    else cfg.stages = 3;
    return cfg;
}

json staged_config_json(const StagedTrainConfig& cfg) {
    return {{"stage_iterations", cfg.stage_iterations},
            {"stage_learning_rates", cfg.stage_learning_rates},
            {"momentum", cfg.momentum},
            {"weight_decay", cfg.weight_decay},
            {"patch", cfg.patch},
            {"target_per_class", cfg.target_per_class},
            {"augment", cfg.augment},
            {"balance_loss", cfg.balance_loss},
            {"balance_exponent", cfg.balance_exponent},
            {"seed", cfg.seed},
            {"n_classes", cfg.n_classes},
            {"widths", cfg.widths},
            {"stages", cfg.stages}};
}

CnnTrainConfig cnn_train_config_from(const json& j, const TrainArgs& a) {
    CnnTrainConfig cfg;
    const json c = j.value("cnn", json::object());
    cfg.input_size = c.value("input_size", cfg.input_size);
    cfg.n_classes = c.value("n_classes", cfg.n_classes);
    cfg.widths = c.value("widths", cfg.widths);
    cfg.fc_hidden = c.value("fc_hidden", cfg.fc_hidden);
    cfg.dropout_rate = c.value("dropout_rate", cfg.dropout_rate);
    cfg.sgd.learning_rate = c.value("learning_rate", cfg.sgd.learning_rate);
    cfg.sgd.momentum = c.value("momentum", cfg.sgd.momentum);
    cfg.sgd.weight_decay = c.value("weight_decay", cfg.sgd.weight_decay);
    cfg.sgd.max_iterations = c.value("iterations", cfg.sgd.max_iterations);
    cfg.min_object_area = c.value("min_object_area", cfg.min_object_area);
    cfg.seed = c.value("seed", cfg.seed);
    if (a.seed) cfg.seed = *a.seed;
    return cfg;
}

void write_loss_file(const std::string& out_dir,
                     const std::vector<std::pair<std::size_t, double>>& history) {
    std::ofstream f(fs::path(out_dir) / "loss.csv", std::ios::trunc);
    write_loss_csv(f, history);
}

int run_train(const TrainArgs& a) {
    const json cfg_json = load_config(a.config);
    Manifest manifest = Manifest::load(a.manifest);
    const std::string base_dir = fs::path(a.manifest).parent_path().string();
    auto samples = load_split(manifest, base_dir, "train");
    fs::create_directories(a.out);

    if (a.variant == "cnn") {
        if (!a.checkpoint.empty())
            throw std::runtime_error("fine-tuning is not supported for the object CNN");
        CnnTrainConfig cfg = cnn_train_config_from(cfg_json, a);
        log_line("training object CNN on " + std::to_string(samples.size()) + " images");
        auto result = train_object_cnn<float>(samples, cfg);
        write_loss_file(a.out, result.loss_history);
        write_checkpoint(result.checkpoint, (fs::path(a.out) / "model.mvfc").string());
        write_run_json(a.out,
                       {{"command", "train"},
                        {"variant", "cnn"},
                        {"manifest", a.manifest},
                        {"config",
                         {{"input_size", cfg.input_size},
                          {"n_classes", cfg.n_classes},
                          {"widths", cfg.widths},
                          {"fc_hidden", cfg.fc_hidden},
                          {"dropout_rate", cfg.dropout_rate},
                          {"learning_rate", cfg.sgd.learning_rate},
                          {"momentum", cfg.sgd.momentum},
                          {"weight_decay", cfg.sgd.weight_decay},
                          {"iterations", cfg.sgd.max_iterations},
                          {"min_object_area", cfg.min_object_area},
                          {"seed", cfg.seed}}}});
        if (result.diverged) {
            std::cerr << "training diverged; checkpoint holds the last finite state\n";
            return 2;
        }
        std::cout << "object CNN trained; final loss "
                  << result.loss_history.back().second << "\n";
        return 0;
    }

    // staged FCN
    StagedTrainConfig cfg = staged_config_from(cfg_json, a);
    std::optional<Checkpoint> start;
    if (!a.checkpoint.empty()) {
        start = load_checkpoint(a.checkpoint);
        if (a.reinit_head) {
            // drop the score layers so the new heads start from their
            // zero-initialized state
            MiniFcn<float>::Config probe_cfg = fcn_config_from(*start);
            MiniFcn<float> probe(probe_cfg, 0);
            for (const auto& name : probe.head_param_names()) start->tensors.erase(name);
        }
    }
    log_line("staged FCN training (" + std::to_string(cfg.stages) + " stages) on " +
             std::to_string(samples.size()) + " images");
    auto result = staged_train<float>(samples, cfg, start ? &*start : nullptr);
    write_loss_file(a.out, result.loss_history);
    write_checkpoint(result.checkpoint, (fs::path(a.out) / "model.mvfc").string());
    write_run_json(a.out, {{"command", "train"},
                           {"variant", a.variant},
                           {"manifest", a.manifest},
                           {"reinit_head", a.reinit_head},
                           {"config", staged_config_json(cfg)}});
    if (result.diverged) {
        std::cerr << "training diverged during stage " << to_string(result.reached)
                  << "; checkpoint holds the last completed stage\n";
        return 2;
    }
    std::cout << "staged training reached " << to_string(result.reached)
              << "; final loss " << result.loss_history.back().second << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// segment / classify
// ---------------------------------------------------------------------------

struct InferArgs {
    std::string config, manifest, out, checkpoint, split = "test", variant = "fcn";
    int patch = 96, stride = 96, threads = 1, min_object_area = 30;
};

void apply_infer_config(InferArgs& a, int argc_patch_set, int stride_set, int thr_set,
                        int area_set) {
    const json j = load_config(a.config);
    if (!argc_patch_set) a.patch = j.value("patch", a.patch);
    if (!stride_set) a.stride = j.value("stride", a.stride);
    if (!thr_set) a.threads = j.value("threads", a.threads);
    if (!area_set) a.min_object_area = j.value("min_object_area", a.min_object_area);
}

int run_segment(const InferArgs& a) {
    Checkpoint ck = load_checkpoint(a.checkpoint);
    MiniFcn<float> net(fcn_config_from(ck), 0);
    apply_checkpoint(net, static_cast<TrainState<float>*>(nullptr), ck);
    Manifest manifest = Manifest::load(a.manifest);
    const std::string base_dir = fs::path(a.manifest).parent_path().string();
    fs::create_directories(a.out);
    std::size_t done = 0;
    for (const auto& e : manifest.split(a.split)) {
        Image8 img = read_image((fs::path(base_dir) / e.image).string());
        auto result = segment_image(net, img, a.patch, a.stride, a.threads);
        write_image(result.label_map, (fs::path(a.out) / e.label_map).string());
        write_png_rgb(colorize_labels(result.label_map),
                      (fs::path(a.out) / (strip_suffix(e.label_map) + "_rgb.png")).string());
        log_line("segmented " + e.image);
        ++done;
    }
    write_run_json(a.out, {{"command", "segment"},
                           {"manifest", a.manifest},
                           {"checkpoint_digest", ck.digest},
                           {"split", a.split},
                           {"patch", a.patch},
                           {"stride", a.stride}});
    std::cout << "segmented " << done << " images into " << a.out << "\n";
    return 0;
}

int run_classify(const InferArgs& a) {
    Checkpoint ck = load_checkpoint(a.checkpoint);
    Manifest manifest = Manifest::load(a.manifest);
    const std::string base_dir = fs::path(a.manifest).parent_path().string();
    fs::create_directories(a.out);

    std::optional<MiniFcn<float>> fcn;
    std::optional<MiniCnn<float>> cnn;
    int n_classes = 5;
    if (a.variant == "cnn") {
        cnn.emplace(cnn_config_from(ck), 0);
        apply_checkpoint(*cnn, static_cast<TrainState<float>*>(nullptr), ck);
        n_classes = cnn->config().n_classes + 1;  // voted classes are 1-based
    } else {
        fcn.emplace(fcn_config_from(ck), 0);
        apply_checkpoint(*fcn, static_cast<TrainState<float>*>(nullptr), ck);
        n_classes = fcn->config().n_classes;
    }

    json predictions = json::array();
    for (const auto& e : manifest.split(a.split)) {
        MicrographSample sample = load_sample(base_dir, e);
        auto regions = connected_components(sample.mask, a.min_object_area);
        std::vector<ObjectClassification> votes;
        if (fcn) {
            auto seg = segment_image(*fcn, sample.image, a.patch, a.stride, a.threads);
            write_image(seg.label_map, (fs::path(a.out) / e.label_map).string());
            votes = max_vote_objects(seg.label_map, regions, n_classes);
        } else {
            for (const auto& r : regions) {
                auto [best, probs] = classify_object_cnn(*cnn, sample, r);
                ObjectClassification oc;
                oc.region_id = r.id;
                oc.voted_class = best + 1;
                votes.push_back(std::move(oc));
            }
        }
        const std::string stem = strip_suffix(e.image);
        {
            std::ofstream csv(fs::path(a.out) / (stem + "_objects.csv"), std::ios::trunc);
            write_object_csv(csv, regions, votes);
        }
        write_png_rgb(colorize_objects(sample.image, regions, votes),
                      (fs::path(a.out) / (stem + "_objects_rgb.png")).string());
        std::optional<int> whole = classify_whole_image(votes, n_classes);
        json objs = json::array();
        for (std::size_t k = 0; k < regions.size(); ++k)
            objs.push_back({{"id", regions[k].id},
                            {"area", regions[k].area()},
                            {"voted_class", votes[k].voted_class}});
        json entry{{"image", e.image},
                   {"label_map", e.label_map},
                   {"objects", objs},
                   {"whole_image_class", whole ? json(*whole) : json(nullptr)}};
        if (e.sample_class) entry["truth_class"] = *e.sample_class;
        predictions.push_back(std::move(entry));
        log_line("classified " + e.image);
    }
    write_json_file(fs::path(a.out) / "predictions.json", predictions);
    write_run_json(a.out, {{"command", "classify"},
                           {"manifest", a.manifest},
                           {"checkpoint_digest", ck.digest},
                           {"variant", a.variant == "cnn" ? "cnn" : "fcn"},
                           {"split", a.split},
                           {"patch", a.patch},
                           {"stride", a.stride},
                           {"min_object_area", a.min_object_area}});
    std::cout << "classified " << predictions.size() << " images into " << a.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string manifest, pred, out, split = "test";
    int n_classes = 5;
};

int run_evaluate(const EvalArgs& a) {
    Manifest manifest = Manifest::load(a.manifest);
    const std::string base_dir = fs::path(a.manifest).parent_path().string();
    fs::create_directories(a.out);

    ConfusionMatrix cm(a.n_classes);
    for (const auto& e : manifest.split(a.split)) {
        Image8 truth = read_image((fs::path(base_dir) / e.label_map).string());
        const fs::path pred_path = fs::path(a.pred) / e.label_map;
        if (!fs::exists(pred_path))
            throw std::runtime_error("missing predicted label map: " + pred_path.string());
        Image8 pred = read_image(pred_path.string());
        ConfusionMatrix one = confusion_from_labels(truth, pred, a.n_classes);
        for (int i = 0; i < a.n_classes; ++i)
            for (int j = 0; j < a.n_classes; ++j) cm.counts[i][j] += one.counts[i][j];
    }
    MetricsReport seg = segmentation_report(cm);

    json report{{"segmentation", report_to_json(seg)}};

    // object-level and whole-image metrics, when classification output exists
    const fs::path pred_json = fs::path(a.pred) / "predictions.json";
    if (fs::exists(pred_json)) {
        std::ifstream f(pred_json);
        json predictions = json::parse(f);
        std::vector<std::pair<int, int>> pairs;
        std::size_t not_segmented = 0, whole_correct = 0, whole_total = 0;
        for (const auto& entry : predictions) {
            if (!entry.contains("truth_class")) continue;
            const int truth = entry.at("truth_class").get<int>();
            for (const auto& obj : entry.at("objects")) {
                const int voted = obj.at("voted_class").get<int>();
                if (voted == kNotSegmented)
                    ++not_segmented;
                else
                    pairs.emplace_back(truth - 1, voted - 1);
            }
            ++whole_total;
            if (!entry.at("whole_image_class").is_null() &&
                entry.at("whole_image_class").get<int>() == truth)
                ++whole_correct;
        }
        if (!pairs.empty()) {
            MetricsReport obj = object_report(pairs, not_segmented, a.n_classes - 1);
            report["objects"] = report_to_json(obj);
            std::cout << "object-level:\n";
            print_report_table(std::cout, obj);
        }
        report["whole_image"] = {{"correct", whole_correct}, {"total", whole_total}};
        std::cout << "whole-image: " << whole_correct << "/" << whole_total
                  << " correct\n";
    }

    write_json_file(fs::path(a.out) / "report.json", report);
    {
        std::ofstream csv(fs::path(a.out) / "confusion.csv", std::ios::trunc);
        write_confusion_csv(csv, cm);
    }
    std::cout << "pixel-level:\n";
    print_report_table(std::cout, seg);
    write_run_json(a.out, {{"command", "evaluate"},
                           {"manifest", a.manifest},
                           {"pred", a.pred},
                           {"split", a.split},
                           {"n_classes", a.n_classes}});
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"micrograph constituent segmentation and classification"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* s_synth = app.add_subcommand("synth", "generate a synthetic dataset");
    s_synth->add_option("--config", synth.config, "JSON config file");
    s_synth->add_option("--out", synth.out, "output directory")->required();
    std::uint64_t synth_seed = 0;
    auto* synth_seed_opt = s_synth->add_option("--seed", synth_seed, "RNG seed override");
    int synth_threads = 1;
    s_synth->add_option("--threads", synth_threads, "worker threads (no effect on output)");

    TrainArgs train;
    auto* s_train = app.add_subcommand("train", "train a network");
    s_train->add_option("--config", train.config, "JSON config file");
    s_train->add_option("--manifest", train.manifest, "dataset manifest")->required();
    s_train->add_option("--out", train.out, "output directory")->required();
    s_train->add_option("--variant", train.variant, "fcn32s|fcn16s|fcn8s|cnn")
        ->check(CLI::IsMember({"fcn32s", "fcn16s", "fcn8s", "cnn"}));
    s_train->add_option("--checkpoint", train.checkpoint, "checkpoint to fine-tune from");
    s_train->add_flag("--reinit-head", train.reinit_head,
                      "reinitialize the classifier head when fine-tuning");
    std::uint64_t train_seed = 0;
    auto* train_seed_opt = s_train->add_option("--seed", train_seed, "RNG seed override");
    int train_patch = 0;
    auto* train_patch_opt = s_train->add_option("--patch", train_patch, "patch size");
    bool train_augment = false;
    auto* train_augment_opt =
        s_train->add_flag("--augment", train_augment, "rotation augmentation");

    InferArgs seg;
    auto* s_segment = app.add_subcommand("segment", "pixel-wise segmentation");
    s_segment->add_option("--config", seg.config, "JSON config file");
    s_segment->add_option("--manifest", seg.manifest, "dataset manifest")->required();
    s_segment->add_option("--checkpoint", seg.checkpoint, "FCN checkpoint")->required();
    s_segment->add_option("--out", seg.out, "output directory")->required();
    s_segment->add_option("--split", seg.split, "manifest split (default test)");
    auto* seg_patch = s_segment->add_option("--patch", seg.patch, "tile size");
    auto* seg_stride = s_segment->add_option("--stride", seg.stride, "tile stride");
    auto* seg_threads = s_segment->add_option("--threads", seg.threads, "worker threads");

    InferArgs cls;
    auto* s_classify = app.add_subcommand("classify", "object classification");
    s_classify->add_option("--config", cls.config, "JSON config file");
    s_classify->add_option("--manifest", cls.manifest, "dataset manifest")->required();
    s_classify->add_option("--checkpoint", cls.checkpoint, "model checkpoint")->required();
    s_classify->add_option("--out", cls.out, "output directory")->required();
    s_classify->add_option("--variant", cls.variant, "fcn (max-vote) or cnn (object crops)")
        ->check(CLI::IsMember({"fcn", "cnn"}));
    s_classify->add_option("--split", cls.split, "manifest split (default test)");
    auto* cls_patch = s_classify->add_option("--patch", cls.patch, "tile size");
    auto* cls_stride = s_classify->add_option("--stride", cls.stride, "tile stride");
    auto* cls_threads = s_classify->add_option("--threads", cls.threads, "worker threads");
    auto* cls_area =
        s_classify->add_option("--min-area", cls.min_object_area, "minimum object area");

    EvalArgs eval;
    auto* s_evaluate = app.add_subcommand("evaluate", "compare predictions to truth");
    s_evaluate->add_option("--manifest", eval.manifest, "dataset manifest")->required();
    s_evaluate->add_option("--pred", eval.pred, "directory with predictions")->required();
    s_evaluate->add_option("--out", eval.out, "output directory")->required();
    s_evaluate->add_option("--split", eval.split, "manifest split (default test)");
    s_evaluate->add_option("--n-classes", eval.n_classes, "label classes incl. matrix");

    CLI11_PARSE(app, argc, argv);

    try {
        if (s_synth->parsed()) {
            if (synth_seed_opt->count()) synth.seed = synth_seed;
            return run_synth(synth);
        }
        if (s_train->parsed()) {
            if (train_seed_opt->count()) train.seed = train_seed;
            if (train_patch_opt->count()) train.patch = train_patch;
            if (train_augment_opt->count()) train.augment = true;
            return run_train(train);
        }
        if (s_segment->parsed()) {
            apply_infer_config(seg, static_cast<int>(seg_patch->count()),
                               static_cast<int>(seg_stride->count()),
                               static_cast<int>(seg_threads->count()), 1);
            return run_segment(seg);
        }
        if (s_classify->parsed()) {
            apply_infer_config(cls, static_cast<int>(cls_patch->count()),
                               static_cast<int>(cls_stride->count()),
                               static_cast<int>(cls_threads->count()),
                               static_cast<int>(cls_area->count()));
            return run_classify(cls);
        }
        if (s_evaluate->parsed()) return run_evaluate(eval);
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 1;
    }
    return 1;
}
