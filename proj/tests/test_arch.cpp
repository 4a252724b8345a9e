#include <catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "helpers.hpp"
#include "mvfcnn/checkpoint.hpp"
#include "mvfcnn/net.hpp"

using namespace mvfcnn;
using test_helpers::check_gradient;
using test_helpers::random_tensor;

namespace {

std::string temp_path(const std::string& stem) {
    return (std::filesystem::temp_directory_path() / stem).string();
}

std::set<std::string> param_names(std::vector<ParamView<double>> params) {
    std::set<std::string> names;
    for (const auto& p : params) names.insert(p.name);
    return names;
}

}  // namespace

TEST_CASE("mini CNN head and probability contract") {
    MiniCnn<double>::Config cfg;
    cfg.input_size = 32;
    cfg.n_classes = 4;
    MiniCnn<double> net(cfg, 1);
    std::mt19937_64 rng(2);
    Tensor<double> img = random_tensor(1, 1, 32, 32, rng, 0, 1);
    auto logits = net.forward(img);
    REQUIRE(logits.size() == 4);
    auto probs = net.predict_probs(img);
    double sum = 0;
    for (double p : probs) {
        REQUIRE(p >= 0);
        sum += p;
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
}

TEST_CASE("mini CNN parameter count matches the closed form") {
    MiniCnn<double>::Config cfg;
    cfg.input_size = 32;
    cfg.n_classes = 4;
    cfg.widths = {8, 16, 32};
    cfg.fc_hidden = 64;
    MiniCnn<double> net(cfg, 1);
    const std::size_t conv = (8 * 1 * 9 + 8) + (16 * 8 * 9 + 16) + (32 * 16 * 9 + 32);
    const std::size_t flat = 32 * 4 * 4;  // 32x32 input after three 2x pools
    const std::size_t fc = (flat * 64 + 64) + (64 * 4 + 4);
    CHECK(net.parameter_count() == conv + fc);
}

TEST_CASE("mini CNN rejects inputs too small for three pools") {
    MiniCnn<double>::Config cfg;
    cfg.input_size = 8;
    CHECK_THROWS_AS(MiniCnn<double>(cfg, 1), std::invalid_argument);
}

TEST_CASE("mini CNN training gradients match finite differences") {
    MiniCnn<double>::Config cfg;
    cfg.input_size = 16;
    cfg.n_classes = 3;
    cfg.widths = {2, 3, 4};
    cfg.fc_hidden = 8;
    cfg.dropout_rate = 0.3;
    MiniCnn<double> net(cfg, 5);
    std::mt19937_64 rng(6);
    Tensor<double> img = random_tensor(1, 1, 16, 16, rng, 0, 1);
    const std::uint64_t drop_seed = 99;
    const double base = net.train_step(img, 1, drop_seed);
    REQUIRE(std::isfinite(base));
    auto params = net.params();
    int failures = 0;
    for (auto& p : params) {
        std::vector<double> analytic(p.grad, p.grad + p.size);
        // the probe reruns the same dropout mask, so the loss stays differentiable
        failures += check_gradient(p.value, analytic.data(), p.size,
                                   [&] { return net.train_step(img, 1, drop_seed); });
    }
    CHECK(failures == 0);
}

TEST_CASE("mini FCN output dims equal input dims") {
    MiniFcn<double>::Config cfg;
    cfg.widths = {2, 2, 3, 3, 3};
    cfg.n_classes = 4;
    for (auto variant : {FcnVariant::Fcn32s, FcnVariant::Fcn16s, FcnVariant::Fcn8s}) {
        cfg.variant = variant;
        MiniFcn<double> net(cfg, 3);
        std::mt19937_64 rng(4);
        for (auto [h, w] : {std::pair{64, 64}, {96, 64}, {67, 45}}) {
            Tensor<double> x = random_tensor(1, 1, h, w, rng, 0, 1);
            Tensor<double> y = net.forward(x);
            REQUIRE(y.c == 4);
            REQUIRE(y.h == h);
            REQUIRE(y.w == w);
        }
    }
}

TEST_CASE("fcn32s on constant input gives spatially constant interior scores") {
    MiniFcn<double>::Config cfg;
    cfg.widths = {2, 2, 3, 3, 3};
    cfg.n_classes = 3;
    cfg.variant = FcnVariant::Fcn32s;
    MiniFcn<double> net(cfg, 7);
    // give the zero-initialized score layer nonzero weights
    std::mt19937_64 rng(8);
    for (auto& p : net.params())
        if (p.name.rfind("score", 0) == 0) {
            std::uniform_real_distribution<double> uni(-1, 1);
            for (std::size_t i = 0; i < p.size; ++i) p.value[i] = uni(rng);
        }
    Tensor<double> x(1, 1, 192, 192, 0.5);
    Tensor<double> y = net.forward(x);
    for (int c = 0; c < 3; ++c) {
        const double center = y.at(0, c, 96, 96);
        for (int yy = 88; yy < 104; ++yy)
            for (int xx = 88; xx < 104; ++xx)
                REQUIRE(std::abs(y.at(0, c, yy, xx) - center) < 1e-9);
    }
}

TEST_CASE("fcn variant parameter-name supersets") {
    MiniFcn<double>::Config cfg;
    cfg.widths = {2, 2, 3, 3, 3};
    cfg.variant = FcnVariant::Fcn32s;
    MiniFcn<double> n32(cfg, 1);
    cfg.variant = FcnVariant::Fcn16s;
    MiniFcn<double> n16(cfg, 1);
    cfg.variant = FcnVariant::Fcn8s;
    MiniFcn<double> n8(cfg, 1);
    auto s32 = param_names(n32.params());
    auto s16 = param_names(n16.params());
    auto s8 = param_names(n8.params());
    CHECK(std::includes(s16.begin(), s16.end(), s32.begin(), s32.end()));
    CHECK(s16.size() > s32.size());
    CHECK(std::includes(s8.begin(), s8.end(), s16.begin(), s16.end()));
    CHECK(s8.size() > s16.size());
}

TEST_CASE("mini FCN training gradients match finite differences") {
    MiniFcn<double>::Config cfg;
    cfg.widths = {2, 2, 2, 2, 2};
    cfg.n_classes = 3;
    cfg.variant = FcnVariant::Fcn8s;
    MiniFcn<double> net(cfg, 11);
    // non-trivial score weights so every path carries gradient; nonzero biases
    // keep dead windows off the relu kink (a conv output of exactly 0 makes
    // central differences disagree with the subgradient)
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> uni(-0.5, 0.5);
    for (auto& p : net.params()) {
        const bool score = p.name.rfind("score", 0) == 0;
        const bool bias = p.name.size() > 2 && p.name.substr(p.name.size() - 2) == ".b";
        if (score)
            for (std::size_t i = 0; i < p.size; ++i) p.value[i] = uni(rng);
        else if (bias)
            for (std::size_t i = 0; i < p.size; ++i) p.value[i] = 0.1 * uni(rng);
    }
    Tensor<double> img = random_tensor(1, 1, 32, 32, rng, 0, 1);
    std::vector<int> labels(32 * 32);
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 3);
    net.train_step(img, labels);
    auto params = net.params();
    int failures = 0;
    for (auto& p : params) {
        std::vector<double> analytic(p.grad, p.grad + p.size);
        failures += check_gradient(p.value, analytic.data(), p.size,
                                   [&] { return net.train_step(img, labels); });
    }
    CHECK(failures == 0);
}

TEST_CASE("zero-initialized skips keep the parent function at promotion") {
    MiniFcn<float>::Config cfg;
    cfg.widths = {2, 2, 3, 3, 3};
    cfg.n_classes = 4;
    cfg.variant = FcnVariant::Fcn32s;
    MiniFcn<float> n32(cfg, 21);
    // pretend-trained: randomize all parameters
    std::mt19937_64 rng(22);
    std::uniform_real_distribution<float> uni(-0.3, 0.3);
    for (auto& p : n32.params())
        for (std::size_t i = 0; i < p.size; ++i) p.value[i] = uni(rng);
    Checkpoint ck32 = make_checkpoint(n32, static_cast<TrainState<float>*>(nullptr));

    cfg.variant = FcnVariant::Fcn16s;
    MiniFcn<float> n16(cfg, 23);
    apply_checkpoint(n16, static_cast<TrainState<float>*>(nullptr), ck32, LoadMode::Subset);
    Checkpoint ck16 = make_checkpoint(n16, static_cast<TrainState<float>*>(nullptr));

    cfg.variant = FcnVariant::Fcn8s;
    MiniFcn<float> n8(cfg, 24);
    apply_checkpoint(n8, static_cast<TrainState<float>*>(nullptr), ck16, LoadMode::Subset);

    std::mt19937_64 rng2(25);
    Tensor<float> x = random_tensor(1, 1, 64, 64, rng2, 0, 1).cast<float>();
    Tensor<float> y32 = n32.forward(x);
    Tensor<float> y16 = n16.forward(x);
    Tensor<float> y8 = n8.forward(x);
    REQUIRE(y16.data == y32.data);  // f32 payloads round-trip float params exactly
    REQUIRE(y8.data == y32.data);
}

TEST_CASE("checkpoint round trip is bit-exact") {
    MiniCnn<float>::Config cfg;
    cfg.input_size = 16;
    cfg.widths = {2, 3, 4};
    cfg.fc_hidden = 8;
    cfg.n_classes = 4;
    MiniCnn<float> net(cfg, 31);
    TrainState<float> st;
    st.iteration = 17;
    st.velocity["fc1.w"] = std::vector<float>(net.params()[6].size, 0.25f);
    const std::string path = temp_path("mvfcnn_ck_test.mvfc");
    save_checkpoint(net, &st, path);
    Checkpoint ck = load_checkpoint(path);
    CHECK(ck.iteration == 17);
    CHECK(ck.digest == net.spec().digest());
    for (auto& p : net.params()) {
        const auto& e = ck.tensors.at(p.name);
        REQUIRE(e.data.size() == p.size);
        for (std::size_t i = 0; i < p.size; ++i) REQUIRE(e.data[i] == p.value[i]);
    }
    CHECK(ck.velocities.at("fc1.w").data[0] == 0.25f);

    // applying back onto a differently seeded net restores it exactly
    MiniCnn<float> other(cfg, 99);
    TrainState<float> st2;
    apply_checkpoint(other, &st2, ck);
    auto a = net.params(), b = other.params();
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t k = 0; k < a[i].size; ++k)
            REQUIRE(a[i].value[k] == b[i].value[k]);
    CHECK(st2.iteration == 17);
    std::remove(path.c_str());
}

TEST_CASE("corrupt and truncated checkpoints are rejected") {
    MiniCnn<float>::Config cfg;
    cfg.input_size = 16;
    cfg.widths = {2, 3, 4};
    cfg.fc_hidden = 8;
    MiniCnn<float> net(cfg, 31);
    const std::string path = temp_path("mvfcnn_ck_corrupt.mvfc");
    save_checkpoint(net, static_cast<TrainState<float>*>(nullptr), path);

    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();

    {  // bad magic
        std::string bad = bytes;
        bad[0] = 'X';
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        f << bad;
        f.close();
        CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
    }
    {  // truncated payload
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        f << bytes.substr(0, bytes.size() - 32);
        f.close();
        CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
    }
    {  // bad version
        std::string bad = bytes;
        bad[4] = 9;
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        f << bad;
        f.close();
        CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
    }
    std::remove(path.c_str());
}

TEST_CASE("digest mismatch fails unless the head-reinit flag is passed") {
    MiniCnn<float>::Config cfg;
    cfg.input_size = 16;
    cfg.widths = {2, 3, 4};
    cfg.fc_hidden = 8;
    cfg.n_classes = 4;
    MiniCnn<float> src(cfg, 31);
    Checkpoint ck = make_checkpoint(src, static_cast<TrainState<float>*>(nullptr));

    cfg.n_classes = 6;  // different head
    MiniCnn<float> dst(cfg, 32);
    CHECK_THROWS_AS(
        apply_checkpoint(dst, static_cast<TrainState<float>*>(nullptr), ck, LoadMode::Strict),
        CheckpointError);
    apply_checkpoint(dst, static_cast<TrainState<float>*>(nullptr), ck, LoadMode::ReinitHead,
                     /*seed=*/5);
    // non-head params copied
    auto sp = src.params();
    auto dp = dst.params();
    for (std::size_t i = 0; i < sp.size(); ++i)
        if (sp[i].name == "conv1.w")
            for (std::size_t k = 0; k < sp[i].size; ++k)
                REQUIRE(sp[i].value[k] == dp[i].value[k]);
}

TEST_CASE("head reinit draws match N(0, 0.01) statistics on 1e4 draws") {
    MiniCnn<float>::Config cfg;
    cfg.input_size = 16;
    cfg.widths = {2, 3, 4};
    cfg.fc_hidden = 2500;
    cfg.n_classes = 4;  // head weight count = 10000
    MiniCnn<float> src(cfg, 41);
    Checkpoint ck = make_checkpoint(src, static_cast<TrainState<float>*>(nullptr));
    MiniCnn<float> dst(cfg, 42);
    apply_checkpoint(dst, static_cast<TrainState<float>*>(nullptr), ck, LoadMode::ReinitHead,
                     /*seed=*/7);
    double sum = 0, sq = 0;
    std::size_t n = 0;
    for (auto& p : dst.params())
        if (p.name == "fc2.w") {
            n = p.size;
            for (std::size_t i = 0; i < n; ++i) {
                sum += p.value[i];
                sq += static_cast<double>(p.value[i]) * p.value[i];
            }
        }
    REQUIRE(n == 10000);
    const double mean = sum / n;
    const double stddev = std::sqrt(sq / n - mean * mean);
    CHECK(std::abs(mean) <= 0.001);
    CHECK(std::abs(stddev - 0.01) <= 0.002);
}

TEST_CASE("network spec digest distinguishes topologies") {
    MiniFcn<double>::Config cfg;
    cfg.variant = FcnVariant::Fcn32s;
    MiniFcn<double> a(cfg, 1);
    cfg.variant = FcnVariant::Fcn16s;
    MiniFcn<double> b(cfg, 1);
    CHECK(a.spec().digest() != b.spec().digest());
    MiniFcn<double> c(cfg, 77);
    CHECK(b.spec().digest() == c.spec().digest());  // seed does not change topology
}
