#include <catch_amalgamated.hpp>

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "helpers.hpp"
#include "mvfcnn/synth.hpp"

using namespace mvfcnn;
using namespace test_helpers;

namespace {

namespace fs = std::filesystem;

std::string temp_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

std::vector<char> file_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// per-object texture descriptor: mean intensity, mean |vertical diff|,
// mean |horizontal diff|, fraction of dark pixels
std::array<double, 4> object_features(const MicrographSample& s, const ObjectRegion& r) {
    double mean = 0, vdiff = 0, hdiff = 0, dark = 0;
    std::size_t nv = 0, nh = 0;
    for (const auto& [y, x] : r.pixels) {
        mean += s.image.at(y, x);
        dark += s.image.at(y, x) < 60 ? 1 : 0;
        if (y + 1 < s.image.h && s.mask.at(y + 1, x)) {
            vdiff += std::abs(static_cast<int>(s.image.at(y + 1, x)) - s.image.at(y, x));
            ++nv;
        }
        if (x + 1 < s.image.w && s.mask.at(y, x + 1)) {
            hdiff += std::abs(static_cast<int>(s.image.at(y, x + 1)) - s.image.at(y, x));
            ++nh;
        }
    }
    const double n = static_cast<double>(r.pixels.size());
    return {mean / n, nv ? vdiff / nv : 0.0, nh ? hdiff / nh : 0.0, dark / n};
}

}  // namespace

TEST_CASE("texture families: closed-form values") {
    std::mt19937_64 rng(91);
    // class 1: horizontal stripes, period 4 in y, constant in x
    for (int x : {0, 5, 17})
        CHECK(close_rel(detail::texture_value(1, 0, x, rng, {}, 0), 70.0, 1e-12));
    CHECK(close_rel(detail::texture_value(1, 1, 0, rng, {}, 0), 125.0, 1e-12));
    CHECK(close_rel(detail::texture_value(1, 3, 0, rng, {}, 0), 15.0, 1e-12));
    for (int y = 0; y < 8; ++y)
        CHECK(close_rel(detail::texture_value(1, y, 0, rng, {}, 0),
                        detail::texture_value(1, y + 4, 9, rng, {}, 0), 1e-12));
    // class 2: two-level bands, invariant along the anti-diagonal
    for (int y = 0; y < 40; ++y)
        for (int x = 0; x < 3; ++x) {
            const double v = detail::texture_value(2, y, x, rng, {}, 0);
            CHECK((v == 50.0 || v == 125.0));
            CHECK(v == detail::texture_value(2, y + 1, x - 1, rng, {}, 0));
        }
    CHECK(detail::texture_value(2, 0, 0, rng, {}, 0) !=
          detail::texture_value(2, 0, 16, rng, {}, 0));
    // class 3: speckle stays in [30, 150]
    for (int k = 0; k < 200; ++k) {
        const double v = detail::texture_value(3, k, k, rng, {}, 0);
        CHECK(v >= 30.0);
        CHECK(v <= 150.0);
    }
    // class 4: dark inside a blob, mid-gray outside
    std::vector<std::pair<double, double>> blobs{{10.0, 10.0}};
    CHECK(detail::texture_value(4, 10, 10, rng, blobs, 3.5) == 40.0);
    CHECK(detail::texture_value(4, 10, 13, rng, blobs, 3.5) == 40.0);
    CHECK(detail::texture_value(4, 10, 14, rng, blobs, 3.5) == 135.0);
    CHECK_THROWS_AS(detail::texture_value(0, 0, 0, rng, {}, 0), std::invalid_argument);
}

TEST_CASE("generate_sample is bit-deterministic and seed-sensitive") {
    SynthConfig cfg;
    auto a = generate_sample(cfg, 2, 1234);
    auto b = generate_sample(cfg, 2, 1234);
    CHECK(a.sample.image.px == b.sample.image.px);
    CHECK(a.sample.label_map.px == b.sample.label_map.px);
    CHECK(a.sample.mask.px == b.sample.mask.px);
    CHECK(a.placed_objects == b.placed_objects);
    auto c = generate_sample(cfg, 2, 1235);
    CHECK(a.sample.image.px != c.sample.image.px);
    CHECK_THROWS_AS(generate_sample(cfg, 0, 1), std::invalid_argument);
    CHECK_THROWS_AS(generate_sample(cfg, 5, 1), std::invalid_argument);
}

TEST_CASE("samples are internally consistent") {
    SynthConfig cfg;
    for (int cls = 1; cls <= 4; ++cls) {
        auto info = generate_sample(cfg, cls, 100 + cls);
        const MicrographSample& s = info.sample;
        s.validate();
        CHECK(*s.sample_class == cls);
        // mask and label map agree pixel-for-pixel
        for (std::size_t i = 0; i < s.mask.size(); ++i) {
            CHECK((s.mask.px[i] == 1) == (s.label_map.px[i] == static_cast<unsigned>(cls)));
            CHECK((s.label_map.px[i] == 0 || s.label_map.px[i] == static_cast<unsigned>(cls)));
        }
        // bookkeeping: components in the mask match the placement count
        auto regions = connected_components(s.mask, 1);
        CHECK(static_cast<int>(regions.size()) == info.placed_objects);
        CHECK(info.placed_objects >= 1);
        // object sizes respect the configured radii
        const double max_area = M_PI * (cfg.object_max_radius + 1.0) * (cfg.object_max_radius + 1.0);
        for (const auto& r : regions) {
            CHECK(r.area() >= cfg.object_min_radius * cfg.object_min_radius);
            CHECK(r.area() <= static_cast<int>(max_area));
        }
        // matrix background stays bright
        double bg_mean = 0;
        std::size_t bg_n = 0;
        for (std::size_t i = 0; i < s.image.size(); ++i)
            if (!s.mask.px[i]) { bg_mean += s.image.px[i]; ++bg_n; }
        CHECK(bg_mean / bg_n > 195.0);
    }
}

TEST_CASE("texture families separate under a nearest-centroid classifier") {
    SynthConfig cfg;
    // centroids from one batch of seeds
    std::array<std::array<double, 4>, 4> centroid{};
    for (int cls = 1; cls <= 4; ++cls) {
        std::array<double, 4> acc{};
        std::size_t n = 0;
        for (int rep = 0; rep < 3; ++rep) {
            auto info = generate_sample(cfg, cls, 1000 * cls + rep);
            for (const auto& r : connected_components(info.sample.mask, 30)) {
                auto f = object_features(info.sample, r);
                for (int k = 0; k < 4; ++k) acc[k] += f[k];
                ++n;
            }
        }
        REQUIRE(n > 0);
        for (int k = 0; k < 4; ++k) centroid[cls - 1][k] = acc[k] / n;
    }
    // feature scales so no single feature dominates the distance
    const std::array<double, 4> scale{100.0, 30.0, 30.0, 0.5};
    // evaluate on fresh seeds
    std::size_t correct = 0, total = 0;
    for (int cls = 1; cls <= 4; ++cls)
        for (int rep = 0; rep < 2; ++rep) {
            auto info = generate_sample(cfg, cls, 9000 * cls + rep);
            for (const auto& r : connected_components(info.sample.mask, 30)) {
                auto f = object_features(info.sample, r);
                int best = 0;
                double best_d = 1e18;
                for (int c = 0; c < 4; ++c) {
                    double d = 0;
                    for (int k = 0; k < 4; ++k) {
                        const double z = (f[k] - centroid[c][k]) / scale[k];
                        d += z * z;
                    }
                    if (d < best_d) { best_d = d; best = c; }
                }
                correct += best == cls - 1 ? 1 : 0;
                ++total;
            }
        }
    REQUIRE(total >= 20);
    CHECK(static_cast<double>(correct) / total >= 0.9);
}

TEST_CASE("generate_dataset writes a complete, byte-reproducible corpus") {
    SynthConfig cfg;
    cfg.train_images = 3;
    cfg.test_images = 2;
    const std::string dir_a = temp_dir("mvfcnn_synth_a");
    const std::string dir_b = temp_dir("mvfcnn_synth_b");
    Manifest ma = generate_dataset(cfg, dir_a);
    Manifest mb = generate_dataset(cfg, dir_b);

    REQUIRE(ma.entries.size() == 5);
    CHECK(ma.split("train").size() == 3);
    CHECK(ma.split("test").size() == 2);
    // classes cycle 1..4 within each split
    CHECK(*ma.entries[0].sample_class == 1);
    CHECK(*ma.entries[1].sample_class == 2);
    CHECK(*ma.entries[2].sample_class == 3);
    CHECK(*ma.entries[3].sample_class == 1);  // test split restarts the cycle
    CHECK(*ma.entries[4].sample_class == 2);

    // 3 rasters per sample plus the manifest
    std::size_t files = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir_a)) ++files;
    CHECK(files == 5 * 3 + 1);

    for (const auto& e : ma.entries) {
        for (const std::string& f : {e.image, e.label_map, e.mask})
            CHECK(file_bytes(fs::path(dir_a) / f) == file_bytes(fs::path(dir_b) / f));
        // declared object count matches the stored mask
        MicrographSample s = load_sample(dir_a, e);
        CHECK(static_cast<int>(connected_components(s.mask, 1).size()) == *e.object_count);
    }
    CHECK(file_bytes(fs::path(dir_a) / "manifest.json") ==
          file_bytes(fs::path(dir_b) / "manifest.json"));

    // manifest round trip
    Manifest loaded = Manifest::load((fs::path(dir_a) / "manifest.json").string());
    REQUIRE(loaded.entries.size() == ma.entries.size());
    for (std::size_t i = 0; i < loaded.entries.size(); ++i) {
        CHECK(loaded.entries[i].image == ma.entries[i].image);
        CHECK(loaded.entries[i].split == ma.entries[i].split);
        CHECK(loaded.entries[i].sample_class == ma.entries[i].sample_class);
        CHECK(loaded.entries[i].object_count == ma.entries[i].object_count);
    }
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
}

TEST_CASE("load_sample normalizes the 0/255 mask and validates") {
    SynthConfig cfg;
    cfg.train_images = 1;
    cfg.test_images = 0;
    const std::string dir = temp_dir("mvfcnn_synth_c");
    Manifest m = generate_dataset(cfg, dir);
    MicrographSample s = load_sample(dir, m.entries[0]);
    for (auto v : s.mask.px) CHECK((v == 0 || v == 1));
    CHECK(*s.sample_class == 1);
    // on-disk mask is 0/255 for viewability
    Image8 raw = read_image((fs::path(dir) / m.entries[0].mask).string());
    for (auto v : raw.px) CHECK((v == 0 || v == 255));
    fs::remove_all(dir);
}

TEST_CASE("synth config json round trip") {
    SynthConfig cfg;
    cfg.rng_seed = 7;
    cfg.image_h = 100;
    cfg.noise_sigma = 2.5;
    cfg.test_images = 3;
    SynthConfig back = SynthConfig::from_json(cfg.to_json());
    CHECK(back.rng_seed == 7);
    CHECK(back.image_h == 100);
    CHECK(back.image_w == cfg.image_w);
    CHECK(back.noise_sigma == 2.5);
    CHECK(back.test_images == 3);
    SynthConfig defaults = SynthConfig::from_json(nlohmann::json::object());
    CHECK(defaults.rng_seed == SynthConfig{}.rng_seed);
    CHECK(defaults.image_h == SynthConfig{}.image_h);
}
