#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvfcnn/dataset.hpp"
#include "mvfcnn/imgops.hpp"

namespace mvfcnn {

// Procedural 4-constituent dataset: each class has a texture family with a
// distinct dominant spatial frequency/structure, so the families stay
// distinguishable even under rotation augmentation.
//   1: fine stripes (period ~4 px)
//   2: coarse lamellar bands at 45 degrees (period ~16 px)
//   3: speckle (white noise)
//   4: dark blobs on a mid-gray base
// Matrix background is a bright, mildly noisy field.
struct SynthConfig {
    std::uint64_t rng_seed = 42;
    int image_h = 192, image_w = 192;
    int objects_per_image = 6;
    int object_min_radius = 10, object_max_radius = 22;
    double noise_sigma = 4.0;
    int train_images = 11, test_images = 10;

    nlohmann::json to_json() const {
        return {{"rng_seed", rng_seed}, {"image_h", image_h}, {"image_w", image_w},
                {"objects_per_image", objects_per_image},
                {"object_min_radius", object_min_radius},
                {"object_max_radius", object_max_radius},
                {"noise_sigma", noise_sigma},
                {"train_images", train_images}, {"test_images", test_images}};
    }
    static SynthConfig from_json(const nlohmann::json& j) {
        SynthConfig c;
        c.rng_seed = j.value("rng_seed", c.rng_seed);
        c.image_h = j.value("image_h", c.image_h);
        c.image_w = j.value("image_w", c.image_w);
        c.objects_per_image = j.value("objects_per_image", c.objects_per_image);
        c.object_min_radius = j.value("object_min_radius", c.object_min_radius);
        c.object_max_radius = j.value("object_max_radius", c.object_max_radius);
        c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
        c.train_images = j.value("train_images", c.train_images);
        c.test_images = j.value("test_images", c.test_images);
        return c;
    }
};

namespace detail {

inline double texture_value(int cls, int y, int x, std::mt19937_64& rng,
                            const std::vector<std::pair<double, double>>& blob_centers,
                            double blob_radius) {
    switch (cls) {
        case 1:  // fine horizontal stripes
            return 70.0 + 55.0 * std::sin(2.0 * M_PI * y / 4.0);
        case 2: {  // coarse lamellar bands at 45 degrees
            const double phase = std::fmod((y + x) / 16.0, 2.0);
            return phase < 1.0 ? 50.0 : 125.0;
        }
        case 3:  // speckle
            return 30.0 + 120.0 * std::uniform_real_distribution<double>(0, 1)(rng);
        case 4: {  // dark blobs on mid-gray
            for (const auto& [cy, cx] : blob_centers) {
                const double dy = y - cy, dx = x - cx;
                if (dy * dy + dx * dx <= blob_radius * blob_radius) return 40.0;
            }
            return 135.0;
        }
        default:
            throw std::invalid_argument("texture_value: class must be 1..4");
    }
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t idx) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (idx + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

}  // namespace detail

struct SynthSampleInfo {
    MicrographSample sample;
    int placed_objects = 0;
    bool placement_shortfall = false;
};

// One sample: non-overlapping elliptical objects of the given class on a bright
// matrix.  Bit-deterministic for a fixed (config, class, seed).
inline SynthSampleInfo generate_sample(const SynthConfig& cfg, int cls,
                                       std::uint64_t seed) {
    if (cls < 1 || cls > 4)
        throw std::invalid_argument("generate_sample: class must be in 1..4");
    std::mt19937_64 rng(seed);
    SynthSampleInfo out;
    MicrographSample& s = out.sample;
    s.image = Image8(cfg.image_h, cfg.image_w);
    s.label_map = Image8(cfg.image_h, cfg.image_w, 0);
    s.mask = Image8(cfg.image_h, cfg.image_w, 0);
    s.sample_class = cls;

    // matrix background
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
    for (std::size_t i = 0; i < s.image.size(); ++i)
        s.image.px[i] = static_cast<std::uint8_t>(
            std::clamp(210.0 + noise(rng), 0.0, 255.0));

    struct Ellipse { int cy, cx, ry, rx; };
    std::vector<Ellipse> placed;
    std::uniform_int_distribution<int> rad(cfg.object_min_radius, cfg.object_max_radius);
    const int gap = 3;  // keeps components 4-disconnected
    for (int k = 0; k < cfg.objects_per_image; ++k) {
        bool ok = false;
        for (int attempt = 0; attempt < 60 && !ok; ++attempt) {
            Ellipse e;
            e.ry = rad(rng);
            e.rx = rad(rng);
            if (e.ry > (cfg.image_h - 2) / 2 || e.rx > (cfg.image_w - 2) / 2) continue;
            e.cy = std::uniform_int_distribution<int>(e.ry + 1, cfg.image_h - e.ry - 2)(rng);
            e.cx = std::uniform_int_distribution<int>(e.rx + 1, cfg.image_w - e.rx - 2)(rng);
            ok = true;
            for (const auto& p : placed) {
                const bool sep_y = std::abs(e.cy - p.cy) > e.ry + p.ry + gap;
                const bool sep_x = std::abs(e.cx - p.cx) > e.rx + p.rx + gap;
                if (!sep_y && !sep_x) { ok = false; break; }
            }
            if (ok) placed.push_back(e);
        }
        if (!ok) {
            out.placement_shortfall = true;
            break;
        }
    }
    out.placed_objects = static_cast<int>(placed.size());

    for (const auto& e : placed) {
        std::vector<std::pair<double, double>> blob_centers;
        double blob_radius = 3.5;
        if (cls == 4) {
            const int nblobs = std::max(3, (e.ry * e.rx) / 40);
            for (int b = 0; b < nblobs; ++b)
                blob_centers.emplace_back(
                    e.cy + std::uniform_real_distribution<double>(-e.ry, e.ry)(rng),
                    e.cx + std::uniform_real_distribution<double>(-e.rx, e.rx)(rng));
        }
        for (int y = e.cy - e.ry; y <= e.cy + e.ry; ++y)
            for (int x = e.cx - e.rx; x <= e.cx + e.rx; ++x) {
                const double fy = static_cast<double>(y - e.cy) / e.ry;
                const double fx = static_cast<double>(x - e.cx) / e.rx;
                if (fy * fy + fx * fx > 1.0) continue;
                const double v =
                    detail::texture_value(cls, y, x, rng, blob_centers, blob_radius) +
                    noise(rng);
                s.image.at(y, x) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
                s.label_map.at(y, x) = static_cast<std::uint8_t>(cls);
                s.mask.at(y, x) = 1;
            }
    }
    return out;
}

// Writes the train/test splits plus a manifest.json into out_dir.  Sample
// classes cycle 1..4 across both splits.
inline Manifest generate_dataset(const SynthConfig& cfg, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    Manifest manifest;
    const int total = cfg.train_images + cfg.test_images;
    for (int i = 0; i < total; ++i) {
        const bool train = i < cfg.train_images;
        const int local = train ? i : i - cfg.train_images;
        const int cls = (local % 4) + 1;
        SynthSampleInfo info = generate_sample(cfg, cls, detail::mix_seed(cfg.rng_seed, i));
        const std::string stem =
            (train ? "train_" : "test_") + std::to_string(local);
        DatasetEntry e;
        e.image = stem + "_img.png";
        e.label_map = stem + "_lab.png";
        e.mask = stem + "_mask.png";
        e.split = train ? "train" : "test";
        e.sample_class = cls;
        e.object_count = info.placed_objects;
        write_png_gray(info.sample.image, (fs::path(out_dir) / e.image).string());
        write_png_gray(info.sample.label_map, (fs::path(out_dir) / e.label_map).string());
        Image8 mask_vis = info.sample.mask;
        for (auto& v : mask_vis.px) v = v ? 255 : 0;
        write_png_gray(mask_vis, (fs::path(out_dir) / e.mask).string());
        manifest.entries.push_back(std::move(e));
    }
    manifest.save((fs::path(out_dir) / "manifest.json").string());
    return manifest;
}

}  // namespace mvfcnn
