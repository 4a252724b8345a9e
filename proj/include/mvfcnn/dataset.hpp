#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvfcnn/imgops.hpp"

namespace mvfcnn {

struct DatasetEntry {
    std::string image;
    std::string label_map;
    std::string mask;
    std::string split;  // "train" | "test"
    std::optional<int> sample_class;
    std::optional<int> object_count;
};

// Manifest: a JSON list of {image, label_map, mask, split[, class]} with paths
// relative to the manifest location.
struct Manifest {
    std::vector<DatasetEntry> entries;

    static Manifest load(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw std::runtime_error("manifest: cannot open " + path);
        nlohmann::json j = nlohmann::json::parse(f);
        Manifest m;
        for (const auto& e : j) {
            DatasetEntry d;
            d.image = e.at("image").get<std::string>();
            d.label_map = e.at("label_map").get<std::string>();
            d.mask = e.at("mask").get<std::string>();
            d.split = e.at("split").get<std::string>();
            if (d.split != "train" && d.split != "test")
                throw std::runtime_error("manifest: bad split '" + d.split + "'");
            if (e.contains("class")) d.sample_class = e.at("class").get<int>();
            if (e.contains("objects")) d.object_count = e.at("objects").get<int>();
            m.entries.push_back(std::move(d));
        }
        return m;
    }

    void save(const std::string& path) const {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& d : entries) {
            nlohmann::json e{{"image", d.image}, {"label_map", d.label_map},
                             {"mask", d.mask}, {"split", d.split}};
            if (d.sample_class) e["class"] = *d.sample_class;
            if (d.object_count) e["objects"] = *d.object_count;
            j.push_back(std::move(e));
        }
        std::ofstream f(path, std::ios::trunc);
        if (!f) throw std::runtime_error("manifest: cannot write " + path);
        f << j.dump(2) << "\n";
    }

    std::vector<DatasetEntry> split(const std::string& which) const {
        std::vector<DatasetEntry> out;
        for (const auto& e : entries)
            if (e.split == which) out.push_back(e);
        return out;
    }
};

inline MicrographSample load_sample(const std::string& base_dir, const DatasetEntry& e) {
    namespace fs = std::filesystem;
    MicrographSample s;
    s.image = read_image((fs::path(base_dir) / e.image).string());
    s.label_map = read_image((fs::path(base_dir) / e.label_map).string());
    s.mask = read_image((fs::path(base_dir) / e.mask).string());
    for (auto& v : s.mask.px) v = v ? 1 : 0;
    s.sample_class = e.sample_class;
    s.validate();
    return s;
}

}  // namespace mvfcnn
