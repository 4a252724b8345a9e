#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvfcnn/net.hpp"
#include "mvfcnn/optim.hpp"

namespace mvfcnn {

// On-disk layout: magic "MVFC", u32 version, u32 header byte length, UTF-8
// JSON header (spec + digest + tensor directory), then little-endian f32
// payloads in directory order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    nlohmann::json spec_json;
    std::string digest;
    std::uint64_t iteration = 0;
    struct Entry {
        std::array<int, 4> shape{1, 1, 1, 1};
        std::vector<float> data;
    };
    std::map<std::string, Entry> tensors;      // network parameters
    std::map<std::string, Entry> velocities;   // optional optimizer state
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(const std::string& buf, std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
    return v;
}

inline void append_f32_le(std::string& out, const std::vector<float>& v) {
    for (float f : v) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_u32(out, bits);
    }
}

inline std::vector<float> read_f32_le(const std::string& buf, std::size_t off,
                                      std::size_t count) {
    std::vector<float> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint32_t bits = get_u32(buf, off + 4 * i);
        std::memcpy(&out[i], &bits, 4);
    }
    return out;
}

}  // namespace detail

template <class Net, class T>
Checkpoint make_checkpoint(Net& net, const TrainState<T>* state) {
    Checkpoint ck;
    ck.spec_json = net.spec().to_json();
    ck.digest = net.spec().digest();
    for (const auto& p : net.params()) {
        Checkpoint::Entry e;
        e.shape = p.shape;
        e.data.resize(p.size);
        for (std::size_t i = 0; i < p.size; ++i) e.data[i] = static_cast<float>(p.value[i]);
        ck.tensors.emplace(p.name, std::move(e));
    }
    if (state) {
        ck.iteration = state->iteration;
        for (const auto& [name, vel] : state->velocity) {
            Checkpoint::Entry e;
            e.shape = {1, 1, 1, static_cast<int>(vel.size())};
            e.data.resize(vel.size());
            for (std::size_t i = 0; i < vel.size(); ++i) e.data[i] = static_cast<float>(vel[i]);
            ck.velocities.emplace(name, std::move(e));
        }
    }
    return ck;
}

inline void write_checkpoint(const Checkpoint& ck, const std::string& path) {
    nlohmann::json dir = nlohmann::json::array();
    std::string payload;
    std::uint64_t offset = 0;
    auto add = [&](const std::string& kind, const std::string& name,
                   const Checkpoint::Entry& e) {
        dir.push_back({{"kind", kind}, {"name", name}, {"shape", e.shape},
                       {"offset", offset}, {"count", e.data.size()}});
        detail::append_f32_le(payload, e.data);
        offset += 4 * e.data.size();
    };
    for (const auto& [name, e] : ck.tensors) add("param", name, e);
    for (const auto& [name, e] : ck.velocities) add("velocity", name, e);
    nlohmann::json header{{"digest", ck.digest}, {"spec", ck.spec_json},
                          {"iteration", ck.iteration}, {"tensors", dir}};
    const std::string htext = header.dump();
    std::string out = "MVFC";
    detail::put_u32(out, ck.version);
    detail::put_u32(out, static_cast<std::uint32_t>(htext.size()));
    out += htext;
    out += payload;
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("checkpoint: cannot open for writing: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw CheckpointError("checkpoint: write failed: " + path);
}

template <class Net, class T>
void save_checkpoint(Net& net, const TrainState<T>* state, const std::string& path) {
    write_checkpoint(make_checkpoint(net, state), path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("checkpoint: cannot open: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 12 || buf.compare(0, 4, "MVFC") != 0)
        throw CheckpointError("checkpoint: bad magic in " + path);
    Checkpoint ck;
    ck.version = detail::get_u32(buf, 4);
    if (ck.version != kCheckpointVersion)
        throw CheckpointError("checkpoint: unsupported version " +
                              std::to_string(ck.version));
    const std::size_t hlen = detail::get_u32(buf, 8);
    if (12 + hlen > buf.size()) throw CheckpointError("checkpoint: truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(buf.substr(12, hlen));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("checkpoint: corrupt header: ") + e.what());
    }
    ck.digest = header.at("digest").get<std::string>();
    ck.spec_json = header.at("spec");
    ck.iteration = header.value("iteration", 0ull);
    const std::size_t payload_off = 12 + hlen;
    for (const auto& ent : header.at("tensors")) {
        Checkpoint::Entry e;
        const auto shape = ent.at("shape").get<std::vector<int>>();
        if (shape.size() != 4) throw CheckpointError("checkpoint: bad shape entry");
        std::copy(shape.begin(), shape.end(), e.shape.begin());
        const std::uint64_t off = ent.at("offset").get<std::uint64_t>();
        const std::uint64_t count = ent.at("count").get<std::uint64_t>();
        if (payload_off + off + 4 * count > buf.size())
            throw CheckpointError("checkpoint: truncated payload in " + path);
        e.data = detail::read_f32_le(buf, payload_off + off, count);
        const std::string name = ent.at("name").get<std::string>();
        if (ent.at("kind") == "velocity")
            ck.velocities.emplace(name, std::move(e));
        else if (!ck.tensors.emplace(name, std::move(e)).second)
            throw CheckpointError("checkpoint: duplicate tensor '" + name + "'");
    }
    return ck;
}

enum class LoadMode {
    Strict,      // digest must match, every parameter present
    ReinitHead,  // non-head parameters loaded, head re-drawn N(0, 0.01)
    Subset,      // load whatever matches by name+shape (staged promotion)
};

template <class Net, class T>
void apply_checkpoint(Net& net, TrainState<T>* state, const Checkpoint& ck,
                      LoadMode mode = LoadMode::Strict, std::uint64_t seed = 0) {
    const std::string net_digest = net.spec().digest();
    if (mode == LoadMode::Strict && ck.digest != net_digest)
        throw CheckpointError("checkpoint: spec digest mismatch (" + ck.digest + " vs " +
                              net_digest + "); pass the head-reinit flag to fine-tune");
    const auto head = net.head_param_names();
    auto is_head = [&](const std::string& n) {
        return std::find(head.begin(), head.end(), n) != head.end();
    };
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 0.01);
    for (auto& p : net.params()) {
        const auto it = ck.tensors.find(p.name);
        if (mode == LoadMode::ReinitHead && is_head(p.name)) {
            for (std::size_t i = 0; i < p.size; ++i) p.value[i] = static_cast<T>(nd(rng));
            continue;
        }
        if (it == ck.tensors.end()) {
            if (mode == LoadMode::Subset) continue;  // new layer keeps its init
            throw CheckpointError("checkpoint: missing parameter '" + p.name + "'");
        }
        if (it->second.data.size() != p.size)
            throw CheckpointError("checkpoint: shape mismatch for '" + p.name + "'");
        for (std::size_t i = 0; i < p.size; ++i)
            p.value[i] = static_cast<T>(it->second.data[i]);
    }
    if (state) {
        state->iteration = ck.iteration;
        state->velocity.clear();
        for (const auto& [name, e] : ck.velocities) {
            std::vector<T> v(e.data.size());
            for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(e.data[i]);
            state->velocity.emplace(name, std::move(v));
        }
    }
}

}  // namespace mvfcnn
