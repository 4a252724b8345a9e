#pragma once

#include <algorithm>
#include <atomic>
#include <optional>
#include <ostream>
#include <thread>
#include <vector>

#include "mvfcnn/imgops.hpp"
#include "mvfcnn/layers.hpp"
#include "mvfcnn/net.hpp"

namespace mvfcnn {

inline constexpr int kNotSegmented = -1;

template <class T>
struct SegmentationResult {
    Tensor<T> score_map;  // (1, n_classes incl. matrix, H, W), tile-averaged probabilities
    Image8 label_map;     // per-pixel argmax, first index on ties
};

template <class T>
Image8 argmax_labels(const Tensor<T>& scores) {
    Image8 labels(scores.h, scores.w);
    for (int y = 0; y < scores.h; ++y)
        for (int x = 0; x < scores.w; ++x) {
            int best = 0;
            T bv = scores.at(0, 0, y, x);
            for (int c = 1; c < scores.c; ++c) {
                const T v = scores.at(0, c, y, x);
                if (v > bv) { bv = v; best = c; }
            }
            labels.at(y, x) = static_cast<std::uint8_t>(best);
        }
    return labels;
}

template <class T>
Tensor<T> image_to_tensor(const Image8& img) {
    Tensor<T> t(1, 1, img.h, img.w);
    for (std::size_t i = 0; i < img.size(); ++i)
        t.data[i] = static_cast<T>(img.px[i]) / T(255);
    return t;
}

// Edge-anchored tile origins: regular stride grid plus a final right/bottom
// anchored origin so every pixel is covered.
inline std::vector<int> tile_origins_1d(int extent, int patch, int stride) {
    std::vector<int> out;
    for (int o = 0; o + patch <= extent; o += stride) out.push_back(o);
    if (out.empty() || out.back() + patch < extent) out.push_back(extent - patch);
    return out;
}

// Sliding-window inference: tiles are segmented independently, stitched back,
// and overlapping scores averaged per pixel.  With stride = patch and image
// dims divisible by the patch this is a disjoint partition.
template <class T>
SegmentationResult<T> segment_image(const MiniFcn<T>& net, const Image8& image,
                                    int patch, int stride, int threads = 1) {
    if (stride < 1 || stride > patch)
        throw std::invalid_argument("segment_image: need 1 <= stride <= patch");
    const int n_classes = net.config().n_classes;
    SegmentationResult<T> result;
    if (image.h <= patch && image.w <= patch) {
        // single tile; the net pads internally and crops back
        Tensor<T> logits = net.forward(image_to_tensor<T>(image));
        result.score_map = softmax_channels(logits);
        result.label_map = argmax_labels(result.score_map);
        return result;
    }
    if (image.h < patch || image.w < patch)
        throw std::invalid_argument("segment_image: degenerate tiling (one dim below patch)");

    const auto ys = tile_origins_1d(image.h, patch, stride);
    const auto xs = tile_origins_1d(image.w, patch, stride);
    std::vector<std::pair<int, int>> origins;
    for (int oy : ys)
        for (int ox : xs) origins.emplace_back(oy, ox);

    std::vector<Tensor<T>> tile_scores(origins.size());
    auto run_tile = [&](std::size_t ti) {
        const auto [oy, ox] = origins[ti];
        Tensor<T> x(1, 1, patch, patch);
        for (int y = 0; y < patch; ++y)
            for (int xx = 0; xx < patch; ++xx)
                x.at(0, 0, y, xx) = static_cast<T>(image.at(oy + y, ox + xx)) / T(255);
        tile_scores[ti] = softmax_channels(net.forward(x));
    };
    if (threads <= 1) {
        for (std::size_t ti = 0; ti < origins.size(); ++ti) run_tile(ti);
    } else {
        std::vector<std::thread> pool;
        std::atomic<std::size_t> next{0};
        for (int t = 0; t < threads; ++t)
            pool.emplace_back([&] {
                for (std::size_t ti = next.fetch_add(1); ti < origins.size();
                     ti = next.fetch_add(1))
                    run_tile(ti);
            });
        for (auto& th : pool) th.join();
    }

    // deterministic accumulation in tile order
    Tensor<T> sum(1, n_classes, image.h, image.w);
    Tensor<T> count(1, 1, image.h, image.w);
    for (std::size_t ti = 0; ti < origins.size(); ++ti) {
        const auto [oy, ox] = origins[ti];
        const Tensor<T>& sc = tile_scores[ti];
        for (int c = 0; c < n_classes; ++c)
            for (int y = 0; y < patch; ++y)
                for (int xx = 0; xx < patch; ++xx)
                    sum.at(0, c, oy + y, ox + xx) += sc.at(0, c, y, xx);
        for (int y = 0; y < patch; ++y)
            for (int xx = 0; xx < patch; ++xx)
                count.at(0, 0, oy + y, ox + xx) += T(1);
    }
    for (int c = 0; c < n_classes; ++c)
        for (int y = 0; y < image.h; ++y)
            for (int x = 0; x < image.w; ++x)
                sum.at(0, c, y, x) /= count.at(0, 0, y, x);
    result.score_map = std::move(sum);
    result.label_map = argmax_labels(result.score_map);
    return result;
}

struct ObjectClassification {
    int region_id = 0;
    int voted_class = kNotSegmented;  // 1..n_cl, or kNotSegmented
    std::vector<std::size_t> votes;   // per predicted class incl. matrix (index 0)
};

// Majority vote over the predicted pixels inside each object.  The matrix
// channel is not a candidate; an object whose interior contains no
// constituent-class pixels is NOT_SEGMENTED.  Ties go to the lowest index.
inline std::vector<ObjectClassification> max_vote_objects(
    const Image8& label_map, const std::vector<ObjectRegion>& regions, int n_classes) {
    std::vector<ObjectClassification> out;
    out.reserve(regions.size());
    for (const auto& r : regions) {
        ObjectClassification oc;
        oc.region_id = r.id;
        oc.votes.assign(n_classes, 0);
        for (const auto& [y, x] : r.pixels) {
            if (y < 0 || y >= label_map.h || x < 0 || x >= label_map.w)
                throw std::invalid_argument("max_vote_objects: region out of bounds");
            const int c = label_map.at(y, x);
            if (c >= n_classes)
                throw std::invalid_argument("max_vote_objects: predicted label out of range");
            ++oc.votes[c];
        }
        int best = kNotSegmented;
        std::size_t best_votes = 0;
        for (int c = 1; c < n_classes; ++c)
            if (oc.votes[c] > best_votes) { best_votes = oc.votes[c]; best = c; }
        oc.voted_class = best;
        out.push_back(std::move(oc));
    }
    return out;
}

// Majority class over voted objects; NOT_SEGMENTED objects excluded.
// Returns nullopt when nothing was segmented (unclassifiable image).
inline std::optional<int> classify_whole_image(
    const std::vector<ObjectClassification>& objects, int n_classes) {
    std::vector<std::size_t> tally(n_classes, 0);
    bool any = false;
    for (const auto& oc : objects)
        if (oc.voted_class != kNotSegmented) {
            ++tally[oc.voted_class];
            any = true;
        }
    if (!any) return std::nullopt;
    int best = 1;
    for (int c = 2; c < n_classes; ++c)
        if (tally[c] > tally[best]) best = c;
    return best;
}

// Object-based CNN path: crop, blank the matrix, warp to the net input size,
// classify by the highest posterior.
template <class T>
std::pair<int, std::vector<T>> classify_object_cnn(const MiniCnn<T>& net,
                                                   const MicrographSample& sample,
                                                   const ObjectRegion& region,
                                                   int pad = 0) {
    Image8 crop = crop_object(sample, region, pad);
    const int s = net.config().input_size;
    Image8 warped = warp_resize(crop, s, s);
    std::vector<T> probs = net.predict_probs(image_to_tensor<T>(warped));
    int best = 0;
    for (int c = 1; c < static_cast<int>(probs.size()); ++c)
        if (probs[c] > probs[best]) best = c;
    return {best, probs};
}

// ---------------------------------------------------------------------------
// Output rendering
// ---------------------------------------------------------------------------

// martensite red, tempered martensite green, bainite blue, pearlite yellow
inline Rgb class_color(int cls) {
    switch (cls) {
        case 1: return {255, 0, 0};
        case 2: return {0, 255, 0};
        case 3: return {0, 0, 255};
        case 4: return {255, 255, 0};
        case kNotSegmented: return {255, 255, 255};
        default: return {0, 0, 0};  // matrix
    }
}

inline Plane<Rgb> colorize_labels(const Image8& label_map) {
    Plane<Rgb> out(label_map.h, label_map.w);
    for (std::size_t i = 0; i < label_map.size(); ++i)
        out.px[i] = class_color(label_map.px[i]);
    return out;
}

inline Plane<Rgb> colorize_objects(const Image8& dims_like,
                                   const std::vector<ObjectRegion>& regions,
                                   const std::vector<ObjectClassification>& votes) {
    Plane<Rgb> out(dims_like.h, dims_like.w);
    for (std::size_t k = 0; k < regions.size(); ++k) {
        const Rgb col = class_color(votes[k].voted_class);
        for (const auto& [y, x] : regions[k].pixels) out.at(y, x) = col;
    }
    return out;
}

inline void write_object_csv(std::ostream& os,
                             const std::vector<ObjectRegion>& regions,
                             const std::vector<ObjectClassification>& votes) {
    os << "object_id,voted_class,area";
    if (!votes.empty())
        for (std::size_t c = 0; c < votes[0].votes.size(); ++c) os << ",votes_" << c;
    os << "\n";
    for (std::size_t k = 0; k < regions.size(); ++k) {
        os << regions[k].id << ","
           << (votes[k].voted_class == kNotSegmented ? std::string("NOT_SEGMENTED")
                                                     : std::to_string(votes[k].voted_class))
           << "," << regions[k].area();
        for (std::size_t v : votes[k].votes) os << "," << v;
        os << "\n";
    }
}

}  // namespace mvfcnn
