#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <optional>
#include <random>
#include <vector>

#include "mvfcnn/image.hpp"

namespace mvfcnn {

// Grayscale micrograph plus its per-pixel class labels and binary constituent
// mask.  Label 0 is the matrix/background; mask is 0/1.
struct MicrographSample {
    Image8 image;
    Image8 label_map;
    Image8 mask;
    std::optional<int> sample_class;

    void validate() const {
        if (!image.same_dims(label_map) || !image.same_dims(mask))
            throw std::invalid_argument("MicrographSample: raster dims differ");
        for (std::size_t i = 0; i < mask.size(); ++i)
            if (label_map.px[i] != 0 && mask.px[i] == 0)
                throw std::invalid_argument("MicrographSample: labeled pixel outside mask");
    }
};

// ---------------------------------------------------------------------------
// Masking
// ---------------------------------------------------------------------------

// Dark constituents on a bright matrix by default: foreground iff intensity <=
// threshold (inclusive).  Inverted polarity selects intensity > threshold.
inline Image8 threshold_mask(const Image8& img, int threshold, bool dark_foreground = true) {
    Image8 mask(img.h, img.w);
    for (std::size_t i = 0; i < img.size(); ++i) {
        const bool fg = dark_foreground ? img.px[i] <= threshold : img.px[i] > threshold;
        mask.px[i] = fg ? 1 : 0;
    }
    return mask;
}

// ---------------------------------------------------------------------------
// Connected components (4-connectivity)
// ---------------------------------------------------------------------------

struct ObjectRegion {
    int id = 0;
    std::vector<std::pair<int, int>> pixels;  // (row, col)
    int top = 0, left = 0, height = 0, width = 0;
    int area() const { return static_cast<int>(pixels.size()); }
};

inline std::vector<ObjectRegion> connected_components(const Image8& mask,
                                                      int min_object_area = 30) {
    std::vector<std::uint8_t> seen(mask.size(), 0);
    std::vector<ObjectRegion> regions;
    int next_id = 0;
    for (int sy = 0; sy < mask.h; ++sy)
        for (int sx = 0; sx < mask.w; ++sx) {
            const std::size_t si = static_cast<std::size_t>(sy) * mask.w + sx;
            if (seen[si] || mask.px[si] == 0) continue;
            ObjectRegion r;
            int ymin = sy, ymax = sy, xmin = sx, xmax = sx;
            std::deque<std::pair<int, int>> queue{{sy, sx}};
            seen[si] = 1;
            while (!queue.empty()) {
                auto [y, x] = queue.front();
                queue.pop_front();
                r.pixels.emplace_back(y, x);
                ymin = std::min(ymin, y); ymax = std::max(ymax, y);
                xmin = std::min(xmin, x); xmax = std::max(xmax, x);
                const int ny[4] = {y - 1, y + 1, y, y};
                const int nx[4] = {x, x, x - 1, x + 1};
                for (int k = 0; k < 4; ++k) {
                    if (ny[k] < 0 || ny[k] >= mask.h || nx[k] < 0 || nx[k] >= mask.w) continue;
                    const std::size_t ni = static_cast<std::size_t>(ny[k]) * mask.w + nx[k];
                    if (seen[ni] || mask.px[ni] == 0) continue;
                    seen[ni] = 1;
                    queue.emplace_back(ny[k], nx[k]);
                }
            }
            if (r.area() < min_object_area) continue;
            r.id = next_id++;
            r.top = ymin; r.left = xmin;
            r.height = ymax - ymin + 1; r.width = xmax - xmin + 1;
            regions.push_back(std::move(r));
        }
    return regions;
}

// ---------------------------------------------------------------------------
// Object crop (matrix pixels blanked to 0)
// ---------------------------------------------------------------------------

inline Image8 crop_object(const MicrographSample& sample, const ObjectRegion& region,
                          int pad = 0) {
    if (region.pixels.empty())
        throw std::invalid_argument("crop_object: empty region");
    const int top = std::max(0, region.top - pad);
    const int left = std::max(0, region.left - pad);
    const int bottom = std::min(sample.image.h, region.top + region.height + pad);
    const int right = std::min(sample.image.w, region.left + region.width + pad);
    Image8 patch(bottom - top, right - left, 0);
    for (const auto& [y, x] : region.pixels) {
        if (y < 0 || y >= sample.image.h || x < 0 || x >= sample.image.w)
            throw std::invalid_argument("crop_object: region pixel out of image bounds");
        patch.at(y - top, x - left) = sample.image.at(y, x);
    }
    return patch;
}

// ---------------------------------------------------------------------------
// Warp resize (pure bilinear, aspect ratio not preserved)
// ---------------------------------------------------------------------------

template <class T>
Plane<T> warp_resize(const Plane<T>& src, int target_h, int target_w) {
    if (src.h < 1 || src.w < 1) throw std::invalid_argument("warp_resize: empty patch");
    if (target_h < 1 || target_w < 1)
        throw std::invalid_argument("warp_resize: zero target dims");
    Plane<T> dst(target_h, target_w);
    const double sy = static_cast<double>(src.h) / target_h;
    const double sx = static_cast<double>(src.w) / target_w;
    for (int y = 0; y < target_h; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(src.h - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, src.h - 1);
        const double wy = fy - y0;
        for (int x = 0; x < target_w; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(src.w - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, src.w - 1);
            const double wx = fx - x0;
            const double v = (1 - wy) * ((1 - wx) * src.at(y0, x0) + wx * src.at(y0, x1)) +
                             wy * ((1 - wx) * src.at(y1, x0) + wx * src.at(y1, x1));
            if constexpr (std::is_integral_v<T>)
                dst.at(y, x) = static_cast<T>(std::lround(v));
            else
                dst.at(y, x) = static_cast<T>(v);
        }
    }
    return dst;
}

// ---------------------------------------------------------------------------
// Sliding-window patch grid
// ---------------------------------------------------------------------------

struct PatchGrid {
    int patch_h = 0, patch_w = 0;
    int stride_y = 0, stride_x = 0;
    std::vector<std::pair<int, int>> origins;  // (row, col), row-major
};

inline int grid_count_1d(int extent, int patch, int stride) {
    return (extent - patch) / stride + 1;
}

inline PatchGrid compute_patch_grid(int H, int W, int patch_h, int patch_w,
                                    int stride_y, int stride_x) {
    if (stride_y < 1 || stride_x < 1)
        throw std::invalid_argument("compute_patch_grid: stride must be >= 1");
    if (patch_h > H || patch_w > W)
        throw std::invalid_argument("compute_patch_grid: patch larger than image");
    PatchGrid g;
    g.patch_h = patch_h; g.patch_w = patch_w;
    g.stride_y = stride_y; g.stride_x = stride_x;
    const int cy = grid_count_1d(H, patch_h, stride_y);
    const int cx = grid_count_1d(W, patch_w, stride_x);
    g.origins.reserve(static_cast<std::size_t>(cy) * cx);
    for (int iy = 0; iy < cy; ++iy)
        for (int ix = 0; ix < cx; ++ix)
            g.origins.emplace_back(iy * stride_y, ix * stride_x);
    return g;
}

inline PatchGrid compute_patch_grid(int H, int W, int patch, int stride) {
    return compute_patch_grid(H, W, patch, patch, stride, stride);
}

// ---------------------------------------------------------------------------
// Class balancing by stride
// ---------------------------------------------------------------------------

struct BalancingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::size_t total_grid_count(const std::vector<std::pair<int, int>>& image_dims,
                                    int patch, int stride) {
    std::size_t total = 0;
    for (const auto& [H, W] : image_dims)
        if (H >= patch && W >= patch)
            total += static_cast<std::size_t>(grid_count_1d(H, patch, stride)) *
                     grid_count_1d(W, patch, stride);
    return total;
}

// Largest stride per class whose summed grid count still reaches target_count.
// Grid counts are monotone non-increasing in the stride, so classes with fewer
// images end up with smaller strides.
inline std::vector<int> solve_balancing_stride(
    const std::vector<std::vector<std::pair<int, int>>>& per_class_image_dims,
    int patch, std::size_t target_count) {
    std::vector<int> strides;
    for (std::size_t ci = 0; ci < per_class_image_dims.size(); ++ci) {
        const auto& dims = per_class_image_dims[ci];
        if (total_grid_count(dims, patch, 1) < target_count) {
            std::string detail;
            for (std::size_t k = 0; k < per_class_image_dims.size(); ++k)
                detail += (k ? ", " : "") + std::to_string(k) + ": " +
                          std::to_string(total_grid_count(per_class_image_dims[k], patch, 1));
            throw BalancingError("balancing: target " + std::to_string(target_count) +
                                 " unachievable for class " + std::to_string(ci) +
                                 " (per-class maxima at stride 1: " + detail + ")");
        }
        int s_max = 1;
        for (const auto& [H, W] : dims)
            s_max = std::max({s_max, H - patch + 1, W - patch + 1});
        // bisect the largest stride still reaching the target
        int lo = 1, hi = s_max;
        while (lo < hi) {
            const int mid = lo + (hi - lo + 1) / 2;
            if (total_grid_count(dims, patch, mid) >= target_count)
                lo = mid;
            else
                hi = mid - 1;
        }
        strides.push_back(lo);
    }
    return strides;
}

// Uniform seeded subsample down to exactly `target` indices, returned sorted.
inline std::vector<std::size_t> subsample_indices(std::size_t total, std::size_t target,
                                                  std::uint64_t seed) {
    std::vector<std::size_t> idx(total);
    std::iota(idx.begin(), idx.end(), 0);
    if (target >= total) return idx;
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(target);
    std::sort(idx.begin(), idx.end());
    return idx;
}

// ---------------------------------------------------------------------------
// Rotation augmentation
// ---------------------------------------------------------------------------

template <class T>
Plane<T> rotate90(const Plane<T>& src) {  // counter-clockwise
    Plane<T> dst(src.w, src.h);
    for (int y = 0; y < src.h; ++y)
        for (int x = 0; x < src.w; ++x)
            dst.at(src.w - 1 - x, y) = src.at(y, x);
    return dst;
}

struct LabeledPatch {
    Image8 image;
    Image8 labels;
};

// Each patch plus its 90/180/270 degree rotations, in that order.
inline std::vector<LabeledPatch> augment_rotations(const std::vector<LabeledPatch>& in) {
    std::vector<LabeledPatch> out;
    out.reserve(in.size() * 4);
    for (const auto& p : in) {
        if (p.image.h != p.image.w)
            throw std::invalid_argument("augment_rotations: patch must be square");
        if (!p.image.same_dims(p.labels))
            throw std::invalid_argument("augment_rotations: image/label dims differ");
        LabeledPatch cur = p;
        out.push_back(cur);
        for (int k = 0; k < 3; ++k) {
            cur.image = rotate90(cur.image);
            cur.labels = rotate90(cur.labels);
            out.push_back(cur);
        }
    }
    return out;
}

}  // namespace mvfcnn
