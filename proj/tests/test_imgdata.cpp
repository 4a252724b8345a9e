#include <catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "helpers.hpp"
#include "mvfcnn/imgops.hpp"

using namespace mvfcnn;
using namespace test_helpers;

namespace {

Image8 image_from(std::initializer_list<std::initializer_list<int>> rows) {
    const int h = static_cast<int>(rows.size());
    const int w = static_cast<int>(rows.begin()->size());
    Image8 img(h, w);
    int y = 0;
    for (const auto& row : rows) {
        int x = 0;
        for (int v : row) img.at(y, x++) = static_cast<std::uint8_t>(v);
        ++y;
    }
    return img;
}

// independent flood fill using an explicit stack and 4-neighbourhood
std::vector<std::set<std::pair<int, int>>> flood_fill_oracle(const Image8& mask) {
    std::vector<std::set<std::pair<int, int>>> comps;
    std::vector<char> seen(mask.size(), 0);
    for (int y = 0; y < mask.h; ++y)
        for (int x = 0; x < mask.w; ++x) {
            if (seen[y * mask.w + x] || !mask.at(y, x)) continue;
            std::set<std::pair<int, int>> comp;
            std::vector<std::pair<int, int>> stack{{y, x}};
            seen[y * mask.w + x] = 1;
            while (!stack.empty()) {
                auto [cy, cx] = stack.back();
                stack.pop_back();
                comp.insert({cy, cx});
                const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
                for (int k = 0; k < 4; ++k) {
                    const int ny = cy + dy[k], nx = cx + dx[k];
                    if (ny < 0 || ny >= mask.h || nx < 0 || nx >= mask.w) continue;
                    if (seen[ny * mask.w + nx] || !mask.at(ny, nx)) continue;
                    seen[ny * mask.w + nx] = 1;
                    stack.emplace_back(ny, nx);
                }
            }
            comps.push_back(std::move(comp));
        }
    return comps;
}

}  // namespace

TEST_CASE("threshold mask inclusive boundary, both polarities") {
    Image8 img = image_from({{10, 100, 101}, {255, 0, 100}});
    Image8 dark = threshold_mask(img, 100);
    CHECK(dark.at(0, 0) == 1);
    CHECK(dark.at(0, 1) == 1);  // == threshold is foreground
    CHECK(dark.at(0, 2) == 0);
    CHECK(dark.at(1, 0) == 0);
    CHECK(dark.at(1, 1) == 1);
    Image8 bright = threshold_mask(img, 100, false);
    for (std::size_t i = 0; i < img.size(); ++i)
        CHECK(static_cast<int>(dark.px[i]) + bright.px[i] == 1);
}

TEST_CASE("connected components match a flood-fill oracle on random masks") {
    std::mt19937_64 rng(71);
    std::bernoulli_distribution coin(0.45);
    for (int trial = 0; trial < 20; ++trial) {
        Image8 mask(17, 23);
        for (auto& p : mask.px) p = coin(rng) ? 1 : 0;
        auto oracle = flood_fill_oracle(mask);
        oracle.erase(std::remove_if(oracle.begin(), oracle.end(),
                                    [](const auto& c) { return c.size() < 3; }),
                     oracle.end());
        auto regions = connected_components(mask, 3);
        REQUIRE(regions.size() == oracle.size());
        for (const auto& r : regions) {
            std::set<std::pair<int, int>> got(r.pixels.begin(), r.pixels.end());
            CHECK(std::find(oracle.begin(), oracle.end(), got) != oracle.end());
        }
    }
}

TEST_CASE("connected components: ids follow raster order, bbox is tight") {
    Image8 mask = image_from({{1, 1, 0, 0, 0},
                              {1, 0, 0, 1, 1},
                              {0, 0, 0, 1, 0},
                              {1, 0, 0, 1, 0}});
    auto regions = connected_components(mask, 1);
    REQUIRE(regions.size() == 3);
    CHECK(regions[0].id == 0);
    CHECK(regions[0].area() == 3);  // top-left L
    CHECK(regions[0].top == 0);
    CHECK(regions[0].left == 0);
    CHECK(regions[0].height == 2);
    CHECK(regions[0].width == 2);
    CHECK(regions[1].area() == 4);  // right column piece
    CHECK(regions[1].top == 1);
    CHECK(regions[1].left == 3);
    CHECK(regions[1].height == 3);
    CHECK(regions[1].width == 2);
    CHECK(regions[2].area() == 1);  // bottom-left singleton
    // diagonal pixels are not connected under 4-connectivity
    Image8 diag = image_from({{1, 0}, {0, 1}});
    CHECK(connected_components(diag, 1).size() == 2);
}

TEST_CASE("connected components: minimum area filter") {
    Image8 mask = image_from({{1, 0, 1}, {1, 0, 0}});
    CHECK(connected_components(mask, 1).size() == 2);
    CHECK(connected_components(mask, 2).size() == 1);
    CHECK(connected_components(mask, 3).empty());
}

TEST_CASE("crop object keeps region pixels and blanks the rest") {
    MicrographSample s;
    s.image = image_from({{9, 9, 9, 9}, {9, 50, 60, 9}, {9, 70, 9, 9}, {9, 9, 9, 9}});
    s.label_map = Image8(4, 4, 0);
    s.mask = Image8(4, 4, 0);
    ObjectRegion r;
    r.pixels = {{1, 1}, {1, 2}, {2, 1}};
    r.top = 1; r.left = 1; r.height = 2; r.width = 2;
    Image8 patch = crop_object(s, r);
    REQUIRE(patch.h == 2);
    REQUIRE(patch.w == 2);
    CHECK(patch.at(0, 0) == 50);
    CHECK(patch.at(0, 1) == 60);
    CHECK(patch.at(1, 0) == 70);
    CHECK(patch.at(1, 1) == 0);  // not in region

    Image8 padded = crop_object(s, r, 1);
    REQUIRE(padded.h == 4);
    REQUIRE(padded.w == 4);
    CHECK(padded.at(1, 1) == 50);
    CHECK(padded.at(0, 0) == 0);  // pad ring stays blank

    ObjectRegion empty;
    CHECK_THROWS_AS(crop_object(s, empty), std::invalid_argument);
}

TEST_CASE("warp resize: identity, constants and an exact 2x case") {
    Plane<double> src(2, 2);
    src.at(0, 0) = 1; src.at(0, 1) = 3; src.at(1, 0) = 5; src.at(1, 1) = 7;
    Plane<double> same = warp_resize(src, 2, 2);
    for (std::size_t i = 0; i < src.size(); ++i) CHECK(same.px[i] == src.px[i]);

    Plane<double> c(3, 5, 4.25);
    Plane<double> cw = warp_resize(c, 7, 2);
    for (double v : cw.px) CHECK(v == 4.25);

    // doubling a 2x2 patch: output centers at source coords -0.25, 0.25, 0.75, 1.25
    // (clamped), so interior values interpolate at 1/4 and 3/4
    Plane<double> up = warp_resize(src, 4, 4);
    CHECK(up.at(0, 0) == 1.0);
    CHECK(close_rel(up.at(1, 1), 1 + 0.25 * 2 + 0.25 * 4, 1e-12));  // 2.5
    CHECK(close_rel(up.at(2, 2), 1 + 0.75 * 2 + 0.75 * 4, 1e-12));  // 5.5
    CHECK(up.at(3, 3) == 7.0);
}

TEST_CASE("warp resize matches a direct bilinear oracle") {
    std::mt19937_64 rng(72);
    std::uniform_real_distribution<double> uni(0, 255);
    Plane<double> src(5, 9);
    for (auto& v : src.px) v = uni(rng);
    const int th = 11, tw = 4;
    Plane<double> dst = warp_resize(src, th, tw);
    for (int y = 0; y < th; ++y)
        for (int x = 0; x < tw; ++x) {
            double fy = std::clamp((y + 0.5) * src.h / th - 0.5, 0.0, src.h - 1.0);
            double fx = std::clamp((x + 0.5) * src.w / tw - 0.5, 0.0, src.w - 1.0);
            const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
            const int y1 = std::min(y0 + 1, src.h - 1), x1 = std::min(x0 + 1, src.w - 1);
            const double wy = fy - y0, wx = fx - x0;
            const double v =
                (1 - wy) * ((1 - wx) * src.at(y0, x0) + wx * src.at(y0, x1)) +
                wy * ((1 - wx) * src.at(y1, x0) + wx * src.at(y1, x1));
            REQUIRE(close_rel(dst.at(y, x), v, 1e-12));
        }
    CHECK_THROWS_AS(warp_resize(src, 0, 4), std::invalid_argument);
}

TEST_CASE("warp resize output range stays within source range") {
    std::mt19937_64 rng(73);
    Image8 src(7, 7);
    std::uniform_int_distribution<int> uni(30, 200);
    for (auto& v : src.px) v = static_cast<std::uint8_t>(uni(rng));
    Image8 dst = warp_resize(src, 32, 32);
    const auto [lo, hi] = std::minmax_element(src.px.begin(), src.px.end());
    for (auto v : dst.px) {
        CHECK(v >= *lo);
        CHECK(v <= *hi);
    }
}

TEST_CASE("patch grid counts for a 7000x8000 raster") {
    CHECK(grid_count_1d(7000, 1000, 1000) == 7);
    CHECK(grid_count_1d(8000, 1000, 1000) == 8);
    auto coarse = compute_patch_grid(7000, 8000, 1000, 1000);
    CHECK(coarse.origins.size() == 56);
    auto fine = compute_patch_grid(7000, 8000, 1000, 100);
    CHECK(fine.origins.size() == 4331);  // 61 * 71
}

TEST_CASE("patch grid origins are row-major and in bounds") {
    auto g = compute_patch_grid(10, 13, 4, 3);
    REQUIRE(g.origins.size() == 3 * 4);
    CHECK(g.origins.front() == std::make_pair(0, 0));
    CHECK(g.origins.back() == std::make_pair(6, 9));
    for (auto [y, x] : g.origins) {
        CHECK(y + 4 <= 10);
        CHECK(x + 4 <= 13);
    }
    CHECK_THROWS_AS(compute_patch_grid(3, 3, 4, 1), std::invalid_argument);
    CHECK_THROWS_AS(compute_patch_grid(8, 8, 4, 0), std::invalid_argument);
}

TEST_CASE("balancing strides hit the target and are maximal") {
    // class 0 has one big image, class 1 a few small ones
    std::vector<std::vector<std::pair<int, int>>> dims{
        {{200, 300}},
        {{64, 64}, {64, 80}, {72, 64}},
    };
    const int patch = 32;
    const std::size_t target = 500;
    auto strides = solve_balancing_stride(dims, patch, target);
    REQUIRE(strides.size() == 2);
    for (std::size_t c = 0; c < dims.size(); ++c) {
        CHECK(total_grid_count(dims[c], patch, strides[c]) >= target);
        CHECK(total_grid_count(dims[c], patch, strides[c] + 1) < target);
    }
    CHECK(strides[0] > strides[1]);  // more material allows a coarser stride
}

TEST_CASE("balancing reports per-class maxima when the target is unreachable") {
    std::vector<std::vector<std::pair<int, int>>> dims{{{40, 40}}, {{33, 33}}};
    // class 1 yields only 4 patches even at stride 1
    CHECK(total_grid_count(dims[1], 32, 1) == 4);
    CHECK_THROWS_WITH(solve_balancing_stride(dims, 32, 50),
                      Catch::Matchers::ContainsSubstring("class 1") &&
                          Catch::Matchers::ContainsSubstring("4"));
}

TEST_CASE("subsample indices: exact size, sorted, unique, deterministic") {
    auto a = subsample_indices(1000, 64, 99);
    auto b = subsample_indices(1000, 64, 99);
    auto c = subsample_indices(1000, 64, 100);
    REQUIRE(a.size() == 64);
    CHECK(a == b);
    CHECK(a != c);
    CHECK(std::is_sorted(a.begin(), a.end()));
    CHECK(std::set<std::size_t>(a.begin(), a.end()).size() == a.size());
    CHECK(a.back() < 1000);
    auto all = subsample_indices(10, 10, 1);
    std::vector<std::size_t> iota(10);
    std::iota(iota.begin(), iota.end(), 0);
    CHECK(all == iota);
}

TEST_CASE("rotate90 is counter-clockwise and has period four") {
    Plane<int> p(2, 3);
    // 1 2 3
    // 4 5 6
    int v = 1;
    for (auto& x : p.px) x = v++;
    Plane<int> r = rotate90(p);
    REQUIRE(r.h == 3);
    REQUIRE(r.w == 2);
    CHECK(r.at(0, 0) == 3);
    CHECK(r.at(0, 1) == 6);
    CHECK(r.at(1, 0) == 2);
    CHECK(r.at(2, 1) == 4);
    Plane<int> full = rotate90(rotate90(rotate90(rotate90(p))));
    CHECK(full.px == p.px);
}

TEST_CASE("rotation augmentation: 4x count, orientation order, pixel multiset") {
    std::mt19937_64 rng(74);
    std::uniform_int_distribution<int> uni(0, 255);
    std::vector<LabeledPatch> in(3);
    for (auto& p : in) {
        p.image = Image8(8, 8);
        p.labels = Image8(8, 8);
        for (auto& v : p.image.px) v = static_cast<std::uint8_t>(uni(rng));
        for (auto& v : p.labels.px) v = static_cast<std::uint8_t>(uni(rng) % 5);
    }
    auto out = augment_rotations(in);
    REQUIRE(out.size() == 12);
    for (std::size_t i = 0; i < in.size(); ++i) {
        CHECK(out[4 * i].image.px == in[i].image.px);
        CHECK(out[4 * i + 1].image.px == rotate90(in[i].image).px);
        CHECK(out[4 * i + 2].labels.px == rotate90(rotate90(in[i].labels)).px);
        // every rotation preserves the pixel multiset
        auto sorted = in[i].image.px;
        std::sort(sorted.begin(), sorted.end());
        for (int k = 0; k < 4; ++k) {
            auto s = out[4 * i + k].image.px;
            std::sort(s.begin(), s.end());
            CHECK(s == sorted);
        }
    }
    std::vector<LabeledPatch> bad(1);
    bad[0].image = Image8(4, 6);
    bad[0].labels = Image8(4, 6);
    CHECK_THROWS_AS(augment_rotations(bad), std::invalid_argument);
}

TEST_CASE("micrograph sample validation") {
    MicrographSample s;
    s.image = Image8(4, 4, 100);
    s.label_map = Image8(4, 4, 0);
    s.mask = Image8(4, 4, 0);
    s.validate();
    s.label_map.at(1, 1) = 2;  // labeled pixel outside the mask
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s.mask.at(1, 1) = 1;
    s.validate();
    s.mask = Image8(3, 4, 0);
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}
