#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <png.h>

#include "mvfcnn/tensor.hpp"

namespace mvfcnn {

template <class T>
struct Plane {
    int h = 0, w = 0;
    std::vector<T> px;

    Plane() = default;
    Plane(int h_, int w_, T fill = T(0))
        : h(h_), w(w_), px(static_cast<std::size_t>(h_) * w_, fill) {}

    T& at(int y, int x) { return px[static_cast<std::size_t>(y) * w + x]; }
    const T& at(int y, int x) const { return px[static_cast<std::size_t>(y) * w + x]; }
    std::size_t size() const { return px.size(); }
    bool same_dims(const Plane& o) const { return h == o.h && w == o.w; }
};

using Image8 = Plane<std::uint8_t>;

struct ImageIoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// PGM (P5), 8-bit
// ---------------------------------------------------------------------------

inline void write_pgm(const Image8& img, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ImageIoError("cannot open for writing: " + path);
    f << "P5\n" << img.w << " " << img.h << "\n255\n";
    f.write(reinterpret_cast<const char*>(img.px.data()),
            static_cast<std::streamsize>(img.px.size()));
    if (!f) throw ImageIoError("write failed: " + path);
}

inline Image8 read_pgm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ImageIoError("cannot open: " + path);
    std::string magic;
    f >> magic;
    if (magic != "P5") throw ImageIoError("not a P5 PGM: " + path);
    auto skip_ws_comments = [&] {
        while (true) {
            int c = f.peek();
            if (c == '#') {
                std::string line;
                std::getline(f, line);
            } else if (std::isspace(c)) {
                f.get();
            } else {
                break;
            }
        }
    };
    int w, h, maxval;
    skip_ws_comments(); f >> w;
    skip_ws_comments(); f >> h;
    skip_ws_comments(); f >> maxval;
    if (maxval != 255) throw ImageIoError("only 8-bit PGM supported: " + path);
    f.get();  // single whitespace before raster
    Image8 img(h, w);
    f.read(reinterpret_cast<char*>(img.px.data()),
           static_cast<std::streamsize>(img.px.size()));
    if (!f) throw ImageIoError("truncated PGM: " + path);
    return img;
}

// ---------------------------------------------------------------------------
// PNG, 8-bit grayscale and 8-bit RGB
// ---------------------------------------------------------------------------

inline void write_png_gray(const Image8& img, const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw ImageIoError("cannot open for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        std::fclose(fp);
        throw ImageIoError("libpng write error: " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, img.w, img.h, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < img.h; ++y)
        png_write_row(png, const_cast<png_bytep>(img.px.data() + static_cast<std::size_t>(y) * img.w));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
};

inline void write_png_rgb(const Plane<Rgb>& img, const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw ImageIoError("cannot open for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        std::fclose(fp);
        throw ImageIoError("libpng write error: " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, img.w, img.h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<std::uint8_t> row(static_cast<std::size_t>(img.w) * 3);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x) {
            const Rgb& p = img.at(y, x);
            row[3 * x] = p.r;
            row[3 * x + 1] = p.g;
            row[3 * x + 2] = p.b;
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

inline Image8 read_png_gray(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw ImageIoError("cannot open: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        std::fclose(fp);
        throw ImageIoError("libpng read error: " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    const int color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color & PNG_COLOR_MASK_COLOR || color == PNG_COLOR_TYPE_PALETTE)
        png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    if (png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    Image8 img(h, w);
    for (int y = 0; y < h; ++y)
        png_read_row(png, img.px.data() + static_cast<std::size_t>(y) * w, nullptr);
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

inline bool has_suffix(const std::string& s, const std::string& suf) {
    return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

inline Image8 read_image(const std::string& path) {
    if (has_suffix(path, ".pgm")) return read_pgm(path);
    return read_png_gray(path);
}

inline void write_image(const Image8& img, const std::string& path) {
    if (has_suffix(path, ".pgm"))
        write_pgm(img, path);
    else
        write_png_gray(img, path);
}

}  // namespace mvfcnn
