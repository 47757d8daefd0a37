#pragma once

#include <png.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "infodrop/infodrop.hpp"
#include "infodrop/self_information.hpp"
#include "infodrop/tensor.hpp"

namespace infodrop {

// ---- PNG ----
// Everything is 8-bit on disk; in memory images are (c,h,w) tensors in [0,1]
// with 1 or 3 channels. Palette/16-bit/alpha inputs are normalized on read.

inline Tensor load_png(const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw std::runtime_error("load_png: cannot open " + path);
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, fp) != 8 || png_sig_cmp(sig, 0, 8)) {
        std::fclose(fp);
        throw std::runtime_error("load_png: not a PNG file: " + path);
    }

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error("load_png: libpng init failed");
    }
    std::vector<unsigned char> buf;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error("load_png: decode error in " + path);
    }
    png_init_io(png, fp);
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    png_set_expand(png);          // palette -> rgb, gray<8 -> 8, tRNS -> alpha
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const png_byte ch = png_get_channels(png, info);
    if (ch != 1 && ch != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error("load_png: unsupported channel count in " + path);
    }

    buf.assign(std::size_t(w) * h * ch, 0);
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = buf.data() + std::size_t(y) * w * ch;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);

    Tensor out({std::size_t(ch), h, w});
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < ch; ++c)
                out.at(c, y, x) = double(buf[(y * w + x) * ch + c]) / 255.0;
    return out;
}

inline void save_png(const std::string& path, const Tensor& image) {
    if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3))
        throw std::invalid_argument("save_png: image must be (1|3,h,w)");
    const std::size_t ch = image.dim(0), h = image.dim(1), w = image.dim(2);

    std::FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw std::runtime_error("save_png: cannot open " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw std::runtime_error("save_png: libpng init failed");
    }
    std::vector<unsigned char> buf(h * w * ch);
    std::vector<png_bytep> rows(h);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw std::runtime_error("save_png: encode error for " + path);
    }
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < ch; ++c) {
                double v = image.at(c, y, x);
                v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
                buf[(y * w + x) * ch + c] = (unsigned char)(v * 255.0 + 0.5);
            }
    for (std::size_t y = 0; y < h; ++y) rows[y] = buf.data() + y * w * ch;

    png_init_io(png, fp);
    png_set_IHDR(png, info, png_uint_32(w), png_uint_32(h), 8,
                 ch == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

// Min-max normalized 8-bit grayscale rendering of a rank-2 map.
inline void save_map_png(const std::string& path, const Tensor& map) {
    if (map.rank() != 2) throw std::invalid_argument("save_map_png: map must be rank-2");
    double lo = map[0], hi = map[0];
    for (double v : map.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double scale = hi > lo ? 1.0 / (hi - lo) : 0.0;
    Tensor img({1, map.dim(0), map.dim(1)});
    for (std::size_t i = 0; i < map.numel(); ++i) img[i] = (map[i] - lo) * scale;
    save_png(path, img);
}

// ---- portable text maps ----
// "INFOMAP v1\n<h> <w>\n" followed by row-major ASCII floats.

inline void write_map_text(const std::string& path, const Tensor& map,
                           const std::string& magic = "INFOMAP") {
    if (map.rank() != 2) throw std::invalid_argument("write_map_text: map must be rank-2");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_map_text: cannot open " + path);
    out << magic << " v1\n" << map.dim(0) << ' ' << map.dim(1) << '\n';
    out.precision(17);
    for (std::size_t y = 0; y < map.dim(0); ++y) {
        for (std::size_t x = 0; x < map.dim(1); ++x) {
            if (x) out << ' ';
            out << map.at(y, x);
        }
        out << '\n';
    }
    if (!out) throw std::runtime_error("write_map_text: write failed for " + path);
}

inline Tensor read_map_text(const std::string& path, const std::string& magic = "INFOMAP") {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_map_text: cannot open " + path);
    std::string word, version;
    in >> word >> version;
    if (word != magic || version != "v1")
        throw std::runtime_error("read_map_text: bad header in " + path);
    std::size_t h = 0, w = 0;
    in >> h >> w;
    Tensor map({h, w});
    for (std::size_t i = 0; i < map.numel(); ++i)
        if (!(in >> map[i]))
            throw std::runtime_error("read_map_text: truncated data in " + path);
    return map;
}

// DropMask export mirrors the InfoMap format with a channel count:
// "DROPMASK v1\n<c> <h> <w>\n" then one row-major plane per channel.
inline void write_mask_text(const std::string& path, const DropMask& mask) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_mask_text: cannot open " + path);
    const Tensor& m = mask.mask;
    out << "DROPMASK v1\n" << m.dim(0) << ' ' << m.dim(1) << ' ' << m.dim(2) << '\n';
    for (std::size_t c = 0; c < m.dim(0); ++c)
        for (std::size_t y = 0; y < m.dim(1); ++y) {
            for (std::size_t x = 0; x < m.dim(2); ++x) {
                if (x) out << ' ';
                out << int(m.at(c, y, x));
            }
            out << '\n';
        }
    if (!out) throw std::runtime_error("write_mask_text: write failed for " + path);
}

inline DropMask read_mask_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_mask_text: cannot open " + path);
    std::string word, version;
    in >> word >> version;
    if (word != "DROPMASK" || version != "v1")
        throw std::runtime_error("read_mask_text: bad header in " + path);
    std::size_t c = 0, h = 0, w = 0;
    in >> c >> h >> w;
    DropMask mask;
    mask.mask = Tensor({c, h, w});
    for (std::size_t i = 0; i < mask.mask.numel(); ++i) {
        int v = 0;
        if (!(in >> v) || (v != 0 && v != 1))
            throw std::runtime_error("read_mask_text: bad mask value in " + path);
        mask.mask[i] = double(v);
    }
    return mask;
}

}  // namespace infodrop
