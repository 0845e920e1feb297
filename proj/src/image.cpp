#include "pgcn/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include "pgcn/error.hpp"

namespace pgcn {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

uint8_t to_byte(float v) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<uint8_t>(std::lround(c * 255.0f));
}

}  // namespace

Tensor read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IngestionError("cannot open " + path);

    png_byte header[8];
    if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8))
        throw IngestionError("not a PNG file: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IngestionError("libpng initialization failed for " + path);
    }
    std::vector<png_bytep> rows;
    std::vector<png_byte> pixels;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IngestionError("corrupt PNG: " + path);
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    png_set_expand(png);  // palette -> rgb, gray < 8 bit -> 8 bit, tRNS -> alpha
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    const png_byte color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const int h = static_cast<int>(png_get_image_height(png, info));
    const int w = static_cast<int>(png_get_image_width(png, info));
    const size_t stride = png_get_rowbytes(png, info);
    if (stride != static_cast<size_t>(w) * 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IngestionError("unexpected channel layout in " + path);
    }
    pixels.resize(stride * h);
    rows.resize(h);
    for (int y = 0; y < h; ++y) rows[static_cast<size_t>(y)] = pixels.data() + stride * y;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Tensor out(Shape{3, h, w});
    const size_t plane = static_cast<size_t>(h) * w;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                out.data()[c * plane + static_cast<size_t>(y) * w + x] =
                    pixels[stride * y + static_cast<size_t>(x) * 3 + c] / 255.0f;
    return out;
}

namespace {

void write_rows(const std::string& path, int h, int w, int channels,
                const std::vector<png_byte>& pixels) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IngestionError("cannot write " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IngestionError("libpng initialization failed for " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IngestionError("PNG write failed: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const size_t stride = static_cast<size_t>(w) * channels;
    for (int y = 0; y < h; ++y)
        png_write_row(png, const_cast<png_bytep>(pixels.data() + stride * y));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png(const std::string& path, const Tensor& img) {
    if (img.ndim() == 3 && img.dim(0) == 3) {
        const int h = img.dim(1), w = img.dim(2);
        const size_t plane = static_cast<size_t>(h) * w;
        std::vector<png_byte> pixels(plane * 3);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int c = 0; c < 3; ++c)
                    pixels[(static_cast<size_t>(y) * w + x) * 3 + c] =
                        to_byte(img.data()[c * plane + static_cast<size_t>(y) * w + x]);
        write_rows(path, h, w, 3, pixels);
        return;
    }
    if (img.ndim() == 2) {
        write_png_gray(path, img, 0.0f, 1.0f);
        return;
    }
    throw DimensionError("write_png expects [3,H,W] or [H,W], got " + shape_str(img.shape()));
}

void write_png_gray(const std::string& path, const Tensor& img, float lo, float hi) {
    if (img.ndim() != 2)
        throw DimensionError("write_png_gray expects [H,W], got " + shape_str(img.shape()));
    if (!(hi > lo)) throw ContractError("write_png_gray needs hi > lo");
    const int h = img.dim(0), w = img.dim(1);
    std::vector<png_byte> pixels(static_cast<size_t>(h) * w);
    for (int64_t i = 0; i < img.size(); ++i)
        pixels[static_cast<size_t>(i)] = to_byte((img.data()[i] - lo) / (hi - lo));
    write_rows(path, h, w, 1, pixels);
}

}  // namespace pgcn
