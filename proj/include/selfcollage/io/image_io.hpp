#pragma once

#include <algorithm>
#include <cstdio>
#include <csetjmp>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "selfcollage/core/image.hpp"

namespace selfcollage {

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct PngError {
    std::jmp_buf jb;
    static void handler(png_structp png, png_const_charp) {
        std::longjmp(static_cast<PngError*>(png_get_error_ptr(png))->jb, 1);
    }
    static void warn(png_structp, png_const_charp) {}
};

struct JpegErrorMgr {
    jpeg_error_mgr pub;
    std::jmp_buf jb;
    static void exit_handler(j_common_ptr cinfo) {
        std::longjmp(reinterpret_cast<JpegErrorMgr*>(cinfo->err)->jb, 1);
    }
};

}  // namespace detail

inline Image read_png(const std::string& path) {
    detail::FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw IoError("read_png: cannot open " + path);
    detail::PngError err;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, detail::PngError::handler,
                                             detail::PngError::warn);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("read_png: libpng init failed");
    }
    std::vector<png_bytep> rows;
    Image img;
    if (setjmp(err.jb)) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("read_png: corrupt PNG " + path);
    }
    png_init_io(png, f.get());
    png_read_info(png, info);
    png_set_expand(png);          // palette/gray/low-depth -> 8-bit
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int w = static_cast<int>(png_get_image_width(png, info));
    if (png_get_channels(png, info) != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("read_png: unsupported channel layout in " + path);
    }
    img = Image(h, w);
    rows.resize(static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y) rows[static_cast<std::size_t>(y)] = img.px.data() + static_cast<std::size_t>(y) * w * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

inline void write_png(const std::string& path, const Image& img) {
    if (img.empty()) throw InvalidInput("write_png: empty image");
    detail::FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw IoError("write_png: cannot open " + path);
    detail::PngError err;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, detail::PngError::handler,
                                              detail::PngError::warn);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("write_png: libpng init failed");
    }
    if (setjmp(err.jb)) {
        png_destroy_write_struct(&png, &info);
        throw IoError("write_png: write failed for " + path);
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < img.h; ++y)
        png_write_row(png, const_cast<png_bytep>(img.px.data() + static_cast<std::size_t>(y) * img.w * 3));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// 8-bit grayscale PNG (used for masks, 0/255).
inline void write_png_gray(const std::string& path, const std::vector<std::uint8_t>& gray, int h, int w) {
    if (static_cast<std::size_t>(h) * w != gray.size()) throw InvalidInput("write_png_gray: size mismatch");
    detail::FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw IoError("write_png_gray: cannot open " + path);
    detail::PngError err;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, detail::PngError::handler,
                                              detail::PngError::warn);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("write_png_gray: libpng init failed");
    }
    if (setjmp(err.jb)) {
        png_destroy_write_struct(&png, &info);
        throw IoError("write_png_gray: write failed for " + path);
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < h; ++y)
        png_write_row(png, const_cast<png_bytep>(gray.data() + static_cast<std::size_t>(y) * w));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

inline Image read_jpeg(const std::string& path) {
    detail::FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw IoError("read_jpeg: cannot open " + path);
    jpeg_decompress_struct cinfo;
    detail::JpegErrorMgr err;
    cinfo.err = jpeg_std_error(&err.pub);
    err.pub.error_exit = detail::JpegErrorMgr::exit_handler;
    if (setjmp(err.jb)) {
        jpeg_destroy_decompress(&cinfo);
        throw IoError("read_jpeg: corrupt JPEG " + path);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, f.get());
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    Image img(static_cast<int>(cinfo.output_height), static_cast<int>(cinfo.output_width));
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = img.px.data() + static_cast<std::size_t>(cinfo.output_scanline) * img.w * 3;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return img;
}

inline bool has_suffix_ci(const std::string& s, const std::string& suffix) {
    if (s.size() < suffix.size()) return false;
    for (std::size_t i = 0; i < suffix.size(); ++i) {
        if (std::tolower(static_cast<unsigned char>(s[s.size() - suffix.size() + i])) !=
            std::tolower(static_cast<unsigned char>(suffix[i])))
            return false;
    }
    return true;
}

inline bool is_image_filename(const std::string& name) {
    return has_suffix_ci(name, ".png") || has_suffix_ci(name, ".jpg") || has_suffix_ci(name, ".jpeg");
}

inline Image load_image(const std::string& path) {
    if (has_suffix_ci(path, ".png")) return read_png(path);
    if (has_suffix_ci(path, ".jpg") || has_suffix_ci(path, ".jpeg")) return read_jpeg(path);
    throw IoError("load_image: unsupported extension for " + path);
}

}  // namespace selfcollage
