#include "magn/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <memory>

namespace magn {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

} // namespace

ImageFile read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw DataError("cannot open " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DataError("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw DataError("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("cannot decode " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    const int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);

    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    if (depth == 16) png_set_swap(png); // file is big-endian

    png_read_update_info(png, info);
    const int H = static_cast<int>(png_get_image_height(png, info));
    const int W = static_cast<int>(png_get_image_width(png, info));
    const int channels = png_get_channels(png, info);
    depth = png_get_bit_depth(png, info);
    if (channels != 1 && channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError(path + ": unsupported channel count " + std::to_string(channels));
    }

    const size_t row_bytes = png_get_rowbytes(png, info);
    std::vector<unsigned char> raw(static_cast<size_t>(H) * row_bytes);
    std::vector<png_bytep> rows(static_cast<size_t>(H));
    for (int y = 0; y < H; ++y) rows[static_cast<size_t>(y)] = raw.data() + static_cast<size_t>(y) * row_bytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    ImageFile out;
    out.bit_depth = depth;
    out.pixels = Tensor({H, W, channels});
    const int64_t n = out.pixels.size();
    if (depth == 16) {
        const double s = 1.0 / 65535.0;
        for (int64_t i = 0; i < n; ++i) {
            const uint16_t* p = reinterpret_cast<const uint16_t*>(raw.data());
            out.pixels[i] = p[i] * s;
        }
    } else {
        const double s = 1.0 / 255.0;
        for (int64_t i = 0; i < n; ++i) out.pixels[i] = raw[static_cast<size_t>(i)] * s;
    }
    return out;
}

void write_png(const std::string& path, const Tensor& img, int bit_depth) {
    if (img.rank() != 3 || (img.dim(2) != 1 && img.dim(2) != 3))
        throw std::invalid_argument("write_png: expected HxWx1 or HxWx3, got " +
                                    shape_str(img.shape));
    if (bit_depth != 8 && bit_depth != 16)
        throw std::invalid_argument("write_png: bit depth must be 8 or 16");

    const int H = img.dim(0), W = img.dim(1), C = img.dim(2);
    const std::string tmp = path + ".tmp";
    {
        FilePtr fp(std::fopen(tmp.c_str(), "wb"));
        if (!fp) throw DataError("cannot create " + tmp);
        png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        png_infop info = png ? png_create_info_struct(png) : nullptr;
        if (!png || !info) {
            if (png) png_destroy_write_struct(&png, &info);
            throw DataError("libpng init failed");
        }
        if (setjmp(png_jmpbuf(png))) {
            png_destroy_write_struct(&png, &info);
            throw DataError("cannot encode " + path);
        }
        png_init_io(png, fp.get());
        png_set_IHDR(png, info, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H),
                     bit_depth, C == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                     PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);

        auto quantize = [](double v, double maxv) {
            v = std::min(1.0, std::max(0.0, v));
            return static_cast<uint32_t>(v * maxv + 0.5);
        };
        const int64_t row_px = static_cast<int64_t>(W) * C;
        if (bit_depth == 16) {
            std::vector<uint16_t> row(static_cast<size_t>(row_px));
            for (int y = 0; y < H; ++y) {
                for (int64_t i = 0; i < row_px; ++i) {
                    const uint32_t q = quantize(img[static_cast<int64_t>(y) * row_px + i], 65535.0);
                    row[static_cast<size_t>(i)] = static_cast<uint16_t>((q >> 8) | (q << 8)); // big-endian
                }
                png_write_row(png, reinterpret_cast<png_bytep>(row.data()));
            }
        } else {
            std::vector<unsigned char> row(static_cast<size_t>(row_px));
            for (int y = 0; y < H; ++y) {
                for (int64_t i = 0; i < row_px; ++i)
                    row[static_cast<size_t>(i)] =
                        static_cast<unsigned char>(quantize(img[static_cast<int64_t>(y) * row_px + i], 255.0));
                png_write_row(png, row.data());
            }
        }
        png_write_end(png, nullptr);
        png_destroy_write_struct(&png, &info);
    }
    std::filesystem::rename(tmp, path);
}

Tensor to_single_channel(const Tensor& img) {
    if (img.dim(2) == 1) return img;
    const int H = img.dim(0), W = img.dim(1);
    Tensor out({H, W, 1});
    for (int64_t p = 0; p < static_cast<int64_t>(H) * W; ++p)
        out[p] = 0.299 * img[p * 3] + 0.587 * img[p * 3 + 1] + 0.114 * img[p * 3 + 2];
    return out;
}

Tensor to_three_channels(const Tensor& img) {
    if (img.dim(2) == 3) return img;
    const int H = img.dim(0), W = img.dim(1);
    Tensor out({H, W, 3});
    for (int64_t p = 0; p < static_cast<int64_t>(H) * W; ++p)
        out[p * 3] = out[p * 3 + 1] = out[p * 3 + 2] = img[p];
    return out;
}

std::vector<std::string> list_png_files(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir);
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        std::string ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
        if (ext == ".png") files.push_back(e.path().string());
    }
    std::sort(files.begin(), files.end());
    return files;
}

} // namespace magn
