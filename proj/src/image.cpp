// SPDX-License-Identifier: Apache-2.0

#include "aliif/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>
#include <stdexcept>

namespace aliif {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void io_error(const std::string& path, const std::string& what) {
    throw std::runtime_error(path + ": " + what);
}

}  // namespace

Image load_png(const std::string& path) {
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) io_error(path, "cannot open file");

    png_byte header[8];
    if (std::fread(header, 1, 8, file.get()) != 8 || png_sig_cmp(header, 0, 8))
        io_error(path, "not a PNG file");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) io_error(path, "png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        io_error(path, "png_create_info_struct failed");
    }

    std::vector<png_byte> rows;
    std::vector<png_bytep> row_ptrs;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        io_error(path, "malformed PNG stream");
    }

    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const int bit_depth = png_get_bit_depth(png, info);
    const int color_type = png_get_color_type(png, info);
    if (bit_depth != 8 || color_type != PNG_COLOR_TYPE_RGB) {
        png_destroy_read_struct(&png, &info, nullptr);
        io_error(path, "unsupported PNG format (only 8-bit RGB is accepted)");
    }

    rows.resize(static_cast<size_t>(h) * w * 3);
    row_ptrs.resize(h);
    for (png_uint_32 y = 0; y < h; ++y)
        row_ptrs[y] = rows.data() + static_cast<size_t>(y) * w * 3;
    png_read_image(png, row_ptrs.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Image im = Image::zeros(static_cast<int>(h), static_cast<int>(w));
    for (size_t i = 0; i < rows.size(); ++i)
        im.pixels[i] = static_cast<float>(rows[i]) / 255.0f;
    return im;
}

void save_png(const Image& image, const std::string& path) {
    if (image.height <= 0 || image.width <= 0)
        throw std::invalid_argument("save_png: empty image");
    FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file) io_error(path, "cannot open file for writing");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) io_error(path, "png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        io_error(path, "png_create_info_struct failed");
    }

    std::vector<png_byte> rows(static_cast<size_t>(image.height) * image.width * 3);
    std::vector<png_bytep> row_ptrs(static_cast<size_t>(image.height));
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        io_error(path, "PNG write failed");
    }

    for (size_t i = 0; i < rows.size(); ++i) {
        const float v = std::clamp(image.pixels[i], 0.0f, 1.0f);
        rows[i] = static_cast<png_byte>(std::lround(v * 255.0f));
    }
    for (int y = 0; y < image.height; ++y)
        row_ptrs[static_cast<size_t>(y)] = rows.data() + static_cast<size_t>(y) * image.width * 3;

    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
                 static_cast<png_uint_32>(image.height), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, row_ptrs.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

namespace {

// Keys' cubic convolution kernel with a = -0.5.
double cubic(double x) {
    x = std::fabs(x);
    if (x <= 1.0) return (1.5 * x - 2.5) * x * x + 1.0;
    if (x < 2.0) return ((-0.5 * x + 2.5) * x - 4.0) * x + 2.0;
    return 0.0;
}

// Per-axis resampling plan: each output index reads `taps` consecutive
// (clamped) input indices starting at starts[i], with normalized weights.
struct AxisPlan {
    int taps = 0;
    std::vector<int> starts;
    std::vector<double> weights;
};

AxisPlan plan_axis(int in_size, int out_size) {
    const double scale = static_cast<double>(out_size) / in_size;
    // Antialias: widen the kernel by 1/scale when shrinking.
    const double kscale = scale < 1.0 ? scale : 1.0;
    const double kwidth = 4.0 / kscale;
    AxisPlan plan;
    plan.taps = static_cast<int>(std::ceil(kwidth)) + 2;
    plan.starts.resize(static_cast<size_t>(out_size));
    plan.weights.resize(static_cast<size_t>(out_size) * plan.taps);
    for (int i = 0; i < out_size; ++i) {
        const double u = (i + 0.5) / scale - 0.5;
        const int left = static_cast<int>(std::floor(u - kwidth / 2.0));
        plan.starts[static_cast<size_t>(i)] = left;
        double* w = plan.weights.data() + static_cast<size_t>(i) * plan.taps;
        double total = 0.0;
        for (int t = 0; t < plan.taps; ++t) {
            w[t] = cubic((u - (left + t)) * kscale);
            total += w[t];
        }
        for (int t = 0; t < plan.taps; ++t) w[t] /= total;
    }
    return plan;
}

}  // namespace

Image bicubic_resize(const Image& image, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1)
        throw std::invalid_argument("bicubic_resize: target size must be at least 1x1");
    if (image.height < 1 || image.width < 1)
        throw std::invalid_argument("bicubic_resize: empty input image");

    const AxisPlan rows = plan_axis(image.height, out_h);
    const AxisPlan cols = plan_axis(image.width, out_w);

    // Vertical pass into a double buffer, then horizontal.
    std::vector<double> tmp(static_cast<size_t>(out_h) * image.width * 3);
    for (int y = 0; y < out_h; ++y) {
        const double* w = rows.weights.data() + static_cast<size_t>(y) * rows.taps;
        const int start = rows.starts[static_cast<size_t>(y)];
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int t = 0; t < rows.taps; ++t) {
                    const int sy = std::clamp(start + t, 0, image.height - 1);
                    acc += w[t] * image.at(sy, x, c);
                }
                tmp[(static_cast<size_t>(y) * image.width + x) * 3 + c] = acc;
            }
    }

    Image out = Image::zeros(out_h, out_w);
    for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x) {
            const double* w = cols.weights.data() + static_cast<size_t>(x) * cols.taps;
            const int start = cols.starts[static_cast<size_t>(x)];
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int t = 0; t < cols.taps; ++t) {
                    const int sx = std::clamp(start + t, 0, image.width - 1);
                    acc += w[t] * tmp[(static_cast<size_t>(y) * image.width + sx) * 3 + c];
                }
                out.at(y, x, c) = static_cast<float>(std::clamp(acc, 0.0, 1.0));
            }
        }
    return out;
}

double psnr(const Image& a, const Image& b) {
    if (a.height != b.height || a.width != b.width)
        throw std::invalid_argument("psnr: image sizes differ");
    double se = 0.0;
    for (size_t i = 0; i < a.pixels.size(); ++i) {
        const double d = static_cast<double>(a.pixels[i]) - b.pixels[i];
        se += d * d;
    }
    const double mse = se / static_cast<double>(a.pixels.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

double ssim(const Image& a, const Image& b) {
    if (a.height != b.height || a.width != b.width)
        throw std::invalid_argument("ssim: image sizes differ");
    constexpr int win = 8;
    if (a.height < win || a.width < win)
        throw std::invalid_argument("ssim: image smaller than the 8x8 window");
    constexpr double c1 = 0.01 * 0.01;
    constexpr double c2 = 0.03 * 0.03;

    const int h = a.height, w = a.width;
    const size_t sw = static_cast<size_t>(w) + 1;
    // Summed-area tables over one channel at a time.
    std::vector<double> sa(sw * (h + 1)), sb(sw * (h + 1)), saa(sw * (h + 1)),
        sbb(sw * (h + 1)), sab(sw * (h + 1));
    auto window_sum = [&](const std::vector<double>& s, int y, int x) {
        return s[static_cast<size_t>(y + win) * sw + (x + win)] -
               s[static_cast<size_t>(y) * sw + (x + win)] -
               s[static_cast<size_t>(y + win) * sw + x] + s[static_cast<size_t>(y) * sw + x];
    };

    double total = 0.0;
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double va = a.at(y, x, c), vb = b.at(y, x, c);
                const size_t idx = static_cast<size_t>(y + 1) * sw + (x + 1);
                const size_t up = idx - sw, left = idx - 1, diag = up - 1;
                sa[idx] = va + sa[up] + sa[left] - sa[diag];
                sb[idx] = vb + sb[up] + sb[left] - sb[diag];
                saa[idx] = va * va + saa[up] + saa[left] - saa[diag];
                sbb[idx] = vb * vb + sbb[up] + sbb[left] - sbb[diag];
                sab[idx] = va * vb + sab[up] + sab[left] - sab[diag];
            }
        constexpr double n = win * win;
        double acc = 0.0;
        for (int y = 0; y + win <= h; ++y)
            for (int x = 0; x + win <= w; ++x) {
                const double ma = window_sum(sa, y, x) / n;
                const double mb = window_sum(sb, y, x) / n;
                const double va = window_sum(saa, y, x) / n - ma * ma;
                const double vb = window_sum(sbb, y, x) / n - mb * mb;
                const double cov = window_sum(sab, y, x) / n - ma * mb;
                acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
                       ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
        total += acc / (static_cast<double>(h - win + 1) * (w - win + 1));
    }
    return total / 3.0;
}

}  // namespace aliif
