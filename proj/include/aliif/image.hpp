// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "aliif/tensor.hpp"

namespace aliif {

// 8-bit-PNG-backed RGB image held as floats in [0,1], interleaved row-major.
struct Image {
    int height = 0;
    int width = 0;
    std::vector<float> pixels;  // height * width * 3

    static Image zeros(int h, int w) {
        Image im;
        im.height = h;
        im.width = w;
        im.pixels.assign(static_cast<size_t>(h) * w * 3, 0.0f);
        return im;
    }

    float& at(int y, int x, int c) {
        return pixels[(static_cast<size_t>(y) * width + x) * 3 + c];
    }
    float at(int y, int x, int c) const {
        return pixels[(static_cast<size_t>(y) * width + x) * 3 + c];
    }
};

// PNG I/O, 8-bit RGB only; anything else raises std::runtime_error naming
// the path.
Image load_png(const std::string& path);
void save_png(const Image& image, const std::string& path);

// MATLAB-convention bicubic (a = -0.5), antialiased when downscaling,
// edge-clamped, output clamped to [0,1]. Arithmetic runs in double.
Image bicubic_resize(const Image& image, int out_h, int out_w);

// 10*log10(1/MSE) over all RGB values in [0,1]; +inf for identical images.
double psnr(const Image& a, const Image& b);

// Output size for scaling (h, w) by factor s: rounded, at least 1x1.
inline std::pair<int, int> scaled_size(int h, int w, double s) {
    return {std::max(1, static_cast<int>(std::llround(h * s))),
            std::max(1, static_cast<int>(std::llround(w * s)))};
}

// Single-scale SSIM, 8x8 uniform sliding window, C1=0.01^2, C2=0.03^2,
// population variances, averaged over channels. Requires min side >= 8.
double ssim(const Image& a, const Image& b);

// Planar [3, H, W] tensor view of an image and back, for the encoder.
template <typename S>
TensorT<S> image_to_tensor(const Image& im) {
    TensorT<S> t = TensorT<S>::zeros({3, im.height, im.width});
    const int64_t plane = static_cast<int64_t>(im.height) * im.width;
    for (int y = 0; y < im.height; ++y)
        for (int x = 0; x < im.width; ++x)
            for (int c = 0; c < 3; ++c)
                t.ptr()[c * plane + static_cast<int64_t>(y) * im.width + x] =
                    static_cast<S>(im.at(y, x, c));
    return t;
}

}  // namespace aliif
