#ifndef SCARNET_PREPROCESS_HPP
#define SCARNET_PREPROCESS_HPP

#include <cmath>

#include "scarnet/image.hpp"
#include "scarnet/tensor.hpp"

namespace scarnet {

// Z-score standardization over the whole image. A constant image maps to all
// zeros instead of dividing by zero.
inline GrayImage normalize_image(const GrayImage& img) {
    const std::size_t n = img.size();
    double mu = 0.0;
    for (double v : img.pixels)
        mu += v;
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (double v : img.pixels) {
        const double d = v - mu;
        var += d * d;
    }
    var /= static_cast<double>(n);
    GrayImage out(img.height, img.width);
    if (var < 1e-24)
        return out;
    const double inv_sigma = 1.0 / std::sqrt(var);
    for (std::size_t i = 0; i < n; ++i)
        out.pixels[i] = (img.pixels[i] - mu) * inv_sigma;
    return out;
}

// Non-overlapping patch split in row-major patch order; each patch row-major.
inline Tensor split_into_patches(const GrayImage& img, int patch_size) {
    if (patch_size < 1 || img.height % patch_size != 0 || img.width % patch_size != 0)
        throw shape_error("split_into_patches: " + std::to_string(img.height) + "x" +
                          std::to_string(img.width) + " not divisible by patch size " +
                          std::to_string(patch_size));
    const int rows = img.height / patch_size;
    const int cols = img.width / patch_size;
    const int n = rows * cols;
    Tensor out = Tensor::uninit({n, patch_size, patch_size});
    double* dst = out.data();
    for (int pr = 0; pr < rows; ++pr)
        for (int pc = 0; pc < cols; ++pc)
            for (int i = 0; i < patch_size; ++i)
                for (int j = 0; j < patch_size; ++j)
                    *dst++ = img.at(pr * patch_size + i, pc * patch_size + j);
    return out;
}

inline GrayImage merge_patches(const Tensor& patches, int height, int width) {
    if (patches.ndim() != 3 || patches.dim(1) != patches.dim(2))
        throw shape_error("merge_patches: need [N,p,p], got " + shape_str(patches.shape()));
    const int p = patches.dim(1);
    if (height % p != 0 || width % p != 0 ||
        patches.dim(0) != (height / p) * (width / p))
        throw shape_error("merge_patches: patch count does not tile " + std::to_string(height) +
                          "x" + std::to_string(width));
    const int cols = width / p;
    GrayImage img(height, width);
    const double* src = patches.data();
    const int rows = height / p;
    for (int pr = 0; pr < rows; ++pr)
        for (int pc = 0; pc < cols; ++pc)
            for (int i = 0; i < p; ++i)
                for (int j = 0; j < p; ++j)
                    img.at(pr * p + i, pc * p + j) = *src++;
    return img;
}

} // namespace scarnet

#endif
