#ifndef SCARNET_IMAGE_HPP
#define SCARNET_IMAGE_HPP

#include <cmath>
#include <cstdint>
#include <vector>

#include "scarnet/errors.hpp"
#include "scarnet/tensor.hpp"

namespace scarnet {

// Segmentation label convention used throughout.
enum ClassLabel : std::uint8_t {
    kBackground = 0,
    kMyocardium = 1,
    kBloodPool = 2,
    kScar = 3,
};
constexpr int kNumClasses = 4;

// Single-channel real-valued image, row-major.
struct GrayImage {
    int height = 0;
    int width = 0;
    std::vector<double> pixels;

    GrayImage() = default;
    GrayImage(int h, int w, double fill = 0.0)
        : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, fill) {}

    double& at(int r, int c) { return pixels[static_cast<std::size_t>(r) * width + c]; }
    double at(int r, int c) const { return pixels[static_cast<std::size_t>(r) * width + c]; }
    std::size_t size() const { return pixels.size(); }

    bool all_finite() const {
        for (double v : pixels)
            if (!std::isfinite(v))
                return false;
        return true;
    }
};

// Per-pixel class labels in {0,1,2,3}, same layout as GrayImage.
struct ClassMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> labels;

    ClassMask() = default;
    ClassMask(int h, int w, std::uint8_t fill = 0)
        : height(h), width(w), labels(static_cast<std::size_t>(h) * w, fill) {}

    std::uint8_t& at(int r, int c) { return labels[static_cast<std::size_t>(r) * width + c]; }
    std::uint8_t at(int r, int c) const { return labels[static_cast<std::size_t>(r) * width + c]; }
    std::size_t size() const { return labels.size(); }

    std::size_t count(std::uint8_t cls) const {
        std::size_t n = 0;
        for (std::uint8_t v : labels)
            n += (v == cls);
        return n;
    }
};

inline Tensor image_to_tensor(const GrayImage& img) {
    return Tensor::from_data({img.height, img.width}, img.pixels);
}

inline GrayImage tensor_to_image(const Tensor& t) {
    if (t.ndim() != 2)
        throw shape_error("tensor_to_image: need [H,W], got " + shape_str(t.shape()));
    GrayImage img(t.dim(0), t.dim(1));
    img.pixels = t.values();
    return img;
}

} // namespace scarnet

#endif
