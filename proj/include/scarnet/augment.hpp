#ifndef SCARNET_AUGMENT_HPP
#define SCARNET_AUGMENT_HPP

#include <algorithm>
#include <cmath>
#include <numbers>
#include <utility>

#include "scarnet/errors.hpp"
#include "scarnet/image.hpp"
#include "scarnet/rng.hpp"

namespace scarnet {

struct AugmentParams {
    double rotation_limit_deg = 15.0;
    double flip_prob = 0.5;
    double brightness_lo = 0.8;
    double brightness_hi = 1.2;
    double contrast_lo = 0.8;
    double contrast_hi = 1.2;
    double apply_prob = 0.5;
    double test_noise_sigma = 0.15;

    void validate() const {
        if (flip_prob < 0.0 || flip_prob > 1.0 || apply_prob < 0.0 || apply_prob > 1.0)
            throw config_error("augment: probabilities must lie in [0,1]");
        if (brightness_lo > brightness_hi || contrast_lo > contrast_hi)
            throw config_error("augment: range low must not exceed high");
        if (rotation_limit_deg < 0.0 || test_noise_sigma < 0.0)
            throw config_error("augment: limits must be >= 0");
    }
};

// One concrete set of sampled augmentation decisions. Splitting the draw from
// the application keeps the randomized contract directly observable in tests.
struct AugmentDraw {
    bool applied = false;
    double angle_deg = 0.0;
    bool flip_h = false;
    bool flip_v = false;
    double brightness = 1.0;
    double contrast = 1.0;
};

// Fixed draw order; all fields are consumed from the stream even when the
// pipeline does not apply, so stream positions depend only on call count.
inline AugmentDraw draw_augment(const AugmentParams& params, Rng& rng) {
    AugmentDraw d;
    d.applied = rng.bernoulli(params.apply_prob);
    d.angle_deg = rng.uniform(-params.rotation_limit_deg, params.rotation_limit_deg);
    d.flip_h = rng.bernoulli(params.flip_prob);
    d.flip_v = rng.bernoulli(params.flip_prob);
    d.brightness = rng.uniform(params.brightness_lo, params.brightness_hi);
    d.contrast = rng.uniform(params.contrast_lo, params.contrast_hi);
    return d;
}

namespace detail {

// Rotation about the image center by inverse mapping; bilinear for the image,
// nearest-neighbor for the mask, zero/background outside the field of view.
inline void rotate_pair(GrayImage& img, ClassMask& mask, double angle_deg) {
    const int h = img.height, w = img.width;
    const double a = angle_deg * std::numbers::pi / 180.0;
    const double ca = std::cos(a), sa = std::sin(a);
    const double cr = 0.5 * (h - 1), cc = 0.5 * (w - 1);
    GrayImage src_img = img;
    ClassMask src_mask = mask;
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            // Inverse rotation of the output pixel back into source coordinates.
            const double dr = r - cr, dc = c - cc;
            const double sr = ca * dr + sa * dc + cr;
            const double sc = -sa * dr + ca * dc + cc;
            // Image: bilinear with zero padding.
            double v = 0.0;
            const int r0 = static_cast<int>(std::floor(sr));
            const int c0 = static_cast<int>(std::floor(sc));
            const double fr = sr - r0, fc = sc - c0;
            for (int di = 0; di < 2; ++di)
                for (int dj = 0; dj < 2; ++dj) {
                    const int rr = r0 + di, cc2 = c0 + dj;
                    if (rr < 0 || rr >= h || cc2 < 0 || cc2 >= w)
                        continue;
                    const double wgt = (di ? fr : 1.0 - fr) * (dj ? fc : 1.0 - fc);
                    v += wgt * src_img.at(rr, cc2);
                }
            img.at(r, c) = v;
            // Mask: nearest neighbor, background outside.
            const int rn = static_cast<int>(std::lround(sr));
            const int cn = static_cast<int>(std::lround(sc));
            mask.at(r, c) = (rn >= 0 && rn < h && cn >= 0 && cn < w) ? src_mask.at(rn, cn)
                                                                     : static_cast<std::uint8_t>(0);
        }
    }
}

template <typename T> inline void flip_horizontal(int h, int w, std::vector<T>& buf) {
    for (int r = 0; r < h; ++r)
        std::reverse(buf.begin() + static_cast<std::ptrdiff_t>(r) * w,
                     buf.begin() + static_cast<std::ptrdiff_t>(r + 1) * w);
}

template <typename T> inline void flip_vertical(int h, int w, std::vector<T>& buf) {
    for (int r = 0; r < h / 2; ++r)
        std::swap_ranges(buf.begin() + static_cast<std::ptrdiff_t>(r) * w,
                         buf.begin() + static_cast<std::ptrdiff_t>(r + 1) * w,
                         buf.begin() + static_cast<std::ptrdiff_t>(h - 1 - r) * w);
}

} // namespace detail

inline std::pair<GrayImage, ClassMask> apply_augment(const GrayImage& img, const ClassMask& mask,
                                                     const AugmentDraw& d) {
    GrayImage out_img = img;
    ClassMask out_mask = mask;
    if (!d.applied)
        return {std::move(out_img), std::move(out_mask)};
    if (d.angle_deg != 0.0)
        detail::rotate_pair(out_img, out_mask, d.angle_deg);
    if (d.flip_h) {
        detail::flip_horizontal(out_img.height, out_img.width, out_img.pixels);
        detail::flip_horizontal(out_mask.height, out_mask.width, out_mask.labels);
    }
    if (d.flip_v) {
        detail::flip_vertical(out_img.height, out_img.width, out_img.pixels);
        detail::flip_vertical(out_mask.height, out_mask.width, out_mask.labels);
    }
    // Brightness scale, then contrast about the (current) image mean.
    for (double& v : out_img.pixels)
        v *= d.brightness;
    double mu = 0.0;
    for (double v : out_img.pixels)
        mu += v;
    mu /= static_cast<double>(out_img.size());
    for (double& v : out_img.pixels)
        v = mu + (v - mu) * d.contrast;
    return {std::move(out_img), std::move(out_mask)};
}

inline std::pair<GrayImage, ClassMask> augment_train(const GrayImage& img, const ClassMask& mask,
                                                     const AugmentParams& params, Rng& rng) {
    params.validate();
    return apply_augment(img, mask, draw_augment(params, rng));
}

// Additive Gaussian noise with sigma expressed as a fraction of the image
// intensity range (max - min); a constant image therefore stays unchanged.
inline GrayImage add_gaussian_noise(const GrayImage& img, double sigma, Rng& rng) {
    if (sigma < 0.0)
        throw config_error("add_gaussian_noise: sigma must be >= 0, got " + std::to_string(sigma));
    GrayImage out = img;
    if (sigma == 0.0 || img.size() == 0)
        return out;
    auto [mn_it, mx_it] = std::minmax_element(img.pixels.begin(), img.pixels.end());
    const double range = *mx_it - *mn_it;
    const double s = sigma * range;
    for (double& v : out.pixels)
        v += rng.normal() * s;
    return out;
}

} // namespace scarnet

#endif
