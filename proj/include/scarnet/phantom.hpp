#ifndef SCARNET_PHANTOM_HPP
#define SCARNET_PHANTOM_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>

#include "scarnet/errors.hpp"
#include "scarnet/image.hpp"
#include "scarnet/rng.hpp"

namespace scarnet {

// Geometry and intensity recipe for one synthetic short-axis LGE slice:
// a bright blood-pool disk inside a myocardial annulus, with a hyperintense
// scar sector spanning part of the annulus.
struct PhantomSpec {
    int height = 256;
    int width = 256;
    double center_row = 128.0;
    double center_col = 128.0;
    double inner_radius = 40.0;
    double outer_radius = 64.0;
    double scar_arc_start = 0.0;   // degrees, measured from +col axis
    double scar_arc_extent = 90.0; // degrees in [0, 360]
    // Intensity means indexed by class label: background, myocardium, blood, scar.
    std::array<double, 4> intensity_means{0.20, 0.45, 0.90, 0.75};
    double intensity_noise_sigma = 0.05;
    std::uint64_t seed = 0;

    void validate() const {
        if (height < 2 || width < 2)
            throw config_error("phantom: height/width must be >= 2");
        if (!(0.0 < inner_radius && inner_radius < outer_radius &&
              outer_radius < 0.5 * std::min(height, width)))
            throw config_error(
                "phantom geometry: need 0 < inner_radius < outer_radius < min(H,W)/2, got inner=" +
                std::to_string(inner_radius) + " outer=" + std::to_string(outer_radius));
        if (scar_arc_extent < 0.0 || scar_arc_extent > 360.0)
            throw config_error("phantom: scar_arc_extent must lie in [0, 360]");
        if (intensity_noise_sigma < 0.0)
            throw config_error("phantom: intensity_noise_sigma must be >= 0");
    }
};

namespace detail {

inline bool angle_in_arc(double theta_deg, double start_deg, double extent_deg) {
    if (extent_deg >= 360.0)
        return true;
    double d = std::fmod(theta_deg - start_deg, 360.0);
    if (d < 0.0)
        d += 360.0;
    return d < extent_deg;
}

} // namespace detail

// Deterministic phantom rasterization. Pixel intensities are the class mean
// plus seeded Gaussian noise, rounded through float32 so the on-disk format
// (32-bit floats) round-trips bit-exactly.
inline std::pair<GrayImage, ClassMask> generate_phantom(const PhantomSpec& spec) {
    spec.validate();
    GrayImage img(spec.height, spec.width);
    ClassMask mask(spec.height, spec.width);
    Rng rng(spec.seed);
    const double r_in2 = spec.inner_radius * spec.inner_radius;
    const double r_out2 = spec.outer_radius * spec.outer_radius;
    for (int r = 0; r < spec.height; ++r) {
        for (int c = 0; c < spec.width; ++c) {
            const double dr = r - spec.center_row;
            const double dc = c - spec.center_col;
            const double d2 = dr * dr + dc * dc;
            std::uint8_t cls = kBackground;
            if (d2 < r_in2) {
                cls = kBloodPool;
            } else if (d2 < r_out2) {
                const double theta = std::atan2(dr, dc) * 180.0 / std::numbers::pi;
                const double theta_pos = theta < 0.0 ? theta + 360.0 : theta;
                cls = detail::angle_in_arc(theta_pos, spec.scar_arc_start, spec.scar_arc_extent)
                          ? kScar
                          : kMyocardium;
            }
            mask.at(r, c) = cls;
            const double v = spec.intensity_means[cls] + rng.normal() * spec.intensity_noise_sigma;
            img.at(r, c) = static_cast<double>(static_cast<float>(v));
        }
    }
    return {std::move(img), std::move(mask)};
}

} // namespace scarnet

#endif
