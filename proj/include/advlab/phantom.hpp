#ifndef ADVLAB_PHANTOM_HPP
#define ADVLAB_PHANTOM_HPP

#include "advlab/geometry.hpp"
#include "advlab/image.hpp"
#include "advlab/rng.hpp"

namespace advlab {

/// Synthetic disk-centered crop: a bright elliptical disk between two
/// vertebra-like blocks. Lengths are fractions of image_size.
struct PhantomConfig {
    int image_size = 64;
    int points = 64;
    double semi_axis_x_min = 0.26, semi_axis_x_max = 0.36;
    double semi_axis_y_min = 0.11, semi_axis_y_max = 0.17;
    double center_jitter = 0.04;
    double max_rotation = 0.2;      // radians
    double perturbation = 0.15;     // max summed Fourier amplitude, fraction of radius
    double disk_intensity = 0.85;
    double disk_falloff = 0.3;      // relative darkening towards the rim
    double background_intensity = 0.12;
    double vertebra_intensity = 0.45;
    double vertebra_gap = 0.05;
    double texture_amplitude = 0.05;
    double noise_sigma = 0.02;
};

struct PhantomSample {
    Image image;
    Contour contour;
    Mask seg;
};

/// Closed curve r(t) = r_ellipse(t) * (1 + sum_k c_k cos(k t + phi_k)) around
/// (cx, cy), rotated by `rotation`.
struct DiskShape {
    double cx = 0.0, cy = 0.0;
    double a = 1.0, b = 1.0;
    double rotation = 0.0;
    std::vector<double> harmonic_amp;    // for k = 2, 3, ...
    std::vector<double> harmonic_phase;

    double radius(double t) const;
    Point at(double t) const;
};

/// P points spaced evenly in arc length, starting at t = 0 and running in
/// increasing t. The fixed start gives point correspondence across shapes.
Contour resample_by_arc_length(const DiskShape& shape, int points);

DiskShape random_disk_shape(Rng& rng, const PhantomConfig& cfg);

PhantomSample generate_phantom(Rng& rng, const PhantomConfig& cfg);

} // namespace advlab

#endif // ADVLAB_PHANTOM_HPP
