#ifndef ADVLAB_TPS_HPP
#define ADVLAB_TPS_HPP

#include <array>
#include <vector>

#include "advlab/geometry.hpp"
#include "advlab/image.hpp"

namespace advlab {

/// Thin-plate spline R^2 -> R^2 with kernel U(r) = r^2 log r^2, U(0) = 0:
///   f(p) = a0 + ax*p.x + ay*p.y + sum_i w_i U(|p - c_i|)   (per output axis)
struct TpsTransform {
    Contour control_points;
    std::array<double, 3> affine_x{0.0, 1.0, 0.0};
    std::array<double, 3> affine_y{0.0, 0.0, 1.0};
    std::vector<double> weights_x;
    std::vector<double> weights_y;
    /// Coincident control points found while fitting (merged when their
    /// targets agree, otherwise separated by 1e-9 jitter).
    int merged_duplicates = 0;

    Point apply(Point p) const;
};

double tps_kernel(double squared_distance);

/// Fits the spline taking source[i] to target[i]. With lambda = 0 it
/// interpolates exactly; lambda > 0 adds lambda*I to the kernel block.
/// Throws std::invalid_argument for mismatched/insufficient input and
/// std::runtime_error when the system is singular (e.g. collinear points).
TpsTransform tps_fit(const Contour& source, const Contour& target, double lambda = 0.0);

/// Largest |t(source[i]) - target[i]| over the control points.
double tps_max_residual(const TpsTransform& t, const Contour& source, const Contour& target);

/// Bilinear sample at a continuous pixel coordinate (pixel centers at k+0.5);
/// pixels outside the grid read as 0.
double sample_bilinear(const Image& img, double x, double y);

/// Inverse warp: output pixel center p takes the value of `img` at t(p).
/// `t` therefore maps output (target) space into the input image's space.
Image tps_warp_image(const Image& img, const TpsTransform& t);

} // namespace advlab

#endif // ADVLAB_TPS_HPP
