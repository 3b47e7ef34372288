#ifndef ADVLAB_SHAPE_MODEL_HPP
#define ADVLAB_SHAPE_MODEL_HPP

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "advlab/geometry.hpp"
#include "advlab/image.hpp"
#include "advlab/phantom.hpp"
#include "advlab/rng.hpp"

namespace advlab {

/// PCA point-distribution model over flattened contours [x0,y0,x1,y1,...].
struct ShapeModel {
    Eigen::VectorXd mean;       // 2P
    Eigen::MatrixXd components; // 2P x k, orthonormal columns
    std::vector<double> eigenvalues;  // non-increasing, >= 0
    std::vector<double> coverage;     // cumulative fraction of total variance
    double total_variance = 0.0;
    int training_shapes = 0;

    int points() const { return static_cast<int>(mean.size() / 2); }
    int k() const { return static_cast<int>(components.cols()); }
};

inline constexpr double kCoefficientClamp = 3.0;

/// Shapes must share P and point correspondence; 1 <= k <= min(2P, n-1).
ShapeModel build_ssm(std::span<const Contour> shapes, int k);

/// Component-space coordinates (not standardized) of a shape.
Eigen::VectorXd project_shape(const ShapeModel& ssm, const Contour& c);
/// mean + components * b, with b in the units returned by project_shape.
Contour reconstruct_shape(const ShapeModel& ssm, const Eigen::VectorXd& b);

/// mean + sum_i b_i sqrt(lambda_i) component_i with each b_i clamped to [-3, 3].
Contour sample_shape(const ShapeModel& ssm, std::span<const double> coeffs);

/// k independent standard normal coefficients.
std::vector<double> random_coefficients(Rng& rng, int k);

struct VirtualSample {
    Contour shape;
    Image image;
    int source_index = -1;
    double tps_residual = 0.0;
};

inline constexpr int kVirtualSampleRetries = 5;

/// Picks a pool element (x, s*) uniformly, fits the TPS s~ -> s* and warps x
/// so that its disk follows s~. TPS failures draw another element, up to
/// kVirtualSampleRetries times.
VirtualSample make_virtual_sample(const Contour& shape, std::span<const PhantomSample> pool, Rng& rng);

/// Same, with a fixed pool element.
VirtualSample make_virtual_sample_from(const Contour& shape, const PhantomSample& source, int source_index);

} // namespace advlab

#endif // ADVLAB_SHAPE_MODEL_HPP
