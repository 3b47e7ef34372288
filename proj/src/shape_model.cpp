#include "advlab/shape_model.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>
#include <string>

#include "advlab/tps.hpp"

namespace advlab {

ShapeModel build_ssm(std::span<const Contour> shapes, int k) {
    const int n = static_cast<int>(shapes.size());
    if (n < 2) throw std::invalid_argument("build_ssm needs at least 2 shapes, got " + std::to_string(n));
    const int p = static_cast<int>(shapes.front().size());
    for (const Contour& c : shapes) {
        if (static_cast<int>(c.size()) != p) throw std::invalid_argument("build_ssm: shapes have different point counts");
    }
    const int dim = 2 * p;
    if (k < 1 || k > std::min(dim, n - 1)) {
        throw std::invalid_argument("build_ssm: k = " + std::to_string(k) + " outside [1, " + std::to_string(std::min(dim, n - 1)) + "]");
    }

    Eigen::MatrixXd data(n, dim);
    for (int i = 0; i < n; ++i) {
        const auto flat = flatten(shapes[static_cast<std::size_t>(i)]);
        data.row(i) = Eigen::Map<const Eigen::RowVectorXd>(flat.data(), dim);
    }

    ShapeModel ssm;
    ssm.training_shapes = n;
    const bool identical = std::all_of(shapes.begin(), shapes.end(), [&](const Contour& c) { return c == shapes.front(); });
    if (identical) {
        // Exact mean; a computed average could differ in the last bit.
        ssm.mean = data.row(0).transpose();
        ssm.components = Eigen::MatrixXd::Identity(dim, k);
        ssm.eigenvalues.assign(static_cast<std::size_t>(k), 0.0);
        ssm.coverage.assign(static_cast<std::size_t>(k), 1.0);
        std::cerr << "warning: build_ssm got " << n << " identical shapes; the model has zero variance\n";
        return ssm;
    }

    ssm.mean = data.colwise().mean().transpose();
    const Eigen::MatrixXd centered = data.rowwise() - ssm.mean.transpose();
    Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
    const Eigen::VectorXd& sv = svd.singularValues();

    std::vector<double> lambda(static_cast<std::size_t>(sv.size()));
    for (Eigen::Index i = 0; i < sv.size(); ++i) lambda[static_cast<std::size_t>(i)] = sv(i) * sv(i) / (n - 1);
    for (double l : lambda) ssm.total_variance += l;

    ssm.components = svd.matrixV().leftCols(k);
    // Sign convention: the largest-magnitude entry of each component is positive.
    for (int j = 0; j < k; ++j) {
        Eigen::Index arg = 0;
        ssm.components.col(j).cwiseAbs().maxCoeff(&arg);
        if (ssm.components(arg, j) < 0.0) ssm.components.col(j) *= -1.0;
    }
    double cum = 0.0;
    for (int j = 0; j < k; ++j) {
        ssm.eigenvalues.push_back(lambda[static_cast<std::size_t>(j)]);
        cum += lambda[static_cast<std::size_t>(j)];
        ssm.coverage.push_back(std::min(1.0, cum / ssm.total_variance));
    }
    return ssm;
}

Eigen::VectorXd project_shape(const ShapeModel& ssm, const Contour& c) {
    if (static_cast<int>(c.size()) != ssm.points()) throw std::invalid_argument("project_shape: point count mismatch");
    const auto flat = flatten(c);
    const Eigen::Map<const Eigen::VectorXd> v(flat.data(), static_cast<Eigen::Index>(flat.size()));
    return ssm.components.transpose() * (v - ssm.mean);
}

Contour reconstruct_shape(const ShapeModel& ssm, const Eigen::VectorXd& b) {
    if (b.size() != ssm.k()) throw std::invalid_argument("reconstruct_shape: coefficient count mismatch");
    const Eigen::VectorXd v = ssm.mean + ssm.components * b;
    return unflatten(std::span<const double>(v.data(), static_cast<std::size_t>(v.size())));
}

Contour sample_shape(const ShapeModel& ssm, std::span<const double> coeffs) {
    if (static_cast<int>(coeffs.size()) != ssm.k()) {
        throw std::invalid_argument("sample_shape: expected " + std::to_string(ssm.k()) + " coefficients, got " +
                                    std::to_string(coeffs.size()));
    }
    Eigen::VectorXd v = ssm.mean;
    for (int i = 0; i < ssm.k(); ++i) {
        const double b = std::clamp(coeffs[static_cast<std::size_t>(i)], -kCoefficientClamp, kCoefficientClamp);
        v += b * std::sqrt(ssm.eigenvalues[static_cast<std::size_t>(i)]) * ssm.components.col(i);
    }
    return unflatten(std::span<const double>(v.data(), static_cast<std::size_t>(v.size())));
}

std::vector<double> random_coefficients(Rng& rng, int k) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> b(static_cast<std::size_t>(k));
    for (double& v : b) v = normal(rng);
    return b;
}

VirtualSample make_virtual_sample_from(const Contour& shape, const PhantomSample& source, int source_index) {
    // The spline maps the virtual shape onto the source contour, which is
    // exactly the output -> input direction the inverse warp needs.
    const TpsTransform t = tps_fit(shape, source.contour);
    VirtualSample v;
    v.shape = shape;
    v.image = clamp01(tps_warp_image(source.image, t));
    v.source_index = source_index;
    v.tps_residual = tps_max_residual(t, shape, source.contour);
    return v;
}

VirtualSample make_virtual_sample(const Contour& shape, std::span<const PhantomSample> pool, Rng& rng) {
    if (pool.empty()) throw std::invalid_argument("make_virtual_sample: empty pool");
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    std::string last_error;
    for (int attempt = 0; attempt <= kVirtualSampleRetries; ++attempt) {
        const std::size_t idx = pick(rng);
        try {
            return make_virtual_sample_from(shape, pool[idx], static_cast<int>(idx));
        } catch (const std::runtime_error& e) {
            last_error = e.what();
        }
    }
    throw std::runtime_error("make_virtual_sample: TPS failed after " + std::to_string(kVirtualSampleRetries) +
                             " retries: " + last_error);
}

} // namespace advlab
