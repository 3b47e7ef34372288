#include "advlab/tps.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <iostream>
#include <numbers>
#include <stdexcept>
#include <string>

namespace advlab {

double tps_kernel(double r2) {
    return r2 > 0.0 ? r2 * std::log(r2) : 0.0;
}

Point TpsTransform::apply(Point p) const {
    double x = affine_x[0] + affine_x[1] * p.x + affine_x[2] * p.y;
    double y = affine_y[0] + affine_y[1] * p.x + affine_y[2] * p.y;
    for (std::size_t i = 0; i < control_points.size(); ++i) {
        const double dx = p.x - control_points[i].x, dy = p.y - control_points[i].y;
        const double u = tps_kernel(dx * dx + dy * dy);
        x += weights_x[i] * u;
        y += weights_y[i] * u;
    }
    return Point{x, y};
}

TpsTransform tps_fit(const Contour& source, const Contour& target, double lambda) {
    if (source.size() != target.size()) {
        throw std::invalid_argument("tps_fit: source has " + std::to_string(source.size()) + " points, target has " +
                                    std::to_string(target.size()));
    }
    if (source.size() < 3) throw std::invalid_argument("tps_fit needs at least 3 control points");
    if (!(lambda >= 0.0)) throw std::invalid_argument("tps_fit: lambda must be >= 0");

    // Coincident control points with the same target carry no information and
    // make the system singular: keep one. Conflicting ones get 1e-9 jitter and
    // normally fail the singularity or residual check below.
    TpsTransform t;
    Contour src, dst;
    for (std::size_t i = 0; i < source.size(); ++i) {
        Point p = source[i];
        bool skip = false;
        for (std::size_t j = 0; j < src.size(); ++j) {
            if (std::hypot(p.x - src[j].x, p.y - src[j].y) >= 1e-12) continue;
            ++t.merged_duplicates;
            if (std::hypot(target[i].x - dst[j].x, target[i].y - dst[j].y) < 1e-12) {
                skip = true;
            } else {
                const double angle = 2.0 * std::numbers::pi * static_cast<double>(i % 16) / 16.0;
                p.x += 1e-9 * std::cos(angle);
                p.y += 1e-9 * std::sin(angle);
            }
            break;
        }
        if (skip) continue;
        src.push_back(p);
        dst.push_back(target[i]);
    }
    if (t.merged_duplicates > 0) {
        std::cerr << "warning: tps_fit merged " << t.merged_duplicates << " duplicate control point(s)\n";
    }
    if (src.size() < 3 || is_degenerate(src)) throw std::runtime_error("tps_fit: control points are collinear; system is singular");
    t.control_points = src;
    const int n = static_cast<int>(src.size());

    // Unknowns are displacements, so identical source/target gives exact zeros.
    const int m = n + 3;
    Eigen::MatrixXd system = Eigen::MatrixXd::Zero(m, m);
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(m, 2);
    for (int i = 0; i < n; ++i) {
        const Point& pi = t.control_points[static_cast<std::size_t>(i)];
        for (int j = 0; j < n; ++j) {
            const Point& pj = t.control_points[static_cast<std::size_t>(j)];
            const double dx = pi.x - pj.x, dy = pi.y - pj.y;
            system(i, j) = tps_kernel(dx * dx + dy * dy);
        }
        system(i, i) += lambda;
        system(i, n) = system(n, i) = 1.0;
        system(i, n + 1) = system(n + 1, i) = pi.x;
        system(i, n + 2) = system(n + 2, i) = pi.y;
        rhs(i, 0) = dst[static_cast<std::size_t>(i)].x - src[static_cast<std::size_t>(i)].x;
        rhs(i, 1) = dst[static_cast<std::size_t>(i)].y - src[static_cast<std::size_t>(i)].y;
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(system);
    if (!lu.isInvertible()) throw std::runtime_error("tps_fit: singular system");
    const Eigen::MatrixXd sol = lu.solve(rhs);
    if (!sol.allFinite()) throw std::runtime_error("tps_fit: non-finite solution");

    t.weights_x.resize(static_cast<std::size_t>(n));
    t.weights_y.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        t.weights_x[static_cast<std::size_t>(i)] = sol(i, 0);
        t.weights_y[static_cast<std::size_t>(i)] = sol(i, 1);
    }
    t.affine_x = {sol(n, 0), 1.0 + sol(n + 1, 0), sol(n + 2, 0)};
    t.affine_y = {sol(n, 1), sol(n + 1, 1), 1.0 + sol(n + 2, 1)};

    if (lambda == 0.0 && tps_max_residual(t, source, target) > 1e-6) {
        throw std::runtime_error("tps_fit: system too ill-conditioned to interpolate the control points");
    }
    return t;
}

double tps_max_residual(const TpsTransform& t, const Contour& source, const Contour& target) {
    double worst = 0.0;
    for (std::size_t i = 0; i < source.size(); ++i) {
        const Point p = t.apply(source[i]);
        worst = std::max(worst, std::hypot(p.x - target[i].x, p.y - target[i].y));
    }
    return worst;
}

double sample_bilinear(const Image& img, double x, double y) {
    const double u = x - 0.5, v = y - 0.5;
    const double j0f = std::floor(u), i0f = std::floor(v);
    if (!(j0f > -2.0 && i0f > -2.0 && j0f < img.width && i0f < img.height)) return 0.0;
    const int j0 = static_cast<int>(j0f), i0 = static_cast<int>(i0f);
    const double fx = u - j0f, fy = v - i0f;
    auto px = [&](int i, int j) {
        return (i >= 0 && i < img.height && j >= 0 && j < img.width) ? img.at(i, j) : 0.0;
    };
    return (1.0 - fy) * (1.0 - fx) * px(i0, j0) + (1.0 - fy) * fx * px(i0, j0 + 1) +
           fy * (1.0 - fx) * px(i0 + 1, j0) + fy * fx * px(i0 + 1, j0 + 1);
}

Image tps_warp_image(const Image& img, const TpsTransform& t) {
    Image out(img.height, img.width);
    for (int i = 0; i < img.height; ++i) {
        for (int j = 0; j < img.width; ++j) {
            const Point q = t.apply(Point{j + 0.5, i + 0.5});
            out.at(i, j) = sample_bilinear(img, q.x, q.y);
        }
    }
    return out;
}

} // namespace advlab
