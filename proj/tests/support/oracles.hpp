// Independent reference implementations used by the unit and acceptance tests.
// Nothing here calls into the code it checks beyond building the graph.
#ifndef ADVLAB_TESTS_ORACLES_HPP
#define ADVLAB_TESTS_ORACLES_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "advlab/geometry.hpp"
#include "advlab/graph.hpp"
#include "advlab/image.hpp"
#include "advlab/ops.hpp"
#include "advlab/rng.hpp"

namespace advlab::oracle {

inline Tensor<double> random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(std::move(shape));
    for (double& v : t.values()) v = uniform(rng, lo, hi);
    return t;
}

inline Tensor<double> random_normal(Rng& rng, Shape shape, double sigma = 1.0) {
    std::normal_distribution<double> n(0.0, sigma);
    Tensor<double> t(std::move(shape));
    for (double& v : t.values()) v = n(rng);
    return t;
}

/// Builds an output (any shape) from graph leaves bound to `inputs`.
using GraphFn = std::function<Var(Graph<double>&, const std::vector<Var>&)>;

/// Compares backward() against central differences of the scalar
/// sum(out * R) for a fixed random R. Returns the worst over inputs of
/// |g_analytic - g_fd| / max(|g_analytic|, |g_fd|, floor), norms over all
/// entries of that input. Both step sizes are tried and the better kept, so a
/// step that straddles a kink of a piecewise-linear op does not count.
inline double gradient_error(const GraphFn& f, const std::vector<Tensor<double>>& inputs, Rng& rng, double h = 1e-6,
                             double floor = 1e-10) {
    Tensor<double> weights;
    const auto scalar = [&](const std::vector<Tensor<double>>& xs) {
        Graph<double> g;
        std::vector<Var> vs;
        for (const auto& x : xs) vs.push_back(g.constant(x));
        const Tensor<double>& out = g.value(f(g, vs));
        double s = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * weights[i];
        return s;
    };

    Graph<double> g;
    std::vector<Var> vs;
    for (const auto& x : inputs) vs.push_back(g.input(x));
    const Var out = f(g, vs);
    weights = random_tensor(rng, g.value(out).shape());
    g.backward(ops::sum(g, ops::mul_const(g, out, weights)));

    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const Tensor<double> ga = g.grad(vs[k]);
        double best = INFINITY;
        for (double step : {h, h * 0.1}) {
            std::vector<Tensor<double>> xs = inputs;
            double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
            for (std::size_t i = 0; i < xs[k].size(); ++i) {
                const double x0 = xs[k][i];
                xs[k][i] = x0 + step;
                const double fp = scalar(xs);
                xs[k][i] = x0 - step;
                const double fm = scalar(xs);
                xs[k][i] = x0;
                const double gn = (fp - fm) / (2.0 * step);
                diff2 += (ga[i] - gn) * (ga[i] - gn);
                a2 += ga[i] * ga[i];
                n2 += gn * gn;
            }
            best = std::min(best, std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), floor}));
        }
        worst = std::max(worst, best);
    }
    return worst;
}

/// Direct nested-loop cross-correlation with zero padding.
inline Tensor<double> conv2d_reference(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* bias, int stride, int pad) {
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int O = w.dim(0), K = w.dim(2);
    const int Ho = (H + 2 * pad - K) / stride + 1, Wo = (W + 2 * pad - K) / stride + 1;
    Tensor<double> y({B, O, Ho, Wo});
    for (int b = 0; b < B; ++b)
        for (int o = 0; o < O; ++o)
            for (int i = 0; i < Ho; ++i)
                for (int j = 0; j < Wo; ++j) {
                    double s = bias ? (*bias)[static_cast<std::size_t>(o)] : 0.0;
                    for (int c = 0; c < C; ++c)
                        for (int ki = 0; ki < K; ++ki)
                            for (int kj = 0; kj < K; ++kj) {
                                const int yi = i * stride - pad + ki, xj = j * stride - pad + kj;
                                if (yi < 0 || yi >= H || xj < 0 || xj >= W) continue;
                                s += x[((static_cast<std::size_t>(b) * C + c) * H + yi) * W + xj] *
                                     w[((static_cast<std::size_t>(o) * C + c) * K + ki) * K + kj];
                            }
                    y[((static_cast<std::size_t>(b) * O + o) * Ho + i) * Wo + j] = s;
                }
    return y;
}

/// Transposed convolution as scatter: every input pixel spreads its kernel.
inline Tensor<double> conv_transpose2d_reference(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* bias, int stride,
                                                 int pad) {
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int O = w.dim(1), K = w.dim(2);
    const int Ho = (H - 1) * stride - 2 * pad + K, Wo = (W - 1) * stride - 2 * pad + K;
    Tensor<double> y({B, O, Ho, Wo});
    for (int b = 0; b < B; ++b)
        for (int o = 0; o < O; ++o)
            for (int i = 0; i < Ho; ++i)
                for (int j = 0; j < Wo; ++j) y[((static_cast<std::size_t>(b) * O + o) * Ho + i) * Wo + j] = bias ? (*bias)[static_cast<std::size_t>(o)] : 0.0;
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j)
                    for (int o = 0; o < O; ++o)
                        for (int ki = 0; ki < K; ++ki)
                            for (int kj = 0; kj < K; ++kj) {
                                const int yi = i * stride - pad + ki, yj = j * stride - pad + kj;
                                if (yi < 0 || yi >= Ho || yj < 0 || yj >= Wo) continue;
                                y[((static_cast<std::size_t>(b) * O + o) * Ho + yi) * Wo + yj] +=
                                    x[((static_cast<std::size_t>(b) * C + c) * H + i) * W + j] * w[((static_cast<std::size_t>(c) * O + o) * K + ki) * K + kj];
                            }
    return y;
}

/// Even-odd ray casting towards +x.
inline bool point_in_polygon(const Contour& poly, double x, double y) {
    bool inside = false;
    const std::size_t n = poly.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const Point& a = poly[i];
        const Point& b = poly[j];
        if ((a.y > y) != (b.y > y)) {
            const double xc = a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y);
            if (x < xc) inside = !inside;
        }
    }
    return inside;
}

inline Mask rasterize_reference(const Contour& poly, int h, int w) {
    Mask m(h, w);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) m.at(i, j) = point_in_polygon(poly, j + 0.5, i + 0.5) ? 1 : 0;
    return m;
}

/// Plain Gaussian elimination with partial pivoting; A is n x n, b has m columns.
inline std::vector<std::vector<double>> gauss_solve(std::vector<std::vector<double>> a, std::vector<std::vector<double>> b) {
    const std::size_t n = a.size();
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < n; ++r)
            if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
        std::swap(a[c], a[piv]);
        std::swap(b[c], b[piv]);
        for (std::size_t r = c + 1; r < n; ++r) {
            const double f = a[r][c] / a[c][c];
            for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
            for (std::size_t k = 0; k < b[r].size(); ++k) b[r][k] -= f * b[c][k];
        }
    }
    for (std::size_t c = n; c-- > 0;) {
        for (std::size_t k = 0; k < b[c].size(); ++k) {
            double s = b[c][k];
            for (std::size_t j = c + 1; j < n; ++j) s -= a[c][j] * b[j][k];
            b[c][k] = s / a[c][c];
        }
    }
    return b;
}

/// Thin-plate spline from the textbook block system [K P; P^T 0][w; a] = [y; 0]
/// with U(r) = r^2 log r, solved for target coordinates directly.
struct TpsReference {
    Contour ctrl;
    std::vector<std::vector<double>> coef; // (n+3) x 2

    static double u(double r2) { return r2 > 0.0 ? 0.5 * r2 * std::log(r2) : 0.0; }

    TpsReference(const Contour& src, const Contour& dst) : ctrl(src) {
        const std::size_t n = src.size();
        std::vector<std::vector<double>> a(n + 3, std::vector<double>(n + 3, 0.0));
        std::vector<std::vector<double>> b(n + 3, std::vector<double>(2, 0.0));
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                const double dx = src[i].x - src[j].x, dy = src[i].y - src[j].y;
                a[i][j] = u(dx * dx + dy * dy);
            }
            a[i][n] = a[n][i] = 1.0;
            a[i][n + 1] = a[n + 1][i] = src[i].x;
            a[i][n + 2] = a[n + 2][i] = src[i].y;
            b[i][0] = dst[i].x;
            b[i][1] = dst[i].y;
        }
        coef = gauss_solve(a, b);
    }

    Point apply(Point p) const {
        const std::size_t n = ctrl.size();
        double out[2];
        for (int d = 0; d < 2; ++d) {
            double s = coef[n][static_cast<std::size_t>(d)] + coef[n + 1][static_cast<std::size_t>(d)] * p.x + coef[n + 2][static_cast<std::size_t>(d)] * p.y;
            for (std::size_t i = 0; i < n; ++i) {
                const double dx = p.x - ctrl[i].x, dy = p.y - ctrl[i].y;
                s += coef[i][static_cast<std::size_t>(d)] * u(dx * dx + dy * dy);
            }
            out[d] = s;
        }
        return {out[0], out[1]};
    }
};

/// Eigen-decomposition of the sample covariance, eigenvalues descending.
struct CovarianceEigen {
    Eigen::VectorXd values;
    Eigen::MatrixXd vectors;
};

inline CovarianceEigen covariance_eigen(const std::vector<Contour>& shapes) {
    const Eigen::Index d = static_cast<Eigen::Index>(2 * shapes.front().size());
    const Eigen::Index n = static_cast<Eigen::Index>(shapes.size());
    Eigen::MatrixXd x(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index p = 0; p < d / 2; ++p) {
            x(i, 2 * p) = shapes[static_cast<std::size_t>(i)][static_cast<std::size_t>(p)].x;
            x(i, 2 * p + 1) = shapes[static_cast<std::size_t>(i)][static_cast<std::size_t>(p)].y;
        }
    const Eigen::RowVectorXd mu = x.colwise().mean();
    const Eigen::MatrixXd xc = x.rowwise() - mu;
    const Eigen::MatrixXd cov = xc.transpose() * xc / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    CovarianceEigen out;
    out.values = es.eigenvalues().reverse();
    out.vectors = es.eigenvectors().rowwise().reverse();
    return out;
}

/// Fraction of (ood, ind) pairs with ood > ind, ties counted one half.
inline double auroc_pairs(const std::vector<double>& ind, const std::vector<double>& ood) {
    double wins = 0.0;
    for (double o : ood)
        for (double i : ind) wins += o > i ? 1.0 : (o == i ? 0.5 : 0.0);
    return wins / (static_cast<double>(ind.size()) * static_cast<double>(ood.size()));
}

/// Random simple-or-not polygon with vertices in [lo, hi]^2.
inline Contour random_polygon(Rng& rng, int vertices, double lo, double hi) {
    Contour c;
    for (int i = 0; i < vertices; ++i) c.push_back({uniform(rng, lo, hi), uniform(rng, lo, hi)});
    return c;
}

/// Star-shaped polygon around (cx, cy), for tests that want simple polygons.
inline Contour random_star(Rng& rng, int vertices, double cx, double cy, double rmin, double rmax) {
    Contour c;
    for (int i = 0; i < vertices; ++i) {
        const double t = 2.0 * std::acos(-1.0) * (i + uniform(rng, 0.1, 0.9)) / vertices;
        const double r = uniform(rng, rmin, rmax);
        c.push_back({cx + r * std::cos(t), cy + r * std::sin(t)});
    }
    return c;
}

inline Image random_image(Rng& rng, int h, int w, double lo = 0.0, double hi = 1.0) {
    Image img(h, w);
    for (double& v : img.pixels) v = uniform(rng, lo, hi);
    return img;
}

} // namespace advlab::oracle

#endif // ADVLAB_TESTS_ORACLES_HPP
