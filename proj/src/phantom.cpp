#include "advlab/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace advlab {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr int kHarmonics = 4; // k = 2..5
constexpr int kDenseSamples = 4096;

// Linear ramp from 0 to 1 over one pixel centered on signed distance 0.
double soft_step(double signed_distance) {
    return std::clamp(signed_distance + 0.5, 0.0, 1.0);
}

// Separable [1 2 1]/4 blur with edge replication.
Image blur3(const Image& img) {
    Image tmp(img.height, img.width), out(img.height, img.width);
    for (int i = 0; i < img.height; ++i) {
        for (int j = 0; j < img.width; ++j) {
            const double l = img.at(i, std::max(j - 1, 0)), r = img.at(i, std::min(j + 1, img.width - 1));
            tmp.at(i, j) = 0.25 * l + 0.5 * img.at(i, j) + 0.25 * r;
        }
    }
    for (int i = 0; i < img.height; ++i) {
        for (int j = 0; j < img.width; ++j) {
            const double u = tmp.at(std::max(i - 1, 0), j), d = tmp.at(std::min(i + 1, img.height - 1), j);
            out.at(i, j) = 0.25 * u + 0.5 * tmp.at(i, j) + 0.25 * d;
        }
    }
    return out;
}

} // namespace

double DiskShape::radius(double t) const {
    const double c = b * std::cos(t), s = a * std::sin(t);
    double r = a * b / std::sqrt(c * c + s * s);
    double mod = 1.0;
    for (std::size_t k = 0; k < harmonic_amp.size(); ++k) {
        mod += harmonic_amp[k] * std::cos(static_cast<double>(k + 2) * t + harmonic_phase[k]);
    }
    return r * mod;
}

Point DiskShape::at(double t) const {
    const double r = radius(t);
    const double lx = r * std::cos(t), ly = r * std::sin(t);
    const double cr = std::cos(rotation), sr = std::sin(rotation);
    return Point{cx + cr * lx - sr * ly, cy + sr * lx + cr * ly};
}

Contour resample_by_arc_length(const DiskShape& shape, int points) {
    if (points < 3) throw std::invalid_argument("resample_by_arc_length needs at least 3 points");
    std::vector<double> cum(kDenseSamples + 1, 0.0);
    Point prev = shape.at(0.0);
    for (int m = 1; m <= kDenseSamples; ++m) {
        const Point p = shape.at(kTwoPi * m / kDenseSamples);
        cum[static_cast<std::size_t>(m)] = cum[static_cast<std::size_t>(m - 1)] + std::hypot(p.x - prev.x, p.y - prev.y);
        prev = p;
    }
    const double total = cum.back();
    Contour c;
    c.reserve(static_cast<std::size_t>(points));
    std::size_t m = 0;
    for (int j = 0; j < points; ++j) {
        const double s = total * j / points;
        while (m + 1 < cum.size() && cum[m + 1] <= s) ++m;
        const double seg = cum[m + 1] - cum[m];
        const double frac = seg > 0.0 ? (s - cum[m]) / seg : 0.0;
        c.push_back(shape.at(kTwoPi * (static_cast<double>(m) + frac) / kDenseSamples));
    }
    return c;
}

DiskShape random_disk_shape(Rng& rng, const PhantomConfig& cfg) {
    const double size = cfg.image_size;
    DiskShape d;
    d.cx = size * (0.5 + uniform(rng, -cfg.center_jitter, cfg.center_jitter));
    d.cy = size * (0.5 + uniform(rng, -cfg.center_jitter, cfg.center_jitter));
    d.a = size * uniform(rng, cfg.semi_axis_x_min, cfg.semi_axis_x_max);
    d.b = size * uniform(rng, cfg.semi_axis_y_min, cfg.semi_axis_y_max);
    d.rotation = uniform(rng, -cfg.max_rotation, cfg.max_rotation);

    std::vector<double> raw(kHarmonics);
    double norm = 0.0;
    for (double& u : raw) {
        u = uniform(rng, -1.0, 1.0);
        norm += std::abs(u);
    }
    const double total = cfg.perturbation > 0.0 ? uniform(rng, 0.0, cfg.perturbation) : 0.0;
    d.harmonic_amp.resize(kHarmonics);
    d.harmonic_phase.resize(kHarmonics);
    for (int k = 0; k < kHarmonics; ++k) {
        d.harmonic_amp[static_cast<std::size_t>(k)] = norm > 0.0 ? total * raw[static_cast<std::size_t>(k)] / norm : 0.0;
        d.harmonic_phase[static_cast<std::size_t>(k)] = uniform(rng, 0.0, kTwoPi);
    }
    return d;
}

PhantomSample generate_phantom(Rng& rng, const PhantomConfig& cfg) {
    if (cfg.image_size < 8) throw std::invalid_argument("phantom image_size must be >= 8");
    if (cfg.perturbation < 0.0 || cfg.perturbation > 0.15) {
        throw std::invalid_argument("phantom perturbation must lie in [0, 0.15]");
    }
    const int size = cfg.image_size;
    const DiskShape shape = random_disk_shape(rng, cfg);

    PhantomSample out;
    out.contour = resample_by_arc_length(shape, cfg.points);
    out.seg = rasterize_contour(out.contour, size, size);

    double xmin = size, xmax = 0.0, ymin = size, ymax = 0.0;
    for (const Point& p : out.contour) {
        xmin = std::min(xmin, p.x);
        xmax = std::max(xmax, p.x);
        ymin = std::min(ymin, p.y);
        ymax = std::max(ymax, p.y);
    }
    const double gap = cfg.vertebra_gap * size;
    const double block_left = xmin - 0.03 * size, block_right = xmax + 0.03 * size;

    // Low-frequency texture: a few random plane waves.
    struct Wave {
        double kx, ky, phase, amp;
    };
    std::vector<Wave> waves(3);
    for (Wave& w : waves) {
        const double period = size * uniform(rng, 0.25, 0.6);
        const double dir = uniform(rng, 0.0, kTwoPi);
        w = Wave{kTwoPi / period * std::cos(dir), kTwoPi / period * std::sin(dir), uniform(rng, 0.0, kTwoPi),
                 cfg.texture_amplitude * uniform(rng, 0.5, 1.0)};
    }
    std::normal_distribution<double> noise(0.0, 1.0);
    const double cr = std::cos(shape.rotation), sr = std::sin(shape.rotation);

    Image img(size, size);
    for (int i = 0; i < size; ++i) {
        for (int j = 0; j < size; ++j) {
            const double px = j + 0.5, py = i + 0.5;
            const double dx = px - shape.cx, dy = py - shape.cy;
            const double lx = cr * dx + sr * dy, ly = -sr * dx + cr * dy;
            const double r = shape.radius(std::atan2(ly, lx));
            const double dist = std::hypot(lx, ly);
            const double rho = dist / r;

            const double horiz = std::min(soft_step(px - block_left), soft_step(block_right - px));
            const double upper = std::min(horiz, soft_step(ymin - gap - py));
            const double lower = std::min(horiz, soft_step(py - ymax - gap));
            double v = cfg.background_intensity + (cfg.vertebra_intensity - cfg.background_intensity) * std::max(upper, lower);

            const double inside = soft_step(r - dist);
            const double disk = cfg.disk_intensity * (1.0 - cfg.disk_falloff * std::min(rho, 1.0) * std::min(rho, 1.0));
            v = (1.0 - inside) * v + inside * disk;

            for (const Wave& w : waves) v += w.amp * std::sin(w.kx * px + w.ky * py + w.phase);
            v += cfg.noise_sigma * noise(rng);
            img.at(i, j) = v;
        }
    }
    out.image = clamp01(blur3(img));
    return out;
}

} // namespace advlab
