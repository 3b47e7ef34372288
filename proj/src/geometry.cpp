#include "advlab/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>

namespace advlab {
namespace {

constexpr double kOnEdgeTolerance = 1e-9;

// Saturating conversion of a pixel coordinate to an index in [lo, hi].
int clamp_index(double v, int lo, int hi) {
    return static_cast<int>(std::clamp(v, static_cast<double>(lo), static_cast<double>(hi)));
}

double segment_distance(Point c, Point p, Point q) {
    const double ex = q.x - p.x, ey = q.y - p.y;
    const double len2 = ex * ex + ey * ey;
    double t = 0.0;
    if (len2 > 0.0) t = std::clamp(((c.x - p.x) * ex + (c.y - p.y) * ey) / len2, 0.0, 1.0);
    const double dx = c.x - (p.x + t * ex), dy = c.y - (p.y + t * ey);
    return std::hypot(dx, dy);
}

} // namespace

std::vector<double> flatten(const Contour& c) {
    std::vector<double> xy;
    xy.reserve(2 * c.size());
    for (const Point& p : c) {
        xy.push_back(p.x);
        xy.push_back(p.y);
    }
    return xy;
}

Contour unflatten(std::span<const double> xy) {
    if (xy.size() % 2 != 0) throw std::invalid_argument("flattened contour has odd length " + std::to_string(xy.size()));
    Contour c(xy.size() / 2);
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = Point{xy[2 * i], xy[2 * i + 1]};
    return c;
}

Contour translated(const Contour& c, double dx, double dy) {
    Contour out = c;
    for (Point& p : out) {
        p.x += dx;
        p.y += dy;
    }
    return out;
}

double polygon_area(const Contour& c) {
    double a = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) {
        const Point& p = c[i];
        const Point& q = c[(i + 1) % c.size()];
        a += p.x * q.y - q.x * p.y;
    }
    return 0.5 * a;
}

double perimeter(const Contour& c) {
    double len = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) {
        const Point& p = c[i];
        const Point& q = c[(i + 1) % c.size()];
        len += std::hypot(q.x - p.x, q.y - p.y);
    }
    return len;
}

bool is_degenerate(const Contour& c) {
    if (c.size() < 3) return true;
    const Point p0 = c[0];
    Point far = p0;
    double best = 0.0;
    for (const Point& p : c) {
        const double d = std::hypot(p.x - p0.x, p.y - p0.y);
        if (d > best) {
            best = d;
            far = p;
        }
    }
    if (best < 1e-12) return true;
    const double ex = (far.x - p0.x) / best, ey = (far.y - p0.y) / best;
    for (const Point& p : c) {
        const double cross = ex * (p.y - p0.y) - ey * (p.x - p0.x);
        if (std::abs(cross) > 1e-12 * std::max(1.0, best)) return false;
    }
    return true;
}

Mask rasterize_contour(const Contour& c, int height, int width) {
    if (c.size() < 3) throw std::invalid_argument("rasterize_contour needs at least 3 points, got " + std::to_string(c.size()));
    if (height < 0 || width < 0) throw std::invalid_argument("negative raster size");
    for (const Point& p : c) {
        if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw std::invalid_argument("contour has non-finite coordinates");
    }
    Mask mask(height, width);
    if (is_degenerate(c)) return mask;

    const std::size_t n = c.size();
    std::vector<double> xs;
    for (int i = 0; i < height; ++i) {
        const double yc = i + 0.5;
        xs.clear();
        for (std::size_t e = 0; e < n; ++e) {
            const Point& p = c[e];
            const Point& q = c[(e + 1) % n];
            if ((p.y > yc) != (q.y > yc)) xs.push_back(p.x + (yc - p.y) * (q.x - p.x) / (q.y - p.y));
        }
        std::sort(xs.begin(), xs.end());
        // A center is inside when an odd number of crossings lie at or left of it.
        for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
            const double lo = xs[k], hi = xs[k + 1];
            int j = clamp_index(std::floor(lo - 0.5) - 1, 0, width);
            for (; j < width && j + 0.5 < lo; ++j) {}
            for (; j < width && j + 0.5 < hi; ++j) mask.at(i, j) = 1;
        }
    }

    // Centers on an edge are inside regardless of parity.
    for (std::size_t e = 0; e < n; ++e) {
        const Point& p = c[e];
        const Point& q = c[(e + 1) % n];
        const int i0 = clamp_index(std::floor(std::min(p.y, q.y) - 0.5 - kOnEdgeTolerance), 0, height);
        const int i1 = clamp_index(std::ceil(std::max(p.y, q.y) - 0.5 + kOnEdgeTolerance), -1, height - 1);
        const int j0 = clamp_index(std::floor(std::min(p.x, q.x) - 0.5 - kOnEdgeTolerance), 0, width);
        const int j1 = clamp_index(std::ceil(std::max(p.x, q.x) - 0.5 + kOnEdgeTolerance), -1, width - 1);
        for (int i = i0; i <= i1; ++i) {
            for (int j = j0; j <= j1; ++j) {
                if (!mask.at(i, j) && segment_distance(Point{j + 0.5, i + 0.5}, p, q) <= kOnEdgeTolerance) mask.at(i, j) = 1;
            }
        }
    }
    return mask;
}

double dice(const Mask& a, const Mask& b) {
    if (a.height != b.height || a.width != b.width) {
        throw std::invalid_argument("dice: mask sizes differ (" + std::to_string(a.height) + "x" + std::to_string(a.width) +
                                    " vs " + std::to_string(b.height) + "x" + std::to_string(b.width) + ")");
    }
    std::size_t inter = 0, total = 0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        const bool x = a.pixels[i] != 0, y = b.pixels[i] != 0;
        inter += (x && y) ? 1 : 0;
        total += (x ? 1 : 0) + (y ? 1 : 0);
    }
    if (total == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(total);
}

double contour_dice(const Contour& a, const Contour& b, int height, int width) {
    return dice(rasterize_contour(a, height, width), rasterize_contour(b, height, width));
}

void write_contour(const std::filesystem::path& path, const Contour& c) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << std::setprecision(17);
    for (const Point& p : c) os << p.x << ' ' << p.y << '\n';
    if (!os) throw std::runtime_error("failed writing " + path.string());
}

Contour read_contour(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    Contour c;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ls(line);
        Point p;
        if (!(ls >> p.x >> p.y)) throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected 'x y'");
        c.push_back(p);
    }
    return c;
}

} // namespace advlab
