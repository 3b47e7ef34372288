#ifndef ADVLAB_GEOMETRY_HPP
#define ADVLAB_GEOMETRY_HPP

#include <filesystem>
#include <span>
#include <vector>

#include "advlab/image.hpp"

namespace advlab {

struct Point {
    double x = 0.0;
    double y = 0.0;
    friend bool operator==(const Point&, const Point&) = default;
};

/// Closed polygon in pixel coordinates; the last point connects to the first.
/// Index i of one contour corresponds to index i of another.
using Contour = std::vector<Point>;

/// [x0, y0, x1, y1, ...]
std::vector<double> flatten(const Contour& c);
Contour unflatten(std::span<const double> xy);

Contour translated(const Contour& c, double dx, double dy);
double polygon_area(const Contour& c);
double perimeter(const Contour& c);
/// True when every point lies on one line (including all-coincident).
bool is_degenerate(const Contour& c);

/// Pixel (i,j) is set iff its center (j+0.5, i+0.5) is inside the polygon
/// under the even-odd rule; centers lying on an edge count as inside.
/// Degenerate polygons give an empty mask. Requires at least 3 points.
Mask rasterize_contour(const Contour& c, int height, int width);

/// 2|a∩b| / (|a|+|b|); two empty masks give 1.
double dice(const Mask& a, const Mask& b);

double contour_dice(const Contour& a, const Contour& b, int height, int width);

/// Plain text, one "x y" pair per line.
void write_contour(const std::filesystem::path& path, const Contour& c);
Contour read_contour(const std::filesystem::path& path);

} // namespace advlab

#endif // ADVLAB_GEOMETRY_HPP
