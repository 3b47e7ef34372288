#ifndef ADVLAB_IMAGE_HPP
#define ADVLAB_IMAGE_HPP

#include <cstdint>
#include <filesystem>
#include <vector>

namespace advlab {

/// Grayscale intensity grid, row-major. Model inputs live in [0,1].
struct Image {
    int height = 0;
    int width = 0;
    std::vector<double> pixels;

    Image() = default;
    Image(int h, int w, double fill = 0.0) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, fill) {}

    double& at(int row, int col) { return pixels[static_cast<std::size_t>(row) * width + col]; }
    double at(int row, int col) const { return pixels[static_cast<std::size_t>(row) * width + col]; }
    std::size_t size() const { return pixels.size(); }

    friend bool operator==(const Image&, const Image&) = default;
};

/// Soft segmentation output; values are probabilities in [0,1].
using ProbabilityMap = Image;

/// Binary segmentation map with values in {0,1}.
struct Mask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> pixels;

    Mask() = default;
    Mask(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, 0) {}

    std::uint8_t& at(int row, int col) { return pixels[static_cast<std::size_t>(row) * width + col]; }
    std::uint8_t at(int row, int col) const { return pixels[static_cast<std::size_t>(row) * width + col]; }
    std::size_t count() const;

    friend bool operator==(const Mask&, const Mask&) = default;
};

Image clamp01(Image img);
double max_abs_difference(const Image& a, const Image& b);

/// Bilinear resampling onto a new grid (pixel-center aligned).
Image resize_bilinear(const Image& img, int height, int width);

/// 8-bit binary PGM (P5). Values are clamped to [0,1] and rounded to 1/255 steps.
void write_pgm(const std::filesystem::path& path, const Image& img);
/// Masks are written as 0/255.
void write_pgm(const std::filesystem::path& path, const Mask& mask);
/// Reads P5 or P2 with maxval up to 65535, scaled to [0,1].
Image read_pgm(const std::filesystem::path& path);
Mask read_mask_pgm(const std::filesystem::path& path);

} // namespace advlab

#endif // ADVLAB_IMAGE_HPP
