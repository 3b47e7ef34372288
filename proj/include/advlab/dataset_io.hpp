#ifndef ADVLAB_DATASET_IO_HPP
#define ADVLAB_DATASET_IO_HPP

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "advlab/phantom.hpp"
#include "advlab/shape_model.hpp"

namespace advlab {

/// On-disk sample set:
///   <dir>/manifest.json        {"count", "image_size", "points", "meta": {...}}
///   <dir>/images/NNNNNN.pgm    8-bit image
///   <dir>/contours/NNNNNN.txt  "x y" per line
///   <dir>/masks/NNNNNN.pgm     0/255 segmentation
/// Images pass through 8-bit quantization, so everything downstream of a
/// saved set should read it back rather than reuse the in-memory copy.
void save_samples(const std::filesystem::path& dir, std::span<const PhantomSample> samples, const nlohmann::json& meta);
std::vector<PhantomSample> load_samples(const std::filesystem::path& dir);
nlohmann::json load_samples_meta(const std::filesystem::path& dir);

/// Returns the subset in index order.
std::vector<PhantomSample> select(std::span<const PhantomSample> all, std::span<const int> indices);

/// Shuffled 80/20-style split of 0..n-1, each part sorted.
struct Split {
    std::vector<int> train;
    std::vector<int> test;
};
Split make_split(int n, double train_fraction, Rng& rng);

nlohmann::json shape_model_to_json(const ShapeModel& ssm);
ShapeModel shape_model_from_json(const nlohmann::json& j);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

} // namespace advlab

#endif // ADVLAB_DATASET_IO_HPP
