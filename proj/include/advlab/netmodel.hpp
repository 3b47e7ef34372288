#ifndef ADVLAB_NETMODEL_HPP
#define ADVLAB_NETMODEL_HPP

#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "advlab/checkpoint.hpp"
#include "advlab/geometry.hpp"
#include "advlab/graph.hpp"
#include "advlab/image.hpp"
#include "advlab/rng.hpp"

namespace advlab {

enum class RegressionPooling { GlobalAverage, Flatten };

struct ModelConfig {
    int image_size = 64;
    int contour_points = 64;
    int base_channels = 16;
    int depth = 4;               // number of 2x downsampling stages
    int groupnorm_groups = 4;
    int blocks_per_stage = 2;    // residual blocks after each downsampling
    int regression_hidden = 256;
    RegressionPooling regression_pooling = RegressionPooling::GlobalAverage;
    bool reconstruction_head = false;

    /// Channels at resolution level l (0 = full resolution).
    int channels(int level) const;
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Graph handles for one application of a model to a batch x:[B,1,H,W].
struct ModelVars {
    Var contour;        // [B, 2P], pixel coordinates (x0, y0, x1, y1, ...)
    Var segmentation;   // [B, 1, H, W], probabilities
    Var reconstruction; // [B, 1, H, W] or invalid
};

/// Anything that maps an image batch to contour/segmentation outputs inside a
/// graph. Implementations must not mix values across batch entries.
template <typename T>
class SegRegModel {
public:
    virtual ~SegRegModel() = default;
    virtual const ModelConfig& config() const = 0;
    /// Frozen parameters: only `x` can receive a gradient.
    virtual ModelVars apply(Graph<T>& g, Var x) const = 0;
};

struct ModelOutput {
    Contour contour;
    ProbabilityMap segmentation;
    std::optional<Image> reconstruction;
};

class ModelCorruptError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// U-net: residual encoder with max-pool downsampling, transposed-conv decoder
/// with concatenated skips, sibling 1x1 segmentation/reconstruction heads and
/// a fully-connected contour head on the bottleneck.
template <typename T>
class UNet final : public SegRegModel<T> {
public:
    explicit UNet(ModelConfig cfg);

    const ModelConfig& config() const override { return cfg_; }
    ModelVars apply(Graph<T>& g, Var x) const override;
    /// As apply(), additionally binding every parameter as a gradient leaf;
    /// params_out receives one Var per entry of params(), in order.
    ModelVars apply_trainable(Graph<T>& g, Var x, std::vector<Var>& params_out) const;

    /// He-normal conv/linear weights, zero biases, unit GroupNorm scales.
    void initialize(Rng& rng);
    /// Makes the contour head start at `c` (its last layer's bias).
    void set_contour_bias(const Contour& c);

    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }
    void set_params(ParamStore<T> p);

    /// Zeroes the encoder skip feeding decoder level `level` (diagnostics only).
    void set_skip_ablated(int level, bool ablated);

    void save(const std::filesystem::path& path) const;
    static UNet load(const std::filesystem::path& path);

private:
    ModelVars build(Graph<T>& g, Var x, std::vector<Var>* bound) const;

    ModelConfig cfg_;
    ParamStore<T> params_;
    std::vector<bool> skip_ablated_;
};

extern template class UNet<float>;
extern template class UNet<double>;

/// Stacks images into [B,1,S,S]; every image must be S x S.
template <typename T>
Tensor<T> images_to_tensor(std::span<const Image> images, int size);

template <typename T>
std::vector<ModelOutput> forward_batch(const SegRegModel<T>& model, std::span<const Image> images);

template <typename T>
ModelOutput forward(const SegRegModel<T>& model, const Image& x);

/// Pixel is 1 iff probability >= threshold.
Mask binarize(const ProbabilityMap& soft, double threshold = 0.5);

std::string model_config_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

} // namespace advlab

#endif // ADVLAB_NETMODEL_HPP
