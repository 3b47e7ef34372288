#ifndef ADVLAB_OBJECTIVES_HPP
#define ADVLAB_OBJECTIVES_HPP

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "advlab/geometry.hpp"
#include "advlab/graph.hpp"
#include "advlab/image.hpp"
#include "advlab/netmodel.hpp"

namespace advlab {

inline constexpr double kDiceSmooth = 1e-5;
inline constexpr double kBceClamp = 1e-7;

enum class LossMode { Standard, Rand, AdvR, AdvS, AdvRS };

enum class ObjectiveKind { IndReg, IndSeg, OodReg, OodSeg };

std::string to_string(LossMode m);      // "std", "rand", "adv_r", "adv_s", "adv_rs"
LossMode loss_mode_from_string(const std::string& s);
std::string to_string(ObjectiveKind k); // "ind_reg", "ind_seg", "ood_reg", "ood_seg"
ObjectiveKind objective_from_string(const std::string& s);

/// Ground truth (or recorded clean outputs, for OOD attacks) of one batch.
template <typename T>
struct TargetTensors {
    Tensor<T> contour; // [B, 2P]
    Tensor<T> mask;    // [B, 1, H, W], values in {0,1}
    Tensor<T> image;   // [B, 1, H, W]; only read by the reconstruction loss
};

template <typename T>
TargetTensors<T> make_targets(std::span<const Contour> contours, std::span<const Mask> masks, std::span<const Image> images);

// Per-sample graph losses, each [B].

/// |s_hat - s|_1 / (2P).
template <typename T>
Var reg_loss(Graph<T>& g, Var contour, const Tensor<T>& target);

/// 0.5 (1 - softDice) + 0.5 BCE.
template <typename T>
Var seg_loss(Graph<T>& g, Var seg, const Tensor<T>& mask);

/// Mean absolute pixel error.
template <typename T>
Var rec_loss(Graph<T>& g, Var rec, const Tensor<T>& image);

template <typename T>
struct LossTerms {
    Var total, reg, seg, rec; // rec invalid without a reconstruction head
};

/// L = L_reg + L_seg (+ L_rec when the model reconstructs).
template <typename T>
LossTerms<T> standard_loss(Graph<T>& g, const ModelVars& out, const TargetTensors<T>& t);

/// IND_reg = |s_hat - s|_2^2, IND_seg = 1 - softDice, OOD_reg = -|s_hat - s|_1,
/// OOD_seg = softDice. Returns [B].
template <typename T>
Var attack_objective(Graph<T>& g, ObjectiveKind kind, const ModelVars& out, const TargetTensors<T>& t);

// Plain double-precision evaluations of the same quantities.
double loss_reg(const Contour& pred, const Contour& target);
double loss_seg(const ProbabilityMap& pred, const Mask& target);
double loss_rec(const Image& rec, const Image& x);

struct StandardLoss {
    double total = 0.0, reg = 0.0, seg = 0.0, rec = 0.0;
};
/// `x` is required when `out` carries a reconstruction.
StandardLoss loss_standard(const ModelOutput& out, const Contour& contour, const Mask& mask, const Image* x = nullptr);

double attack_objective_value(ObjectiveKind kind, const ModelOutput& out, const Contour& contour, const Mask& mask);

// Evaluation metrics.

/// Mean Euclidean distance between corresponding points.
double contour_error(const Contour& pred, const Contour& truth);

struct EvalRow {
    double eps = 0.0;
    double error_reg = 0.0;
    double dice_reg = 0.0;
    double dice_seg = 0.0;
};

struct EvalReport {
    std::string model;
    int k_test = 0;
    int i_max = 0;
    std::vector<EvalRow> rows;
};

/// Header "eps,error_reg,dice_reg,dice_seg", one row per noise level.
void write_eval_csv(const std::filesystem::path& path, const EvalReport& r);
EvalReport read_eval_csv(const std::filesystem::path& path);
void write_eval_json(const std::filesystem::path& path, const EvalReport& r);

/// Formats doubles with enough digits to round-trip.
std::string format_double(double v);

} // namespace advlab

#endif // ADVLAB_OBJECTIVES_HPP
