#ifndef ADVLAB_EVALUATE_HPP
#define ADVLAB_EVALUATE_HPP

#include <cstdint>
#include <span>
#include <vector>

#include "advlab/attack.hpp"
#include "advlab/netmodel.hpp"
#include "advlab/objectives.hpp"
#include "advlab/phantom.hpp"

namespace advlab {

/// The noise grid of the robustness tables.
inline const std::vector<double> kTableEpsLevels{0.0, 0.01, 0.03, 0.05, 0.07, 0.1, 0.2};

struct EvalConfig {
    std::vector<double> eps_levels = kTableEpsLevels;
    int iterations = 100;
    double alpha_ratio = 0.2;   // alpha = eps * alpha_ratio
    Norm norm = Norm::Linf;
    bool last_iterate = false;
    std::uint64_t seed = 0;
    int jobs = 1;
};

/// Per-sample metrics of one noise level.
struct SampleMetrics {
    double error_reg = 0.0;
    double dice_reg = 0.0;
    double dice_seg = 0.0;
};

/// Metrics of a single sample given model outputs on the regression-attacked
/// and segmentation-attacked inputs (the same output for clean evaluation).
SampleMetrics sample_metrics(const ModelOutput& on_reg_input, const ModelOutput& on_seg_input, const Contour& contour,
                             const Mask& mask);

/// Robustness sweep. eps = 0 evaluates clean inputs; eps > 0 attacks every
/// sample twice, with IND_reg (for error_reg, dice_reg) and IND_seg (for dice_seg).
template <typename T>
EvalReport evaluate(const SegRegModel<T>& model, std::span<const PhantomSample> test_set, const EvalConfig& cfg);

} // namespace advlab

#endif // ADVLAB_EVALUATE_HPP
