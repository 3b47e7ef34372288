#include "advlab/evaluate.hpp"

#include <stdexcept>

#include "advlab/parallel.hpp"

namespace advlab {

SampleMetrics sample_metrics(const ModelOutput& on_reg_input, const ModelOutput& on_seg_input, const Contour& contour,
                             const Mask& mask) {
    SampleMetrics m;
    m.error_reg = contour_error(on_reg_input.contour, contour);
    m.dice_reg = contour_dice(on_reg_input.contour, contour, mask.height, mask.width);
    m.dice_seg = dice(binarize(on_seg_input.segmentation), mask);
    return m;
}

template <typename T>
EvalReport evaluate(const SegRegModel<T>& model, std::span<const PhantomSample> test_set, const EvalConfig& cfg) {
    if (test_set.empty()) throw std::invalid_argument("evaluate: empty test set");
    if (cfg.eps_levels.empty()) throw std::invalid_argument("evaluate: no noise levels");
    const std::size_t n = test_set.size();

    EvalReport report;
    report.k_test = static_cast<int>(n);
    report.i_max = model.config().contour_points;
    for (std::size_t e = 0; e < cfg.eps_levels.size(); ++e) {
        const double eps = cfg.eps_levels[e];
        if (!(eps >= 0.0)) throw std::invalid_argument("evaluate: negative noise level");
        std::vector<SampleMetrics> per(n);
        parallel_for(n, cfg.jobs, [&](std::size_t i) {
            const PhantomSample& s = test_set[i];
            if (eps == 0.0) {
                const ModelOutput out = forward(model, s.image);
                per[i] = sample_metrics(out, out, s.contour, s.seg);
                return;
            }
            AttackConfig ac;
            ac.epsilon = eps;
            ac.norm = cfg.norm;
            ac.iterations = cfg.iterations;
            ac.alpha = eps * cfg.alpha_ratio;
            ac.last_iterate = cfg.last_iterate;
            ac.objective = ObjectiveKind::IndReg;
            Rng rng_reg = make_rng(cfg.seed, streams::kEvalAttack, (e * n + i) * 2);
            const AttackResult reg = run_model_attack(model, s.image, s.contour, s.seg, s.image, ac, rng_reg);
            ac.objective = ObjectiveKind::IndSeg;
            Rng rng_seg = make_rng(cfg.seed, streams::kEvalAttack, (e * n + i) * 2 + 1);
            const AttackResult seg = run_model_attack(model, s.image, s.contour, s.seg, s.image, ac, rng_seg);
            per[i] = sample_metrics(forward(model, reg.adversarial), forward(model, seg.adversarial), s.contour, s.seg);
        });
        EvalRow row;
        row.eps = eps;
        for (const SampleMetrics& m : per) {
            row.error_reg += m.error_reg;
            row.dice_reg += m.dice_reg;
            row.dice_seg += m.dice_seg;
        }
        row.error_reg /= static_cast<double>(n);
        row.dice_reg /= static_cast<double>(n);
        row.dice_seg /= static_cast<double>(n);
        report.rows.push_back(row);
    }
    return report;
}

template EvalReport evaluate<float>(const SegRegModel<float>&, std::span<const PhantomSample>, const EvalConfig&);
template EvalReport evaluate<double>(const SegRegModel<double>&, std::span<const PhantomSample>, const EvalConfig&);

} // namespace advlab
