#ifndef ADVLAB_OOD_HPP
#define ADVLAB_OOD_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "advlab/attack.hpp"
#include "advlab/netmodel.hpp"
#include "advlab/phantom.hpp"

namespace advlab {

enum class OodSourceKind { UniformNoise, Blobs, Checkerboard, File };

std::string to_string(OodSourceKind k); // "noise", "blobs", "checkerboard", "file"
OodSourceKind ood_source_from_string(const std::string& s);

/// Seed images for OOD attacks: procedural patterns or a grayscale file,
/// always returned at the model's input size with values in [0,1].
struct OodSource {
    OodSourceKind kind = OodSourceKind::Blobs;
    std::filesystem::path path; // File only
    std::uint64_t seed = 0;

    Image generate(int size, std::uint64_t index) const;
};

/// Mean absolute reconstruction error of x. Requires a reconstruction head.
template <typename T>
double ood_score(const SegRegModel<T>& model, const Image& x);

/// P(ood > ind) + 0.5 P(ood == ind) over all pairs; OOD is the positive class.
double auroc(std::span<const double> ind_scores, std::span<const double> ood_scores);

struct Histogram {
    double lo = 0.0, hi = 1.0;
    std::vector<int> counts;
};

/// Equal-width bins over [lo, hi]; values outside are clamped into the end bins.
Histogram make_histogram(std::span<const double> values, int bins, double lo, double hi);

struct OodExperimentConfig {
    AttackConfig attack = ood_attack_config(ObjectiveKind::OodSeg);
    OodSource source;
    int jobs = 1;
    std::uint64_t seed = 0;
    int dice_bins = 32;
    int error_bins = 32;
};

struct OodReport {
    ObjectiveKind objective = ObjectiveKind::OodSeg;
    std::vector<double> dice_vs_target;  // per test sample
    std::vector<double> seed_dice;       // same, for the unattacked seed image
    std::vector<double> linf_to_seed;
    std::vector<double> ind_scores;      // empty without a reconstruction head
    std::vector<double> ood_scores;
    Histogram dice_histogram;
    Histogram ind_score_histogram;
    Histogram ood_score_histogram;
    std::optional<double> auroc;

    double fraction_at_least(double threshold) const;
    double mean_dice() const;
};

/// For every test sample: record clean outputs on x, attack the OOD seed so
/// the outputs match them, and compare (contour Dice for OOD_reg, mask Dice
/// for OOD_seg). Models with a reconstruction head also get scores and AUROC.
template <typename T>
OodReport run_ood_attack_experiment(const SegRegModel<T>& model, std::span<const PhantomSample> test_set, const OodExperimentConfig& cfg,
                                    std::vector<AttackResult>* attacks = nullptr);

void write_ood_report_json(const std::filesystem::path& path, const OodReport& r);
/// Long format "histogram,bin_lo,bin_hi,count" for the dice, ind_score and
/// ood_score histograms. The two score histograms share one data-driven range.
void write_ood_histograms_csv(const std::filesystem::path& path, const OodReport& r);

} // namespace advlab

#endif // ADVLAB_OOD_HPP
