#ifndef ADVLAB_PIPELINE_HPP
#define ADVLAB_PIPELINE_HPP

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "advlab/evaluate.hpp"
#include "advlab/netmodel.hpp"
#include "advlab/ood.hpp"
#include "advlab/phantom.hpp"
#include "advlab/trainer.hpp"

namespace advlab {

inline constexpr const char* kToolVersion = "0.1.0";

struct DataConfig {
    int patients = 200;
    double train_fraction = 0.8;
    int virtual_per_ssm = 2000;
    std::vector<int> ssm_k{3, 5, 10};
};

struct SweepConfig {
    std::vector<double> eps_levels = kTableEpsLevels;
    int iterations = 100;
    double alpha_ratio = 0.2;
    Norm norm = Norm::Linf;
    int test_samples = 0; // 0: whole test split
};

struct OodStageConfig {
    std::vector<ObjectiveKind> objectives{ObjectiveKind::OodSeg, ObjectiveKind::OodReg};
    double epsilon = 0.3;
    int iterations = 100;
    double alpha = 0.01;
    Norm norm = Norm::Linf;
    OodSource source;            // seed is taken from the run seed
    std::string target_variant = "P10_std";
    int detector_ssm = 10;
    std::vector<LossMode> detector_modes{LossMode::Standard, LossMode::AdvRS};
    ObjectiveKind detector_objective = ObjectiveKind::OodSeg;
    int test_samples = 0;
};

/// Everything that determines the outputs of a run. Job counts are not part
/// of it: results do not depend on them.
struct PipelineConfig {
    std::uint64_t seed = 0;
    ModelConfig model;
    PhantomConfig phantom; // image_size/points follow the model
    DataConfig data;
    TrainConfig train;
    SweepConfig sweep;
    OodStageConfig ood;

    static PipelineConfig desk();
    /// 128x128 images, 176 contour points, 640k virtual shapes, 100 epochs, batch 64.
    static PipelineConfig full_scale();
    void validate() const;
};

nlohmann::json to_json(const PipelineConfig& cfg);
/// Overrides fields of `base` with those present in `j`; unknown keys throw.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j, PipelineConfig base = PipelineConfig::desk());

/// A model variant "P<k>_<mode>", or "P<k>_<mode>_rec" for the detectors
/// that carry a reconstruction head.
struct VariantId {
    int ssm_k = 10;
    LossMode mode = LossMode::Standard;
    bool reconstruction = false;

    std::string name() const;
    static VariantId parse(const std::string& s);
    friend bool operator==(const VariantId&, const VariantId&) = default;
};

/// The |ssm_k| x 5 table variants, in table order.
std::vector<VariantId> table_variants(const PipelineConfig& cfg);
std::vector<VariantId> detector_variants(const PipelineConfig& cfg);

/// A stage needs an artifact that an earlier stage has not produced.
class MissingArtifactError : public std::runtime_error {
public:
    MissingArtifactError(const std::string& stage, const std::filesystem::path& artifact);
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

struct RuntimeOptions {
    int jobs = 1;
    bool force = false;     // recompute artifacts that already exist
    std::ostream* log = nullptr;
};

struct TrendVerdict {
    int criterion = 0;
    std::string name;
    bool passed = false;
    std::string detail;
};

/// Directional checks on the five sweep reports of one SSM. Reports are keyed
/// by loss mode and must contain eps 0, 0.03, 0.05, 0.07 and 0.2.
std::vector<TrendVerdict> check_robustness_trends(const std::map<LossMode, EvalReport>& reports);
TrendVerdict check_ood_attack(const OodReport& attack, double min_fraction = 0.8, double dice_threshold = 0.9);
TrendVerdict check_detector(double auroc, double max_auroc = 0.6);

/// Output directory of one run. The constructor writes (or validates) the run
/// manifest before anything else happens; a directory holding a manifest with
/// a different configuration is rejected.
class Pipeline {
public:
    Pipeline(std::filesystem::path out_dir, PipelineConfig cfg, RuntimeOptions opts = {});

    const PipelineConfig& config() const { return cfg_; }
    const std::filesystem::path& out_dir() const { return dir_; }
    std::string run_id() const;

    void gen_data();
    void build_ssm();
    void augment();
    /// Empty list: every table and detector variant.
    void train(const std::vector<VariantId>& variants = {});
    /// eps_override replaces the configured noise grid for this call only.
    void sweep(const std::vector<VariantId>& variants = {}, const std::optional<std::vector<double>>& eps_override = {});
    void ood_attack();
    void ood_detect();
    /// Writes the tables and trend verdicts; throws if a table cell is missing.
    std::vector<TrendVerdict> report();

    // Artifact locations.
    std::filesystem::path manifest_path() const { return dir_ / "manifest.json"; }
    std::filesystem::path phantom_dir() const { return dir_ / "data" / "phantoms"; }
    std::filesystem::path ssm_path(int k) const;
    std::filesystem::path virtual_dir(int k) const;
    std::filesystem::path checkpoint_path(const VariantId& v) const;
    std::filesystem::path sweep_csv(const VariantId& v) const;
    std::filesystem::path ood_attack_json(ObjectiveKind k) const;
    std::filesystem::path ood_detect_json(const VariantId& v) const;

    /// Test split of the phantom corpus, limited to `limit` samples (0: all).
    std::vector<PhantomSample> test_set(int limit) const;
    UNet<float> load_model(const VariantId& v) const;
    EvalReport load_sweep(const VariantId& v) const;

private:
    void log(const std::string& msg) const;
    void record(const std::string& stage, const nlohmann::json& info);
    std::vector<PhantomSample> train_phantoms() const;
    void train_variant(const VariantId& v);

    std::filesystem::path dir_;
    PipelineConfig cfg_;
    RuntimeOptions opts_;
};

} // namespace advlab

#endif // ADVLAB_PIPELINE_HPP
