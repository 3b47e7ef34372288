#include "advlab/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "advlab/dataset_io.hpp"
#include "advlab/parallel.hpp"
#include "advlab/shape_model.hpp"

namespace advlab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::vector<LossMode> kAllModes{LossMode::Standard, LossMode::Rand, LossMode::AdvR, LossMode::AdvS, LossMode::AdvRS};

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& section) {
    if (!j.is_object()) throw std::invalid_argument("config: '" + section + "' must be an object");
    for (const auto& [key, value] : j.items()) {
        if (!allowed.contains(key)) throw std::invalid_argument("config: unknown key '" + key + "' in " + section);
    }
}

template <typename V>
void get(const json& j, const char* key, V& v) {
    if (j.contains(key)) v = j.at(key).get<V>();
}

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::trunc);
        if (!os) throw std::runtime_error("cannot write " + tmp.string());
        os << text;
        if (!os) throw std::runtime_error("failed writing " + tmp.string());
    }
    fs::rename(tmp, path);
}

const EvalRow* find_row(const EvalReport& r, double eps) {
    for (const EvalRow& row : r.rows) {
        if (std::abs(row.eps - eps) < 1e-12) return &row;
    }
    return nullptr;
}

const EvalRow& need_row(const EvalReport& r, double eps, const std::string& who) {
    const EvalRow* row = find_row(r, eps);
    if (!row) throw std::invalid_argument(who + ": sweep has no row for eps " + format_double(eps));
    return *row;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

} // namespace

// ---------------------------------------------------------------- config

PipelineConfig PipelineConfig::desk() {
    return PipelineConfig{};
}

PipelineConfig PipelineConfig::full_scale() {
    PipelineConfig c;
    c.model.image_size = 128;
    c.model.contour_points = 176;
    c.data.virtual_per_ssm = 640000;
    c.train.epochs = 100;
    c.train.batch_size = 64;
    return c;
}

void PipelineConfig::validate() const {
    model.validate();
    train.validate();
    if (data.patients < 2) throw std::invalid_argument("config: data.patients must be >= 2");
    if (!(data.train_fraction > 0.0 && data.train_fraction < 1.0)) throw std::invalid_argument("config: data.train_fraction must be in (0,1)");
    if (data.virtual_per_ssm < 1) throw std::invalid_argument("config: data.virtual_per_ssm must be >= 1");
    if (data.ssm_k.empty()) throw std::invalid_argument("config: data.ssm_k is empty");
    std::set<int> ks;
    for (int k : data.ssm_k) {
        if (k < 1) throw std::invalid_argument("config: ssm_k entries must be >= 1");
        if (!ks.insert(k).second) throw std::invalid_argument("config: duplicate ssm_k entry");
    }
    if (sweep.eps_levels.empty()) throw std::invalid_argument("config: sweep.eps_levels is empty");
    for (double e : sweep.eps_levels) {
        if (!(e >= 0.0)) throw std::invalid_argument("config: sweep noise levels must be >= 0");
    }
    if (sweep.iterations < 0 || !(sweep.alpha_ratio > 0.0) || sweep.test_samples < 0) throw std::invalid_argument("config: invalid sweep settings");
    if (ood.objectives.empty()) throw std::invalid_argument("config: ood.objectives is empty");
    for (ObjectiveKind k : ood.objectives) {
        if (k != ObjectiveKind::OodReg && k != ObjectiveKind::OodSeg) throw std::invalid_argument("config: ood objectives must be ood_reg or ood_seg");
    }
    if (ood.detector_objective != ObjectiveKind::OodReg && ood.detector_objective != ObjectiveKind::OodSeg) {
        throw std::invalid_argument("config: ood.detector_objective must be ood_reg or ood_seg");
    }
    if (!(ood.epsilon >= 0.0) || ood.iterations < 0 || !(ood.alpha > 0.0) || ood.test_samples < 0) throw std::invalid_argument("config: invalid ood settings");
    if (ood.source.kind == OodSourceKind::File && ood.source.path.empty()) throw std::invalid_argument("config: ood.source 'file' needs source_path");
    const VariantId target = VariantId::parse(ood.target_variant);
    if (!ks.contains(target.ssm_k) || target.reconstruction) throw std::invalid_argument("config: ood.target_variant is not a table variant");
    if (!ks.contains(ood.detector_ssm)) throw std::invalid_argument("config: ood.detector_ssm is not in data.ssm_k");
}

json to_json(const PipelineConfig& c) {
    const PhantomConfig& p = c.phantom;
    std::vector<std::string> objectives, modes;
    for (ObjectiveKind k : c.ood.objectives) objectives.push_back(to_string(k));
    for (LossMode m : c.ood.detector_modes) modes.push_back(to_string(m));
    return {{"seed", c.seed},
            {"model", json::parse(model_config_json(c.model))},
            {"phantom",
             {{"semi_axis_x_min", p.semi_axis_x_min},
              {"semi_axis_x_max", p.semi_axis_x_max},
              {"semi_axis_y_min", p.semi_axis_y_min},
              {"semi_axis_y_max", p.semi_axis_y_max},
              {"center_jitter", p.center_jitter},
              {"max_rotation", p.max_rotation},
              {"perturbation", p.perturbation},
              {"disk_intensity", p.disk_intensity},
              {"disk_falloff", p.disk_falloff},
              {"background_intensity", p.background_intensity},
              {"vertebra_intensity", p.vertebra_intensity},
              {"vertebra_gap", p.vertebra_gap},
              {"texture_amplitude", p.texture_amplitude},
              {"noise_sigma", p.noise_sigma}}},
            {"data",
             {{"patients", c.data.patients},
              {"train_fraction", c.data.train_fraction},
              {"virtual_per_ssm", c.data.virtual_per_ssm},
              {"ssm_k", c.data.ssm_k}}},
            {"train",
             {{"epochs", c.train.epochs},
              {"batch_size", c.train.batch_size},
              {"adv_epsilon", c.train.adv_epsilon},
              {"adv_iterations", c.train.adv_iterations},
              {"adv_alpha", c.train.adv_alpha},
              {"rand_amplitude", c.train.rand_amplitude},
              {"step_size", c.train.optimizer.step_size},
              {"beta1", c.train.optimizer.beta1},
              {"beta2", c.train.optimizer.beta2},
              {"optimizer_eps", c.train.optimizer.eps}}},
            {"sweep",
             {{"eps_levels", c.sweep.eps_levels},
              {"iterations", c.sweep.iterations},
              {"alpha_ratio", c.sweep.alpha_ratio},
              {"norm", to_string(c.sweep.norm)},
              {"test_samples", c.sweep.test_samples}}},
            {"ood",
             {{"objectives", objectives},
              {"epsilon", c.ood.epsilon},
              {"iterations", c.ood.iterations},
              {"alpha", c.ood.alpha},
              {"norm", to_string(c.ood.norm)},
              {"source", to_string(c.ood.source.kind)},
              {"source_path", c.ood.source.path.string()},
              {"target_variant", c.ood.target_variant},
              {"detector_ssm", c.ood.detector_ssm},
              {"detector_modes", modes},
              {"detector_objective", to_string(c.ood.detector_objective)},
              {"test_samples", c.ood.test_samples}}}};
}

PipelineConfig pipeline_config_from_json(const json& j, PipelineConfig c) {
    check_keys(j, {"seed", "model", "phantom", "data", "train", "sweep", "ood"}, "config");
    get(j, "seed", c.seed);
    if (j.contains("model")) {
        const json& m = j.at("model");
        check_keys(m, {"image_size", "contour_points", "base_channels", "depth", "groupnorm_groups", "blocks_per_stage", "regression_hidden",
                       "regression_pooling", "reconstruction_head"},
                   "model");
        json merged = json::parse(model_config_json(c.model));
        merged.update(m);
        c.model = model_config_from_json(merged.dump());
    }
    if (j.contains("phantom")) {
        const json& p = j.at("phantom");
        check_keys(p, {"semi_axis_x_min", "semi_axis_x_max", "semi_axis_y_min", "semi_axis_y_max", "center_jitter", "max_rotation", "perturbation",
                       "disk_intensity", "disk_falloff", "background_intensity", "vertebra_intensity", "vertebra_gap", "texture_amplitude",
                       "noise_sigma"},
                   "phantom");
        PhantomConfig& q = c.phantom;
        get(p, "semi_axis_x_min", q.semi_axis_x_min);
        get(p, "semi_axis_x_max", q.semi_axis_x_max);
        get(p, "semi_axis_y_min", q.semi_axis_y_min);
        get(p, "semi_axis_y_max", q.semi_axis_y_max);
        get(p, "center_jitter", q.center_jitter);
        get(p, "max_rotation", q.max_rotation);
        get(p, "perturbation", q.perturbation);
        get(p, "disk_intensity", q.disk_intensity);
        get(p, "disk_falloff", q.disk_falloff);
        get(p, "background_intensity", q.background_intensity);
        get(p, "vertebra_intensity", q.vertebra_intensity);
        get(p, "vertebra_gap", q.vertebra_gap);
        get(p, "texture_amplitude", q.texture_amplitude);
        get(p, "noise_sigma", q.noise_sigma);
    }
    if (j.contains("data")) {
        const json& d = j.at("data");
        check_keys(d, {"patients", "train_fraction", "virtual_per_ssm", "ssm_k"}, "data");
        get(d, "patients", c.data.patients);
        get(d, "train_fraction", c.data.train_fraction);
        get(d, "virtual_per_ssm", c.data.virtual_per_ssm);
        get(d, "ssm_k", c.data.ssm_k);
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        check_keys(t, {"epochs", "batch_size", "adv_epsilon", "adv_iterations", "adv_alpha", "rand_amplitude", "step_size", "beta1", "beta2",
                       "optimizer_eps"},
                   "train");
        get(t, "epochs", c.train.epochs);
        get(t, "batch_size", c.train.batch_size);
        get(t, "adv_epsilon", c.train.adv_epsilon);
        get(t, "adv_iterations", c.train.adv_iterations);
        get(t, "adv_alpha", c.train.adv_alpha);
        get(t, "rand_amplitude", c.train.rand_amplitude);
        get(t, "step_size", c.train.optimizer.step_size);
        get(t, "beta1", c.train.optimizer.beta1);
        get(t, "beta2", c.train.optimizer.beta2);
        get(t, "optimizer_eps", c.train.optimizer.eps);
    }
    if (j.contains("sweep")) {
        const json& s = j.at("sweep");
        check_keys(s, {"eps_levels", "iterations", "alpha_ratio", "norm", "test_samples"}, "sweep");
        get(s, "eps_levels", c.sweep.eps_levels);
        get(s, "iterations", c.sweep.iterations);
        get(s, "alpha_ratio", c.sweep.alpha_ratio);
        if (s.contains("norm")) c.sweep.norm = norm_from_string(s.at("norm").get<std::string>());
        get(s, "test_samples", c.sweep.test_samples);
    }
    if (j.contains("ood")) {
        const json& o = j.at("ood");
        check_keys(o, {"objectives", "epsilon", "iterations", "alpha", "norm", "source", "source_path", "target_variant", "detector_ssm",
                       "detector_modes", "detector_objective", "test_samples"},
                   "ood");
        if (o.contains("objectives")) {
            c.ood.objectives.clear();
            for (const auto& s : o.at("objectives")) c.ood.objectives.push_back(objective_from_string(s.get<std::string>()));
        }
        get(o, "epsilon", c.ood.epsilon);
        get(o, "iterations", c.ood.iterations);
        get(o, "alpha", c.ood.alpha);
        if (o.contains("norm")) c.ood.norm = norm_from_string(o.at("norm").get<std::string>());
        if (o.contains("source")) c.ood.source.kind = ood_source_from_string(o.at("source").get<std::string>());
        if (o.contains("source_path")) c.ood.source.path = o.at("source_path").get<std::string>();
        get(o, "target_variant", c.ood.target_variant);
        get(o, "detector_ssm", c.ood.detector_ssm);
        if (o.contains("detector_modes")) {
            c.ood.detector_modes.clear();
            for (const auto& s : o.at("detector_modes")) c.ood.detector_modes.push_back(loss_mode_from_string(s.get<std::string>()));
        }
        if (o.contains("detector_objective")) c.ood.detector_objective = objective_from_string(o.at("detector_objective").get<std::string>());
        get(o, "test_samples", c.ood.test_samples);
    }
    return c;
}

// ---------------------------------------------------------------- variants

std::string VariantId::name() const {
    return "P" + std::to_string(ssm_k) + "_" + to_string(mode) + (reconstruction ? "_rec" : "");
}

VariantId VariantId::parse(const std::string& s) {
    const auto bad = [&] { return std::invalid_argument("invalid variant '" + s + "' (expected e.g. P10_adv_rs or P10_std_rec)"); };
    if (s.size() < 3 || s[0] != 'P') throw bad();
    const auto us = s.find('_');
    if (us == std::string::npos || us == 1) throw bad();
    VariantId v;
    try {
        std::size_t used = 0;
        v.ssm_k = std::stoi(s.substr(1, us - 1), &used);
        if (used != us - 1 || v.ssm_k < 1) throw bad();
    } catch (const std::logic_error&) {
        throw bad();
    }
    std::string rest = s.substr(us + 1);
    if (rest.size() > 4 && rest.ends_with("_rec")) {
        v.reconstruction = true;
        rest.resize(rest.size() - 4);
    }
    try {
        v.mode = loss_mode_from_string(rest);
    } catch (const std::invalid_argument&) {
        throw bad();
    }
    return v;
}

std::vector<VariantId> table_variants(const PipelineConfig& cfg) {
    std::vector<VariantId> out;
    for (int k : cfg.data.ssm_k) {
        for (LossMode m : kAllModes) out.push_back({k, m, false});
    }
    return out;
}

std::vector<VariantId> detector_variants(const PipelineConfig& cfg) {
    std::vector<VariantId> out;
    for (LossMode m : cfg.ood.detector_modes) out.push_back({cfg.ood.detector_ssm, m, true});
    return out;
}

MissingArtifactError::MissingArtifactError(const std::string& stage, const fs::path& artifact)
    : std::runtime_error("missing " + artifact.string() + "; run the '" + stage + "' stage first"), stage_(stage) {}

// ---------------------------------------------------------------- trends

std::vector<TrendVerdict> check_robustness_trends(const std::map<LossMode, EvalReport>& reports) {
    const auto rep = [&](LossMode m) -> const EvalReport& {
        const auto it = reports.find(m);
        if (it == reports.end()) throw std::invalid_argument("trend check: no sweep for mode " + to_string(m));
        return it->second;
    };
    const auto seg = [&](LossMode m, double eps) { return need_row(rep(m), eps, to_string(m)).dice_seg; };
    const auto reg = [&](LossMode m, double eps) { return need_row(rep(m), eps, to_string(m)).dice_reg; };
    using M = LossMode;
    std::vector<TrendVerdict> out;

    {
        const double c = seg(M::Standard, 0.0), a = seg(M::Standard, 0.03), z = seg(M::Standard, 0.2);
        out.push_back({5, "std collapses under attack", a <= 0.5 * c && z <= 0.05,
                       "dice_seg clean " + fmt(c) + ", eps .03 " + fmt(a) + " (limit " + fmt(0.5 * c) + "), eps .2 " + fmt(z) + " (limit 0.05)"});
    }
    {
        const double c = seg(M::AdvRS, 0.0), a = seg(M::AdvRS, 0.03);
        bool beats = true;
        std::string d = "adv_rs dice_seg clean " + fmt(c) + ", eps .03 " + fmt(a) + " (need " + fmt(0.8 * c) + ");";
        for (double e : {0.03, 0.05, 0.07}) {
            beats = beats && seg(M::AdvRS, e) > seg(M::Standard, e);
            d += " eps " + format_double(e) + ": adv_rs " + fmt(seg(M::AdvRS, e)) + " vs std " + fmt(seg(M::Standard, e)) + ";";
        }
        d.pop_back();
        out.push_back({6, "adversarial training helps", a >= 0.8 * c && beats, d});
    }
    {
        const double r = seg(M::Rand, 0.05), s = seg(M::Standard, 0.05), a = seg(M::AdvRS, 0.05);
        const double diff = std::abs(r - s);
        const bool close = diff < a - s && diff < a - r;
        const double rc = seg(M::Rand, 0.0), r3 = seg(M::Rand, 0.03);
        const bool fails_retention = r3 < 0.8 * rc;
        out.push_back({7, "random noise does not confer robustness", close && fails_retention,
                       "eps .05: |rand-std| " + fmt(diff) + ", adv_rs-std " + fmt(a - s) + ", adv_rs-rand " + fmt(a - r) + "; rand eps .03 " + fmt(r3) +
                           " vs 0.8*clean " + fmt(0.8 * rc)});
    }
    {
        const double a = seg(M::AdvRS, 0.0), s = seg(M::Standard, 0.0);
        out.push_back({8, "clean accuracy does not improve", a <= s + 0.01, "clean dice_seg adv_rs " + fmt(a) + " vs std " + fmt(s) + " + 0.01"});
    }
    {
        const double c = reg(M::AdvS, 0.0), e = reg(M::AdvS, 0.05);
        const double gain_r = seg(M::AdvR, 0.05) - seg(M::Standard, 0.05);
        const double gain_s = seg(M::AdvS, 0.05) - seg(M::Standard, 0.05);
        out.push_back({9, "asymmetric transfer", e >= 0.8 * c && gain_r < gain_s,
                       "adv_s dice_reg clean " + fmt(c) + ", eps .05 " + fmt(e) + " (need " + fmt(0.8 * c) + "); dice_seg gain over std at eps .05: adv_r " +
                           fmt(gain_r) + ", adv_s " + fmt(gain_s)});
    }
    return out;
}

TrendVerdict check_ood_attack(const OodReport& attack, double min_fraction, double dice_threshold) {
    const double f = attack.fraction_at_least(dice_threshold);
    return {10, "OOD attack matches IND outputs (" + to_string(attack.objective) + ")", f >= min_fraction,
            "fraction with dice >= " + format_double(dice_threshold) + ": " + fmt(f) + " (need " + fmt(min_fraction) + "), mean dice " +
                fmt(attack.mean_dice())};
}

TrendVerdict check_detector(double auroc_value, double max_auroc) {
    return {11, "reconstruction detector fails under attack", auroc_value <= max_auroc,
            "AUROC " + fmt(auroc_value) + " (limit " + fmt(max_auroc) + ")"};
}

// ---------------------------------------------------------------- pipeline

Pipeline::Pipeline(fs::path out_dir, PipelineConfig cfg, RuntimeOptions opts) : dir_(std::move(out_dir)), cfg_(std::move(cfg)), opts_(opts) {
    cfg_.validate();
    if (opts_.jobs < 1) throw std::invalid_argument("jobs must be >= 1");
    const json cj = to_json(cfg_);
    if (fs::exists(manifest_path())) {
        const json m = read_json(manifest_path());
        if (m.at("config") != cj) {
            throw std::runtime_error(manifest_path().string() + " was written for a different configuration; use another --out-dir");
        }
        return;
    }
    fs::create_directories(dir_);
    const std::string now = utc_now();
    write_json(manifest_path(), {{"run_id", run_id()},
                                 {"tool_version", kToolVersion},
                                 {"seed", cfg_.seed},
                                 {"config", cj},
                                 {"created", now},
                                 {"updated", now},
                                 {"artifacts", json::object()}});
}

std::string Pipeline::run_id() const {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(to_json(cfg_).dump())));
    return buf;
}

void Pipeline::log(const std::string& msg) const {
    if (opts_.log) *opts_.log << msg << std::endl;
}

void Pipeline::record(const std::string& stage, const json& info) {
    json m = read_json(manifest_path());
    const std::string now = utc_now();
    json entry = info;
    entry["completed"] = now;
    m["artifacts"][stage] = entry;
    m["updated"] = now;
    write_json(manifest_path(), m);
}

fs::path Pipeline::ssm_path(int k) const {
    return dir_ / "ssm" / ("P" + std::to_string(k) + ".json");
}
fs::path Pipeline::virtual_dir(int k) const {
    return dir_ / "data" / ("virtual_P" + std::to_string(k));
}
fs::path Pipeline::checkpoint_path(const VariantId& v) const {
    return dir_ / "models" / (v.name() + ".ckpt");
}
fs::path Pipeline::sweep_csv(const VariantId& v) const {
    return dir_ / "sweeps" / (v.name() + ".csv");
}
fs::path Pipeline::ood_attack_json(ObjectiveKind k) const {
    return dir_ / "ood" / ("attack_" + to_string(k) + ".json");
}
fs::path Pipeline::ood_detect_json(const VariantId& v) const {
    return dir_ / "ood" / ("detect_" + v.name() + ".json");
}

std::vector<PhantomSample> Pipeline::train_phantoms() const {
    if (!fs::exists(phantom_dir() / "manifest.json")) throw MissingArtifactError("gen-data", phantom_dir() / "manifest.json");
    const std::vector<PhantomSample> all = load_samples(phantom_dir());
    const auto idx = load_samples_meta(phantom_dir()).at("split").at("train").get<std::vector<int>>();
    return select(all, idx);
}

std::vector<PhantomSample> Pipeline::test_set(int limit) const {
    if (!fs::exists(phantom_dir() / "manifest.json")) throw MissingArtifactError("gen-data", phantom_dir() / "manifest.json");
    const std::vector<PhantomSample> all = load_samples(phantom_dir());
    auto idx = load_samples_meta(phantom_dir()).at("split").at("test").get<std::vector<int>>();
    if (limit > 0 && static_cast<std::size_t>(limit) < idx.size()) idx.resize(static_cast<std::size_t>(limit));
    return select(all, idx);
}

UNet<float> Pipeline::load_model(const VariantId& v) const {
    const fs::path p = checkpoint_path(v);
    if (!fs::exists(p)) throw MissingArtifactError("train", p);
    return UNet<float>::load(p);
}

EvalReport Pipeline::load_sweep(const VariantId& v) const {
    const fs::path p = sweep_csv(v);
    if (!fs::exists(p)) throw MissingArtifactError("sweep", p);
    EvalReport r = read_eval_csv(p);
    r.model = v.name();
    return r;
}

void Pipeline::gen_data() {
    if (!opts_.force && fs::exists(phantom_dir() / "manifest.json")) {
        log("gen-data: up to date");
        return;
    }
    PhantomConfig pc = cfg_.phantom;
    pc.image_size = cfg_.model.image_size;
    pc.points = cfg_.model.contour_points;
    const int n = cfg_.data.patients;
    log("gen-data: " + std::to_string(n) + " phantoms");
    std::vector<PhantomSample> samples(static_cast<std::size_t>(n));
    parallel_for(samples.size(), opts_.jobs, [&](std::size_t i) {
        Rng rng = make_rng(cfg_.seed, streams::kPhantom, i);
        samples[i] = generate_phantom(rng, pc);
    });
    Rng split_rng = make_rng(cfg_.seed, streams::kSplit);
    const Split split = make_split(n, cfg_.data.train_fraction, split_rng);
    save_samples(phantom_dir(), samples,
                 {{"kind", "phantom"}, {"seed", cfg_.seed}, {"phantom", to_json(cfg_).at("phantom")}, {"split", {{"train", split.train}, {"test", split.test}}}});
    record("gen-data", {{"dir", "data/phantoms"}, {"train", split.train.size()}, {"test", split.test.size()}});
}

void Pipeline::build_ssm() {
    const fs::path coverage_csv = dir_ / "ssm" / "coverage.csv";
    bool done = fs::exists(coverage_csv);
    for (int k : cfg_.data.ssm_k) done = done && fs::exists(ssm_path(k));
    if (!opts_.force && done) {
        log("build-ssm: up to date");
        return;
    }
    const std::vector<PhantomSample> train = train_phantoms();
    std::vector<Contour> shapes;
    for (const PhantomSample& s : train) shapes.push_back(s.contour);
    std::ostringstream csv;
    csv << "k,coverage\n";
    json paths = json::array();
    for (int k : cfg_.data.ssm_k) {
        const ShapeModel ssm = advlab::build_ssm(shapes, k);
        write_json(ssm_path(k), shape_model_to_json(ssm));
        csv << k << ',' << format_double(ssm.coverage.back()) << '\n';
        log("build-ssm: P" + std::to_string(k) + " covers " + fmt(100.0 * ssm.coverage.back()) + "% of shape variance");
        paths.push_back(fs::relative(ssm_path(k), dir_).string());
    }
    write_text(coverage_csv, csv.str());
    record("build-ssm", {{"models", paths}, {"coverage", "ssm/coverage.csv"}});
}

void Pipeline::augment() {
    std::vector<PhantomSample> pool;
    json dirs = json::array();
    for (int k : cfg_.data.ssm_k) {
        dirs.push_back(fs::relative(virtual_dir(k), dir_).string());
        if (!opts_.force && fs::exists(virtual_dir(k) / "manifest.json")) {
            log("augment: P" + std::to_string(k) + " up to date");
            continue;
        }
        if (!fs::exists(ssm_path(k))) throw MissingArtifactError("build-ssm", ssm_path(k));
        const ShapeModel ssm = shape_model_from_json(read_json(ssm_path(k)));
        if (pool.empty()) pool = train_phantoms();
        const int n = cfg_.data.virtual_per_ssm;
        const int size = cfg_.model.image_size;
        log("augment: P" + std::to_string(k) + ", " + std::to_string(n) + " virtual samples");
        std::vector<PhantomSample> out(static_cast<std::size_t>(n));
        std::vector<int> sources(static_cast<std::size_t>(n));
        parallel_for(out.size(), opts_.jobs, [&](std::size_t i) {
            Rng rng = make_rng(cfg_.seed, streams::kVirtual, (static_cast<std::uint64_t>(k) << 40) | i);
            const std::vector<double> coeffs = random_coefficients(rng, k);
            VirtualSample vs = make_virtual_sample(sample_shape(ssm, coeffs), pool, rng);
            out[i].seg = rasterize_contour(vs.shape, size, size);
            out[i].contour = std::move(vs.shape);
            out[i].image = std::move(vs.image);
            sources[i] = vs.source_index;
        });
        save_samples(virtual_dir(k), out, {{"kind", "virtual"}, {"ssm_k", k}, {"seed", cfg_.seed}, {"source_index", sources}});
    }
    record("augment", {{"dirs", dirs}});
}

void Pipeline::train_variant(const VariantId& v) {
    const fs::path ckpt = checkpoint_path(v);
    if (!opts_.force && fs::exists(ckpt)) {
        log("train: " + v.name() + " up to date");
        return;
    }
    if (!fs::exists(virtual_dir(v.ssm_k) / "manifest.json")) throw MissingArtifactError("augment", virtual_dir(v.ssm_k) / "manifest.json");
    if (!fs::exists(ssm_path(v.ssm_k))) throw MissingArtifactError("build-ssm", ssm_path(v.ssm_k));
    const std::vector<PhantomSample> data = load_samples(virtual_dir(v.ssm_k));
    const ShapeModel ssm = shape_model_from_json(read_json(ssm_path(v.ssm_k)));

    ModelConfig mc = cfg_.model;
    mc.reconstruction_head = v.reconstruction;
    UNet<float> net(mc);
    // Every variant starts from the same weights; only the loss differs.
    Rng init = make_rng(cfg_.seed, streams::kInit);
    net.initialize(init);
    net.set_contour_bias(reconstruct_shape(ssm, Eigen::VectorXd::Zero(ssm.k())));

    TrainConfig tc = cfg_.train;
    tc.mode = v.mode;
    tc.seed = cfg_.seed;
    tc.jobs = opts_.jobs;
    log("train: " + v.name() + " on " + std::to_string(data.size()) + " samples, " + std::to_string(tc.epochs) + " epochs");
    TrainLog tl = advlab::train(net, data, tc, [&](const EpochLog& e) {
        log("  " + v.name() + " epoch " + std::to_string(e.epoch) + ": loss " + fmt(e.total) + " (reg " + fmt(e.reg) + ", seg " + fmt(e.seg) +
            ", rec " + fmt(e.rec) + ") " + fmt(e.seconds) + " s");
    });
    tl.variant = v.name();
    tl.checkpoint = fs::relative(ckpt, dir_).string();
    if (tl.diverged) log("train: " + v.name() + " diverged: " + tl.diagnostic);
    fs::create_directories(ckpt.parent_path());
    write_train_log_csv(dir_ / "models" / (v.name() + ".train.csv"), tl);
    write_train_log_json(dir_ / "models" / (v.name() + ".train.json"), tl);
    // Written last: its presence marks the variant as done.
    const fs::path tmp = ckpt.string() + ".tmp";
    net.save(tmp);
    fs::rename(tmp, ckpt);
    record("train:" + v.name(), {{"checkpoint", tl.checkpoint}, {"diverged", tl.diverged}});
}

void Pipeline::train(const std::vector<VariantId>& variants) {
    std::vector<VariantId> todo = variants;
    if (todo.empty()) {
        todo = table_variants(cfg_);
        for (const VariantId& d : detector_variants(cfg_)) todo.push_back(d);
    }
    for (const VariantId& v : todo) {
        if (std::find(cfg_.data.ssm_k.begin(), cfg_.data.ssm_k.end(), v.ssm_k) == cfg_.data.ssm_k.end()) {
            throw std::invalid_argument("variant " + v.name() + ": SSM k=" + std::to_string(v.ssm_k) + " is not configured");
        }
    }
    for (const VariantId& v : todo) train_variant(v);
}

void Pipeline::sweep(const std::vector<VariantId>& variants, const std::optional<std::vector<double>>& eps_override) {
    const std::vector<VariantId> todo = variants.empty() ? table_variants(cfg_) : variants;
    std::vector<PhantomSample> tests;
    for (const VariantId& v : todo) {
        const fs::path csv = sweep_csv(v);
        if (!opts_.force && !eps_override && fs::exists(csv)) {
            log("sweep: " + v.name() + " up to date");
            continue;
        }
        const UNet<float> net = load_model(v);
        if (tests.empty()) tests = test_set(cfg_.sweep.test_samples);
        EvalConfig ec;
        ec.eps_levels = eps_override.value_or(cfg_.sweep.eps_levels);
        ec.iterations = cfg_.sweep.iterations;
        ec.alpha_ratio = cfg_.sweep.alpha_ratio;
        ec.norm = cfg_.sweep.norm;
        ec.seed = cfg_.seed;
        ec.jobs = opts_.jobs;
        log("sweep: " + v.name() + " on " + std::to_string(tests.size()) + " test samples");
        const auto t0 = std::chrono::steady_clock::now();
        EvalReport r = evaluate(net, tests, ec);
        r.model = v.name();
        for (const EvalRow& row : r.rows) {
            log("  eps " + format_double(row.eps) + ": error_reg " + fmt(row.error_reg) + ", dice_reg " + fmt(row.dice_reg) + ", dice_seg " +
                fmt(row.dice_seg));
        }
        fs::create_directories(csv.parent_path());
        write_eval_json(dir_ / "sweeps" / (v.name() + ".json"), r);
        const fs::path tmp = csv.string() + ".tmp";
        write_eval_csv(tmp, r);
        fs::rename(tmp, csv);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        record("sweep:" + v.name(), {{"csv", fs::relative(csv, dir_).string()}, {"eps_levels", ec.eps_levels}, {"seconds", secs}});
    }
}

namespace {

void dump_attacks(const fs::path& dir, const std::vector<AttackResult>& attacks, const AttackConfig& cfg) {
    fs::create_directories(dir);
    for (std::size_t i = 0; i < attacks.size(); ++i) {
        char name[24];
        std::snprintf(name, sizeof name, "%06zu.pgm", i);
        write_adversarial(dir / name, attacks[i], cfg);
    }
}

OodExperimentConfig ood_experiment(const PipelineConfig& cfg, ObjectiveKind objective, int jobs) {
    OodExperimentConfig oc;
    oc.attack = ood_attack_config(objective, cfg.ood.iterations, cfg.ood.alpha);
    oc.attack.epsilon = cfg.ood.epsilon;
    oc.attack.norm = cfg.ood.norm;
    oc.source = cfg.ood.source;
    oc.source.seed = cfg.seed;
    oc.seed = cfg.seed;
    oc.jobs = jobs;
    return oc;
}

} // namespace

void Pipeline::ood_attack() {
    const VariantId target = VariantId::parse(cfg_.ood.target_variant);
    std::ostringstream summary;
    summary << "objective,samples,mean_dice,fraction_dice_ge_0.9,mean_seed_dice\n";
    std::optional<UNet<float>> net;
    std::vector<PhantomSample> tests;
    for (ObjectiveKind obj : cfg_.ood.objectives) {
        const fs::path js = ood_attack_json(obj);
        if (opts_.force || !fs::exists(js)) {
            if (!net) net = load_model(target);
            if (tests.empty()) tests = test_set(cfg_.ood.test_samples);
            log("ood-attack: " + to_string(obj) + " against " + target.name() + ", " + std::to_string(tests.size()) + " samples");
            std::vector<AttackResult> adv;
            const OodExperimentConfig oc = ood_experiment(cfg_, obj, opts_.jobs);
            const OodReport r = run_ood_attack_experiment(*net, tests, oc, &adv);
            log("  mean dice " + fmt(r.mean_dice()) + ", fraction >= 0.9: " + fmt(r.fraction_at_least(0.9)));
            dump_attacks(dir_ / "ood" / ("attack_" + to_string(obj)), adv, oc.attack);
            write_ood_histograms_csv(dir_ / "ood" / ("attack_" + to_string(obj) + "_hist.csv"), r);
            write_ood_report_json(js.string() + ".tmp", r);
            fs::rename(js.string() + ".tmp", js);
        } else {
            log("ood-attack: " + to_string(obj) + " up to date");
        }
        const json j = read_json(js);
        double seed_mean = 0.0;
        const auto sd = j.at("seed_dice").get<std::vector<double>>();
        for (double d : sd) seed_mean += d;
        seed_mean /= static_cast<double>(std::max<std::size_t>(1, sd.size()));
        summary << to_string(obj) << ',' << j.at("samples").get<int>() << ',' << format_double(j.at("mean_dice_vs_target").get<double>()) << ','
                << format_double(j.at("fraction_dice_ge_0.9").get<double>()) << ',' << format_double(seed_mean) << '\n';
    }
    write_text(dir_ / "ood" / "attack_summary.csv", summary.str());
    record("ood-attack", {{"target", target.name()}, {"summary", "ood/attack_summary.csv"}});
}

void Pipeline::ood_detect() {
    std::ostringstream summary;
    summary << "variant,objective,samples,auroc,mean_dice,fraction_dice_ge_0.9\n";
    std::vector<PhantomSample> tests;
    for (const VariantId& v : detector_variants(cfg_)) {
        const fs::path js = ood_detect_json(v);
        if (opts_.force || !fs::exists(js)) {
            const UNet<float> net = load_model(v);
            if (tests.empty()) tests = test_set(cfg_.ood.test_samples);
            log("ood-detect: " + v.name() + ", " + std::to_string(tests.size()) + " samples");
            std::vector<AttackResult> adv;
            const OodExperimentConfig oc = ood_experiment(cfg_, cfg_.ood.detector_objective, opts_.jobs);
            const OodReport r = run_ood_attack_experiment(net, tests, oc, &adv);
            log("  AUROC " + fmt(*r.auroc) + ", mean dice " + fmt(r.mean_dice()));
            dump_attacks(dir_ / "ood" / ("detect_" + v.name()), adv, oc.attack);
            write_ood_histograms_csv(dir_ / "ood" / ("detect_" + v.name() + "_hist.csv"), r);
            write_ood_report_json(js.string() + ".tmp", r);
            fs::rename(js.string() + ".tmp", js);
        } else {
            log("ood-detect: " + v.name() + " up to date");
        }
        const json j = read_json(js);
        summary << v.name() << ',' << j.at("objective").get<std::string>() << ',' << j.at("samples").get<int>() << ','
                << format_double(j.at("auroc").get<double>()) << ',' << format_double(j.at("mean_dice_vs_target").get<double>()) << ','
                << format_double(j.at("fraction_dice_ge_0.9").get<double>()) << '\n';
    }
    write_text(dir_ / "ood" / "detect_summary.csv", summary.str());
    record("ood-detect", {{"summary", "ood/detect_summary.csv"}});
}

std::vector<TrendVerdict> Pipeline::report() {
    const std::vector<VariantId> variants = table_variants(cfg_);
    std::map<std::string, EvalReport> sweeps;
    std::vector<std::string> missing;
    for (const VariantId& v : variants) {
        if (!fs::exists(sweep_csv(v))) {
            missing.push_back(v.name());
            continue;
        }
        EvalReport r = load_sweep(v);
        for (double e : kTableEpsLevels) {
            if (!find_row(r, e)) missing.push_back(v.name() + "@eps=" + format_double(e));
        }
        sweeps.emplace(v.name(), std::move(r));
    }
    if (!missing.empty()) {
        std::string list;
        for (const std::string& m : missing) list += (list.empty() ? "" : ", ") + m;
        throw MissingArtifactError("sweep", "sweep results for " + list);
    }

    const fs::path out = dir_ / "report";
    const std::pair<const char*, double EvalRow::*> tables[] = {
        {"error_reg_table.csv", &EvalRow::error_reg}, {"dice_reg_table.csv", &EvalRow::dice_reg}, {"dice_seg_table.csv", &EvalRow::dice_seg}};
    for (const auto& [file, field] : tables) {
        std::ostringstream os;
        os << "model";
        for (double e : kTableEpsLevels) os << ',' << format_double(e);
        os << '\n';
        for (const VariantId& v : variants) {
            os << v.name();
            for (double e : kTableEpsLevels) os << ',' << format_double(find_row(sweeps.at(v.name()), e)->*field);
            os << '\n';
        }
        write_text(out / file, os.str());
    }

    std::vector<std::pair<std::string, TrendVerdict>> verdicts;
    for (int k : cfg_.data.ssm_k) {
        std::map<LossMode, EvalReport> by_mode;
        for (LossMode m : kAllModes) by_mode.emplace(m, sweeps.at(VariantId{k, m, false}.name()));
        for (TrendVerdict& t : check_robustness_trends(by_mode)) verdicts.emplace_back("P" + std::to_string(k), std::move(t));
    }
    for (ObjectiveKind obj : cfg_.ood.objectives) {
        const fs::path js = ood_attack_json(obj);
        if (!fs::exists(js)) continue;
        const json j = read_json(js);
        OodReport r;
        r.objective = obj;
        r.dice_vs_target = j.at("dice_vs_target").get<std::vector<double>>();
        verdicts.emplace_back(cfg_.ood.target_variant, check_ood_attack(r));
    }
    for (const VariantId& v : detector_variants(cfg_)) {
        const fs::path js = ood_detect_json(v);
        if (!fs::exists(js)) continue;
        verdicts.emplace_back(v.name(), check_detector(read_json(js).at("auroc").get<double>()));
    }

    std::ostringstream os;
    os << "criterion,scope,check,verdict,detail\n";
    std::vector<TrendVerdict> flat;
    for (const auto& [scope, t] : verdicts) {
        os << t.criterion << ',' << scope << ",\"" << t.name << "\"," << (t.passed ? "PASS" : "FAIL") << ",\"" << t.detail << "\"\n";
        log(std::string(t.passed ? "PASS" : "FAIL") + " [" + scope + "] " + t.name + ": " + t.detail);
        flat.push_back(t);
    }
    write_text(out / "trends.csv", os.str());
    record("report", {{"tables", {"report/error_reg_table.csv", "report/dice_reg_table.csv", "report/dice_seg_table.csv"}},
                      {"trends", "report/trends.csv"}});
    return flat;
}

} // namespace advlab
