// advlab: command-line driver for the experiment pipeline.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "advlab/dataset_io.hpp"
#include "advlab/pipeline.hpp"

namespace fs = std::filesystem;
using namespace advlab;

namespace {

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    int jobs = 1;
    std::string out_dir = "run";
    bool full_scale = false;
    bool force = false;
    std::vector<std::string> variants;
    std::vector<double> eps_list;
    bool strict = false;
};

PipelineConfig resolve_config(const Options& o) {
    const PipelineConfig base = o.full_scale ? PipelineConfig::full_scale() : PipelineConfig::desk();
    PipelineConfig cfg = base;
    const fs::path manifest = fs::path(o.out_dir) / "manifest.json";
    if (!o.config.empty()) {
        nlohmann::json j = read_json(o.config);
        // A run manifest is accepted as well: its config section is used.
        if (j.contains("run_id") && j.contains("config")) j = j.at("config");
        cfg = pipeline_config_from_json(j, base);
    } else if (fs::exists(manifest)) {
        cfg = pipeline_config_from_json(read_json(manifest).at("config"), base);
    }
    if (o.seed) cfg.seed = *o.seed;
    return cfg;
}

std::vector<VariantId> parse_variants(const std::vector<std::string>& names) {
    std::vector<VariantId> out;
    for (const std::string& n : names) out.push_back(VariantId::parse(n));
    return out;
}

void add_common(CLI::App* sub, Options& o) {
    sub->add_option("--config", o.config, "JSON config file (or a run manifest)")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "master seed (overrides the config)");
    sub->add_option("--jobs", o.jobs, "worker threads; results do not depend on it")->check(CLI::PositiveNumber);
    sub->add_option("--out-dir", o.out_dir, "run directory")->capture_default_str();
    sub->add_flag("--paper-scale", o.full_scale, "start from the full-scale settings (128x128, 176 points, 640k shapes, 100 epochs, batch 64)");
    sub->add_flag("--force", o.force, "recompute artifacts that already exist");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adversarial robustness experiments for joint shape regression and segmentation"};
    app.require_subcommand(1);
    Options o;

    struct Stage {
        const char* name;
        const char* help;
    };
    const Stage stages[] = {
        {"gen-data", "generate the phantom corpus and its train/test split"},
        {"build-ssm", "build the shape models and coverage report"},
        {"augment", "generate virtual training sets, one per shape model"},
        {"train", "train model variants (default: all)"},
        {"sweep", "robustness sweep of model variants over the noise grid"},
        {"ood-attack", "OOD adversarial attacks against the target variant"},
        {"ood-detect", "reconstruction-based OOD detection under attack"},
        {"report", "summary tables and trend verdicts"},
        {"run", "every stage in order"},
    };
    for (const Stage& s : stages) {
        CLI::App* sub = app.add_subcommand(s.name, s.help);
        add_common(sub, o);
        const std::string name = s.name;
        if (name == "train" || name == "sweep" || name == "run") {
            sub->add_option("--variant", o.variants, "variant name such as P10_adv_rs or P10_std_rec (repeatable)");
        }
        if (name == "sweep") sub->add_option("--eps-list", o.eps_list, "noise levels for this call, e.g. 0,0.03,0.05")->delimiter(',');
        if (name == "report" || name == "run") sub->add_flag("--strict", o.strict, "exit with status 4 if any trend check fails");
    }

    CLI11_PARSE(app, argc, argv);
    const std::string cmd = app.get_subcommands().front()->get_name();

    try {
        RuntimeOptions ro;
        ro.jobs = o.jobs;
        ro.force = o.force;
        ro.log = &std::cerr;
        Pipeline p(o.out_dir, resolve_config(o), ro);
        const auto variants = parse_variants(o.variants);
        std::optional<std::vector<double>> eps;
        if (!o.eps_list.empty()) eps = o.eps_list;

        bool all_pass = true;
        const auto do_report = [&] {
            for (const TrendVerdict& t : p.report()) all_pass = all_pass && t.passed;
        };
        if (cmd == "gen-data") p.gen_data();
        else if (cmd == "build-ssm") p.build_ssm();
        else if (cmd == "augment") p.augment();
        else if (cmd == "train") p.train(variants);
        else if (cmd == "sweep") p.sweep(variants, eps);
        else if (cmd == "ood-attack") p.ood_attack();
        else if (cmd == "ood-detect") p.ood_detect();
        else if (cmd == "report") do_report();
        else if (cmd == "run") {
            p.gen_data();
            p.build_ssm();
            p.augment();
            p.train(variants);
            p.sweep(variants);
            p.ood_attack();
            p.ood_detect();
            do_report();
        }
        if (o.strict && !all_pass) return 4;
    } catch (const MissingArtifactError& e) {
        std::cerr << "advlab " << cmd << ": " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "advlab " << cmd << ": error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
