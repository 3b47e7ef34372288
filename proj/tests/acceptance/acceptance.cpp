// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
// Criteria 5-11 train and attack a desk-scale model family; the run directory
// is kept between invocations (pass --fresh to recompute it).
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "advlab/dataset_io.hpp"
#include "advlab/pipeline.hpp"
#include "advlab/shape_model.hpp"
#include "advlab/tps.hpp"
#include "support/attack_checks.hpp"
#include "support/gradient_suite.hpp"
#include "support/micro_config.hpp"
#include "support/oracles.hpp"

using namespace advlab;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool passed = false;
    std::string detail;
};

std::string num(double v) {
    std::ostringstream os;
    os.precision(4);
    os << v;
    return os.str();
}

class Clock {
public:
    double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count(); }

private:
    std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

Outcome gradient_suite() {
    const Clock clock;
    double worst = 0.0;
    std::string worst_case;
    for (const auto& c : oracle::gradient_cases()) {
        for (std::uint64_t seed = 0; seed < 50; ++seed) {
            Rng rng = make_rng(seed, 200);
            const double err = c.run(rng);
            if (!(err <= worst)) {
                worst = err;
                worst_case = c.name + " seed " + std::to_string(seed);
            }
        }
    }
    const double t = clock.seconds();
    return {worst <= 1e-6 && t < 60.0, std::to_string(oracle::gradient_cases().size()) + " cases x 50 seeds, max rel err " + num(worst) + " (" +
                                           worst_case + "), " + num(t) + " s"};
}

Outcome attack_fuzz() {
    const Clock clock;
    int failures = 0;
    std::string first;
    for (int t = 0; t < 1000; ++t) {
        Rng rng = make_rng(static_cast<std::uint64_t>(t), 201);
        const oracle::FuzzOutcome o = oracle::attack_fuzz_trial(rng);
        if (!o.ok && failures++ == 0) first = "trial " + std::to_string(t) + ": " + o.detail;
    }
    const double t = clock.seconds();
    return {failures == 0 && t < 120.0, "1000 trials, " + std::to_string(failures) + " violations" + (first.empty() ? "" : " [" + first + "]") +
                                            ", " + num(t) + " s"};
}

Outcome linear_oracle() {
    double worst = 1.0;
    for (int t = 0; t < 100; ++t) {
        Rng rng = make_rng(static_cast<std::uint64_t>(t), 202);
        worst = std::min(worst, oracle::linear_oracle_ratio(rng));
    }
    return {worst >= 0.99, "100 trials, min gain ratio " + num(worst)};
}

Outcome geometry_oracles() {
    bool ok = true;
    std::ostringstream why;

    int raster_bad = 0;
    Rng rr = make_rng(1, 203);
    for (int t = 0; t < 200; ++t) {
        const int h = 4 + static_cast<int>(rr() % 29), w = 4 + static_cast<int>(rr() % 29);
        const Contour poly = oracle::random_polygon(rr, 3 + static_cast<int>(rr() % 12), -2.0, std::max(h, w) + 2.0);
        if (!(rasterize_contour(poly, h, w) == oracle::rasterize_reference(poly, h, w))) ++raster_bad;
    }
    ok &= raster_bad == 0;
    why << "raster mismatches " << raster_bad << "/200";

    double tps_worst = 0.0;
    Rng rt = make_rng(2, 203);
    for (int t = 0; t < 100; ++t) {
        const int n = 4 + static_cast<int>(rt() % 60);
        const Contour src = oracle::random_star(rt, n, 32, 32, 8, 20);
        Contour dst = src;
        for (Point& p : dst) {
            p.x += uniform(rt, -3, 3);
            p.y += uniform(rt, -3, 3);
        }
        tps_worst = std::max(tps_worst, tps_max_residual(tps_fit(src, dst), src, dst));
    }
    ok &= tps_worst <= 1e-6;
    why << "; TPS residual " << num(tps_worst);

    double pca_worst = 0.0;
    PhantomConfig pc;
    pc.points = 32;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        std::vector<Contour> shapes;
        for (int i = 0; i < 50; ++i) {
            Rng rng = make_rng(seed, streams::kPhantom, static_cast<std::uint64_t>(i));
            shapes.push_back(resample_by_arc_length(random_disk_shape(rng, pc), pc.points));
        }
        const ShapeModel ssm = build_ssm(shapes, 10);
        const oracle::CovarianceEigen ref = oracle::covariance_eigen(shapes);
        const double scale = std::max(1.0, ref.values(0));
        for (int i = 0; i < 10; ++i) {
            pca_worst = std::max(pca_worst, std::abs(ssm.eigenvalues[static_cast<std::size_t>(i)] - ref.values(i)) / scale);
            pca_worst = std::max(pca_worst, 1.0 - std::abs(ssm.components.col(i).dot(ref.vectors.col(i))));
        }
    }
    ok &= pca_worst <= 1e-8;
    why << "; PCA deviation " << num(pca_worst);

    double auc_worst = 0.0;
    Rng ra = make_rng(3, 203);
    for (int t = 0; t < 200; ++t) {
        std::vector<double> ind(1 + ra() % 60), ood(1 + ra() % 60);
        for (double& v : ind) v = std::round(uniform(ra, 0.0, 8.0)) / 8.0;
        for (double& v : ood) v = std::round(uniform(ra, 0.0, 8.0) + 1.0) / 8.0;
        auc_worst = std::max(auc_worst, std::abs(auroc(ind, ood) - oracle::auroc_pairs(ind, ood)));
    }
    ok &= auc_worst <= 1e-12;
    why << "; AUROC deviation " << num(auc_worst);
    return {ok, why.str()};
}

/// The desk-scale model family behind criteria 5-11.
class DeskRun {
public:
    DeskRun(const fs::path& dir, const fs::path& config, int jobs, std::ostream& log) {
        RuntimeOptions ro;
        ro.jobs = jobs;
        ro.log = &log;
        const PipelineConfig cfg = pipeline_config_from_json(read_json(config));
        pipeline_ = std::make_unique<Pipeline>(dir, cfg, ro);
        Pipeline& p = *pipeline_;
        p.gen_data();
        p.build_ssm();
        p.augment();
        p.train();
        p.sweep();
        p.ood_attack();
        p.ood_detect();
        p.report();
        k_ = cfg.data.ssm_k.back();
        for (LossMode m : {LossMode::Standard, LossMode::Rand, LossMode::AdvR, LossMode::AdvS, LossMode::AdvRS}) {
            sweeps_.emplace(m, p.load_sweep(VariantId{k_, m, false}));
        }
        trends_ = check_robustness_trends(sweeps_);
    }

    const Pipeline& pipeline() const { return *pipeline_; }
    Outcome trend(int criterion, const std::string& extra = {}) const {
        for (const TrendVerdict& t : trends_) {
            if (t.criterion == criterion) return {t.passed, "P" + std::to_string(k_) + ": " + t.detail + extra};
        }
        return {false, "no verdict"};
    }

    double sweep_seconds(LossMode m) const {
        const nlohmann::json man = read_json(pipeline_->manifest_path());
        return man.at("artifacts").at("sweep:" + VariantId{k_, m, false}.name()).at("seconds").get<double>();
    }

private:
    std::unique_ptr<Pipeline> pipeline_;
    int k_ = 10;
    std::map<LossMode, EvalReport> sweeps_;
    std::vector<TrendVerdict> trends_;
};

Outcome ood_attacks(const Pipeline& p) {
    bool ok = true;
    std::string detail;
    for (ObjectiveKind k : p.config().ood.objectives) {
        const nlohmann::json j = read_json(p.ood_attack_json(k));
        OodReport r;
        r.objective = k;
        r.dice_vs_target = j.at("dice_vs_target").get<std::vector<double>>();
        const TrendVerdict v = check_ood_attack(r);
        ok &= v.passed;
        detail += (detail.empty() ? "" : "; ") + to_string(k) + ": " + v.detail;
    }
    return {ok, p.config().ood.target_variant + ", " + detail};
}

Outcome detectors(const Pipeline& p) {
    bool ok = true;
    std::string detail;
    for (const VariantId& v : detector_variants(p.config())) {
        const TrendVerdict t = check_detector(read_json(p.ood_detect_json(v)).at("auroc").get<double>());
        ok &= t.passed;
        detail += (detail.empty() ? "" : "; ") + v.name() + " " + t.detail;
    }
    return {ok, detail};
}

Outcome reproducibility(const fs::path& root) {
    const fs::path a = root / "repro_a", b = root / "repro_b";
    fs::remove_all(a);
    fs::remove_all(b);
    std::ostringstream quiet;
    RuntimeOptions one;
    one.log = &quiet;
    Pipeline pa(a, oracle::micro_config(), one);
    oracle::run_all_stages(pa);
    // The second run is configured from the first run's manifest alone.
    fs::create_directories(b);
    fs::copy_file(pa.manifest_path(), b / "manifest.json");
    RuntimeOptions two = one;
    two.jobs = 2;
    Pipeline pb(b, pipeline_config_from_json(read_json(b / "manifest.json").at("config")), two);
    oracle::run_all_stages(pb);

    const auto ca = oracle::files_with_extension(a, ".csv"), cb = oracle::files_with_extension(b, ".csv");
    int differing = 0;
    std::string first;
    for (const auto& [name, bytes] : ca) {
        const auto it = cb.find(name);
        if (it == cb.end() || it->second != bytes) {
            if (differing++ == 0) first = name;
        }
    }
    const bool ok = differing == 0 && ca.size() == cb.size() && !ca.empty();
    fs::remove_all(a);
    fs::remove_all(b);
    return {ok, std::to_string(ca.size()) + " CSV files compared, " + std::to_string(differing) + " differ" +
                    (first.empty() ? "" : " (first: " + first + ")")};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"advlab acceptance criteria"};
    fs::path work = ADVLAB_ACCEPTANCE_DIR;
    fs::path config = ADVLAB_ACCEPTANCE_CONFIG;
    int jobs = 1;
    bool fresh = false, quick = false;
    app.add_option("--work-dir", work, "directory for the desk-scale run");
    app.add_option("--config", config, "pipeline config of the desk-scale run")->check(CLI::ExistingFile);
    app.add_option("--jobs", jobs)->check(CLI::PositiveNumber);
    app.add_flag("--fresh", fresh, "discard the previous desk-scale run");
    app.add_flag("--quick", quick, "only the criteria that need no trained models (1-4, 12)");
    CLI11_PARSE(app, argc, argv);

    int failed = 0;
    const auto report = [&](int id, const std::string& name, const Outcome& o) {
        std::cout << (o.passed ? "PASS" : "FAIL") << " criterion " << id << " [" << name << "] " << o.detail << std::endl;
        if (!o.passed) ++failed;
    };
    const auto guarded = [&](int id, const std::string& name, const std::function<Outcome()>& f) {
        try {
            report(id, name, f());
        } catch (const std::exception& e) {
            report(id, name, {false, std::string("error: ") + e.what()});
        }
    };

    guarded(1, "gradient suite", gradient_suite);
    guarded(2, "attack feasibility fuzz", attack_fuzz);
    guarded(3, "linear-oracle attack optimality", linear_oracle);
    guarded(4, "geometry oracles", geometry_oracles);

    if (!quick) {
        const fs::path run = work / "desk";
        if (fresh) fs::remove_all(run);
        fs::create_directories(work);
        std::ofstream log(work / "desk.log", std::ios::app);
        std::unique_ptr<DeskRun> desk;
        std::string error;
        try {
            const Clock clock;
            desk = std::make_unique<DeskRun>(run, config, jobs, log);
            std::cout << "desk run ready in " << num(clock.seconds()) << " s (" << run.string() << ")" << std::endl;
        } catch (const std::exception& e) {
            error = e.what();
        }
        const auto trend = [&](int id, const std::string& name, const std::function<Outcome()>& f) {
            if (desk) guarded(id, name, f);
            else report(id, name, {false, "desk run failed: " + error});
        };
        trend(5, "standard training is vulnerable", [&] {
            const double secs = desk->sweep_seconds(LossMode::Standard);
            Outcome o = desk->trend(5, ", sweep " + num(secs) + " s on " + std::to_string(desk->pipeline().config().sweep.test_samples) +
                                           " samples, N=" + std::to_string(desk->pipeline().config().sweep.iterations));
            o.passed &= secs <= 1800.0;
            return o;
        });
        trend(6, "adversarial training helps", [&] { return desk->trend(6); });
        trend(7, "random noise training does not help", [&] { return desk->trend(7); });
        trend(8, "clean accuracy side effect", [&] { return desk->trend(8); });
        trend(9, "asymmetric transfer", [&] { return desk->trend(9); });
        trend(10, "OOD attack success", [&] { return ood_attacks(desk->pipeline()); });
        trend(11, "detector failure under attack", [&] { return detectors(desk->pipeline()); });
    }

    guarded(12, "reproducibility", [&] { return reproducibility(work); });

    std::cout << (failed ? std::to_string(failed) + " criteria failed" : std::string("all criteria passed")) << std::endl;
    return failed ? 1 : 0;
}
