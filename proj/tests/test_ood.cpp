#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "advlab/ood.hpp"
#include "support/gradient_suite.hpp"
#include "support/oracles.hpp"

using namespace advlab;
namespace fs = std::filesystem;

namespace {

std::vector<double> quantized_scores(Rng& rng, std::size_t n, double shift) {
    std::vector<double> v(n);
    for (double& x : v) x = std::round(uniform(rng, 0.0, 10.0) + shift) / 4.0; // plenty of ties
    return v;
}

ModelConfig small(bool rec) {
    ModelConfig c = oracle::tiny_model_config(rec);
    c.image_size = 16;
    c.contour_points = 8;
    return c;
}

UNet<double> model(bool rec, std::uint64_t seed = 1) {
    UNet<double> net(small(rec));
    Rng rng = make_rng(seed, streams::kInit);
    net.initialize(rng);
    return net;
}

std::vector<PhantomSample> samples(int n) {
    PhantomConfig pc;
    pc.image_size = 16;
    pc.points = 8;
    std::vector<PhantomSample> out;
    for (int i = 0; i < n; ++i) {
        Rng rng = make_rng(2, streams::kPhantom, static_cast<std::uint64_t>(i));
        out.push_back(generate_phantom(rng, pc));
    }
    return out;
}

} // namespace

TEST_CASE("AUROC equals pair counting") {
    Rng rng = make_rng(41, 0);
    for (int t = 0; t < 200; ++t) {
        const auto ind = quantized_scores(rng, 1 + rng() % 40, 0.0);
        const auto ood = quantized_scores(rng, 1 + rng() % 40, uniform(rng, -3.0, 3.0));
        CHECK(std::abs(auroc(ind, ood) - oracle::auroc_pairs(ind, ood)) <= 1e-12);
    }
}

TEST_CASE("AUROC symmetry and invariance") {
    Rng rng = make_rng(42, 0);
    for (int t = 0; t < 50; ++t) {
        const auto a = quantized_scores(rng, 25, 0.0);
        const auto b = quantized_scores(rng, 17, 1.0);
        CHECK(auroc(a, b) == doctest::Approx(1.0 - auroc(b, a)).epsilon(1e-12));
        std::vector<double> ea, eb;
        for (double x : a) ea.push_back(std::exp(2.0 * x) - 7.0);
        for (double x : b) eb.push_back(std::exp(2.0 * x) - 7.0);
        CHECK(auroc(ea, eb) == doctest::Approx(auroc(a, b)).epsilon(1e-12));
    }
    const std::vector<double> lo{0.1, 0.2}, hi{0.3, 0.4, 0.5};
    CHECK(auroc(lo, hi) == 1.0);
    CHECK(auroc(hi, lo) == 0.0);
    CHECK(auroc(lo, lo) == 0.5);
    CHECK_THROWS_AS(auroc({}, hi), std::invalid_argument);
    const std::vector<double> bad{std::numeric_limits<double>::quiet_NaN()};
    CHECK_THROWS_AS(auroc(lo, bad), std::invalid_argument);
}

TEST_CASE("histograms count every value once") {
    const std::vector<double> v{-1.0, 0.0, 0.24, 0.25, 0.5, 0.99, 1.0, 7.0};
    const Histogram h = make_histogram(v, 4, 0.0, 1.0);
    CHECK(h.counts == std::vector<int>{3, 1, 1, 3});
    CHECK_THROWS(make_histogram(v, 0, 0.0, 1.0));
    // Degenerate range: everything lands in one bin.
    const Histogram d = make_histogram(std::vector<double>{0.3, 0.3}, 3, 0.3, 0.3);
    int total = 0;
    for (int c : d.counts) total += c;
    CHECK(total == 2);
}

TEST_CASE("reconstruction score of a constant reconstruction") {
    UNet<double> net = model(true);
    Tensor<double>& w = net.params().at("rec.w");
    std::fill(w.data(), w.data() + w.size(), 0.0);
    net.params().at("rec.b")[0] = 0.4;
    const double r = 1.0 / (1.0 + std::exp(-0.4));
    Rng rng = make_rng(43, 0);
    const Image x = oracle::random_image(rng, 16, 16);
    double expect = 0.0;
    for (double p : x.pixels) expect += std::abs(r - p) / 256.0;
    CHECK(ood_score(net, x) == doctest::Approx(expect).epsilon(1e-12));
    CHECK_THROWS_AS(ood_score(model(false), x), std::invalid_argument);
}

TEST_CASE("OOD sources are deterministic and in range") {
    for (OodSourceKind k : {OodSourceKind::UniformNoise, OodSourceKind::Blobs, OodSourceKind::Checkerboard}) {
        OodSource src;
        src.kind = k;
        src.seed = 5;
        const Image a = src.generate(24, 3), b = src.generate(24, 3), c = src.generate(24, 4);
        CHECK(a == b);
        CHECK_FALSE(a == c);
        CHECK(a.height == 24);
        for (double v : a.pixels) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        CHECK(ood_source_from_string(to_string(k)) == k);
    }
    CHECK_THROWS(ood_source_from_string("lung"));
}

TEST_CASE("file source resizes and validates") {
    const fs::path p = fs::temp_directory_path() / "advlab_ood_seed.pgm";
    Image raw(10, 30, 0.25);
    raw.at(5, 15) = 1.0;
    write_pgm(p, raw);
    OodSource src;
    src.kind = OodSourceKind::File;
    src.path = p;
    const Image img = src.generate(16, 0);
    CHECK(img.height == 16);
    CHECK(img.width == 16);
    CHECK(src.generate(16, 7) == img);
    fs::remove(p);
    CHECK_THROWS(src.generate(16, 0));
}

TEST_CASE("a model that ignores its input is fooled by any seed") {
    UNet<double> net = model(false);
    Tensor<double>& sw = net.params().at("seg.w");
    std::fill(sw.data(), sw.data() + sw.size(), 0.0);
    net.params().at("seg.b")[0] = 1.0;
    Tensor<double>& cw = net.params().at("reg.fc2.w");
    std::fill(cw.data(), cw.data() + cw.size(), 0.0);
    const auto tests = samples(6);
    for (ObjectiveKind k : {ObjectiveKind::OodSeg, ObjectiveKind::OodReg}) {
        OodExperimentConfig cfg;
        cfg.attack = ood_attack_config(k, 3);
        const OodReport r = run_ood_attack_experiment(net, tests, cfg);
        CHECK(r.mean_dice() == 1.0);
        CHECK(r.fraction_at_least(0.9) == 1.0);
        CHECK_FALSE(r.auroc.has_value());
    }
}

TEST_CASE("null attack returns the seed") {
    const UNet<double> net = model(true);
    const auto tests = samples(5);
    OodExperimentConfig cfg;
    cfg.attack = ood_attack_config(ObjectiveKind::OodSeg, 0);
    cfg.attack.random_init = false;
    std::vector<AttackResult> adv;
    const OodReport r = run_ood_attack_experiment(net, tests, cfg, &adv);
    REQUIRE(adv.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(r.linf_to_seed[i] == 0.0);
        CHECK(r.dice_vs_target[i] == r.seed_dice[i]);
        CHECK(adv[i].adversarial == cfg.source.generate(16, i));
    }
    REQUIRE(r.auroc.has_value());
    CHECK(*r.auroc == doctest::Approx(oracle::auroc_pairs(r.ind_scores, r.ood_scores)).epsilon(1e-12));
}

TEST_CASE("attacks stay in the seed ball and match across job counts") {
    const UNet<double> net = model(true, 3);
    const auto tests = samples(4);
    OodExperimentConfig cfg;
    cfg.attack = ood_attack_config(ObjectiveKind::OodSeg, 5);
    const OodReport a = run_ood_attack_experiment(net, tests, cfg);
    cfg.jobs = 3;
    const OodReport b = run_ood_attack_experiment(net, tests, cfg);
    CHECK(a.dice_vs_target == b.dice_vs_target);
    CHECK(a.ood_scores == b.ood_scores);
    for (double d : a.linf_to_seed) CHECK(d <= 0.3 + 1e-12);
}

TEST_CASE("experiment input validation") {
    const UNet<double> net = model(false);
    const auto tests = samples(2);
    OodExperimentConfig cfg;
    cfg.attack.objective = ObjectiveKind::IndSeg;
    CHECK_THROWS_AS(run_ood_attack_experiment(net, tests, cfg), std::invalid_argument);
    cfg.attack = ood_attack_config(ObjectiveKind::OodSeg);
    cfg.attack.mode = AttackMode::Ind;
    cfg.attack.center = BallCenter::DataSample;
    CHECK_THROWS_AS(run_ood_attack_experiment(net, tests, cfg), std::invalid_argument);
    CHECK_THROWS_AS(run_ood_attack_experiment(net, std::span<const PhantomSample>{}, OodExperimentConfig{}), std::invalid_argument);
}

TEST_CASE("report files") {
    const UNet<double> net = model(true);
    const auto tests = samples(3);
    OodExperimentConfig cfg;
    cfg.attack = ood_attack_config(ObjectiveKind::OodReg, 2);
    std::vector<AttackResult> adv;
    const OodReport r = run_ood_attack_experiment(net, tests, cfg, &adv);
    const fs::path dir = fs::temp_directory_path() / "advlab_ood_report";
    fs::remove_all(dir);
    fs::create_directories(dir);
    write_ood_report_json(dir / "r.json", r);
    std::ifstream is(dir / "r.json");
    const nlohmann::json j = nlohmann::json::parse(is);
    CHECK(j.at("objective") == "ood_reg");
    CHECK(j.at("samples") == 3);
    CHECK(j.at("auroc").get<double>() == *r.auroc);
    CHECK(j.at("dice_vs_target").size() == 3);

    write_ood_histograms_csv(dir / "h.csv", r);
    std::ifstream hs(dir / "h.csv");
    std::string header;
    std::getline(hs, header);
    CHECK(header == "histogram,bin_lo,bin_hi,count");

    write_adversarial(dir / "000000.pgm", adv[0], cfg.attack);
    std::ifstream ss(dir / "000000.json");
    const nlohmann::json side = nlohmann::json::parse(ss);
    CHECK(side.at("objective") == "ood_reg");
    CHECK(side.at("objective_trace").size() == 3);
    CHECK(side.at("delta_linf").get<double>() <= 0.3 + 1e-12);
    CHECK(read_pgm(dir / "000000.pgm").height == 16);
    fs::remove_all(dir);
}
