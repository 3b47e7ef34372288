#include <doctest.h>

#include <limits>

#include "advlab/attack.hpp"
#include "advlab/ops.hpp"
#include "support/attack_checks.hpp"
#include "support/gradient_suite.hpp"
#include "support/oracles.hpp"

using namespace advlab;

namespace {

Image img(int h, int w, std::vector<double> v) {
    Image out(h, w);
    out.pixels = std::move(v);
    return out;
}

InputObjective<double> linear(const Tensor<double>& w) {
    return [&w](Graph<double>& g, Var v) { return ops::dot_per_sample(g, v, w); };
}

} // namespace

TEST_CASE("Linf projection hand cases") {
    const Image c = img(1, 4, {0.5, 0.5, 0.02, 0.99});
    const Image v = img(1, 4, {0.9, 0.45, -0.5, 1.2});
    const Image p = project(v, c, 0.1, Norm::Linf);
    CHECK(p.pixels[0] == doctest::Approx(0.6));
    CHECK(p.pixels[1] == 0.45);
    CHECK(p.pixels[2] == 0.0);
    CHECK(p.pixels[3] == 1.0);
    CHECK(project(c, c, 0.0, Norm::Linf) == c);
}

TEST_CASE("L2 projection hand cases") {
    const Image c(1, 2, 0.5);
    const Image p = project(img(1, 2, {0.8, 0.9}), c, 0.25, Norm::L2);
    CHECK(p.pixels[0] == doctest::Approx(0.5 + 0.25 * 0.6));
    CHECK(p.pixels[1] == doctest::Approx(0.5 + 0.25 * 0.8));
    // Inside both sets: unchanged.
    const Image inside = img(1, 2, {0.55, 0.45});
    CHECK(project(inside, c, 0.25, Norm::L2) == inside);
}

TEST_CASE("projection fuzz: feasible and idempotent") {
    Rng rng = make_rng(31, 0);
    for (int t = 0; t < 10000; ++t) {
        const int h = 1 + static_cast<int>(rng() % 6), w = 1 + static_cast<int>(rng() % 6);
        const Norm norm = t % 2 ? Norm::L2 : Norm::Linf;
        const Image c = oracle::random_image(rng, h, w);
        const Image v = oracle::random_image(rng, h, w, -1.0, 2.0);
        const double eps = uniform(rng, 0.0, norm == Norm::L2 ? 2.0 : 0.7);
        const Image p = project(v, c, eps, norm);
        Image d(h, w);
        for (std::size_t i = 0; i < d.size(); ++i) d.pixels[i] = p.pixels[i] - c.pixels[i];
        CHECK(lp_norm(d, norm) <= eps + 1e-9);
        for (double x : p.pixels) {
            CHECK(x >= 0.0);
            CHECK(x <= 1.0);
        }
        CHECK(max_abs_difference(project(p, c, eps, norm), p) <= 1e-12);
    }
}

TEST_CASE("step directions") {
    const Image g = img(1, 3, {-2.0, 0.0, 3.0});
    CHECK(step_direction(g, Norm::Linf).pixels == std::vector<double>{-1.0, 0.0, 1.0});
    const Image u = step_direction(g, Norm::L2);
    CHECK(lp_norm(u, Norm::L2) == doctest::Approx(1.0));
    CHECK(u.pixels[2] == doctest::Approx(3.0 / std::sqrt(13.0)));
    CHECK(step_direction(Image(1, 3, 1e-14), Norm::L2).pixels == std::vector<double>(3, 0.0));
    CHECK_THROWS_AS(step_direction(img(1, 1, {std::numeric_limits<double>::infinity()}), Norm::Linf), std::domain_error);
}

TEST_CASE("randomized attacks stay feasible") {
    Rng rng = make_rng(32, 0);
    for (int t = 0; t < 300; ++t) {
        const oracle::FuzzOutcome r = oracle::attack_fuzz_trial(rng);
        INFO("trial " << t << ": " << r.detail);
        CHECK(r.ok);
    }
}

TEST_CASE("linear models reach the closed-form optimum") {
    Rng rng = make_rng(33, 0);
    for (int t = 0; t < 100; ++t) CHECK(oracle::linear_oracle_ratio(rng) >= 0.99);
}

TEST_CASE("L2 attack on a linear model moves along w") {
    Rng rng = make_rng(34, 0);
    const Image x(4, 4, 0.5);
    const Tensor<double> w = oracle::random_tensor(rng, {1, 1, 4, 4});
    AttackConfig cfg;
    cfg.norm = Norm::L2;
    cfg.epsilon = 0.2;
    cfg.alpha = 0.05;
    cfg.iterations = 20;
    cfg.random_init = false;
    const AttackResult r = run_attack<double>(linear(w), x, x, cfg, rng);
    double wn = 0;
    for (std::size_t i = 0; i < w.size(); ++i) wn += w[i] * w[i];
    wn = std::sqrt(wn);
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(r.delta.pixels[i] == doctest::Approx(0.2 * w[i] / wn).epsilon(1e-9));
}

TEST_CASE("degenerate budgets") {
    Rng rng = make_rng(35, 0);
    const Image x = oracle::random_image(rng, 5, 5);
    const Tensor<double> w = oracle::random_tensor(rng, {1, 1, 5, 5});
    SUBCASE("eps = 0 returns the input") {
        AttackConfig cfg;
        cfg.epsilon = 0.0;
        cfg.iterations = 10;
        const AttackResult r = run_attack<double>(linear(w), x, x, cfg, rng);
        CHECK(r.adversarial == x);
        CHECK(lp_norm(r.delta, Norm::Linf) == 0.0);
    }
    SUBCASE("N = 0 returns the projected start") {
        AttackConfig cfg;
        cfg.iterations = 0;
        cfg.random_init = false;
        const AttackResult r = run_attack<double>(linear(w), x, x, cfg, rng);
        CHECK(r.adversarial == x);
        CHECK(r.objective_trace.size() == 1);
    }
    SUBCASE("OOD start outside the ball is pulled in") {
        AttackConfig cfg = ood_attack_config(ObjectiveKind::OodSeg, 0);
        cfg.center = BallCenter::DataSample;
        cfg.random_init = false;
        const Image seed(5, 5, 1.0);
        const Image zero(5, 5, 0.0);
        const AttackResult r = run_attack<double>(linear(w), zero, seed, cfg, rng);
        for (double p : r.adversarial.pixels) CHECK(p == doctest::Approx(0.3));
    }
}

TEST_CASE("best iterate is the trace maximum") {
    Rng rng = make_rng(36, 0);
    const Image x = oracle::random_image(rng, 6, 6);
    const Tensor<double> w = oracle::random_tensor(rng, {1, 1, 6, 6});
    const InputObjective<double> j = [&w](Graph<double>& g, Var v) {
        return ops::dot_per_sample(g, ops::sigmoid(g, ops::scale(g, v, 8.0)), w);
    };
    AttackConfig cfg;
    cfg.epsilon = 0.3;
    cfg.alpha = 0.2;
    cfg.iterations = 12;
    const AttackResult r = run_attack<double>(j, x, x, cfg, rng);
    const auto top = std::max_element(r.objective_trace.begin(), r.objective_trace.end());
    CHECK(r.best_iterate == static_cast<int>(top - r.objective_trace.begin()));

    cfg.last_iterate = true;
    Rng again = make_rng(36, 1);
    const AttackResult l = run_attack<double>(j, x, x, cfg, again);
    CHECK(l.best_iterate == cfg.iterations);
}

TEST_CASE("same rng state gives the same attack") {
    Rng rng = make_rng(37, 0);
    const Image x = oracle::random_image(rng, 5, 5);
    const Tensor<double> w = oracle::random_tensor(rng, {1, 1, 5, 5});
    AttackConfig cfg;
    Rng a = make_rng(1, streams::kEvalAttack, 3), b = make_rng(1, streams::kEvalAttack, 3);
    CHECK(run_attack<double>(linear(w), x, x, cfg, a).adversarial == run_attack<double>(linear(w), x, x, cfg, b).adversarial);
}

TEST_CASE("non-finite objectives abort with a diagnostic") {
    Rng rng = make_rng(38, 0);
    const Image x = oracle::random_image(rng, 3, 3);
    Tensor<double> w({1, 1, 3, 3}, std::numeric_limits<double>::quiet_NaN());
    const AttackResult r = run_attack<double>(linear(w), x, x, AttackConfig{}, rng);
    CHECK(r.aborted);
    CHECK_FALSE(r.diagnostic.empty());
    for (double p : r.adversarial.pixels) CHECK(std::isfinite(p));
}

TEST_CASE("config validation") {
    AttackConfig cfg;
    cfg.epsilon = -0.1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = AttackConfig{};
    cfg.alpha = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = AttackConfig{};
    cfg.center = BallCenter::InitSample;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    CHECK(norm_from_string(to_string(Norm::L2)) == Norm::L2);
    CHECK_THROWS(norm_from_string("l1"));
}

TEST_CASE("model attacks raise the objective") {
    const ModelConfig mc = oracle::tiny_model_config(false);
    UNet<double> net(mc);
    Rng init = make_rng(39, streams::kInit);
    net.initialize(init);
    Rng rng = make_rng(40, 0);
    const PhantomSample s = oracle::random_sample(rng, mc.image_size, mc.contour_points);
    for (ObjectiveKind k : {ObjectiveKind::IndReg, ObjectiveKind::IndSeg}) {
        AttackConfig cfg;
        cfg.objective = k;
        cfg.epsilon = 0.1;
        cfg.alpha = 0.02;
        cfg.iterations = 10;
        cfg.random_init = false;
        const AttackResult r = run_model_attack(net, s.image, s.contour, s.seg, s.image, cfg, rng);
        CHECK(r.objective_trace[static_cast<std::size_t>(r.best_iterate)] > r.objective_trace.front());
        CHECK(lp_norm(r.delta, Norm::Linf) <= 0.1 + 1e-12);
    }
}
