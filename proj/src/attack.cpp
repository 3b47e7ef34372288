#include "advlab/attack.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace advlab {

std::string to_string(Norm n) {
    return n == Norm::Linf ? "linf" : "l2";
}

Norm norm_from_string(const std::string& s) {
    if (s == "linf") return Norm::Linf;
    if (s == "l2") return Norm::L2;
    throw std::invalid_argument("unknown norm '" + s + "' (expected linf or l2)");
}

void AttackConfig::validate() const {
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw std::invalid_argument("attack: epsilon must be finite and >= 0");
    if (iterations < 0) throw std::invalid_argument("attack: iterations must be >= 0");
    if (!(alpha > 0.0)) throw std::invalid_argument("attack: alpha must be > 0");
    if (mode == AttackMode::Ind && center != BallCenter::DataSample) {
        throw std::invalid_argument("attack: IND mode always centers the ball on the data sample");
    }
}

AttackConfig ood_attack_config(ObjectiveKind objective, int iterations, double alpha) {
    AttackConfig c;
    c.epsilon = 0.3;
    c.norm = Norm::Linf;
    c.iterations = iterations;
    c.alpha = alpha;
    c.objective = objective;
    c.mode = AttackMode::Ood;
    c.center = BallCenter::InitSample;
    return c;
}

double lp_norm(const Image& v, Norm norm) {
    double acc = 0.0;
    for (double p : v.pixels) acc = norm == Norm::Linf ? std::max(acc, std::abs(p)) : acc + p * p;
    return norm == Norm::Linf ? acc : std::sqrt(acc);
}

namespace {

void require_same_size(const Image& a, const Image& b, const char* what) {
    if (a.height != b.height || a.width != b.width) {
        throw std::invalid_argument(std::string(what) + ": image sizes differ (" + std::to_string(a.height) + "x" +
                                    std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" + std::to_string(b.width) + ")");
    }
}

} // namespace

Image project(const Image& v, const Image& center, double eps, Norm norm) {
    require_same_size(v, center, "project");
    Image out = v;
    if (norm == Norm::Linf) {
        for (std::size_t i = 0; i < out.size(); ++i) {
            const double c = center.pixels[i];
            double p = v.pixels[i];
            if (p - c > eps) p = c + eps;
            else if (p - c < -eps) p = c - eps;
            out.pixels[i] = std::clamp(p, 0.0, 1.0);
        }
        return out;
    }
    for (int round = 0; round < 10; ++round) {
        double n2 = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) {
            const double d = out.pixels[i] - center.pixels[i];
            n2 += d * d;
        }
        const double n = std::sqrt(n2);
        bool in_box = true;
        for (double p : out.pixels) in_box = in_box && p >= 0.0 && p <= 1.0;
        if (n <= eps + 1e-9 && in_box) break;
        if (n > eps) {
            const double s = eps / n;
            for (std::size_t i = 0; i < out.size(); ++i) out.pixels[i] = center.pixels[i] + s * (out.pixels[i] - center.pixels[i]);
        }
        for (double& p : out.pixels) p = std::clamp(p, 0.0, 1.0);
    }
    return out;
}

Image step_direction(const Image& g, Norm norm) {
    Image out(g.height, g.width);
    for (double v : g.pixels) {
        if (!std::isfinite(v)) throw std::domain_error("step_direction: non-finite gradient");
    }
    if (norm == Norm::Linf) {
        for (std::size_t i = 0; i < g.size(); ++i) out.pixels[i] = g.pixels[i] > 0.0 ? 1.0 : (g.pixels[i] < 0.0 ? -1.0 : 0.0);
        return out;
    }
    const double n = lp_norm(g, Norm::L2);
    if (n < 1e-12) return out;
    for (std::size_t i = 0; i < g.size(); ++i) out.pixels[i] = g.pixels[i] / n;
    return out;
}

namespace {

template <typename T>
struct Evaluation {
    double value = 0.0;
    Image grad;
};

template <typename T>
Evaluation<T> evaluate(const InputObjective<T>& objective, const Image& img, bool need_grad) {
    Graph<T> g;
    std::vector<T> data(img.pixels.begin(), img.pixels.end());
    const Var x = g.input(Tensor<T>({1, 1, img.height, img.width}, std::move(data)));
    const Var j = objective(g, x);
    if (g.value(j).size() != 1) throw std::invalid_argument("attack objective must return a single value per sample");
    Evaluation<T> e;
    e.value = static_cast<double>(g.value(j)[0]);
    if (need_grad && std::isfinite(e.value)) {
        g.backward(j);
        const Tensor<T> gx = g.grad(x);
        e.grad = Image(img.height, img.width);
        for (std::size_t i = 0; i < gx.size(); ++i) e.grad.pixels[i] = static_cast<double>(gx[i]);
    }
    return e;
}

Image random_start_noise(const Image& like, double eps, Norm norm, Rng& rng) {
    Image xi(like.height, like.width);
    if (eps == 0.0) return xi;
    if (norm == Norm::Linf) {
        for (double& v : xi.pixels) v = uniform(rng, -eps, eps);
        return xi;
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    double n2 = 0.0;
    for (double& v : xi.pixels) {
        v = normal(rng);
        n2 += v * v;
    }
    const double d = static_cast<double>(xi.size());
    const double radius = eps * std::pow(uniform(rng, 0.0, 1.0), 1.0 / d);
    const double s = n2 > 0.0 ? radius / std::sqrt(n2) : 0.0;
    for (double& v : xi.pixels) v *= s;
    return xi;
}

} // namespace

template <typename T>
AttackResult run_attack(const InputObjective<T>& objective, const Image& x, const Image& x_init, const AttackConfig& cfg, Rng& rng) {
    cfg.validate();
    const bool ind = cfg.mode == AttackMode::Ind;
    if (!ind) require_same_size(x, x_init, "run_attack");
    const Image& start = ind ? x : x_init;
    const Image& center = (ind || cfg.center == BallCenter::DataSample) ? x : x_init;

    Image cur = start;
    if (cfg.random_init) {
        const Image xi = random_start_noise(start, cfg.epsilon, cfg.norm, rng);
        for (std::size_t i = 0; i < cur.size(); ++i) cur.pixels[i] += xi.pixels[i];
    }
    cur = project(cur, center, cfg.epsilon, cfg.norm);

    AttackResult r;
    r.objective_trace.reserve(static_cast<std::size_t>(cfg.iterations) + 1);
    Image best = cur;
    double best_value = 0.0;
    for (int k = 0; k <= cfg.iterations; ++k) {
        const bool last = k == cfg.iterations;
        const Evaluation<T> e = evaluate(objective, cur, !last);
        if (!std::isfinite(e.value)) {
            r.aborted = true;
            r.diagnostic = "objective became non-finite at iterate " + std::to_string(k);
            break;
        }
        r.objective_trace.push_back(e.value);
        if (k == 0 || e.value > best_value) {
            best_value = e.value;
            best = cur;
            r.best_iterate = k;
        }
        if (last) break;
        Image dir;
        try {
            dir = step_direction(e.grad, cfg.norm);
        } catch (const std::domain_error&) {
            r.aborted = true;
            r.diagnostic = "gradient became non-finite at iterate " + std::to_string(k);
            break;
        }
        for (std::size_t i = 0; i < cur.size(); ++i) cur.pixels[i] += cfg.alpha * dir.pixels[i];
        cur = project(cur, center, cfg.epsilon, cfg.norm);
    }
    if (r.objective_trace.empty()) {
        // Even the start point failed; fall back to the projected start.
        best = cur;
    }
    if (cfg.last_iterate && !r.aborted) {
        best = cur;
        r.best_iterate = static_cast<int>(r.objective_trace.size()) - 1;
    }
    r.adversarial = std::move(best);
    r.delta = Image(center.height, center.width);
    for (std::size_t i = 0; i < r.delta.size(); ++i) r.delta.pixels[i] = r.adversarial.pixels[i] - center.pixels[i];
    return r;
}

template <typename T>
InputObjective<T> model_objective(const SegRegModel<T>& model, ObjectiveKind kind, const Contour& contour, const Mask& mask) {
    TargetTensors<T> t = make_targets<T>(std::span<const Contour>(&contour, 1), std::span<const Mask>(&mask, 1), {});
    return [&model, kind, t = std::move(t)](Graph<T>& g, Var x) {
        const ModelVars mv = model.apply(g, x);
        return attack_objective(g, kind, mv, t);
    };
}

template <typename T>
AttackResult run_model_attack(const SegRegModel<T>& model, const Image& x, const Contour& contour, const Mask& mask,
                              const Image& x_init, const AttackConfig& cfg, Rng& rng) {
    return run_attack<T>(model_objective(model, cfg.objective, contour, mask), x, x_init, cfg, rng);
}

template AttackResult run_attack<float>(const InputObjective<float>&, const Image&, const Image&, const AttackConfig&, Rng&);
template AttackResult run_attack<double>(const InputObjective<double>&, const Image&, const Image&, const AttackConfig&, Rng&);
template InputObjective<float> model_objective<float>(const SegRegModel<float>&, ObjectiveKind, const Contour&, const Mask&);
template InputObjective<double> model_objective<double>(const SegRegModel<double>&, ObjectiveKind, const Contour&, const Mask&);
template AttackResult run_model_attack<float>(const SegRegModel<float>&, const Image&, const Contour&, const Mask&, const Image&,
                                              const AttackConfig&, Rng&);
template AttackResult run_model_attack<double>(const SegRegModel<double>&, const Image&, const Contour&, const Mask&, const Image&,
                                               const AttackConfig&, Rng&);

void write_adversarial(const std::filesystem::path& pgm, const AttackResult& r, const AttackConfig& cfg) {
    write_pgm(pgm, r.adversarial);
    const nlohmann::json j{{"epsilon", cfg.epsilon},
                           {"norm", to_string(cfg.norm)},
                           {"iterations", cfg.iterations},
                           {"alpha", cfg.alpha},
                           {"objective", to_string(cfg.objective)},
                           {"mode", cfg.mode == AttackMode::Ind ? "ind" : "ood"},
                           {"delta_linf", lp_norm(r.delta, Norm::Linf)},
                           {"delta_l2", lp_norm(r.delta, Norm::L2)},
                           {"best_iterate", r.best_iterate},
                           {"aborted", r.aborted},
                           {"objective_trace", r.objective_trace}};
    std::filesystem::path side = pgm;
    side.replace_extension(".json");
    std::ofstream os(side, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + side.string());
    os << j.dump(2) << '\n';
}

} // namespace advlab
