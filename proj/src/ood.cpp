#include "advlab/ood.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "advlab/objectives.hpp"
#include "advlab/parallel.hpp"

namespace advlab {

std::string to_string(OodSourceKind k) {
    switch (k) {
    case OodSourceKind::UniformNoise: return "noise";
    case OodSourceKind::Blobs: return "blobs";
    case OodSourceKind::Checkerboard: return "checkerboard";
    case OodSourceKind::File: return "file";
    }
    throw std::invalid_argument("unknown OOD source kind");
}

OodSourceKind ood_source_from_string(const std::string& s) {
    for (OodSourceKind k : {OodSourceKind::UniformNoise, OodSourceKind::Blobs, OodSourceKind::Checkerboard, OodSourceKind::File}) {
        if (to_string(k) == s) return k;
    }
    throw std::invalid_argument("unknown OOD source '" + s + "' (expected noise, blobs, checkerboard or file)");
}

Image OodSource::generate(int size, std::uint64_t index) const {
    if (size < 1) throw std::invalid_argument("OodSource: size must be positive");
    Rng rng = make_rng(seed, streams::kOodSeed, index);
    Image img(size, size);
    switch (kind) {
    case OodSourceKind::UniformNoise:
        for (double& v : img.pixels) v = uniform(rng, 0.0, 1.0);
        return img;
    case OodSourceKind::Blobs: {
        // Sum of random isotropic Gaussians, rescaled into [0.05, 0.95].
        const int blobs = 4 + static_cast<int>(rng() % 5);
        struct Blob {
            double x, y, sigma, amp;
        };
        std::vector<Blob> bs;
        for (int b = 0; b < blobs; ++b) {
            bs.push_back({uniform(rng, 0.0, size), uniform(rng, 0.0, size), size * uniform(rng, 0.06, 0.25), uniform(rng, -1.0, 1.0)});
        }
        for (int i = 0; i < size; ++i) {
            for (int j = 0; j < size; ++j) {
                double v = 0.0;
                for (const Blob& b : bs) {
                    const double dx = j + 0.5 - b.x, dy = i + 0.5 - b.y;
                    v += b.amp * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
                }
                img.at(i, j) = v;
            }
        }
        const auto [lo, hi] = std::minmax_element(img.pixels.begin(), img.pixels.end());
        const double a = *lo, span = *hi - *lo;
        for (double& v : img.pixels) v = span > 0.0 ? 0.05 + 0.9 * (v - a) / span : 0.5;
        return img;
    }
    case OodSourceKind::Checkerboard: {
        const int cell = 2 + static_cast<int>(rng() % static_cast<std::uint64_t>(std::max(1, size / 4 - 1)));
        const int ox = static_cast<int>(rng() % static_cast<std::uint64_t>(cell));
        const int oy = static_cast<int>(rng() % static_cast<std::uint64_t>(cell));
        const double dark = uniform(rng, 0.0, 0.4), light = uniform(rng, 0.6, 1.0);
        for (int i = 0; i < size; ++i) {
            for (int j = 0; j < size; ++j) {
                const bool odd = (((i + oy) / cell) + ((j + ox) / cell)) % 2 != 0;
                img.at(i, j) = std::clamp((odd ? light : dark) + uniform(rng, -0.03, 0.03), 0.0, 1.0);
            }
        }
        return img;
    }
    case OodSourceKind::File: {
        const Image raw = read_pgm(path);
        return clamp01(raw.height == size && raw.width == size ? raw : resize_bilinear(raw, size, size));
    }
    }
    throw std::invalid_argument("OodSource: unknown kind");
}

template <typename T>
double ood_score(const SegRegModel<T>& model, const Image& x) {
    if (!model.config().reconstruction_head) throw std::invalid_argument("ood_score: model has no reconstruction head");
    const ModelOutput out = forward(model, x);
    return loss_rec(*out.reconstruction, x);
}

double auroc(std::span<const double> ind_scores, std::span<const double> ood_scores) {
    if (ind_scores.empty() || ood_scores.empty()) throw std::invalid_argument("auroc: both score lists must be non-empty");
    // Rank-sum form: sort everything, give tied groups their average rank.
    struct Item {
        double v;
        bool ood;
    };
    std::vector<Item> all;
    all.reserve(ind_scores.size() + ood_scores.size());
    for (double v : ind_scores) all.push_back({v, false});
    for (double v : ood_scores) all.push_back({v, true});
    for (const Item& it : all) {
        if (std::isnan(it.v)) throw std::invalid_argument("auroc: NaN score");
    }
    std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.v < b.v; });
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < all.size();) {
        std::size_t j = i;
        while (j < all.size() && all[j].v == all[i].v) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (std::size_t k = i; k < j; ++k) {
            if (all[k].ood) rank_sum += avg_rank;
        }
        i = j;
    }
    const double m = static_cast<double>(ood_scores.size()), n = static_cast<double>(ind_scores.size());
    return (rank_sum - m * (m + 1.0) / 2.0) / (m * n);
}

Histogram make_histogram(std::span<const double> values, int bins, double lo, double hi) {
    if (bins < 1) throw std::invalid_argument("make_histogram: bins must be >= 1");
    if (!(hi >= lo)) throw std::invalid_argument("make_histogram: hi < lo");
    Histogram h{lo, hi, std::vector<int>(static_cast<std::size_t>(bins), 0)};
    const double width = (hi - lo) / bins;
    for (double v : values) {
        int b = width > 0.0 ? static_cast<int>(std::floor((v - lo) / width)) : 0;
        b = std::clamp(b, 0, bins - 1);
        ++h.counts[static_cast<std::size_t>(b)];
    }
    return h;
}

double OodReport::fraction_at_least(double threshold) const {
    if (dice_vs_target.empty()) return 0.0;
    const auto hits = std::count_if(dice_vs_target.begin(), dice_vs_target.end(), [&](double d) { return d >= threshold; });
    return static_cast<double>(hits) / static_cast<double>(dice_vs_target.size());
}

double OodReport::mean_dice() const {
    if (dice_vs_target.empty()) return 0.0;
    double acc = 0.0;
    for (double d : dice_vs_target) acc += d;
    return acc / static_cast<double>(dice_vs_target.size());
}

namespace {

double output_dice(ObjectiveKind kind, const ModelOutput& a, const ModelOutput& b, int size) {
    if (kind == ObjectiveKind::OodReg) return contour_dice(a.contour, b.contour, size, size);
    return dice(binarize(a.segmentation), binarize(b.segmentation));
}

} // namespace

template <typename T>
OodReport run_ood_attack_experiment(const SegRegModel<T>& model, std::span<const PhantomSample> test_set, const OodExperimentConfig& cfg,
                                    std::vector<AttackResult>* attacks) {
    if (test_set.empty()) throw std::invalid_argument("OOD experiment: empty test set");
    const AttackConfig& ac = cfg.attack;
    if (ac.mode != AttackMode::Ood) throw std::invalid_argument("OOD experiment: attack must run in OOD mode");
    if (ac.objective != ObjectiveKind::OodReg && ac.objective != ObjectiveKind::OodSeg) {
        throw std::invalid_argument("OOD experiment: objective must be ood_reg or ood_seg");
    }
    const int size = model.config().image_size;
    const bool scored = model.config().reconstruction_head;
    const std::size_t n = test_set.size();

    OodReport r;
    r.objective = ac.objective;
    r.dice_vs_target.resize(n);
    r.seed_dice.resize(n);
    r.linf_to_seed.resize(n);
    if (scored) {
        r.ind_scores.resize(n);
        r.ood_scores.resize(n);
    }
    std::vector<AttackResult> outs(attacks ? n : 0);
    parallel_for(n, cfg.jobs, [&](std::size_t i) {
        const PhantomSample& s = test_set[i];
        const ModelOutput clean = forward(model, s.image);
        const Mask target_mask = binarize(clean.segmentation);
        const Image seed = cfg.source.generate(size, i);
        Rng rng = make_rng(cfg.seed, streams::kOodAttack, i);
        const AttackResult res = run_model_attack(model, s.image, clean.contour, target_mask, seed, ac, rng);
        const ModelOutput attacked = forward(model, res.adversarial);
        r.dice_vs_target[i] = output_dice(ac.objective, attacked, clean, size);
        r.seed_dice[i] = output_dice(ac.objective, forward(model, seed), clean, size);
        r.linf_to_seed[i] = max_abs_difference(res.adversarial, seed);
        if (scored) {
            r.ind_scores[i] = loss_rec(*clean.reconstruction, s.image);
            r.ood_scores[i] = loss_rec(*attacked.reconstruction, res.adversarial);
        }
        if (attacks) outs[i] = res;
    });

    r.dice_histogram = make_histogram(r.dice_vs_target, cfg.dice_bins, 0.0, 1.0);
    if (scored) {
        double lo = r.ind_scores.front(), hi = lo;
        for (const auto* v : {&r.ind_scores, &r.ood_scores}) {
            for (double s : *v) {
                lo = std::min(lo, s);
                hi = std::max(hi, s);
            }
        }
        r.ind_score_histogram = make_histogram(r.ind_scores, cfg.error_bins, lo, hi);
        r.ood_score_histogram = make_histogram(r.ood_scores, cfg.error_bins, lo, hi);
        r.auroc = auroc(r.ind_scores, r.ood_scores);
    }
    if (attacks) *attacks = std::move(outs);
    return r;
}

template double ood_score<float>(const SegRegModel<float>&, const Image&);
template double ood_score<double>(const SegRegModel<double>&, const Image&);
template OodReport run_ood_attack_experiment<float>(const SegRegModel<float>&, std::span<const PhantomSample>, const OodExperimentConfig&,
                                                    std::vector<AttackResult>*);
template OodReport run_ood_attack_experiment<double>(const SegRegModel<double>&, std::span<const PhantomSample>, const OodExperimentConfig&,
                                                     std::vector<AttackResult>*);

void write_ood_report_json(const std::filesystem::path& path, const OodReport& r) {
    nlohmann::json j{{"objective", to_string(r.objective)},
                     {"samples", r.dice_vs_target.size()},
                     {"mean_dice_vs_target", r.mean_dice()},
                     {"fraction_dice_ge_0.9", r.fraction_at_least(0.9)},
                     {"dice_vs_target", r.dice_vs_target},
                     {"seed_dice", r.seed_dice},
                     {"linf_to_seed", r.linf_to_seed},
                     {"dice_histogram", {{"lo", r.dice_histogram.lo}, {"hi", r.dice_histogram.hi}, {"counts", r.dice_histogram.counts}}}};
    if (r.auroc) {
        j["auroc"] = *r.auroc;
        j["ind_scores"] = r.ind_scores;
        j["ood_scores"] = r.ood_scores;
    } else {
        j["auroc"] = nullptr;
    }
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << j.dump(2) << '\n';
}

void write_ood_histograms_csv(const std::filesystem::path& path, const OodReport& r) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << "histogram,bin_lo,bin_hi,count\n";
    auto emit = [&](const char* name, const Histogram& h) {
        const std::size_t bins = h.counts.size();
        for (std::size_t b = 0; b < bins; ++b) {
            const double lo = h.lo + (h.hi - h.lo) * static_cast<double>(b) / static_cast<double>(bins);
            const double hi = h.lo + (h.hi - h.lo) * static_cast<double>(b + 1) / static_cast<double>(bins);
            os << name << ',' << format_double(lo) << ',' << format_double(hi) << ',' << h.counts[b] << '\n';
        }
    };
    emit("dice", r.dice_histogram);
    if (r.auroc) {
        emit("ind_score", r.ind_score_histogram);
        emit("ood_score", r.ood_score_histogram);
    }
}

} // namespace advlab
