#include "advlab/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "advlab/attack.hpp"
#include "advlab/ops.hpp"
#include "advlab/parallel.hpp"

namespace advlab {

template <typename T>
void adamax_update(std::span<T> theta, std::span<const T> grad, std::span<T> m, std::span<T> u, long long t, const AdamaxConfig& cfg) {
    if (grad.size() != theta.size() || m.size() != theta.size() || u.size() != theta.size()) {
        throw std::invalid_argument("adamax_update: size mismatch");
    }
    if (t < 1) throw std::invalid_argument("adamax_update: step count starts at 1");
    const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2), eps = static_cast<T>(cfg.eps);
    const T lr = static_cast<T>(cfg.step_size / (1.0 - std::pow(cfg.beta1, static_cast<double>(t))));
    for (std::size_t i = 0; i < theta.size(); ++i) {
        m[i] = b1 * m[i] + (T{1} - b1) * grad[i];
        u[i] = std::max(b2 * u[i], std::abs(grad[i]));
        theta[i] -= lr * m[i] / (u[i] + eps);
    }
}

template <typename T>
void Adamax<T>::step(ParamStore<T>& params, const std::vector<Tensor<T>>& grads) {
    if (static_cast<int>(grads.size()) != params.size()) throw std::invalid_argument("Adamax::step: one gradient per parameter expected");
    if (m_.empty()) {
        for (const auto& e : params) {
            m_.emplace_back(e.value.shape());
            u_.emplace_back(e.value.shape());
        }
    }
    ++t_;
    for (int i = 0; i < params.size(); ++i) {
        const auto k = static_cast<std::size_t>(i);
        if (grads[k].shape() != params[i].value.shape()) {
            throw std::invalid_argument("Adamax::step: gradient shape mismatch for " + params[i].name);
        }
        adamax_update<T>(params[i].value.values(), grads[k].values(), m_[k].values(), u_[k].values(), t_, cfg_);
    }
}

template class Adamax<float>;
template class Adamax<double>;
template void adamax_update<float>(std::span<float>, std::span<const float>, std::span<float>, std::span<float>, long long, const AdamaxConfig&);
template void adamax_update<double>(std::span<double>, std::span<const double>, std::span<double>, std::span<double>, long long,
                                    const AdamaxConfig&);

void TrainConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (adv_epsilon < 0.0 || adv_iterations < 0 || !(adv_alpha > 0.0)) throw std::invalid_argument("train: invalid adversarial settings");
    if (rand_amplitude < 0.0) throw std::invalid_argument("train: rand_amplitude must be >= 0");
}

std::vector<double> mode_weights(LossMode mode) {
    switch (mode) {
    case LossMode::Standard: return {1.0};
    case LossMode::Rand:
    case LossMode::AdvR:
    case LossMode::AdvS: return {0.5, 0.5};
    case LossMode::AdvRS: return {0.5, 0.25, 0.25};
    }
    throw std::invalid_argument("mode_weights: unknown mode");
}

namespace {

struct SampleResult {
    std::vector<double> losses; // per stacked input
    StandardLoss clean_terms;
    bool finite = true;
};

// Inputs stacked for one sample, in the order of mode_weights().
template <typename T>
std::vector<Image> perturbed_inputs(const UNet<T>& model, const PhantomSample& s, const TrainConfig& cfg, std::uint64_t index) {
    std::vector<Image> in{s.image};
    auto attack = [&](ObjectiveKind kind, std::uint64_t sub) {
        AttackConfig ac;
        ac.epsilon = cfg.adv_epsilon;
        ac.iterations = cfg.adv_iterations;
        ac.alpha = cfg.adv_alpha;
        ac.objective = kind;
        Rng rng = make_rng(cfg.seed, streams::kTrainAttack, index * 2 + sub);
        return run_model_attack(model, s.image, s.contour, s.seg, s.image, ac, rng).adversarial;
    };
    switch (cfg.mode) {
    case LossMode::Standard: break;
    case LossMode::Rand: {
        Rng rng = make_rng(cfg.seed, streams::kTrainNoise, index);
        Image noisy = s.image;
        for (double& v : noisy.pixels) {
            if (cfg.rand_amplitude > 0.0) v += uniform(rng, -cfg.rand_amplitude, cfg.rand_amplitude);
        }
        in.push_back(clamp01(std::move(noisy)));
        break;
    }
    case LossMode::AdvR: in.push_back(attack(ObjectiveKind::IndReg, 0)); break;
    case LossMode::AdvS: in.push_back(attack(ObjectiveKind::IndSeg, 1)); break;
    case LossMode::AdvRS:
        in.push_back(attack(ObjectiveKind::IndReg, 0));
        in.push_back(attack(ObjectiveKind::IndSeg, 1));
        break;
    }
    return in;
}

template <typename T>
SampleResult sample_step(const UNet<T>& model, const PhantomSample& s, const TrainConfig& cfg, std::uint64_t index, double scale,
                         std::vector<Tensor<T>>* grads) {
    const std::vector<Image> inputs = perturbed_inputs(model, s, cfg, index);
    const std::vector<double> w = mode_weights(cfg.mode);
    const int k = static_cast<int>(inputs.size());

    std::vector<Contour> contours(inputs.size(), s.contour);
    std::vector<Mask> masks(inputs.size(), s.seg);
    // Reconstruction targets are the (possibly perturbed) inputs themselves.
    const TargetTensors<T> t = make_targets<T>(contours, masks, inputs);

    Graph<T> g;
    const Var x = g.constant(images_to_tensor<T>(inputs, model.config().image_size));
    std::vector<Var> pv;
    const ModelVars mv = model.apply_trainable(g, x, pv);
    const LossTerms<T> lt = standard_loss(g, mv, t);

    Tensor<T> wt({1, k});
    for (int i = 0; i < k; ++i) wt[static_cast<std::size_t>(i)] = static_cast<T>(w[static_cast<std::size_t>(i)] * scale);
    const Var objective = ops::dot_per_sample(g, ops::reshape(g, lt.total, {1, k}), wt);

    SampleResult r;
    const Tensor<T>& tot = g.value(lt.total);
    for (int i = 0; i < k; ++i) r.losses.push_back(static_cast<double>(tot[static_cast<std::size_t>(i)]));
    r.clean_terms.total = r.losses[0];
    r.clean_terms.reg = static_cast<double>(g.value(lt.reg)[0]);
    r.clean_terms.seg = static_cast<double>(g.value(lt.seg)[0]);
    if (lt.rec.valid()) r.clean_terms.rec = static_cast<double>(g.value(lt.rec)[0]);
    r.finite = std::all_of(r.losses.begin(), r.losses.end(), [](double v) { return std::isfinite(v); });
    if (grads && r.finite) {
        g.backward(objective);
        grads->clear();
        for (const Var& p : pv) grads->push_back(g.grad(p));
    }
    return r;
}

} // namespace

template <typename T>
BatchLoss batch_loss(const UNet<T>& model, std::span<const PhantomSample> batch, const TrainConfig& cfg, std::uint64_t rng_base,
                     std::vector<Tensor<T>>* grads) {
    if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
    const std::size_t n = batch.size();
    const double scale = 1.0 / static_cast<double>(n);
    std::vector<SampleResult> results(n);
    std::vector<std::vector<Tensor<T>>> per_sample(grads && cfg.jobs > 1 ? n : 0);
    if (grads) {
        grads->clear();
        for (const auto& e : model.params()) grads->emplace_back(e.value.shape());
    }
    auto accumulate = [&](const std::vector<Tensor<T>>& g) {
        for (std::size_t p = 0; p < g.size(); ++p) {
            T* dst = (*grads)[p].data();
            const T* src = g[p].data();
            for (std::size_t i = 0; i < g[p].size(); ++i) dst[i] += src[i];
        }
    };
    if (cfg.jobs > 1) {
        parallel_for(n, cfg.jobs, [&](std::size_t i) {
            results[i] = sample_step(model, batch[i], cfg, rng_base + i, scale, grads ? &per_sample[i] : nullptr);
        });
        if (grads) {
            for (std::size_t i = 0; i < n; ++i) {
                if (results[i].finite) accumulate(per_sample[i]);
            }
        }
    } else {
        std::vector<Tensor<T>> g;
        for (std::size_t i = 0; i < n; ++i) {
            results[i] = sample_step(model, batch[i], cfg, rng_base + i, scale, grads ? &g : nullptr);
            if (grads && results[i].finite) accumulate(g);
        }
    }

    const std::vector<double> w = mode_weights(cfg.mode);
    BatchLoss b;
    for (const SampleResult& r : results) {
        for (std::size_t k = 0; k < r.losses.size(); ++k) b.total += w[k] * r.losses[k] * scale;
        b.clean += r.losses[0] * scale;
        if (cfg.mode == LossMode::AdvS) {
            b.perturbed_seg += r.losses[1] * scale;
        } else if (r.losses.size() > 1) {
            b.perturbed_reg += r.losses[1] * scale;
        }
        if (r.losses.size() > 2) b.perturbed_seg += r.losses[2] * scale;
        b.clean_terms.total += r.clean_terms.total * scale;
        b.clean_terms.reg += r.clean_terms.reg * scale;
        b.clean_terms.seg += r.clean_terms.seg * scale;
        b.clean_terms.rec += r.clean_terms.rec * scale;
    }
    return b;
}

template <typename T>
TrainLog train(UNet<T>& model, std::span<const PhantomSample> data, const TrainConfig& cfg, const EpochCallback& on_epoch) {
    cfg.validate();
    if (data.empty()) throw std::invalid_argument("train: empty dataset");
    const std::size_t n = data.size();
    Adamax<T> opt(cfg.optimizer);
    TrainLog log;
    ParamStore<T> last_good = model.params();
    std::vector<std::size_t> order(n);
    std::vector<PhantomSample> batch;
    std::vector<Tensor<T>> grads;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle_rng = make_rng(cfg.seed, streams::kShuffle, static_cast<std::uint64_t>(epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        EpochLog el;
        el.epoch = epoch + 1;
        bool diverged = false;
        for (std::size_t start = 0; start < n && !diverged; start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
            batch.clear();
            for (std::size_t i = start; i < stop; ++i) batch.push_back(data[order[i]]);
            const BatchLoss bl = batch_loss(model, batch, cfg, static_cast<std::uint64_t>(epoch) * n + start, &grads);
            if (!std::isfinite(bl.total)) {
                diverged = true;
                break;
            }
            opt.step(model.params(), grads);
            const double frac = static_cast<double>(stop - start) / static_cast<double>(n);
            el.total += bl.total * frac;
            el.reg += bl.clean_terms.reg * frac;
            el.seg += bl.clean_terms.seg * frac;
            el.rec += bl.clean_terms.rec * frac;
        }
        if (diverged) {
            model.set_params(last_good);
            log.diverged = true;
            log.diagnostic = "loss became non-finite in epoch " + std::to_string(epoch + 1) + "; restored parameters from epoch " +
                             std::to_string(epoch);
            break;
        }
        el.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        last_good = model.params();
        log.epochs.push_back(el);
        if (on_epoch) on_epoch(el);
    }
    return log;
}

template BatchLoss batch_loss<float>(const UNet<float>&, std::span<const PhantomSample>, const TrainConfig&, std::uint64_t,
                                     std::vector<Tensor<float>>*);
template BatchLoss batch_loss<double>(const UNet<double>&, std::span<const PhantomSample>, const TrainConfig&, std::uint64_t,
                                      std::vector<Tensor<double>>*);
template TrainLog train<float>(UNet<float>&, std::span<const PhantomSample>, const TrainConfig&, const EpochCallback&);
template TrainLog train<double>(UNet<double>&, std::span<const PhantomSample>, const TrainConfig&, const EpochCallback&);

void write_train_log_csv(const std::filesystem::path& path, const TrainLog& log) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << "epoch,total,reg,seg,rec\n";
    for (const EpochLog& e : log.epochs) {
        os << e.epoch << ',' << format_double(e.total) << ',' << format_double(e.reg) << ',' << format_double(e.seg) << ','
           << format_double(e.rec) << '\n';
    }
    if (!os) throw std::runtime_error("failed writing " + path.string());
}

void write_train_log_json(const std::filesystem::path& path, const TrainLog& log) {
    nlohmann::json epochs = nlohmann::json::array();
    for (const EpochLog& e : log.epochs) {
        epochs.push_back({{"epoch", e.epoch}, {"total", e.total}, {"reg", e.reg}, {"seg", e.seg}, {"rec", e.rec}, {"seconds", e.seconds}});
    }
    const nlohmann::json j{{"variant", log.variant},   {"epochs", epochs},          {"checkpoint", log.checkpoint},
                           {"diverged", log.diverged}, {"diagnostic", log.diagnostic}};
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << j.dump(2) << '\n';
}

} // namespace advlab
