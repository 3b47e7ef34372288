#ifndef ADVLAB_TRAINER_HPP
#define ADVLAB_TRAINER_HPP

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "advlab/checkpoint.hpp"
#include "advlab/netmodel.hpp"
#include "advlab/objectives.hpp"
#include "advlab/phantom.hpp"

namespace advlab {

struct AdamaxConfig {
    double step_size = 0.002;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// m <- b1 m + (1-b1) g;  u <- max(b2 u, |g|);  theta <- theta - step/(1-b1^t) * m/(u+eps)
/// with t the 1-based step count.
template <typename T>
void adamax_update(std::span<T> theta, std::span<const T> grad, std::span<T> m, std::span<T> u, long long t, const AdamaxConfig& cfg);

template <typename T>
class Adamax {
public:
    explicit Adamax(AdamaxConfig cfg = {}) : cfg_(cfg) {}
    /// grads[i] pairs with params[i]. State is created zeroed on first use.
    void step(ParamStore<T>& params, const std::vector<Tensor<T>>& grads);
    long long steps() const { return t_; }
    const std::vector<Tensor<T>>& first_moment() const { return m_; }
    const std::vector<Tensor<T>>& inf_moment() const { return u_; }

private:
    AdamaxConfig cfg_;
    std::vector<Tensor<T>> m_, u_;
    long long t_ = 0;
};

struct TrainConfig {
    LossMode mode = LossMode::Standard;
    int epochs = 30;
    int batch_size = 16;
    double adv_epsilon = 0.07;
    int adv_iterations = 20;
    double adv_alpha = 0.01;
    double rand_amplitude = 0.07;
    AdamaxConfig optimizer;
    std::uint64_t seed = 0;
    int jobs = 1;

    void validate() const;
};

struct EpochLog {
    int epoch = 0;
    double total = 0.0; // mean batch objective of the mode
    double reg = 0.0;   // clean-input components
    double seg = 0.0;
    double rec = 0.0;
    double seconds = 0.0;
};

struct TrainLog {
    std::string variant;
    std::vector<EpochLog> epochs;
    std::string checkpoint;
    bool diverged = false;
    std::string diagnostic;
};

/// Losses of one batch under a mode, with the clean/adversarial pieces that
/// make up the total reported separately.
struct BatchLoss {
    double total = 0.0;
    double clean = 0.0;     // mean L(x)
    double perturbed_reg = 0.0; // mean L(x_eps^(reg)), or L(x_rand) in Rand mode
    double perturbed_seg = 0.0; // mean L(x_eps^(seg))
    StandardLoss clean_terms;
};

/// Mode weights over the inputs (clean, reg-adversarial / random, seg-adversarial).
std::vector<double> mode_weights(LossMode mode);

/// Batch loss and, when `grads` is given, its parameter gradient. `rng_base`
/// selects the random streams of the perturbations; same base, same inputs.
template <typename T>
BatchLoss batch_loss(const UNet<T>& model, std::span<const PhantomSample> batch, const TrainConfig& cfg, std::uint64_t rng_base,
                     std::vector<Tensor<T>>* grads);

using EpochCallback = std::function<void(const EpochLog&)>;

/// Trains in place. The model must already be initialized. On a non-finite
/// loss the parameters from the end of the last good epoch are restored.
template <typename T>
TrainLog train(UNet<T>& model, std::span<const PhantomSample> data, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// CSV columns epoch,total,reg,seg,rec (no timings, so reruns compare equal).
void write_train_log_csv(const std::filesystem::path& path, const TrainLog& log);
void write_train_log_json(const std::filesystem::path& path, const TrainLog& log);

} // namespace advlab

#endif // ADVLAB_TRAINER_HPP
