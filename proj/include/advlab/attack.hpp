#ifndef ADVLAB_ATTACK_HPP
#define ADVLAB_ATTACK_HPP

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "advlab/graph.hpp"
#include "advlab/image.hpp"
#include "advlab/netmodel.hpp"
#include "advlab/objectives.hpp"
#include "advlab/rng.hpp"

namespace advlab {

enum class Norm { Linf, L2 };
enum class AttackMode { Ind, Ood };
enum class BallCenter { DataSample, InitSample };

std::string to_string(Norm n);
Norm norm_from_string(const std::string& s);

struct AttackConfig {
    double epsilon = 0.03;
    Norm norm = Norm::Linf;
    int iterations = 100;
    double alpha = 0.006;
    ObjectiveKind objective = ObjectiveKind::IndReg;
    AttackMode mode = AttackMode::Ind;
    BallCenter center = BallCenter::DataSample;
    bool random_init = true;
    /// Return the final iterate instead of the best one.
    bool last_iterate = false;

    void validate() const;
};

/// OOD defaults: ball of radius 0.3 (Linf) around the seed image.
AttackConfig ood_attack_config(ObjectiveKind objective, int iterations = 100, double alpha = 0.01);

struct AttackResult {
    Image adversarial;
    Image delta;                          // adversarial - center
    std::vector<double> objective_trace;  // J at x_0 .. x_N
    int best_iterate = 0;
    bool aborted = false;                 // non-finite objective or gradient
    std::string diagnostic;
};

/// Nearest-point style projection onto {|v - center|_p <= eps} ∩ [0,1]^n.
/// Feasible inputs come back unchanged.
Image project(const Image& v, const Image& center, double eps, Norm norm);

/// sign(g) for Linf (sign(0) = 0); g/|g|_2 for L2, or zeros when |g|_2 < 1e-12.
Image step_direction(const Image& g, Norm norm);

/// Per-sample objective J(x) built on a [1,1,H,W] input; must return one value.
template <typename T>
using InputObjective = std::function<Var(Graph<T>&, Var)>;

/// Iterated signed/normalized gradient ascent. In IND mode the start point is x itself and the ball is
/// centered on x; in OOD mode the start point is x_init and the ball is
/// centered as configured. Images are kept in double; only J runs in T.
template <typename T>
AttackResult run_attack(const InputObjective<T>& objective, const Image& x, const Image& x_init, const AttackConfig& cfg, Rng& rng);

/// J built from a model and one sample's targets.
template <typename T>
InputObjective<T> model_objective(const SegRegModel<T>& model, ObjectiveKind kind, const Contour& contour, const Mask& mask);

template <typename T>
AttackResult run_model_attack(const SegRegModel<T>& model, const Image& x, const Contour& contour, const Mask& mask,
                              const Image& x_init, const AttackConfig& cfg, Rng& rng);

double lp_norm(const Image& v, Norm norm);

/// Writes the adversarial image as PGM and a JSON sidecar next to it (same
/// stem) with the attack settings, achieved |delta| and the objective trace.
void write_adversarial(const std::filesystem::path& pgm, const AttackResult& r, const AttackConfig& cfg);

} // namespace advlab

#endif // ADVLAB_ATTACK_HPP
