#ifndef ROBUSTLEAK_ATTACKS_HPP
#define ROBUSTLEAK_ATTACKS_HPP

#include "robustleak/grad.hpp"
#include "robustleak/model.hpp"
#include "robustleak/rng.hpp"

namespace robustleak {

// l-inf budget plus the valid input box.
struct PerturbationConstraint {
  double epsilon = 0.0;
  Vec box_low, box_high;

  static PerturbationConstraint unit_box(int dim, double epsilon);
};

enum class AttackInit { kAtInput, kRandomInBall };
enum class AttackIterate { kFinal, kBestLoss };

struct AttackConfig {
  int steps = 20;
  double step_size = 0.0;
  AttackInit init = AttackInit::kAtInput;
  AttackIterate iterate = AttackIterate::kFinal;
  double gamma = 0.0;  // dist_attack penalty weight
};

// Clamp to the eps-ball around x intersected with the box. epsilon = 0
// returns x exactly.
Vec project_linf(const Vec& x_tilde, const Vec& x, const PerturbationConstraint& c);

// Iterated signed-gradient ascent on cross-entropy toward z.y.
Vec pgd_untargeted(const Model& m, const Example& z, const PerturbationConstraint& c,
                   const AttackConfig& cfg, RngStream& rng);

// Signed-gradient descent on cross-entropy toward target_label.
Vec pgd_targeted(const Model& m, const Vec& x, int target_label,
                 const PerturbationConstraint& c, const AttackConfig& cfg, RngStream& rng);

// Signed ascent on loss - gamma * ||x_tilde - x||_inf; no ball projection,
// box clamp only. Only the box part of `c` is used.
Vec dist_attack(const Model& m, const Example& z, const PerturbationConstraint& c,
                const AttackConfig& cfg, RngStream& rng);

// Signed ascent on KL(F(x_tilde) || F(x)).
Vec diff_pgd(const Model& m, const Vec& x, const PerturbationConstraint& c,
             const AttackConfig& cfg, RngStream& rng);

// Batched counterparts, one column per example (used by the training loops).
Mat pgd_untargeted_batch(const Model& m, const Mat& xs, const std::vector<int>& labels,
                         const PerturbationConstraint& c, const AttackConfig& cfg, RngStream& rng);
Mat dist_attack_batch(const Model& m, const Mat& xs, const std::vector<int>& labels,
                      const PerturbationConstraint& c, const AttackConfig& cfg, RngStream& rng);
Mat diff_pgd_batch(const Model& m, const Mat& xs, const PerturbationConstraint& c,
                   const AttackConfig& cfg, RngStream& rng);

}  // namespace robustleak

#endif
