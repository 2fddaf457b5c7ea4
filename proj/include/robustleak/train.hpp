#ifndef ROBUSTLEAK_TRAIN_HPP
#define ROBUSTLEAK_TRAIN_HPP

#include <optional>
#include <string>

#include "robustleak/attacks.hpp"
#include "robustleak/data.hpp"
#include "robustleak/model.hpp"

namespace robustleak {

enum class TrainMethod { kNatural, kPgdAdv, kDistAdv, kDiffAdv, kIbpVerified };

// Loss applied to the worst-case logits during verified training.
enum class VerifiedLoss { kCrossEntropy, kSoftplusMargin };

struct TrainConfig {
  TrainMethod method = TrainMethod::kNatural;
  std::vector<int> hidden = {64, 64};
  int epochs = 200;
  int batch_size = 32;
  double learning_rate = 0.01;
  double momentum = 0.9;

  // Weight of the natural cross-entropy term for diff-adv and ibp-verified;
  // their robust term is weighted 1 - alpha.
  double alpha = 0.5;

  PerturbationConstraint constraint;  // budget and box for the robust methods

  // Inner attack for pgd/dist/diff. Unset picks the training default: 7 steps
  // of size epsilon/4, at-input init (random-in-ball for diff-adv, best-loss
  // iterate and gamma 1 for dist-adv), and no steps at all when epsilon is 0.
  std::optional<AttackConfig> attack;

  // Fraction of training examples whose batch columns are replaced by attack
  // outputs. The subset is drawn once per run from its own seeded stream, so
  // the endpoints reproduce natural (0) and fully adversarial (1) runs.
  double adv_train_ratio = 1.0;

  // Weight of the logit distribution-alignment penalty between each benign
  // batch and its adversarial counterpart (pgd-adv and dist-adv only).
  // Batches with fewer than two examples skip the penalty.
  double da_weight = 0.0;

  VerifiedLoss verified_loss = VerifiedLoss::kCrossEntropy;
  std::uint64_t seed = 0;
};

struct EpochMetrics {
  int epoch = 0;         // 1-based
  double loss = 0.0;     // mean training objective
  double train_accuracy = 0.0;
  double robust_term = 0.0;  // adv CE / KL / verified loss, method-dependent
  double epsilon = 0.0;      // budget in effect this epoch (ramped for ibp)
};

struct TrainLog {
  std::vector<EpochMetrics> epochs;
};

// Minibatch momentum-SGD runner behind all train_* entry points. Model init,
// epoch shuffles, attack randomness, and the mixed-ratio subset each draw
// from their own substream of cfg.seed, so configurations that share a seed
// differ only where their methods actually differ.
Model train(const LabeledDataset& data, const TrainConfig& cfg, TrainLog* log = nullptr);

Model train_natural(const LabeledDataset& data, const TrainConfig& cfg, TrainLog* log = nullptr);

// Every batch column is replaced by an untargeted PGD point (ratio forced to 1).
Model train_pgd_adv(const LabeledDataset& data, const TrainConfig& cfg, TrainLog* log = nullptr);

// As train_pgd_adv with dist_attack outputs instead.
Model train_dist_adv(const LabeledDataset& data, const TrainConfig& cfg, TrainLog* log = nullptr);

// alpha * CE(benign) + (1 - alpha) * KL(F(adv) || F(benign)), the benign
// distribution held constant.
Model train_diff_adv(const LabeledDataset& data, const TrainConfig& cfg, TrainLog* log = nullptr);

// alpha * CE(benign) + (1 - alpha) * verified loss on worst-case logits, with
// epsilon ramped linearly from 0 to the target over the first half of training.
Model train_ibp_verified(const LabeledDataset& data, const TrainConfig& cfg, TrainLog* log = nullptr);

// PGD loss on a fixed seeded subset of adv_train_ratio * |data| examples,
// natural loss on the rest. Requires method pgd-adv.
Model train_mixed_ratio(const LabeledDataset& data, const TrainConfig& cfg, TrainLog* log = nullptr);

void write_metrics_csv(const TrainLog& log, const std::string& path);

}  // namespace robustleak

#endif
