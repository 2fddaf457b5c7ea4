#ifndef ROBUSTLEAK_MINFER_HPP
#define ROBUSTLEAK_MINFER_HPP

#include "robustleak/attacks.hpp"
#include "robustleak/model.hpp"
#include "robustleak/rng.hpp"

namespace robustleak {

// Which model output the membership threshold is applied to: the benign
// prediction confidence, the confidence on an untargeted attack point, or the
// verified worst-case confidence.
enum class StrategyKind { kBenign, kAdversarial, kVerified };

struct ThresholdStrategy {
  StrategyKind kind = StrategyKind::kBenign;
  double tau = 0.5;                   // membership iff confidence >= tau
  AttackConfig attack;                // adversarial kind only
  PerturbationConstraint constraint;  // adversarial and verified kinds
  double temperature = 1.0;           // logits are divided by this before softmax
};

double strategy_confidence(const Model& m, const Example& z, const ThresholdStrategy& s,
                           RngStream& rng);

// 1 iff strategy_confidence(m, z, s) >= s.tau.
int infer_membership(const Model& m, const Example& z, const ThresholdStrategy& s, RngStream& rng);

struct ThresholdChoice {
  double tau = 0.0;
  double gap = 0.0;  // CCDF_member(tau) - CCDF_nonmember(tau) at the chosen tau
};

// Exhaustive scan over the observed confidences plus 0; maximizes the CCDF
// gap, smallest tau on ties.
ThresholdChoice select_threshold(const std::vector<double>& member_conf,
                                 const std::vector<double>& nonmember_conf);

// Fraction of correct membership calls under the convention that d_train are
// members and d_test are not, each side weighted 1/2.
double inference_accuracy(const Model& m, const ThresholdStrategy& s,
                          const std::vector<Example>& d_train,
                          const std::vector<Example>& d_test, RngStream& rng);
double inference_accuracy_from_confidences(const std::vector<double>& member_conf,
                                           const std::vector<double>& nonmember_conf, double tau);

// Advantage over random guessing: 2 * (a_inf - 0.5).
double inference_advantage(double a_inf);

// Prediction vectors on targeted attack points for every wrong label, in
// ascending label order, concatenated: (k-1)*k entries.
Vec targeted_prediction_block(const Model& m, const Example& z, const PerturbationConstraint& c,
                              const AttackConfig& cfg, RngStream& rng);

// Feature block fed to the per-class inference classifiers.
enum class FeatureKind { kBenign, kUntargeted, kTargeted };

Vec prediction_features(const Model& m, const Example& z, FeatureKind kind,
                        const PerturbationConstraint& c, const AttackConfig& cfg, RngStream& rng);

// Member / non-member feature blocks for one class label.
struct ModelInferClassData {
  std::vector<Vec> member_blocks;
  std::vector<Vec> nonmember_blocks;
};

struct ModelInferConfig {
  int epochs = 150;
  int batch_size = 16;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::uint64_t seed = 0;
};

// One binary 200-20-2 classifier per class (member = label 1), trained with
// cross-entropy on the class's feature blocks. Callers are expected to pass
// balanced counts; a class with no blocks at all is an error.
std::vector<Model> model_infer_fit(const std::vector<ModelInferClassData>& per_class,
                                   const ModelInferConfig& cfg);

struct ModelInferAccuracy {
  std::vector<double> per_class;
  double aggregate = 0.0;  // classes weighted by their evaluation counts
};

// Membership accuracy with each classifier's decision standing in for the
// threshold rule; examples whose id is in exclude_ids (the fit points) are
// skipped.
ModelInferAccuracy model_infer_accuracy(const std::vector<Model>& classifiers, const Model& m,
                                        const std::vector<Example>& d_train,
                                        const std::vector<Example>& d_test, FeatureKind kind,
                                        const PerturbationConstraint& c, const AttackConfig& cfg,
                                        const std::vector<std::int64_t>& exclude_ids,
                                        RngStream& rng);

enum class HistogramPartition { kNone, kSecureInsecure };

struct HistogramRow {
  double low = 0.0, high = 0.0;
  int count = 0;
  int secure_count = 0;    // partitioned mode only
  int insecure_count = 0;
};

// Cross-entropy losses bucketed over [0, max]. The partitioned variant labels
// each example secure iff it survives pgd_untargeted at c.epsilon.
std::vector<HistogramRow> loss_histogram(const Model& m, const std::vector<Example>& data,
                                         int bins, HistogramPartition partition,
                                         const PerturbationConstraint& c, const AttackConfig& cfg,
                                         RngStream& rng);

// ---- audit report ----

struct ConfidenceSummary {
  double mean = 0.0, min = 0.0, max = 0.0;
};

// One threshold fit + evaluation. "shadow" fits tau on held-out members and
// non-members; "oracle" fits it on the evaluated sets themselves.
struct ModeResult {
  double tau = 0.0;
  double gap = 0.0;  // CCDF gap on the fit sets
  double accuracy = 0.0;
  double advantage = 0.0;
};

struct StrategyReport {
  StrategyKind kind = StrategyKind::kBenign;
  bool applicable = true;  // verified strategy is N.A. on non-verified models
  ConfidenceSummary member, nonmember;  // over the evaluation sets
  ModeResult shadow, oracle;
};

struct AccuracyTable {
  double train = 0.0, test = 0.0;
  double adv_train = 0.0, adv_test = 0.0;
  bool has_verified = false;
  double verified_train = 0.0, verified_test = 0.0;
};

struct MembershipReport {
  AccuracyTable accuracy;
  int fit_members = 0;  // shadow-split sizes used for threshold fitting
  int fit_nonmembers = 0;
  std::vector<StrategyReport> strategies;
};

}  // namespace robustleak

#endif
