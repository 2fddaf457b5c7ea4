#include "robustleak/minfer.hpp"

#include <algorithm>
#include <stdexcept>

#include "robustleak/losses.hpp"
#include "robustleak/train.hpp"
#include "robustleak/verify.hpp"

namespace robustleak {
namespace {

// Fraction of (sorted ascending) values >= tau.
double ccdf(const std::vector<double>& sorted, double tau) {
  const auto it = std::lower_bound(sorted.begin(), sorted.end(), tau);
  return static_cast<double>(sorted.end() - it) / static_cast<double>(sorted.size());
}

}  // namespace

double strategy_confidence(const Model& m, const Example& z, const ThresholdStrategy& s,
                           RngStream& rng) {
  if (!(s.temperature > 0.0))
    throw std::invalid_argument("strategy_confidence: temperature must be positive");
  if (z.y < 0 || z.y >= m.num_classes())
    throw std::invalid_argument("strategy_confidence: label out of range");
  Vec z_out;
  switch (s.kind) {
    case StrategyKind::kBenign:
      z_out = logits(m, z.x);
      break;
    case StrategyKind::kAdversarial:
      z_out = logits(m, pgd_untargeted(m, z, s.constraint, s.attack, rng));
      break;
    case StrategyKind::kVerified:
      z_out = worst_case_logits(ibp_bounds(m, z.x, s.constraint), z.y);
      break;
  }
  return temperature_scale(z_out, s.temperature)[z.y];
}

int infer_membership(const Model& m, const Example& z, const ThresholdStrategy& s, RngStream& rng) {
  return strategy_confidence(m, z, s, rng) >= s.tau ? 1 : 0;
}

ThresholdChoice select_threshold(const std::vector<double>& member_conf,
                                 const std::vector<double>& nonmember_conf) {
  if (member_conf.empty() || nonmember_conf.empty())
    throw std::invalid_argument("select_threshold: empty confidence set");
  std::vector<double> ms = member_conf;
  std::vector<double> ns = nonmember_conf;
  std::sort(ms.begin(), ms.end());
  std::sort(ns.begin(), ns.end());

  std::vector<double> cand;
  cand.reserve(ms.size() + ns.size() + 1);
  cand.insert(cand.end(), ms.begin(), ms.end());
  cand.insert(cand.end(), ns.begin(), ns.end());
  cand.push_back(0.0);
  std::sort(cand.begin(), cand.end());
  cand.erase(std::unique(cand.begin(), cand.end()), cand.end());

  // Ascending scan with a strict improvement test keeps the smallest tau
  // among gap ties.
  ThresholdChoice best{cand.front(), -2.0};
  for (double tau : cand) {
    const double gap = ccdf(ms, tau) - ccdf(ns, tau);
    if (gap > best.gap) best = {tau, gap};
  }
  return best;
}

double inference_accuracy(const Model& m, const ThresholdStrategy& s,
                          const std::vector<Example>& d_train,
                          const std::vector<Example>& d_test, RngStream& rng) {
  if (d_train.empty() || d_test.empty())
    throw std::invalid_argument("inference_accuracy: empty evaluation set");
  long flagged_train = 0;
  for (const Example& z : d_train) flagged_train += infer_membership(m, z, s, rng);
  long flagged_test = 0;
  for (const Example& z : d_test) flagged_test += infer_membership(m, z, s, rng);
  return static_cast<double>(flagged_train) / (2.0 * static_cast<double>(d_train.size())) +
         static_cast<double>(static_cast<long>(d_test.size()) - flagged_test) /
             (2.0 * static_cast<double>(d_test.size()));
}

double inference_accuracy_from_confidences(const std::vector<double>& member_conf,
                                           const std::vector<double>& nonmember_conf, double tau) {
  if (member_conf.empty() || nonmember_conf.empty())
    throw std::invalid_argument("inference_accuracy: empty confidence set");
  long flagged_m = 0;
  for (double v : member_conf) flagged_m += v >= tau ? 1 : 0;
  long flagged_n = 0;
  for (double v : nonmember_conf) flagged_n += v >= tau ? 1 : 0;
  return static_cast<double>(flagged_m) / (2.0 * static_cast<double>(member_conf.size())) +
         static_cast<double>(static_cast<long>(nonmember_conf.size()) - flagged_n) /
             (2.0 * static_cast<double>(nonmember_conf.size()));
}

double inference_advantage(double a_inf) {
  if (a_inf < 0.0 || a_inf > 1.0)
    throw std::invalid_argument("inference_advantage: accuracy outside [0, 1]");
  return 2.0 * (a_inf - 0.5);
}

Vec targeted_prediction_block(const Model& m, const Example& z, const PerturbationConstraint& c,
                              const AttackConfig& cfg, RngStream& rng) {
  const int k = m.num_classes();
  if (z.y < 0 || z.y >= k)
    throw std::invalid_argument("targeted_prediction_block: label out of range");
  Vec block((k - 1) * static_cast<Eigen::Index>(k));
  Eigen::Index off = 0;
  for (int target = 0; target < k; ++target) {
    if (target == z.y) continue;
    block.segment(off, k) = predict(m, pgd_targeted(m, z.x, target, c, cfg, rng));
    off += k;
  }
  return block;
}

Vec prediction_features(const Model& m, const Example& z, FeatureKind kind,
                        const PerturbationConstraint& c, const AttackConfig& cfg, RngStream& rng) {
  switch (kind) {
    case FeatureKind::kBenign:
      return predict(m, z.x);
    case FeatureKind::kUntargeted:
      return predict(m, pgd_untargeted(m, z, c, cfg, rng));
    case FeatureKind::kTargeted:
      return targeted_prediction_block(m, z, c, cfg, rng);
  }
  throw std::logic_error("prediction_features: unknown kind");
}

std::vector<Model> model_infer_fit(const std::vector<ModelInferClassData>& per_class,
                                   const ModelInferConfig& cfg) {
  if (per_class.empty()) throw std::invalid_argument("model_infer_fit: no classes");
  RngStream root(cfg.seed);
  std::vector<Model> out;
  out.reserve(per_class.size());
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    const ModelInferClassData& cd = per_class[c];
    if (cd.member_blocks.empty() && cd.nonmember_blocks.empty())
      throw std::invalid_argument("model_infer_fit: class " + std::to_string(c) + " has no samples");

    const Eigen::Index dim = cd.member_blocks.empty() ? cd.nonmember_blocks.front().size()
                                                      : cd.member_blocks.front().size();
    LabeledDataset ds;
    ds.feature_dim = static_cast<int>(dim);
    ds.num_classes = 2;
    ds.box_low = Vec::Zero(dim);
    ds.box_high = Vec::Ones(dim);
    std::int64_t id = 0;
    for (const Vec& b : cd.member_blocks) {
      if (b.size() != dim) throw std::invalid_argument("model_infer_fit: ragged feature blocks");
      ds.examples.push_back({b, 1, id++});
    }
    for (const Vec& b : cd.nonmember_blocks) {
      if (b.size() != dim) throw std::invalid_argument("model_infer_fit: ragged feature blocks");
      ds.examples.push_back({b, 0, id++});
    }

    TrainConfig tc;
    tc.method = TrainMethod::kNatural;
    tc.hidden = {200, 20};
    tc.epochs = cfg.epochs;
    tc.batch_size = cfg.batch_size;
    tc.learning_rate = cfg.learning_rate;
    tc.momentum = cfg.momentum;
    tc.seed = root.child(c).base_seed();
    out.push_back(train(ds, tc, nullptr));
  }
  return out;
}

ModelInferAccuracy model_infer_accuracy(const std::vector<Model>& classifiers, const Model& m,
                                        const std::vector<Example>& d_train,
                                        const std::vector<Example>& d_test, FeatureKind kind,
                                        const PerturbationConstraint& c, const AttackConfig& cfg,
                                        const std::vector<std::int64_t>& exclude_ids,
                                        RngStream& rng) {
  const int k = m.num_classes();
  if (static_cast<int>(classifiers.size()) != k)
    throw std::invalid_argument("model_infer_accuracy: need one classifier per class");
  const auto excluded = [&exclude_ids](std::int64_t id) {
    return std::find(exclude_ids.begin(), exclude_ids.end(), id) != exclude_ids.end();
  };

  std::vector<long> n_train(static_cast<std::size_t>(k), 0), called_train(static_cast<std::size_t>(k), 0);
  std::vector<long> n_test(static_cast<std::size_t>(k), 0), called_test(static_cast<std::size_t>(k), 0);
  const auto tally = [&](const std::vector<Example>& set, std::vector<long>& n, std::vector<long>& called) {
    for (const Example& z : set) {
      if (z.y < 0 || z.y >= k)
        throw std::invalid_argument("model_infer_accuracy: label out of range");
      if (excluded(z.id)) continue;
      const Vec f = prediction_features(m, z, kind, c, cfg, rng);
      const auto cls = static_cast<std::size_t>(z.y);
      ++n[cls];
      called[cls] += predicted_label(classifiers[cls], f) == 1 ? 1 : 0;  // 1 = member
    }
  };
  tally(d_train, n_train, called_train);
  tally(d_test, n_test, called_test);

  ModelInferAccuracy out;
  out.per_class.resize(static_cast<std::size_t>(k), 0.0);
  double weighted = 0.0;
  long weight_total = 0;
  for (std::size_t y = 0; y < static_cast<std::size_t>(k); ++y) {
    if (n_train[y] == 0 || n_test[y] == 0)
      throw std::invalid_argument("model_infer_accuracy: class " + std::to_string(y) +
                                  " has no evaluation examples after exclusion");
    out.per_class[y] = static_cast<double>(called_train[y]) / (2.0 * static_cast<double>(n_train[y])) +
                       static_cast<double>(n_test[y] - called_test[y]) /
                           (2.0 * static_cast<double>(n_test[y]));
    weighted += static_cast<double>(n_train[y] + n_test[y]) * out.per_class[y];
    weight_total += n_train[y] + n_test[y];
  }
  out.aggregate = weighted / static_cast<double>(weight_total);
  return out;
}

std::vector<HistogramRow> loss_histogram(const Model& m, const std::vector<Example>& data,
                                         int bins, HistogramPartition partition,
                                         const PerturbationConstraint& c, const AttackConfig& cfg,
                                         RngStream& rng) {
  if (data.empty()) throw std::invalid_argument("loss_histogram: empty data");
  if (bins < 1) throw std::invalid_argument("loss_histogram: bins must be positive");

  std::vector<double> losses;
  losses.reserve(data.size());
  std::vector<char> secure;
  for (const Example& z : data) losses.push_back(cross_entropy(predict(m, z.x), z.y));
  if (partition == HistogramPartition::kSecureInsecure) {
    secure.reserve(data.size());
    for (const Example& z : data)
      secure.push_back(predicted_label(m, pgd_untargeted(m, z, c, cfg, rng)) == z.y ? 1 : 0);
  }

  const double max_loss = *std::max_element(losses.begin(), losses.end());
  const double width = max_loss / static_cast<double>(bins);
  std::vector<HistogramRow> rows(static_cast<std::size_t>(bins));
  for (int b = 0; b < bins; ++b) {
    rows[static_cast<std::size_t>(b)].low = width * b;
    rows[static_cast<std::size_t>(b)].high = width * (b + 1);
  }
  for (std::size_t i = 0; i < losses.size(); ++i) {
    int b = 0;
    if (max_loss > 0.0) {
      b = std::min(bins - 1, static_cast<int>(losses[i] / max_loss * static_cast<double>(bins)));
    }
    HistogramRow& row = rows[static_cast<std::size_t>(b)];
    ++row.count;
    if (partition == HistogramPartition::kSecureInsecure) {
      if (secure[i]) {
        ++row.secure_count;
      } else {
        ++row.insecure_count;
      }
    }
  }
  return rows;
}

}  // namespace robustleak
