#include "robustleak/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "robustleak/grad.hpp"
#include "robustleak/verify.hpp"

namespace robustleak {
namespace {

// Substream tags: each concern draws from its own child of cfg.seed so that,
// e.g., disabling the attack cannot shift the shuffle order.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kShuffleStream = 2;
constexpr std::uint64_t kAttackStream = 3;
constexpr std::uint64_t kSubsetStream = 4;

bool uses_attack(TrainMethod m) {
  return m == TrainMethod::kPgdAdv || m == TrainMethod::kDistAdv || m == TrainMethod::kDiffAdv;
}

void validate_config(const LabeledDataset& data, const TrainConfig& cfg) {
  if (data.examples.empty()) throw std::invalid_argument("train: empty dataset");
  if (data.num_classes < 2) throw std::invalid_argument("train: need at least 2 classes");
  if (data.feature_dim < 1) throw std::invalid_argument("train: need at least 1 feature");
  for (const Example& ex : data.examples) {
    if (ex.x.size() != data.feature_dim)
      throw std::invalid_argument("train: example feature size mismatch");
    if (ex.y < 0 || ex.y >= data.num_classes)
      throw std::invalid_argument("train: label out of range");
  }
  if (cfg.epochs < 0) throw std::invalid_argument("train: epochs must be non-negative");
  if (cfg.batch_size < 1) throw std::invalid_argument("train: batch_size must be positive");
  if (!(cfg.learning_rate > 0.0)) throw std::invalid_argument("train: learning rate must be positive");
  if (cfg.momentum < 0.0 || cfg.momentum >= 1.0)
    throw std::invalid_argument("train: momentum must be in [0, 1)");
  if (cfg.alpha < 0.0 || cfg.alpha > 1.0) throw std::invalid_argument("train: alpha must be in [0, 1]");
  if (cfg.adv_train_ratio < 0.0 || cfg.adv_train_ratio > 1.0)
    throw std::invalid_argument("train: adv_train_ratio must be in [0, 1]");
  if (cfg.adv_train_ratio != 1.0 && !uses_attack(cfg.method))
    throw std::invalid_argument("train: adv_train_ratio applies to attacked methods only");
  if (cfg.da_weight < 0.0) throw std::invalid_argument("train: da_weight must be non-negative");
  if (cfg.da_weight > 0.0 && cfg.method != TrainMethod::kPgdAdv && cfg.method != TrainMethod::kDistAdv)
    throw std::invalid_argument("train: da_weight applies to pgd-adv and dist-adv only");
  for (int h : cfg.hidden)
    if (h < 1) throw std::invalid_argument("train: hidden widths must be positive");
  if (cfg.method != TrainMethod::kNatural) {
    const PerturbationConstraint& c = cfg.constraint;
    if (c.epsilon < 0.0) throw std::invalid_argument("train: epsilon must be non-negative");
    if (c.box_low.size() != data.feature_dim || c.box_high.size() != data.feature_dim)
      throw std::invalid_argument("train: constraint box does not match the feature dimension");
    if ((c.box_low.array() > c.box_high.array()).any())
      throw std::invalid_argument("train: constraint box is empty");
  }
}

AttackConfig resolve_attack(const TrainConfig& cfg) {
  if (cfg.attack.has_value()) return *cfg.attack;
  AttackConfig a;
  a.steps = 7;
  const double eps = cfg.constraint.epsilon;
  a.step_size = eps / 4.0;
  if (cfg.method == TrainMethod::kDistAdv) {
    // The walk is unprojected; keep the iterate that scored best on the
    // penalized objective, so a dominating penalty returns the input itself.
    a.iterate = AttackIterate::kBestLoss;
    a.gamma = 1.0;
    if (eps == 0.0)
      throw std::invalid_argument("train: dist-adv with epsilon 0 needs an explicit attack config");
    return a;
  }
  if (cfg.method == TrainMethod::kDiffAdv) a.init = AttackInit::kRandomInBall;
  if (eps == 0.0) {
    a.steps = 0;  // the ball is a point
    a.step_size = 0.0;
  }
  return a;
}

struct BatchAccum {
  double loss_sum = 0.0;    // per-example contributions, batch terms weighted by size
  double robust_sum = 0.0;  // per-example robust-term contributions
  std::size_t robust_count = 0;
};

}  // namespace

Model train(const LabeledDataset& data, const TrainConfig& cfg, TrainLog* log) {
  validate_config(data, cfg);

  RngStream root(cfg.seed);
  RngStream init_rng = root.child(kInitStream);
  RngStream shuffle_rng = root.child(kShuffleStream);
  RngStream attack_rng = root.child(kAttackStream);
  RngStream subset_rng = root.child(kSubsetStream);

  std::vector<int> dims;
  dims.reserve(cfg.hidden.size() + 2);
  dims.push_back(data.feature_dim);
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(data.num_classes);
  Model m = make_mlp(dims, init_rng);

  const std::size_t n = data.size();
  const int d = data.feature_dim;
  const int k = data.num_classes;
  const bool attacked_method = uses_attack(cfg.method);
  AttackConfig atk;
  if (attacked_method) atk = resolve_attack(cfg);

  // Mixed-ratio subset, drawn once per run. At ratio 1 nothing is drawn, so
  // the fully adversarial run is the plain adversarial run.
  std::vector<char> in_subset(n, 1);
  if (attacked_method && cfg.adv_train_ratio < 1.0) {
    const auto n_sub =
        static_cast<std::size_t>(std::llround(cfg.adv_train_ratio * static_cast<double>(n)));
    std::vector<std::size_t> pick(n);
    std::iota(pick.begin(), pick.end(), std::size_t{0});
    subset_rng.shuffle(pick);
    std::fill(in_subset.begin(), in_subset.end(), char{0});
    for (std::size_t i = 0; i < n_sub; ++i) in_subset[pick[i]] = 1;
  }

  SgdOptimizer opt(cfg.learning_rate, cfg.momentum);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (log != nullptr) log->epochs.clear();

  for (int e = 0; e < cfg.epochs; ++e) {
    double eps_e = 0.0;
    if (cfg.method == TrainMethod::kIbpVerified) {
      // Linear ramp to the target budget over the first half of training.
      eps_e = cfg.constraint.epsilon *
              std::min(1.0, static_cast<double>(e) / static_cast<double>(std::max(1, cfg.epochs / 2)));
    } else if (cfg.method != TrainMethod::kNatural) {
      eps_e = cfg.constraint.epsilon;
    }
    PerturbationConstraint c_epoch = cfg.constraint;
    c_epoch.epsilon = eps_e;

    shuffle_rng.shuffle(order);
    BatchAccum acc;

    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const auto bsz = static_cast<Eigen::Index>(
          std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), n - start));
      Mat xb(d, bsz);
      std::vector<int> yb(static_cast<std::size_t>(bsz));
      std::vector<Eigen::Index> adv_cols;
      for (Eigen::Index i = 0; i < bsz; ++i) {
        const Example& ex = data.examples[order[start + static_cast<std::size_t>(i)]];
        xb.col(i) = ex.x;
        yb[static_cast<std::size_t>(i)] = ex.y;
        if (attacked_method && in_subset[order[start + static_cast<std::size_t>(i)]]) {
          adv_cols.push_back(i);
        }
      }
      const double inv_b = 1.0 / static_cast<double>(bsz);
      Gradients g = Gradients::zeros_like(m);

      switch (cfg.method) {
        case TrainMethod::kNatural: {
          const BatchTrace tr = forward_batch(m, xb);
          Vec ce;
          Mat delta = cross_entropy_logit_delta(tr.pre.back(), yb, &ce);
          delta *= inv_b;
          backward_batch(m, tr, delta, &g, nullptr);
          acc.loss_sum += ce.sum();
          break;
        }
        case TrainMethod::kPgdAdv:
        case TrainMethod::kDistAdv: {
          Mat xt = xb;
          if (!adv_cols.empty()) {
            Mat xs(d, static_cast<Eigen::Index>(adv_cols.size()));
            std::vector<int> ys(adv_cols.size());
            for (std::size_t j = 0; j < adv_cols.size(); ++j) {
              xs.col(static_cast<Eigen::Index>(j)) = xb.col(adv_cols[j]);
              ys[j] = yb[static_cast<std::size_t>(adv_cols[j])];
            }
            const Mat adv = cfg.method == TrainMethod::kPgdAdv
                                ? pgd_untargeted_batch(m, xs, ys, c_epoch, atk, attack_rng)
                                : dist_attack_batch(m, xs, ys, c_epoch, atk, attack_rng);
            for (std::size_t j = 0; j < adv_cols.size(); ++j)
              xt.col(adv_cols[j]) = adv.col(static_cast<Eigen::Index>(j));
          }
          const BatchTrace tr = forward_batch(m, xt);
          Vec ce;
          Mat delta = cross_entropy_logit_delta(tr.pre.back(), yb, &ce);
          delta *= inv_b;
          if (cfg.da_weight > 0.0 && bsz >= 2) {
            const BatchTrace benign = forward_batch(m, xb);
            Mat d_benign, d_adv;
            da_logit_deltas(benign.pre.back(), tr.pre.back(), &d_benign, &d_adv);
            delta += cfg.da_weight * d_adv;
            backward_batch(m, benign, (cfg.da_weight * d_benign).eval(), &g, nullptr);
            std::vector<Vec> bl, al;
            for (Eigen::Index c = 0; c < bsz; ++c) {
              bl.push_back(benign.pre.back().col(c));
              al.push_back(tr.pre.back().col(c));
            }
            acc.loss_sum += cfg.da_weight * da_regularizer(bl, al) * static_cast<double>(bsz);
          }
          backward_batch(m, tr, delta, &g, nullptr);
          acc.loss_sum += ce.sum();
          for (Eigen::Index c : adv_cols) acc.robust_sum += ce[c];
          acc.robust_count += adv_cols.size();
          break;
        }
        case TrainMethod::kDiffAdv: {
          const BatchTrace benign = forward_batch(m, xb);
          Vec ce;
          Mat d_benign = cross_entropy_logit_delta(benign.pre.back(), yb, &ce);
          d_benign *= cfg.alpha * inv_b;
          double kl_total = 0.0;
          if (cfg.alpha < 1.0) {
            const Mat ref = softmax_columns(benign.pre.back());
            Mat xt = xb;
            if (!adv_cols.empty()) {
              Mat xs(d, static_cast<Eigen::Index>(adv_cols.size()));
              for (std::size_t j = 0; j < adv_cols.size(); ++j)
                xs.col(static_cast<Eigen::Index>(j)) = xb.col(adv_cols[j]);
              const Mat adv = diff_pgd_batch(m, xs, c_epoch, atk, attack_rng);
              for (std::size_t j = 0; j < adv_cols.size(); ++j)
                xt.col(adv_cols[j]) = adv.col(static_cast<Eigen::Index>(j));
            }
            const BatchTrace tr = forward_batch(m, xt);
            Vec kl;
            Mat d_adv = kl_logit_delta(tr.pre.back(), ref, &kl);
            d_adv *= (1.0 - cfg.alpha) * inv_b;
            backward_batch(m, tr, d_adv, &g, nullptr);
            kl_total = kl.sum();
            acc.robust_sum += kl.sum();
            acc.robust_count += static_cast<std::size_t>(bsz);
          }
          backward_batch(m, benign, d_benign, &g, nullptr);
          acc.loss_sum += cfg.alpha * ce.sum() + (1.0 - cfg.alpha) * kl_total;
          break;
        }
        case TrainMethod::kIbpVerified: {
          const BatchTrace benign = forward_batch(m, xb);
          Vec ce;
          Mat d_benign = cross_entropy_logit_delta(benign.pre.back(), yb, &ce);
          d_benign *= cfg.alpha * inv_b;
          backward_batch(m, benign, d_benign, &g, nullptr);

          const IbpBatchTrace it = ibp_forward_batch(m, xb, c_epoch);
          const Mat& low = it.out_low.back();
          const Mat& high = it.out_high.back();
          Mat z = high;
          for (Eigen::Index i = 0; i < bsz; ++i) {
            const int y = yb[static_cast<std::size_t>(i)];
            z(y, i) = low(y, i);
          }
          Vec vloss;
          Mat dz = cfg.verified_loss == VerifiedLoss::kCrossEntropy
                       ? cross_entropy_logit_delta(z, yb, &vloss)
                       : softplus_margin_logit_delta(z, yb, &vloss);
          dz *= (1.0 - cfg.alpha) * inv_b;
          Mat dlow = Mat::Zero(k, bsz);
          Mat dhigh = dz;
          for (Eigen::Index i = 0; i < bsz; ++i) {
            const int y = yb[static_cast<std::size_t>(i)];
            dlow(y, i) = dz(y, i);
            dhigh(y, i) = 0.0;
          }
          ibp_backward_batch(m, it, dlow, dhigh, &g);
          acc.loss_sum += cfg.alpha * ce.sum() + (1.0 - cfg.alpha) * vloss.sum();
          acc.robust_sum += vloss.sum();
          acc.robust_count += static_cast<std::size_t>(bsz);
          break;
        }
      }
      opt.step(m, g);
    }

    if (log != nullptr) {
      EpochMetrics em;
      em.epoch = e + 1;
      em.loss = acc.loss_sum / static_cast<double>(n);
      em.train_accuracy = accuracy(m, data);
      em.robust_term = acc.robust_count == 0
                           ? 0.0
                           : acc.robust_sum / static_cast<double>(acc.robust_count);
      em.epsilon = eps_e;
      log->epochs.push_back(em);
    }
  }
  return m;
}

Model train_natural(const LabeledDataset& data, const TrainConfig& cfg, TrainLog* log) {
  TrainConfig c = cfg;
  c.method = TrainMethod::kNatural;
  c.adv_train_ratio = 1.0;
  return train(data, c, log);
}

Model train_pgd_adv(const LabeledDataset& data, const TrainConfig& cfg, TrainLog* log) {
  TrainConfig c = cfg;
  c.method = TrainMethod::kPgdAdv;
  c.adv_train_ratio = 1.0;
  return train(data, c, log);
}

Model train_dist_adv(const LabeledDataset& data, const TrainConfig& cfg, TrainLog* log) {
  TrainConfig c = cfg;
  c.method = TrainMethod::kDistAdv;
  c.adv_train_ratio = 1.0;
  return train(data, c, log);
}

Model train_diff_adv(const LabeledDataset& data, const TrainConfig& cfg, TrainLog* log) {
  TrainConfig c = cfg;
  c.method = TrainMethod::kDiffAdv;
  c.adv_train_ratio = 1.0;
  return train(data, c, log);
}

Model train_ibp_verified(const LabeledDataset& data, const TrainConfig& cfg, TrainLog* log) {
  TrainConfig c = cfg;
  c.method = TrainMethod::kIbpVerified;
  c.adv_train_ratio = 1.0;
  return train(data, c, log);
}

Model train_mixed_ratio(const LabeledDataset& data, const TrainConfig& cfg, TrainLog* log) {
  if (cfg.method != TrainMethod::kPgdAdv)
    throw std::invalid_argument("train_mixed_ratio: method must be pgd-adv");
  return train(data, cfg, log);
}

void write_metrics_csv(const TrainLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("write_metrics_csv: cannot open '" + path + "'");
  out << "epoch,loss,train_accuracy,robust_term,epsilon\n";
  for (const EpochMetrics& em : log.epochs) {
    out << em.epoch << "," << format_double(em.loss) << "," << format_double(em.train_accuracy)
        << "," << format_double(em.robust_term) << "," << format_double(em.epsilon) << "\n";
  }
  if (!out) throw IoError("write_metrics_csv: write to '" + path + "' failed");
}

}  // namespace robustleak
