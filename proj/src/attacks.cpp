#include "robustleak/attacks.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace robustleak {
namespace {

Mat signum(const Mat& g) {
  return g.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

void validate(const PerturbationConstraint& c, Eigen::Index dim) {
  if (!(c.epsilon >= 0.0)) throw std::invalid_argument("constraint: epsilon must be >= 0");
  if (c.box_low.size() != dim || c.box_high.size() != dim) {
    throw std::invalid_argument("constraint: box dimension mismatch");
  }
  if (((c.box_high - c.box_low).array() < 0.0).any()) {
    throw std::invalid_argument("constraint: box_low must not exceed box_high");
  }
}

void validate(const AttackConfig& cfg) {
  if (cfg.steps < 0) throw std::invalid_argument("attack: steps must be >= 0");
  if (cfg.steps > 0 && !(cfg.step_size > 0.0)) {
    throw std::invalid_argument("attack: step_size must be positive");
  }
  if (cfg.gamma < 0.0) throw std::invalid_argument("attack: gamma must be >= 0");
}

Mat random_in_ball(const Mat& xs, double epsilon, RngStream& rng) {
  Mat xt = xs;
  for (Eigen::Index c = 0; c < xt.cols(); ++c) {
    for (Eigen::Index i = 0; i < xt.rows(); ++i) {
      xt(i, c) += rng.uniform(-epsilon, epsilon);
    }
  }
  return xt;
}

// Signed-gradient iteration shared by the ball-projected attacks.
// maximize = false flips the step direction and makes lower objectives better.
template <class LogitDelta>
Mat projected_signed_attack(const Model& m, const Mat& xs, const PerturbationConstraint& c,
                            const AttackConfig& cfg, RngStream& rng, bool maximize,
                            LogitDelta&& logit_delta) {
  validate(c, xs.rows());
  validate(cfg);
  const Mat lo = (xs.array() - c.epsilon).matrix().cwiseMax(c.box_low.replicate(1, xs.cols()));
  const Mat hi = (xs.array() + c.epsilon).matrix().cwiseMin(c.box_high.replicate(1, xs.cols()));

  Mat xt = cfg.init == AttackInit::kRandomInBall ? random_in_ball(xs, c.epsilon, rng) : xs;
  xt = xt.cwiseMax(lo).cwiseMin(hi);

  const bool track = cfg.iterate == AttackIterate::kBestLoss;
  Mat best = xt;
  Vec best_obj = Vec::Constant(xs.cols(), maximize ? -std::numeric_limits<double>::infinity()
                                                   : std::numeric_limits<double>::infinity());
  const double flip = maximize ? 1.0 : -1.0;

  for (int t = 0;; ++t) {
    if (!track && t == cfg.steps) return xt;
    const BatchTrace trace = forward_batch(m, xt);
    Vec obj;
    const Mat delta = logit_delta(trace.pre.back(), &obj);
    if (track) {
      for (Eigen::Index col = 0; col < xt.cols(); ++col) {
        if (flip * obj[col] > flip * best_obj[col]) {
          best_obj[col] = obj[col];
          best.col(col) = xt.col(col);
        }
      }
      if (t == cfg.steps) return best;
    }
    Mat dx(xs.rows(), xs.cols());
    backward_batch(m, trace, delta, nullptr, &dx);
    xt = (xt + flip * cfg.step_size * signum(dx)).cwiseMax(lo).cwiseMin(hi);
  }
}

}  // namespace

PerturbationConstraint PerturbationConstraint::unit_box(int dim, double epsilon) {
  return {epsilon, Vec::Zero(dim), Vec::Ones(dim)};
}

Vec project_linf(const Vec& x_tilde, const Vec& x, const PerturbationConstraint& c) {
  validate(c, x.size());
  if (x_tilde.size() != x.size()) throw std::invalid_argument("project_linf: size mismatch");
  const Vec lo = (x.array() - c.epsilon).matrix().cwiseMax(c.box_low);
  const Vec hi = (x.array() + c.epsilon).matrix().cwiseMin(c.box_high);
  return x_tilde.cwiseMax(lo).cwiseMin(hi);
}

Mat pgd_untargeted_batch(const Model& m, const Mat& xs, const std::vector<int>& labels,
                         const PerturbationConstraint& c, const AttackConfig& cfg, RngStream& rng) {
  return projected_signed_attack(m, xs, c, cfg, rng, /*maximize=*/true,
                                 [&](const Mat& z, Vec* obj) {
                                   return cross_entropy_logit_delta(z, labels, obj);
                                 });
}

Vec pgd_untargeted(const Model& m, const Example& z, const PerturbationConstraint& c,
                   const AttackConfig& cfg, RngStream& rng) {
  return pgd_untargeted_batch(m, z.x, {z.y}, c, cfg, rng).col(0);
}

Vec pgd_targeted(const Model& m, const Vec& x, int target_label,
                 const PerturbationConstraint& c, const AttackConfig& cfg, RngStream& rng) {
  const std::vector<int> labels = {target_label};
  return projected_signed_attack(m, x, c, cfg, rng, /*maximize=*/false,
                                 [&](const Mat& z, Vec* obj) {
                                   return cross_entropy_logit_delta(z, labels, obj);
                                 })
      .col(0);
}

Mat diff_pgd_batch(const Model& m, const Mat& xs, const PerturbationConstraint& c,
                   const AttackConfig& cfg, RngStream& rng) {
  const Mat ref = softmax_columns(logits_batch(m, xs));
  return projected_signed_attack(m, xs, c, cfg, rng, /*maximize=*/true,
                                 [&](const Mat& z, Vec* obj) {
                                   return kl_logit_delta(z, ref, obj);
                                 });
}

Vec diff_pgd(const Model& m, const Vec& x, const PerturbationConstraint& c,
             const AttackConfig& cfg, RngStream& rng) {
  return diff_pgd_batch(m, x, c, cfg, rng).col(0);
}

Mat dist_attack_batch(const Model& m, const Mat& xs, const std::vector<int>& labels,
                      const PerturbationConstraint& c, const AttackConfig& cfg, RngStream& rng) {
  validate(c, xs.rows());
  validate(cfg);
  (void)rng;  // init is always the benign input; there is no ball to sample
  const Mat lo = c.box_low.replicate(1, xs.cols());
  const Mat hi = c.box_high.replicate(1, xs.cols());

  Mat xt = xs.cwiseMax(lo).cwiseMin(hi);
  const bool track = cfg.iterate == AttackIterate::kBestLoss;
  Mat best = xt;
  Vec best_obj = Vec::Constant(xs.cols(), -std::numeric_limits<double>::infinity());

  for (int t = 0;; ++t) {
    const BatchTrace trace = forward_batch(m, xt);
    Vec ce;
    const Mat delta = cross_entropy_logit_delta(trace.pre.back(), labels, &ce);
    if (track) {
      for (Eigen::Index col = 0; col < xt.cols(); ++col) {
        const double obj = ce[col] - cfg.gamma * (xt.col(col) - xs.col(col)).lpNorm<Eigen::Infinity>();
        if (obj > best_obj[col]) {
          best_obj[col] = obj;
          best.col(col) = xt.col(col);
        }
      }
    }
    if (t == cfg.steps) return track ? best : xt;
    Mat dx(xs.rows(), xs.cols());
    backward_batch(m, trace, delta, nullptr, &dx);
    // l-inf penalty subgradient: split equally over the coordinates attaining
    // the max deviation; zero at the benign input itself.
    for (Eigen::Index col = 0; col < xt.cols(); ++col) {
      const Vec diff = xt.col(col) - xs.col(col);
      const double mdev = diff.cwiseAbs().maxCoeff();
      if (mdev > 0.0) {
        int ties = 0;
        for (Eigen::Index i = 0; i < diff.size(); ++i) {
          if (std::abs(diff[i]) == mdev) ++ties;
        }
        const double unit = cfg.gamma / ties;
        for (Eigen::Index i = 0; i < diff.size(); ++i) {
          if (std::abs(diff[i]) == mdev) {
            dx(i, col) -= unit * (diff[i] > 0.0 ? 1.0 : -1.0);
          }
        }
      }
    }
    xt = (xt + cfg.step_size * signum(dx)).cwiseMax(lo).cwiseMin(hi);
  }
}

Vec dist_attack(const Model& m, const Example& z, const PerturbationConstraint& c,
                const AttackConfig& cfg, RngStream& rng) {
  return dist_attack_batch(m, z.x, {z.y}, c, cfg, rng).col(0);
}

}  // namespace robustleak
