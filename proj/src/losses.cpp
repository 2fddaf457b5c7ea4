#include "robustleak/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace robustleak {

double cross_entropy(const Vec& pred, int label) {
  if (label < 0 || label >= pred.size()) throw std::invalid_argument("cross_entropy: label out of range");
  return -std::log(std::max(pred[label], kProbFloor));
}

double kl_divergence(const Vec& p, const Vec& q) {
  if (p.size() != q.size()) throw std::invalid_argument("kl_divergence: size mismatch");
  double s = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    s += p[i] * std::log(std::max(p[i], kProbFloor) / std::max(q[i], kProbFloor));
  }
  return s;
}

double softplus_margin_loss(const Vec& logit_vec, int label) {
  if (label < 0 || label >= logit_vec.size()) {
    throw std::invalid_argument("softplus_margin_loss: label out of range");
  }
  if (logit_vec.size() < 2) throw std::invalid_argument("softplus_margin_loss: need >= 2 classes");
  double m = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < logit_vec.size(); ++j) {
    if (j != label) m = std::max(m, logit_vec[j]);
  }
  const double z = m - logit_vec[label];
  // ln(1 + e^z) without overflow for large z
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

Vec temperature_scale(const Vec& logit_vec, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature_scale: T must be positive");
  return softmax(logit_vec / temperature);
}

}  // namespace robustleak
