#include "robustleak/grad.hpp"

#include <cmath>
#include <stdexcept>

namespace robustleak {
namespace {

double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

Mat stack_columns(const std::vector<Example>& batch, int dim) {
  Mat x(dim, static_cast<Eigen::Index>(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].x.size() != dim) throw std::invalid_argument("batch: input dimension mismatch");
    x.col(static_cast<Eigen::Index>(i)) = batch[i].x;
  }
  return x;
}

Mat stack_columns(const std::vector<Vec>& vs, int dim) {
  Mat x(dim, static_cast<Eigen::Index>(vs.size()));
  for (std::size_t i = 0; i < vs.size(); ++i) {
    if (vs[i].size() != dim) throw std::invalid_argument("batch: vector dimension mismatch");
    x.col(static_cast<Eigen::Index>(i)) = vs[i];
  }
  return x;
}

// Per-column loss values and dloss/dlogits for the non-composite loss kinds.
struct LossEval {
  Mat delta;
  Vec loss;
};

LossEval eval_cross_entropy(const Mat& z, const std::vector<int>& labels) {
  const Mat p = softmax_columns(z);
  LossEval e{p, Vec(z.cols())};
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    const int y = labels[static_cast<std::size_t>(c)];
    if (y < 0 || y >= z.rows()) throw std::invalid_argument("cross_entropy: label out of range");
    e.loss[c] = -std::log(std::max(p(y, c), kProbFloor));
    if (p(y, c) < kProbFloor) {
      e.delta.col(c).setZero();  // loss sits on the floor, no signal
    } else {
      e.delta(y, c) -= 1.0;
    }
  }
  return e;
}

LossEval eval_kl(const Mat& z, const Mat& ref) {
  const Mat p = softmax_columns(z);
  LossEval e{Mat(z.rows(), z.cols()), Vec(z.cols())};
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    double loss = 0.0;
    double dot = 0.0;
    Vec v(z.rows());
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      const double pi = p(i, c);
      const double ratio = std::max(pi, kProbFloor) / std::max(ref(i, c), kProbFloor);
      const double lr = std::log(ratio);
      loss += pi * lr;
      // dloss/dp_i shifted by -1; softmax backprop ignores constant shifts and
      // the shift makes the gradient vanish identically at p == ref.
      v[i] = pi >= kProbFloor ? lr : lr - 1.0;
      dot += pi * v[i];
    }
    e.loss[c] = loss;
    e.delta.col(c) = p.col(c).cwiseProduct((v.array() - dot).matrix());
  }
  return e;
}

LossEval eval_softplus_margin(const Mat& z, const std::vector<int>& labels) {
  LossEval e{Mat::Zero(z.rows(), z.cols()), Vec(z.cols())};
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    const int y = labels[static_cast<std::size_t>(c)];
    if (y < 0 || y >= z.rows()) throw std::invalid_argument("softplus_margin: label out of range");
    Eigen::Index jstar = -1;
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < z.rows(); ++j) {
      if (j != y && z(j, c) > m) {
        m = z(j, c);
        jstar = j;
      }
    }
    const double arg = m - z(y, c);
    e.loss[c] = arg > 0.0 ? arg + std::log1p(std::exp(-arg)) : std::log1p(std::exp(arg));
    const double s = arg > 0.0 ? 1.0 / (1.0 + std::exp(-arg)) : std::exp(arg) / (1.0 + std::exp(arg));
    e.delta(jstar, c) += s;
    e.delta(y, c) -= s;
  }
  return e;
}

LossEval eval_loss(LossSpec::Kind kind, const Mat& z, const std::vector<int>& labels, const Mat& ref) {
  switch (kind) {
    case LossSpec::Kind::kCrossEntropy:
    case LossSpec::Kind::kCrossEntropyWithDa:
      return eval_cross_entropy(z, labels);
    case LossSpec::Kind::kKlToReference:
      return eval_kl(z, ref);
    case LossSpec::Kind::kSoftplusMargin:
      return eval_softplus_margin(z, labels);
  }
  throw std::logic_error("eval_loss: unknown kind");
}

Mat reference_matrix(const LossSpec& spec, Eigen::Index rows, std::size_t n) {
  if (spec.reference.size() != n) {
    throw std::invalid_argument("LossSpec: need one reference distribution per example");
  }
  Mat ref(rows, static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    if (spec.reference[i].size() != rows) throw std::invalid_argument("LossSpec: reference size mismatch");
    ref.col(static_cast<Eigen::Index>(i)) = spec.reference[i];
  }
  return ref;
}

}  // namespace

LossSpec LossSpec::kl_to_reference(std::vector<Vec> refs) {
  LossSpec s;
  s.kind = Kind::kKlToReference;
  s.reference = std::move(refs);
  return s;
}

LossSpec LossSpec::softplus_margin() {
  LossSpec s;
  s.kind = Kind::kSoftplusMargin;
  return s;
}

LossSpec LossSpec::cross_entropy_with_da(std::vector<Vec> benign, double weight) {
  LossSpec s;
  s.kind = Kind::kCrossEntropyWithDa;
  s.benign_inputs = std::move(benign);
  s.da_weight = weight;
  return s;
}

BatchTrace forward_batch(const Model& m, const Mat& inputs) {
  if (inputs.rows() != m.input_dim()) throw std::invalid_argument("forward_batch: input dimension mismatch");
  BatchTrace t;
  t.act.reserve(m.layers.size());
  t.pre.reserve(m.layers.size());
  t.act.push_back(inputs);
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    Mat z = (m.layers[l].w * t.act[l]).colwise() + m.layers[l].b;
    t.pre.push_back(z);
    if (l + 1 < m.layers.size()) t.act.push_back(t.pre[l].cwiseMax(0.0));
  }
  return t;
}

Mat logits_batch(const Model& m, const Mat& inputs) {
  Mat a = inputs;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    a = ((m.layers[l].w * a).colwise() + m.layers[l].b).eval();
    if (l + 1 < m.layers.size()) a = a.cwiseMax(0.0);
  }
  return a;
}

Mat softmax_columns(const Mat& z) {
  if (!z.allFinite()) throw std::runtime_error("softmax: non-finite logits");
  Mat e = (z.rowwise() - z.colwise().maxCoeff()).array().exp();
  return e.array().rowwise() / e.colwise().sum().array();
}

Mat cross_entropy_logit_delta(const Mat& logits, const std::vector<int>& labels, Vec* loss) {
  LossEval e = eval_cross_entropy(logits, labels);
  if (loss != nullptr) *loss = std::move(e.loss);
  return std::move(e.delta);
}

Mat kl_logit_delta(const Mat& logits, const Mat& reference, Vec* loss) {
  LossEval e = eval_kl(logits, reference);
  if (loss != nullptr) *loss = std::move(e.loss);
  return std::move(e.delta);
}

Mat softplus_margin_logit_delta(const Mat& logits, const std::vector<int>& labels, Vec* loss) {
  LossEval e = eval_loss(LossSpec::Kind::kSoftplusMargin, logits, labels, Mat());
  if (loss != nullptr) *loss = std::move(e.loss);
  return std::move(e.delta);
}

void backward_batch(const Model& m, const BatchTrace& trace, const Mat& dlogits,
                    Gradients* gp, Mat* dinputs) {
  Mat delta = dlogits;
  for (std::size_t l = m.layers.size(); l-- > 0;) {
    if (gp != nullptr) {
      gp->layers[l].w.noalias() += delta * trace.act[l].transpose();
      gp->layers[l].b += delta.rowwise().sum();
    }
    if (l > 0) {
      delta = (m.layers[l].w.transpose() * delta).cwiseProduct(
          (trace.pre[l - 1].array() > 0.0).cast<double>().matrix());
    } else if (dinputs != nullptr) {
      dinputs->noalias() = m.layers[0].w.transpose() * delta;
    }
  }
}

Gradients grad_params(const Model& m, const std::vector<Example>& batch, const LossSpec& spec) {
  if (batch.empty()) throw std::invalid_argument("grad_params: empty batch");
  const Eigen::Index n = static_cast<Eigen::Index>(batch.size());
  const Mat x = stack_columns(batch, m.input_dim());
  std::vector<int> labels(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) labels[i] = batch[i].y;

  const BatchTrace trace = forward_batch(m, x);
  Mat ref;
  if (spec.kind == LossSpec::Kind::kKlToReference) {
    ref = reference_matrix(spec, m.num_classes(), batch.size());
  }
  LossEval e = eval_loss(spec.kind, trace.pre.back(), labels, ref);
  e.delta *= 1.0 / static_cast<double>(n);

  Gradients g = Gradients::zeros_like(m);
  if (spec.kind == LossSpec::Kind::kCrossEntropyWithDa && spec.da_weight != 0.0) {
    if (spec.benign_inputs.size() != batch.size()) {
      throw std::invalid_argument("LossSpec: need one benign input per example");
    }
    const Mat xb = stack_columns(spec.benign_inputs, m.input_dim());
    const BatchTrace benign_trace = forward_batch(m, xb);
    Mat d_benign, d_adv;
    da_logit_deltas(benign_trace.pre.back(), trace.pre.back(), &d_benign, &d_adv);
    e.delta += spec.da_weight * d_adv;
    backward_batch(m, benign_trace, (spec.da_weight * d_benign).eval(), &g, nullptr);
  }
  backward_batch(m, trace, e.delta, &g, nullptr);
  return g;
}

Vec grad_input(const Model& m, const Vec& x, int label, const LossSpec& spec) {
  if (spec.kind == LossSpec::Kind::kCrossEntropyWithDa) {
    throw std::invalid_argument("grad_input: composite DA loss is batch-level only");
  }
  const BatchTrace trace = forward_batch(m, x);
  Mat ref;
  if (spec.kind == LossSpec::Kind::kKlToReference) {
    ref = reference_matrix(spec, m.num_classes(), 1);
  }
  const LossEval e = eval_loss(spec.kind, trace.pre.back(), {label}, ref);
  Mat dx(x.size(), 1);
  backward_batch(m, trace, e.delta, nullptr, &dx);
  return dx.col(0);
}

double batch_loss(const Model& m, const std::vector<Example>& batch, const LossSpec& spec) {
  if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
  const Mat x = stack_columns(batch, m.input_dim());
  std::vector<int> labels(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) labels[i] = batch[i].y;
  const Mat z = logits_batch(m, x);
  Mat ref;
  if (spec.kind == LossSpec::Kind::kKlToReference) {
    ref = reference_matrix(spec, m.num_classes(), batch.size());
  }
  const LossEval e = eval_loss(spec.kind, z, labels, ref);
  double total = e.loss.mean();
  if (spec.kind == LossSpec::Kind::kCrossEntropyWithDa && spec.da_weight != 0.0) {
    const Mat zb = logits_batch(m, stack_columns(spec.benign_inputs, m.input_dim()));
    std::vector<Vec> bl, al;
    for (Eigen::Index c = 0; c < zb.cols(); ++c) bl.push_back(zb.col(c));
    for (Eigen::Index c = 0; c < z.cols(); ++c) al.push_back(z.col(c));
    total += spec.da_weight * da_regularizer(bl, al);
  }
  return total;
}

double da_regularizer(const std::vector<Vec>& benign_logits, const std::vector<Vec>& adv_logits) {
  if (benign_logits.size() < 2 || adv_logits.size() < 2) {
    throw std::invalid_argument("da_regularizer: need batch size >= 2 on both sides");
  }
  const int k = static_cast<int>(benign_logits[0].size());
  const Mat zb = stack_columns(benign_logits, k);
  const Mat za = stack_columns(adv_logits, k);

  const Vec mu_b = zb.rowwise().mean();
  const Vec mu_a = za.rowwise().mean();
  const Mat cb = (zb.colwise() - mu_b) * (zb.colwise() - mu_b).transpose() /
                 static_cast<double>(zb.cols() - 1);
  const Mat ca = (za.colwise() - mu_a) * (za.colwise() - mu_a).transpose() /
                 static_cast<double>(za.cols() - 1);
  return (mu_b - mu_a).lpNorm<1>() + (cb - ca).lpNorm<1>();
}

void da_logit_deltas(const Mat& benign_logits, const Mat& adv_logits,
                     Mat* d_benign, Mat* d_adv) {
  const Eigen::Index nb = benign_logits.cols();
  const Eigen::Index na = adv_logits.cols();
  if (nb < 2 || na < 2) throw std::invalid_argument("da_logit_deltas: need batch size >= 2");
  const Vec mu_b = benign_logits.rowwise().mean();
  const Vec mu_a = adv_logits.rowwise().mean();
  const Mat centered_b = benign_logits.colwise() - mu_b;
  const Mat centered_a = adv_logits.colwise() - mu_a;
  const Mat cb = centered_b * centered_b.transpose() / static_cast<double>(nb - 1);
  const Mat ca = centered_a * centered_a.transpose() / static_cast<double>(na - 1);

  const Vec s_mu = (mu_b - mu_a).unaryExpr([](double v) { return sgn(v); });
  const Mat s_cov = (cb - ca).unaryExpr([](double v) { return sgn(v); });

  // d/dz of ||mu_b - mu_a||_1: +-s_mu / n. The mean-shift terms of the
  // covariance derivative cancel, leaving 2/(n-1) * S * (z - mu).
  *d_benign = (s_cov * centered_b) * (2.0 / static_cast<double>(nb - 1));
  d_benign->colwise() += s_mu / static_cast<double>(nb);
  *d_adv = (s_cov * centered_a) * (-2.0 / static_cast<double>(na - 1));
  d_adv->colwise() -= s_mu / static_cast<double>(na);
}

void SgdOptimizer::step(Model& m, const Gradients& g) {
  if (velocity.empty()) {
    for (const Layer& l : m.layers) {
      velocity.push_back({Mat::Zero(l.w.rows(), l.w.cols()), Vec::Zero(l.b.size())});
    }
  }
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    velocity[l].w = momentum * velocity[l].w + g.layers[l].w;
    velocity[l].b = momentum * velocity[l].b + g.layers[l].b;
    m.layers[l].w -= learning_rate * velocity[l].w;
    m.layers[l].b -= learning_rate * velocity[l].b;
  }
}

}  // namespace robustleak
