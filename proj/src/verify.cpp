#include "robustleak/verify.hpp"

#include <stdexcept>

#include "robustleak/losses.hpp"

namespace robustleak {

IbpBatchTrace ibp_forward_batch(const Model& m, const Mat& xs, const PerturbationConstraint& c) {
  if (xs.rows() != m.input_dim()) throw std::invalid_argument("ibp: input dimension mismatch");
  const Mat lo = (xs.array() - c.epsilon).matrix().cwiseMax(c.box_low.replicate(1, xs.cols()));
  const Mat hi = (xs.array() + c.epsilon).matrix().cwiseMin(c.box_high.replicate(1, xs.cols()));

  IbpBatchTrace t;
  Mat mid = 0.5 * (lo + hi);
  Mat rad = 0.5 * (hi - lo);
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    t.in_mid.push_back(mid);
    t.in_rad.push_back(rad);
    const Mat out_mid = (m.layers[l].w * mid).colwise() + m.layers[l].b;
    const Mat out_rad = m.layers[l].w.cwiseAbs() * rad;
    t.out_low.push_back(out_mid - out_rad);
    t.out_high.push_back(out_mid + out_rad);
    if (l + 1 < m.layers.size()) {
      const Mat rlow = t.out_low[l].cwiseMax(0.0);
      const Mat rhigh = t.out_high[l].cwiseMax(0.0);
      mid = 0.5 * (rlow + rhigh);
      rad = 0.5 * (rhigh - rlow);
    }
  }
  return t;
}

void ibp_backward_batch(const Model& m, const IbpBatchTrace& trace,
                        const Mat& dlow, const Mat& dhigh, Gradients* gp) {
  Mat dl = dlow;
  Mat dh = dhigh;
  for (std::size_t l = m.layers.size(); l-- > 0;) {
    // out_low = mid - rad, out_high = mid + rad
    const Mat dmid = dl + dh;
    const Mat drad = dh - dl;
    gp->layers[l].w.noalias() += dmid * trace.in_mid[l].transpose();
    gp->layers[l].w += m.layers[l].w.unaryExpr([](double v) {
                          return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
                        }).cwiseProduct((drad * trace.in_rad[l].transpose()).eval());
    gp->layers[l].b += dmid.rowwise().sum();
    if (l == 0) break;
    const Mat din_mid = m.layers[l].w.transpose() * dmid;
    const Mat din_rad = m.layers[l].w.cwiseAbs().transpose() * drad;
    // in_mid = (relu(low) + relu(high))/2, in_rad = (relu(high) - relu(low))/2
    const Mat drlow = 0.5 * (din_mid - din_rad);
    const Mat drhigh = 0.5 * (din_mid + din_rad);
    dl = drlow.cwiseProduct((trace.out_low[l - 1].array() > 0.0).cast<double>().matrix());
    dh = drhigh.cwiseProduct((trace.out_high[l - 1].array() > 0.0).cast<double>().matrix());
  }
}

IbpTrace ibp_forward(const Model& m, const Vec& x, const PerturbationConstraint& c) {
  const IbpBatchTrace bt = ibp_forward_batch(m, x, c);
  IbpTrace t;
  t.input = {bt.in_mid[0].col(0) - bt.in_rad[0].col(0), bt.in_mid[0].col(0) + bt.in_rad[0].col(0)};
  for (std::size_t l = 0; l < bt.out_low.size(); ++l) {
    t.pre_act.push_back({bt.out_low[l].col(0), bt.out_high[l].col(0)});
  }
  return t;
}

IntervalBounds ibp_bounds(const Model& m, const Vec& x, const PerturbationConstraint& c) {
  const IbpBatchTrace bt = ibp_forward_batch(m, x, c);
  return {bt.out_low.back().col(0), bt.out_high.back().col(0)};
}

Vec worst_case_logits(const IntervalBounds& bounds, int label) {
  if (label < 0 || label >= bounds.low.size()) {
    throw std::invalid_argument("worst_case_logits: label out of range");
  }
  Vec v = bounds.high;
  v[label] = bounds.low[label];
  return v;
}

double verified_worst_case_confidence(const Model& m, const Example& z,
                                      const PerturbationConstraint& c) {
  const Vec v = worst_case_logits(ibp_bounds(m, z.x, c), z.y);
  return softmax(v)[z.y];
}

bool is_verified_secure(const Model& m, const Example& z, const PerturbationConstraint& c) {
  const IntervalBounds b = ibp_bounds(m, z.x, c);
  if (z.y < 0 || z.y >= b.low.size()) throw std::invalid_argument("is_verified_secure: label out of range");
  for (Eigen::Index j = 0; j < b.high.size(); ++j) {
    if (j != z.y && !(b.low[z.y] > b.high[j])) return false;
  }
  return true;
}

double verified_accuracy(const Model& m, const std::vector<Example>& data,
                         const PerturbationConstraint& c) {
  if (data.empty()) throw std::invalid_argument("verified_accuracy: empty dataset");
  std::size_t n = 0;
  for (const Example& z : data) {
    if (is_verified_secure(m, z, c)) ++n;
  }
  return static_cast<double>(n) / static_cast<double>(data.size());
}

}  // namespace robustleak
