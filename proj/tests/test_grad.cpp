#include <cmath>
#include <vector>

#include "doctest.h"
#include "robustleak/grad.hpp"

using namespace robustleak;

namespace {

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3});
}

std::vector<Example> random_batch(int n, int dim, int classes, RngStream& rng) {
  std::vector<Example> batch(n);
  for (int i = 0; i < n; ++i) {
    batch[i].x = rng.uniform_vec(dim, 0.0, 1.0);
    batch[i].y = static_cast<int>(rng.integer(classes));
    batch[i].id = i;
  }
  return batch;
}

// Central finite differences of batch_loss over every parameter, compared
// entry-by-entry against grad_params.
void check_param_gradient(const Model& m, const std::vector<Example>& batch,
                          const LossSpec& spec) {
  const Gradients g = grad_params(m, batch, spec);
  const double h = 1e-5;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    for (Eigen::Index r = 0; r < m.layers[l].w.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.layers[l].w.cols(); ++c) {
        Model p = m, q = m;
        p.layers[l].w(r, c) += h;
        q.layers[l].w(r, c) -= h;
        const double fd = (batch_loss(p, batch, spec) - batch_loss(q, batch, spec)) / (2 * h);
        CHECK(rel_err(fd, g.layers[l].w(r, c)) < 1e-4);
      }
    }
    for (Eigen::Index r = 0; r < m.layers[l].b.size(); ++r) {
      Model p = m, q = m;
      p.layers[l].b[r] += h;
      q.layers[l].b[r] -= h;
      const double fd = (batch_loss(p, batch, spec) - batch_loss(q, batch, spec)) / (2 * h);
      CHECK(rel_err(fd, g.layers[l].b[r]) < 1e-4);
    }
  }
}

std::vector<Vec> cols_of(const Mat& m) {
  std::vector<Vec> out;
  for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m.col(c));
  return out;
}

}  // namespace

TEST_CASE("cross-entropy parameter gradient matches finite differences") {
  RngStream rng(21);
  const Model m = make_mlp({3, 6, 4}, rng);
  const std::vector<Example> batch = random_batch(5, 3, 4, rng);
  check_param_gradient(m, batch, LossSpec::cross_entropy());
}

TEST_CASE("softplus-margin parameter gradient matches finite differences") {
  RngStream rng(22);
  const Model m = make_mlp({3, 6, 4}, rng);
  const std::vector<Example> batch = random_batch(5, 3, 4, rng);
  check_param_gradient(m, batch, LossSpec::softplus_margin());
}

TEST_CASE("kl-to-reference parameter gradient matches finite differences") {
  RngStream rng(23);
  const Model m = make_mlp({3, 6, 4}, rng);
  const std::vector<Example> batch = random_batch(5, 3, 4, rng);
  std::vector<Vec> refs;
  for (int i = 0; i < 5; ++i) refs.push_back(softmax(rng.uniform_vec(4, -1.0, 1.0)));
  check_param_gradient(m, batch, LossSpec::kl_to_reference(refs));
}

TEST_CASE("cross-entropy-with-da parameter gradient matches finite differences") {
  RngStream rng(24);
  const Model m = make_mlp({3, 6, 4}, rng);
  const std::vector<Example> batch = random_batch(4, 3, 4, rng);
  std::vector<Vec> benign;
  for (const Example& z : batch) benign.push_back((z.x.array() + 0.01).matrix());
  check_param_gradient(m, batch, LossSpec::cross_entropy_with_da(benign, 0.3));
}

TEST_CASE("input gradient matches finite differences") {
  RngStream rng(25);
  const Model m = make_mlp({4, 7, 3}, rng);
  const Vec x = rng.uniform_vec(4, 0.1, 0.9);
  const int y = 1;
  const LossSpec spec = LossSpec::cross_entropy();
  const Vec g = grad_input(m, x, y, spec);
  const double h = 1e-5;
  for (int i = 0; i < 4; ++i) {
    Example p{x, y, 0}, q{x, y, 0};
    p.x[i] += h;
    q.x[i] -= h;
    const double fd = (batch_loss(m, {p}, spec) - batch_loss(m, {q}, spec)) / (2 * h);
    CHECK(rel_err(fd, g[i]) < 1e-4);
  }
}

TEST_CASE("batched forward equals the per-example forward, bit for bit") {
  RngStream rng(26);
  const Model m = make_mlp({5, 9, 4}, rng);
  Mat xs(5, 7);
  for (int c = 0; c < 7; ++c) xs.col(c) = rng.uniform_vec(5, 0.0, 1.0);
  const Mat z = logits_batch(m, xs);
  for (int c = 0; c < 7; ++c) {
    const Vec zc = logits(m, xs.col(c));
    CHECK((z.col(c) - zc).cwiseAbs().maxCoeff() == 0.0);
  }
  // the column-wise softmax may order its reductions differently; parity
  // here only needs to hold to rounding
  const Mat p = softmax_columns(z);
  for (int c = 0; c < 7; ++c) {
    const Vec pc = softmax(z.col(c));
    CHECK((p.col(c) - pc).cwiseAbs().maxCoeff() <= 1e-15);
  }
}

TEST_CASE("per-column logit deltas carry the per-example losses") {
  RngStream rng(27);
  const Model m = make_mlp({3, 5, 4}, rng);
  Mat xs(3, 3);
  for (int c = 0; c < 3; ++c) xs.col(c) = rng.uniform_vec(3, 0.0, 1.0);
  const std::vector<int> labels = {0, 2, 1};
  const Mat z = logits_batch(m, xs);
  Vec losses;
  cross_entropy_logit_delta(z, labels, &losses);
  for (int c = 0; c < 3; ++c)
    CHECK(losses[c] == doctest::Approx(cross_entropy(softmax(z.col(c)), labels[c])).epsilon(1e-13));
  Vec sp_losses;
  softplus_margin_logit_delta(z, labels, &sp_losses);
  for (int c = 0; c < 3; ++c)
    CHECK(sp_losses[c] == doctest::Approx(softplus_margin_loss(z.col(c), labels[c])).epsilon(1e-13));
}

TEST_CASE("da regularizer matches a hand-computed value") {
  // benign: (1,2),(3,4)  means (2,3), cov [[2,2],[2,2]]
  // adv:    (0,1),(5,2)  means (2.5,1.5), cov [[12.5,2.5],[2.5,0.5]]
  // |mu|_1 = 2, |cov|_1 = 10.5+0.5+0.5+1.5 = 13
  std::vector<Vec> benign(2, Vec(2)), adv(2, Vec(2));
  benign[0] << 1.0, 2.0;
  benign[1] << 3.0, 4.0;
  adv[0] << 0.0, 1.0;
  adv[1] << 5.0, 2.0;
  CHECK(da_regularizer(benign, adv) == 15.0);
  CHECK(da_regularizer(benign, benign) == 0.0);
  std::vector<Vec> one(1, Vec(2));
  one[0] << 0.0, 0.0;
  CHECK_THROWS(da_regularizer(one, adv));
}

TEST_CASE("da logit deltas match finite differences away from ties") {
  Mat benign(2, 2), adv(2, 2);
  benign << 1.0, 3.0, 2.0, 4.0;  // columns (1,2),(3,4)
  adv << 0.0, 5.0, 1.0, 2.0;     // columns (0,1),(5,2)
  Mat d_benign, d_adv;
  da_logit_deltas(benign, adv, &d_benign, &d_adv);
  const double h = 1e-6;
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 2; ++c) {
      Mat bp = benign, bq = benign;
      bp(r, c) += h;
      bq(r, c) -= h;
      const double fd =
          (da_regularizer(cols_of(bp), cols_of(adv)) - da_regularizer(cols_of(bq), cols_of(adv))) /
          (2 * h);
      CHECK(rel_err(fd, d_benign(r, c)) < 1e-4);
      Mat ap = adv, aq = adv;
      ap(r, c) += h;
      aq(r, c) -= h;
      const double fd2 =
          (da_regularizer(cols_of(benign), cols_of(ap)) - da_regularizer(cols_of(benign), cols_of(aq))) /
          (2 * h);
      CHECK(rel_err(fd2, d_adv(r, c)) < 1e-4);
    }
  }
}

TEST_CASE("momentum sgd follows the v and theta recursions exactly") {
  Model m;
  Layer l;
  l.w = Mat::Constant(1, 1, 1.0);
  l.b = Vec::Zero(1);
  m.layers.push_back(l);
  Gradients g = Gradients::zeros_like(m);
  g.layers[0].w(0, 0) = 0.5;

  SgdOptimizer opt(0.1, 0.9);
  opt.step(m, g);
  const double v1 = 0.5;
  const double w1 = 1.0 - 0.1 * v1;
  CHECK(m.layers[0].w(0, 0) == w1);

  opt.step(m, g);
  const double v2 = 0.9 * v1 + 0.5;
  CHECK(m.layers[0].w(0, 0) == w1 - 0.1 * v2);
}

TEST_CASE("gradient container arithmetic") {
  RngStream rng(28);
  const Model m = make_mlp({2, 3, 2}, rng);
  Gradients g = Gradients::zeros_like(m);
  CHECK(g.squared_norm() == 0.0);
  Gradients h = Gradients::zeros_like(m);
  h.layers[0].w(0, 0) = 2.0;
  g.add_scaled(h, 0.5);
  CHECK(g.layers[0].w(0, 0) == 1.0);
  g.scale(3.0);
  CHECK(g.layers[0].w(0, 0) == 3.0);
  CHECK(g.squared_norm() == 9.0);
}
