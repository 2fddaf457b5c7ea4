#include <cmath>

#include "doctest.h"
#include "robustleak/data.hpp"
#include "robustleak/verify.hpp"

using namespace robustleak;

namespace {

Model identity_model(int dim) {
  Model m;
  Layer l;
  l.w = Mat::Identity(dim, dim);
  l.b = Vec::Zero(dim);
  m.layers.push_back(l);
  return m;
}

}  // namespace

TEST_CASE("interval bounds on an identity layer reproduce the input interval") {
  const Model m = identity_model(2);
  PerturbationConstraint c = PerturbationConstraint::unit_box(2, 0.05);
  Vec x(2);
  x << 0.6, 0.1;
  const IntervalBounds b = ibp_bounds(m, x, c);
  CHECK(b.low[0] == doctest::Approx(0.55).epsilon(1e-15));
  CHECK(b.high[0] == doctest::Approx(0.65).epsilon(1e-15));
  CHECK(b.low[1] == doctest::Approx(0.05).epsilon(1e-15));
  CHECK(b.high[1] == doctest::Approx(0.15).epsilon(1e-15));

  const Vec w = worst_case_logits(b, 0);
  CHECK(w[0] == b.low[0]);
  CHECK(w[1] == b.high[1]);

  // softmax((0.55, 0.15))[0] = sigmoid(0.4)
  Example z{x, 0, 0};
  CHECK(verified_worst_case_confidence(m, z, c) ==
        doctest::Approx(0.598687660112452).epsilon(1e-13));
  CHECK(is_verified_secure(m, z, c));
}

TEST_CASE("the input interval is clipped to the box") {
  const Model m = identity_model(2);
  PerturbationConstraint c = PerturbationConstraint::unit_box(2, 0.05);
  Vec x(2);
  x << 0.02, 0.98;
  const IbpTrace t = ibp_forward(m, x, c);
  CHECK(t.input.low[0] == 0.0);
  CHECK(t.input.high[0] == doctest::Approx(0.07).epsilon(1e-15));
  CHECK(t.input.low[1] == doctest::Approx(0.93).epsilon(1e-15));
  CHECK(t.input.high[1] == 1.0);
}

TEST_CASE("overlapping class intervals are not secure") {
  const Model m = identity_model(2);
  PerturbationConstraint c = PerturbationConstraint::unit_box(2, 0.3);
  Vec x(2);
  x << 0.5, 0.45;
  Example z{x, 0, 0};
  CHECK_FALSE(is_verified_secure(m, z, c));

  LabeledDataset d;
  d.feature_dim = 2;
  d.num_classes = 2;
  d.box_low = Vec::Zero(2);
  d.box_high = Vec::Ones(2);
  Vec clear(2);
  clear << 0.9, 0.1;
  d.examples.push_back({clear, 0, 0});
  d.examples.push_back({x, 0, 1});
  PerturbationConstraint tight = PerturbationConstraint::unit_box(2, 0.05);
  CHECK(verified_accuracy(m, d.examples, tight) == 0.5);
}

TEST_CASE("worst-case logits reject an out-of-range label") {
  IntervalBounds b;
  b.low = Vec::Zero(3);
  b.high = Vec::Ones(3);
  CHECK_THROWS_AS((void)worst_case_logits(b, 3), std::invalid_argument);
  CHECK_THROWS_AS((void)worst_case_logits(b, -1), std::invalid_argument);
}

TEST_CASE("random ball points always land inside the propagated intervals") {
  RngStream mk(41);
  const Model m = make_mlp({4, 8, 8, 3}, mk);
  PerturbationConstraint c = PerturbationConstraint::unit_box(4, 0.08);
  RngStream rng(42);
  for (int i = 0; i < 20; ++i) {
    const Vec x = rng.uniform_vec(4, 0.0, 1.0);
    const IntervalBounds b = ibp_bounds(m, x, c);
    for (int s = 0; s < 100; ++s) {
      Vec pt(4);
      for (int j = 0; j < 4; ++j)
        pt[j] = std::clamp(x[j] + rng.uniform(-0.08, 0.08), 0.0, 1.0);
      const Vec z = logits(m, pt);
      CHECK((z - b.low).minCoeff() >= -1e-9);
      CHECK((b.high - z).minCoeff() >= -1e-9);
    }
  }
}

TEST_CASE("intervals nest as the budget grows") {
  RngStream mk(43);
  const Model m = make_mlp({3, 6, 4}, mk);
  RngStream rng(44);
  const Vec x = rng.uniform_vec(3, 0.0, 1.0);
  IntervalBounds prev;
  bool have_prev = false;
  for (double eps : {0.0, 0.02, 0.05, 0.1, 0.2}) {
    PerturbationConstraint c = PerturbationConstraint::unit_box(3, eps);
    const IntervalBounds b = ibp_bounds(m, x, c);
    if (have_prev) {
      CHECK((prev.low - b.low).minCoeff() >= -1e-12);
      CHECK((b.high - prev.high).minCoeff() >= -1e-12);
    }
    prev = b;
    have_prev = true;
  }
}

TEST_CASE("zero budget collapses the bounds onto the plain forward pass") {
  RngStream mk(45);
  const Model m = make_mlp({4, 6, 3}, mk);
  PerturbationConstraint c = PerturbationConstraint::unit_box(4, 0.0);
  const Vec x = mk.uniform_vec(4, 0.0, 1.0);
  const IntervalBounds b = ibp_bounds(m, x, c);
  const Vec z = logits(m, x);
  CHECK((b.low - z).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((b.high - z).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("certified accuracy never beats attacked accuracy, which never beats plain accuracy") {
  RngStream mk(46);
  LabeledDataset d = gen_synthetic(3, 30, 4, 0.08, 91);
  const Model m = make_mlp({4, 8, 3}, mk);
  PerturbationConstraint c;
  c.epsilon = 0.03;
  c.box_low = d.box_low;
  c.box_high = d.box_high;
  AttackConfig cfg;
  cfg.steps = 20;
  cfg.step_size = c.epsilon / 8;
  cfg.iterate = AttackIterate::kBestLoss;
  RngStream rng(47);
  const double ver = verified_accuracy(m, d.examples, c);
  const double adv = adv_accuracy(m, d, c, cfg, rng);
  const double ben = accuracy(m, d);
  CHECK(ver <= adv + 1e-12);
  CHECK(adv <= ben + 1e-12);
}

TEST_CASE("batched interval forward agrees with the single-example trace") {
  RngStream mk(48);
  const Model m = make_mlp({3, 5, 4}, mk);
  PerturbationConstraint c = PerturbationConstraint::unit_box(3, 0.06);
  Mat xs(3, 4);
  for (int j = 0; j < 4; ++j) xs.col(j) = mk.uniform_vec(3, 0.0, 1.0);
  const IbpBatchTrace bt = ibp_forward_batch(m, xs, c);
  for (int j = 0; j < 4; ++j) {
    const IbpTrace t = ibp_forward(m, xs.col(j), c);
    const IntervalBounds& last = t.pre_act.back();
    CHECK((bt.out_low.back().col(j) - last.low).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((bt.out_high.back().col(j) - last.high).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("gradients through the bounds match finite differences") {
  RngStream mk(49);
  Model m = make_mlp({3, 5, 3}, mk);
  PerturbationConstraint c = PerturbationConstraint::unit_box(3, 0.05);
  Mat xs(3, 3);
  for (int j = 0; j < 3; ++j) xs.col(j) = mk.uniform_vec(3, 0.1, 0.9);

  // J = sum(low) + 2 * sum(high), summed over the batch.
  const auto objective = [&](const Model& mm) {
    const IbpBatchTrace t = ibp_forward_batch(mm, xs, c);
    return t.out_low.back().sum() + 2.0 * t.out_high.back().sum();
  };

  const IbpBatchTrace t = ibp_forward_batch(m, xs, c);
  Gradients g = Gradients::zeros_like(m);
  const Mat dlow = Mat::Ones(3, 3);
  const Mat dhigh = Mat::Constant(3, 3, 2.0);
  ibp_backward_batch(m, t, dlow, dhigh, &g);

  const double h = 1e-6;
  const auto rel_err = [](double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3});
  };
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    for (Eigen::Index r = 0; r < m.layers[l].w.rows(); ++r) {
      for (Eigen::Index cc = 0; cc < m.layers[l].w.cols(); ++cc) {
        Model p = m, q = m;
        p.layers[l].w(r, cc) += h;
        q.layers[l].w(r, cc) -= h;
        const double fd = (objective(p) - objective(q)) / (2 * h);
        CHECK(rel_err(fd, g.layers[l].w(r, cc)) < 1e-4);
      }
    }
    for (Eigen::Index r = 0; r < m.layers[l].b.size(); ++r) {
      Model p = m, q = m;
      p.layers[l].b[r] += h;
      q.layers[l].b[r] -= h;
      const double fd = (objective(p) - objective(q)) / (2 * h);
      CHECK(rel_err(fd, g.layers[l].b[r]) < 1e-4);
    }
  }
}
