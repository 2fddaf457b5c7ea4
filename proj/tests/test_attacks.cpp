#include <cmath>

#include "doctest.h"
#include "robustleak/attacks.hpp"

using namespace robustleak;

namespace {

Model one_dim_two_class() {
  // z = (x, -x): pushing x up favors class 0, down favors class 1.
  Model m;
  Layer l;
  l.w = Mat(2, 1);
  l.w << 1.0, -1.0;
  l.b = Vec::Zero(2);
  m.layers.push_back(l);
  return m;
}

double ce_at(const Model& m, const Vec& x, int y) {
  return cross_entropy(predict(m, x), y);
}

}  // namespace

TEST_CASE("linf projection clamps to the ball intersected with the box") {
  PerturbationConstraint c = PerturbationConstraint::unit_box(3, 0.1);
  Vec x(3);
  x << 0.5, 0.05, 0.95;
  Vec inside(3);
  inside << 0.55, 0.1, 0.9;
  CHECK((project_linf(inside, x, c) - inside).cwiseAbs().maxCoeff() == 0.0);

  Vec far(3);
  far << 0.9, -0.5, 2.0;
  const Vec p = project_linf(far, x, c);
  CHECK(p[0] == 0.5 + 0.1);   // ball edge
  CHECK(p[1] == 0.0);         // box floor binds before the ball edge at -0.05
  CHECK(p[2] == 1.0);         // box ceiling binds before the ball edge at 1.05
}

TEST_CASE("zero-budget projection returns the anchor exactly") {
  PerturbationConstraint c = PerturbationConstraint::unit_box(2, 0.0);
  Vec x(2);
  x << 0.3, 0.7;
  Vec other(2);
  other << 0.9, 0.1;
  const Vec p = project_linf(other, x, c);
  CHECK(p[0] == x[0]);
  CHECK(p[1] == x[1]);
}

TEST_CASE("one signed step moves against the label on a linear score") {
  const Model m = one_dim_two_class();
  PerturbationConstraint c = PerturbationConstraint::unit_box(1, 0.1);
  AttackConfig cfg;
  cfg.steps = 1;
  cfg.step_size = 0.1;
  RngStream rng(1);

  Example z;
  z.x = Vec::Constant(1, 0.5);
  z.y = 0;
  const Vec adv = pgd_untargeted(m, z, c, cfg, rng);
  CHECK(adv[0] == 0.5 - 0.1);
  CHECK(predict(m, adv)[0] < predict(m, z.x)[0]);

  const Vec toward = pgd_targeted(m, z.x, 0, c, cfg, rng);
  CHECK(toward[0] == 0.5 + 0.1);
  CHECK(predict(m, toward)[0] > predict(m, z.x)[0]);
}

TEST_CASE("multi-step attack saturates at the ball edge") {
  const Model m = one_dim_two_class();
  PerturbationConstraint c = PerturbationConstraint::unit_box(1, 0.1);
  AttackConfig cfg;
  cfg.steps = 20;
  cfg.step_size = 0.1 / 8;
  RngStream rng(1);
  Example z{Vec::Constant(1, 0.5), 0, 0};
  const Vec adv = pgd_untargeted(m, z, c, cfg, rng);
  CHECK(adv[0] == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("positive steps require a positive step size") {
  const Model m = one_dim_two_class();
  PerturbationConstraint c = PerturbationConstraint::unit_box(1, 0.1);
  AttackConfig cfg;
  cfg.steps = 5;
  cfg.step_size = 0.0;
  RngStream rng(1);
  Example z{Vec::Constant(1, 0.5), 0, 0};
  CHECK_THROWS_AS((void)pgd_untargeted(m, z, c, cfg, rng), std::invalid_argument);
}

TEST_CASE("zero steps and zero budget are both exact identities") {
  RngStream mk(31);
  const Model m = make_mlp({4, 6, 3}, mk);
  PerturbationConstraint c = PerturbationConstraint::unit_box(4, 0.1);
  AttackConfig none;
  none.steps = 0;
  none.step_size = 0.0;
  RngStream rng(2);
  const Vec x = mk.uniform_vec(4, 0.0, 1.0);
  Example z{x, 1, 0};
  const Vec a = pgd_untargeted(m, z, c, none, rng);
  CHECK((a - x).cwiseAbs().maxCoeff() == 0.0);

  PerturbationConstraint c0 = PerturbationConstraint::unit_box(4, 0.0);
  AttackConfig cfg;
  cfg.steps = 7;
  cfg.step_size = 0.01;
  const Vec b = pgd_untargeted(m, z, c0, cfg, rng);
  CHECK((b - x).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("attack output stays inside the ball and the box") {
  RngStream mk(32);
  const Model m = make_mlp({4, 8, 3}, mk);
  PerturbationConstraint c = PerturbationConstraint::unit_box(4, 0.1);
  for (AttackInit init : {AttackInit::kAtInput, AttackInit::kRandomInBall}) {
    for (AttackIterate iter : {AttackIterate::kFinal, AttackIterate::kBestLoss}) {
      AttackConfig cfg;
      cfg.steps = 10;
      cfg.step_size = 0.03;
      cfg.init = init;
      cfg.iterate = iter;
      RngStream rng(3);
      for (int i = 0; i < 20; ++i) {
        Example z{mk.uniform_vec(4, 0.0, 1.0), static_cast<int>(mk.integer(3)), i};
        const Vec adv = pgd_untargeted(m, z, c, cfg, rng);
        CHECK((adv - z.x).cwiseAbs().maxCoeff() <= 0.1 + 1e-12);
        CHECK(adv.minCoeff() >= 0.0);
        CHECK(adv.maxCoeff() <= 1.0);
      }
    }
  }
}

TEST_CASE("best-loss iterate never loses to the final iterate") {
  RngStream mk(33);
  const Model m = make_mlp({4, 8, 3}, mk);
  PerturbationConstraint c = PerturbationConstraint::unit_box(4, 0.15);
  for (int i = 0; i < 10; ++i) {
    Example z{mk.uniform_vec(4, 0.0, 1.0), static_cast<int>(mk.integer(3)), i};
    AttackConfig cfg;
    cfg.steps = 12;
    cfg.step_size = 0.08;  // deliberately coarse so the trajectory overshoots
    cfg.init = AttackInit::kRandomInBall;

    cfg.iterate = AttackIterate::kFinal;
    RngStream r1(4);
    const Vec fin = pgd_untargeted(m, z, c, cfg, r1);

    cfg.iterate = AttackIterate::kBestLoss;
    RngStream r2(4);
    const Vec best = pgd_untargeted(m, z, c, cfg, r2);

    CHECK(ce_at(m, best, z.y) >= ce_at(m, fin, z.y));
  }
}

TEST_CASE("a huge distance penalty pins the keep-best attack at the input") {
  RngStream mk(34);
  const Model m = make_mlp({3, 6, 3}, mk);
  PerturbationConstraint c = PerturbationConstraint::unit_box(3, 0.25);
  AttackConfig cfg;
  cfg.steps = 7;
  cfg.step_size = 0.25 / 4;
  cfg.iterate = AttackIterate::kBestLoss;
  cfg.gamma = 1e6;
  RngStream rng(5);
  for (int i = 0; i < 10; ++i) {
    Example z{mk.uniform_vec(3, 0.0, 1.0), static_cast<int>(mk.integer(3)), i};
    const Vec adv = dist_attack(m, z, c, cfg, rng);
    CHECK((adv - z.x).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("distance-penalty attack obeys the box even without a ball") {
  RngStream mk(35);
  const Model m = make_mlp({3, 6, 3}, mk);
  PerturbationConstraint c = PerturbationConstraint::unit_box(3, 0.05);
  AttackConfig cfg;
  cfg.steps = 15;
  cfg.step_size = 0.2;  // ball would forbid this; only the box may bind
  cfg.gamma = 0.01;
  RngStream rng(6);
  Example z{mk.uniform_vec(3, 0.0, 1.0), 1, 0};
  const Vec adv = dist_attack(m, z, c, cfg, rng);
  CHECK(adv.minCoeff() >= 0.0);
  CHECK(adv.maxCoeff() <= 1.0);
  CHECK((adv - z.x).cwiseAbs().maxCoeff() > 0.05);  // escaped the nominal ball
}

TEST_CASE("divergence attack is deterministic and contained") {
  RngStream mk(36);
  const Model m = make_mlp({4, 7, 3}, mk);
  PerturbationConstraint c = PerturbationConstraint::unit_box(4, 0.1);
  AttackConfig cfg;
  cfg.steps = 10;
  cfg.step_size = 0.025;
  cfg.init = AttackInit::kRandomInBall;
  const Vec x = mk.uniform_vec(4, 0.0, 1.0);

  RngStream r1(7), r2(7);
  const Vec a = diff_pgd(m, x, c, cfg, r1);
  const Vec b = diff_pgd(m, x, c, cfg, r2);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a - x).cwiseAbs().maxCoeff() <= 0.1 + 1e-12);
  CHECK(kl_divergence(predict(m, a), predict(m, x)) > 0.0);

  // short runs cannot saturate at a shared ball corner, so seeds must differ
  cfg.steps = 2;
  RngStream r3(7), r4(8);
  const Vec s1 = diff_pgd(m, x, c, cfg, r3);
  const Vec s2 = diff_pgd(m, x, c, cfg, r4);
  CHECK((s1 - s2).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("batched attacks match the single-example attacks column by column") {
  RngStream mk(37);
  const Model m = make_mlp({4, 8, 3}, mk);
  PerturbationConstraint c = PerturbationConstraint::unit_box(4, 0.1);
  AttackConfig cfg;
  cfg.steps = 8;
  cfg.step_size = 0.02;  // at-input init: no rng draws, so columns are independent
  Mat xs(4, 3);
  std::vector<int> labels(3);
  for (int j = 0; j < 3; ++j) {
    xs.col(j) = mk.uniform_vec(4, 0.0, 1.0);
    labels[j] = static_cast<int>(mk.integer(3));
  }
  RngStream rb(9);
  const Mat adv = pgd_untargeted_batch(m, xs, labels, c, cfg, rb);
  for (int j = 0; j < 3; ++j) {
    RngStream rs(9);
    Example z{xs.col(j), labels[j], j};
    const Vec one = pgd_untargeted(m, z, c, cfg, rs);
    CHECK((adv.col(j) - one).cwiseAbs().maxCoeff() == 0.0);
  }
}
