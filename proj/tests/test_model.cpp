#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "doctest.h"
#include "robustleak/model.hpp"

using namespace robustleak;

namespace {

Model two_logit_line() {
  // z = (x, -x): one linear layer, no hidden stack.
  Model m;
  Layer l;
  l.w = Mat(2, 1);
  l.w << 1.0, -1.0;
  l.b = Vec::Zero(2);
  m.layers.push_back(l);
  return m;
}

}  // namespace

TEST_CASE("make_mlp shapes, zero biases, glorot range") {
  RngStream rng(3);
  const Model m = make_mlp({4, 8, 3}, rng);
  REQUIRE(m.layers.size() == 2);
  CHECK(m.layers[0].w.rows() == 8);
  CHECK(m.layers[0].w.cols() == 4);
  CHECK(m.layers[0].b.size() == 8);
  CHECK(m.layers[1].w.rows() == 3);
  CHECK(m.layers[1].w.cols() == 8);
  CHECK(m.input_dim() == 4);
  CHECK(m.num_classes() == 3);
  CHECK(m.layers[0].b.cwiseAbs().maxCoeff() == 0.0);
  CHECK(m.layers[1].b.cwiseAbs().maxCoeff() == 0.0);
  const double lim0 = std::sqrt(6.0 / (4 + 8));
  const double lim1 = std::sqrt(6.0 / (8 + 3));
  CHECK(m.layers[0].w.cwiseAbs().maxCoeff() <= lim0);
  CHECK(m.layers[1].w.cwiseAbs().maxCoeff() <= lim1);
}

TEST_CASE("make_mlp validates dims") {
  RngStream rng(3);
  CHECK_THROWS_AS(make_mlp({4}, rng), std::invalid_argument);
  CHECK_THROWS_AS(make_mlp({4, 0, 3}, rng), std::invalid_argument);
}

TEST_CASE("logits of a hand-built affine layer") {
  Model m;
  Layer l;
  l.w = Mat(2, 2);
  l.w << 1.0, 2.0, 3.0, 4.0;
  l.b = Vec(2);
  l.b << 0.5, -0.5;
  m.layers.push_back(l);
  Vec x(2);
  x << 1.0, 1.0;
  const Vec z = logits(m, x);
  CHECK(z[0] == 3.5);
  CHECK(z[1] == 6.5);
}

TEST_CASE("relu clamps hidden activations") {
  // h = relu((x, -x)), z = h_0 + h_1 = |x|
  Model m;
  Layer l0;
  l0.w = Mat(2, 1);
  l0.w << 1.0, -1.0;
  l0.b = Vec::Zero(2);
  Layer l1;
  l1.w = Mat(1, 2);
  l1.w << 1.0, 1.0;
  l1.b = Vec::Zero(1);
  m.layers = {l0, l1};
  Vec x(1);
  x << 2.0;
  CHECK(logits(m, x)[0] == 2.0);
  x << -3.0;
  CHECK(logits(m, x)[0] == 3.0);
}

TEST_CASE("logits rejects dimension mismatch") {
  const Model m = two_logit_line();
  Vec x(2);
  x << 0.0, 0.0;
  CHECK_THROWS_AS(logits(m, x), std::invalid_argument);
}

TEST_CASE("softmax matches frozen values") {
  Vec z(2);
  z << 5.0, 0.0;
  const Vec p = softmax(z);
  CHECK(p[0] == doctest::Approx(0.9933071490757153).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(0.0066928509242848554).epsilon(1e-15));
  Vec z3(3);
  z3 << 1.0, 0.0, 0.0;
  const Vec p3 = softmax(z3);
  CHECK(p3[0] == doctest::Approx(0.5761168847658291).epsilon(1e-15));
  CHECK(p3[1] == doctest::Approx(0.21194155761708547).epsilon(1e-15));
  CHECK(p3.sum() == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("softmax is shift invariant and rejects non-finite input") {
  Vec z(3);
  z << 0.3, -1.2, 2.0;
  const Vec p = softmax(z);
  const Vec q = softmax((z.array() + 100.0).matrix());
  for (int i = 0; i < 3; ++i) CHECK(p[i] == doctest::Approx(q[i]).epsilon(1e-14));
  Vec bad(2);
  bad << 1.0, std::numeric_limits<double>::infinity();
  CHECK_THROWS(softmax(bad));
}

TEST_CASE("argmax picks the first of tied maxima") {
  Vec v(3);
  v << 1.0, 3.0, 3.0;
  CHECK(argmax(v) == 1);
  v << 5.0, 3.0, 3.0;
  CHECK(argmax(v) == 0);
}

TEST_CASE("predict and predicted_label agree with logits") {
  const Model m = two_logit_line();
  Vec x(1);
  x << 0.7;
  const Vec p = predict(m, x);
  const Vec ref = softmax(logits(m, x));
  CHECK(p[0] == ref[0]);
  CHECK(p[1] == ref[1]);
  CHECK(predicted_label(m, x) == 0);
  x << -0.7;
  CHECK(predicted_label(m, x) == 1);
}

TEST_CASE("checkpoint round-trip is bitwise") {
  RngStream rng(17);
  const Model m = make_mlp({5, 7, 4}, rng);
  const std::string path = "roundtrip_model.json";
  save_model(m, path);
  const Model back = load_model(path);
  REQUIRE(back.layers.size() == m.layers.size());
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    CHECK((back.layers[l].w - m.layers[l].w).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.layers[l].b - m.layers[l].b).cwiseAbs().maxCoeff() == 0.0);
  }
  Vec x = rng.uniform_vec(5, 0.0, 1.0);
  CHECK((logits(back, x) - logits(m, x)).cwiseAbs().maxCoeff() == 0.0);
  std::remove(path.c_str());
}

TEST_CASE("load_model rejects malformed files") {
  const std::string path = "broken_model.json";
  {
    std::FILE* f = std::fopen(path.c_str(), "w");
    REQUIRE(f != nullptr);
    std::fputs("{\"not\":\"a model\"}", f);
    std::fclose(f);
  }
  CHECK_THROWS(load_model(path));
  CHECK_THROWS(load_model("no_such_model_file.json"));
  std::remove(path.c_str());
}
