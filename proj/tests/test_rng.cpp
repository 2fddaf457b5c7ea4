#include <algorithm>
#include <set>
#include <vector>

#include "doctest.h"
#include "robustleak/rng.hpp"

using namespace robustleak;

TEST_CASE("same seed reproduces the raw stream") {
  RngStream a(42), b(42);
  for (int i = 0; i < 64; ++i) CHECK(a.raw() == b.raw());
}

TEST_CASE("different seeds diverge") {
  RngStream a(1), b(2);
  int same = 0;
  for (int i = 0; i < 32; ++i)
    if (a.raw() == b.raw()) ++same;
  CHECK(same < 4);
}

TEST_CASE("children depend only on the base seed, not on consumption") {
  RngStream fresh(7);
  RngStream used(7);
  for (int i = 0; i < 100; ++i) used.raw();
  RngStream c1 = fresh.child(3);
  RngStream c2 = used.child(3);
  for (int i = 0; i < 16; ++i) CHECK(c1.raw() == c2.raw());
}

TEST_CASE("distinct tags give distinct children") {
  RngStream root(7);
  RngStream a = root.child(1), b = root.child(2);
  int same = 0;
  for (int i = 0; i < 32; ++i)
    if (a.raw() == b.raw()) ++same;
  CHECK(same < 4);
}

TEST_CASE("uniform lands in [0, 1) with a sane mean") {
  RngStream r(11);
  double sum = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  CHECK(sum / n == doctest::Approx(0.5).epsilon(0.04));
}

TEST_CASE("ranged uniform respects its bounds") {
  RngStream r(12);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform(-0.25, 0.75);
    REQUIRE(u >= -0.25);
    REQUIRE(u < 0.75);
  }
}

TEST_CASE("integer covers all residues below the bound") {
  RngStream r(13);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 1000; ++i) {
    const std::uint64_t v = r.integer(5);
    REQUIRE(v < 5);
    seen.insert(v);
  }
  CHECK(seen.size() == 5);
}

TEST_CASE("normal has roughly standard moments") {
  RngStream r(14);
  const int n = 20000;
  double s1 = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s1 += z;
    s2 += z * z;
  }
  const double mean = s1 / n;
  CHECK(mean == doctest::Approx(0.0).epsilon(1.0).scale(0.05));
  CHECK(s2 / n - mean * mean == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("shuffle permutes and is seed-deterministic") {
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[i] = i;
  std::vector<int> w = v;
  RngStream a(99), b(99);
  a.shuffle(v);
  b.shuffle(w);
  CHECK(v == w);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) CHECK(sorted[i] == i);
  CHECK(v != sorted);  // 50 elements staying in place would mean no shuffle at all
}

TEST_CASE("vector draws have the right shape and stay in range") {
  RngStream r(15);
  const Vec u = r.uniform_vec(40, 0.25, 0.5);
  CHECK(u.size() == 40);
  CHECK(u.minCoeff() >= 0.25);
  CHECK(u.maxCoeff() < 0.5);
  const Vec z = r.normal_vec(40);
  CHECK(z.size() == 40);
  RngStream r2(15);
  CHECK((r2.uniform_vec(40, 0.25, 0.5) - u).cwiseAbs().maxCoeff() == 0.0);
}
