#include "robustleak/rng.hpp"

#include <cmath>

namespace robustleak {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

RngStream::RngStream(std::uint64_t seed) : base_(seed), gen_(splitmix64(seed)) {}

RngStream RngStream::child(std::uint64_t tag) const {
  return RngStream(splitmix64(base_ ^ (0xD1B54A32D192ED03ull * (tag + 1))));
}

std::uint64_t RngStream::raw() { return gen_(); }

std::uint64_t RngStream::integer(std::uint64_t bound) {
  return bound == 0 ? 0 : gen_() % bound;
}

double RngStream::uniform() {
  return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

double RngStream::normal() {
  const double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

Vec RngStream::uniform_vec(Eigen::Index n, double lo, double hi) {
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = uniform(lo, hi);
  return v;
}

Vec RngStream::normal_vec(Eigen::Index n) {
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
  return v;
}

}  // namespace robustleak
