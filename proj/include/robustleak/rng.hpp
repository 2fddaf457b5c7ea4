#ifndef ROBUSTLEAK_RNG_HPP
#define ROBUSTLEAK_RNG_HPP

#include <Eigen/Core>
#include <cstdint>
#include <random>
#include <vector>

namespace robustleak {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

std::uint64_t splitmix64(std::uint64_t x);

// Named, seeded random stream. Distributions are generated from the raw
// mt19937_64 output so that a given seed produces the same values on every
// platform; the standard library distribution adapters do not guarantee that.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed);

  // Derives an independent stream from (base seed, tag). Children depend only
  // on the construction seed, not on how much of this stream was consumed.
  RngStream child(std::uint64_t tag) const;

  std::uint64_t raw();
  std::uint64_t integer(std::uint64_t bound);  // uniform in [0, bound)
  double uniform();                            // [0, 1)
  double uniform(double lo, double hi);
  double normal();                             // standard normal, Box-Muller

  Vec uniform_vec(Eigen::Index n, double lo, double hi);
  Vec normal_vec(Eigen::Index n);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[static_cast<std::size_t>(integer(i))]);
    }
  }

  std::uint64_t base_seed() const { return base_; }

 private:
  std::uint64_t base_;
  std::mt19937_64 gen_;
};

}  // namespace robustleak

#endif
