#ifndef ROBUSTLEAK_DATA_HPP
#define ROBUSTLEAK_DATA_HPP

#include <stdexcept>
#include <string>

#include "robustleak/attacks.hpp"
#include "robustleak/model.hpp"
#include "robustleak/rng.hpp"

namespace robustleak {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct LabeledDataset {
  std::vector<Example> examples;
  int feature_dim = 0;
  int num_classes = 0;
  Vec box_low, box_high;

  std::size_t size() const { return examples.size(); }
};

// Four parts, pairwise disjoint by example id. Models are trained on
// train + shadow_train so the shadow members really are members.
struct Split {
  LabeledDataset train, test, shadow_train, shadow_test;
};

// Gaussian clusters, one per class: centers drawn uniformly from [0.2, 0.8]^d,
// points ~ N(center, spread * I) (spread is the isotropic covariance scale),
// clamped to the unit box.
LabeledDataset gen_synthetic(int classes, int per_class, int dim, double spread,
                             std::uint64_t seed);

// Rows are "label,f1,...,fd". An optional leading "# box <lo> <hi>" comment
// widens the accepted feature range from the default [0, 1]; an optional
// header row is skipped.
LabeledDataset load_csv(const std::string& path);
void save_csv(const LabeledDataset& data, const std::string& path);

// IDX (big-endian) image/label pair; pixel bytes are scaled by 1/255.
LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path);

Split make_split(const LabeledDataset& data, int train_n, int test_n,
                 int shadow_train_n, int shadow_test_n, std::uint64_t seed, bool stratified);

LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b);
LabeledDataset without_ids(const LabeledDataset& data, const std::vector<std::int64_t>& ids);

double accuracy(const Model& m, const LabeledDataset& data);
double adv_accuracy(const Model& m, const LabeledDataset& data,
                    const PerturbationConstraint& c, const AttackConfig& cfg, RngStream& rng);

// Shortest decimal form that round-trips the exact double (used by every CSV
// writer so reruns are byte-identical).
std::string format_double(double v);

}  // namespace robustleak

#endif
