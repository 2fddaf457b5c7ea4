#ifndef ROBUSTLEAK_MODEL_HPP
#define ROBUSTLEAK_MODEL_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "robustleak/rng.hpp"

namespace robustleak {

struct Layer {
  Mat w;  // out x in
  Vec b;  // out
};

// Fully connected ReLU stack. ReLU after every affine layer except the last;
// the last layer's outputs are the logits.
struct Model {
  std::vector<Layer> layers;

  int input_dim() const { return static_cast<int>(layers.front().w.cols()); }
  int num_classes() const { return static_cast<int>(layers.back().w.rows()); }
};

struct Example {
  Vec x;
  int y = 0;
  std::int64_t id = -1;
};

// Same shapes as the model's parameters.
struct Gradients {
  std::vector<Layer> layers;

  static Gradients zeros_like(const Model& m);
  Gradients& add_scaled(const Gradients& other, double scale);
  void scale(double s);
  double squared_norm() const;
};

// Hidden and output weights drawn uniformly from +-sqrt(6/(fan_in+fan_out)),
// biases zero. dims = {input, hidden..., classes}.
Model make_mlp(const std::vector<int>& dims, RngStream& rng);

Vec logits(const Model& m, const Vec& x);
Vec softmax(const Vec& z);
Vec predict(const Model& m, const Vec& x);  // softmax of logits
int argmax(const Vec& v);
int predicted_label(const Model& m, const Vec& x);

// Checkpoint files hold every weight in full double precision.
void save_model(const Model& m, const std::string& path);
Model load_model(const std::string& path);

}  // namespace robustleak

#endif
