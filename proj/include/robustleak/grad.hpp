#ifndef ROBUSTLEAK_GRAD_HPP
#define ROBUSTLEAK_GRAD_HPP

#include "robustleak/losses.hpp"
#include "robustleak/model.hpp"

namespace robustleak {

// Loss selector for grad_params / grad_input / batch_loss.
//   kCrossEntropy        mean cross-entropy against the example labels
//   kKlToReference       mean KL(F(x) || reference), reference held constant
//   kSoftplusMargin      mean ln(exp(max_{j!=y} z_j - z_y) + 1)
//   kCrossEntropyWithDa  mean cross-entropy plus da_weight times the
//                        distribution-alignment penalty between the logits of
//                        benign_inputs and the logits of the batch
struct LossSpec {
  enum class Kind { kCrossEntropy, kKlToReference, kSoftplusMargin, kCrossEntropyWithDa };

  Kind kind = Kind::kCrossEntropy;
  std::vector<Vec> reference;      // kKlToReference: one distribution per example
  std::vector<Vec> benign_inputs;  // kCrossEntropyWithDa: benign twin of each example
  double da_weight = 0.0;

  static LossSpec cross_entropy() { return {}; }
  static LossSpec kl_to_reference(std::vector<Vec> refs);
  static LossSpec softplus_margin();
  static LossSpec cross_entropy_with_da(std::vector<Vec> benign, double weight);
};

// Column-per-example batched forward pass.
// act[l] is the input of layer l (act[0] = the batch), pre[l] its affine output.
struct BatchTrace {
  std::vector<Mat> act;
  std::vector<Mat> pre;
};

BatchTrace forward_batch(const Model& m, const Mat& inputs);
Mat logits_batch(const Model& m, const Mat& inputs);
Mat softmax_columns(const Mat& z);

// Backpropagates dlogits (one column per example), adding the summed parameter
// gradients to *gp (if non-null) and writing input gradients to *dinputs.
void backward_batch(const Model& m, const BatchTrace& trace, const Mat& dlogits,
                    Gradients* gp, Mat* dinputs);

// Per-column dloss/dlogits (and optionally the per-column loss values).
Mat cross_entropy_logit_delta(const Mat& logits, const std::vector<int>& labels, Vec* loss);
Mat kl_logit_delta(const Mat& logits, const Mat& reference, Vec* loss);
Mat softplus_margin_logit_delta(const Mat& logits, const std::vector<int>& labels, Vec* loss);

// Mean-over-batch parameter gradient of the selected loss.
Gradients grad_params(const Model& m, const std::vector<Example>& batch, const LossSpec& spec);

// Input-space gradient at a single example; `label` is the class the loss is
// taken toward (the true label, or the attack target).
Vec grad_input(const Model& m, const Vec& x, int label, const LossSpec& spec);

// Loss value matching grad_params (mean over batch, plus any DA term).
double batch_loss(const Model& m, const std::vector<Example>& batch, const LossSpec& spec);

// l1 distance between batch means plus l1 distance between unbiased batch
// covariances of the two logit collections.
double da_regularizer(const std::vector<Vec>& benign_logits, const std::vector<Vec>& adv_logits);

// Subgradients of da_regularizer with respect to each logit column.
void da_logit_deltas(const Mat& benign_logits, const Mat& adv_logits,
                     Mat* d_benign, Mat* d_adv);

// Momentum SGD: v <- momentum * v + g, theta <- theta - lr * v.
struct SgdOptimizer {
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::vector<Layer> velocity;

  SgdOptimizer(double lr, double mom) : learning_rate(lr), momentum(mom) {}
  void step(Model& m, const Gradients& g);
};

}  // namespace robustleak

#endif
