#ifndef ROBUSTLEAK_VERIFY_HPP
#define ROBUSTLEAK_VERIFY_HPP

#include "robustleak/attacks.hpp"
#include "robustleak/model.hpp"

namespace robustleak {

struct IntervalBounds {
  Vec low, high;
};

// Interval propagation through the network. The input interval is the
// eps-ball around x clipped to the box; affine layers map interval midpoints
// through W and radii through |W|; ReLU clamps both ends at zero.
struct IbpTrace {
  IntervalBounds input;                 // clipped input interval
  std::vector<IntervalBounds> pre_act;  // per affine layer, last entry = logit bounds
};

IbpTrace ibp_forward(const Model& m, const Vec& x, const PerturbationConstraint& c);
IntervalBounds ibp_bounds(const Model& m, const Vec& x, const PerturbationConstraint& c);

// low_y at the label, high elsewhere: the logit vector of the worst admissible
// perturbation as the bounds see it.
Vec worst_case_logits(const IntervalBounds& bounds, int label);

// Softmax of the worst-case logit vector, evaluated at the label.
double verified_worst_case_confidence(const Model& m, const Example& z,
                                      const PerturbationConstraint& c);

// True iff the label's lower logit bound strictly beats every other class's
// upper bound.
bool is_verified_secure(const Model& m, const Example& z, const PerturbationConstraint& c);

double verified_accuracy(const Model& m, const std::vector<Example>& data,
                         const PerturbationConstraint& c);

// Batched interval propagation in midpoint/radius form, one column per
// example, with a reverse pass for training through the bounds.
struct IbpBatchTrace {
  std::vector<Mat> in_mid, in_rad;    // inputs of each affine layer
  std::vector<Mat> out_low, out_high; // outputs of each affine layer (pre-ReLU)
};

IbpBatchTrace ibp_forward_batch(const Model& m, const Mat& xs, const PerturbationConstraint& c);

// Backpropagates gradients on the final (low, high) logit bounds, adding the
// summed parameter gradients to *gp.
void ibp_backward_batch(const Model& m, const IbpBatchTrace& trace,
                        const Mat& dlow, const Mat& dhigh, Gradients* gp);

}  // namespace robustleak

#endif
