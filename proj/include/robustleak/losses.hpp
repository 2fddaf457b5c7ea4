#ifndef ROBUSTLEAK_LOSSES_HPP
#define ROBUSTLEAK_LOSSES_HPP

#include "robustleak/model.hpp"

namespace robustleak {

// Probabilities are floored at this value inside every log().
inline constexpr double kProbFloor = 1e-12;

double cross_entropy(const Vec& pred, int label);

// sum_i p_i * ln(p_i / q_i), both log arguments floored at kProbFloor.
double kl_divergence(const Vec& p, const Vec& q);

// ln(exp(max_{j != label} z_j - z_label) + 1), computed overflow-safe.
double softplus_margin_loss(const Vec& logit_vec, int label);

// softmax(logits / T). Flattens confidence, never changes the argmax.
Vec temperature_scale(const Vec& logit_vec, double temperature);

}  // namespace robustleak

#endif
