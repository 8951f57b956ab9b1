#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "anatomist/autograd.hpp"
#include "anatomist/geometry.hpp"

namespace ana {

// Scalar objective with its named components. For the order-correction loss
// the ce_order component is stored before the lambda weighting, so
// total = lambda * ce_order + mse_consistency; the other losses satisfy
// total = sum(components).
struct LossBreakdown {
  double total = 0.0;
  std::vector<std::pair<std::string, double>> components;
  ad::Var total_var;  // differentiable scalar for backward

  double component(const std::string& name) const;
};

// Mean absolute difference over masked tokens and all dims. Teacher input
// must be gradient-free; throws when the mask has no masked cells.
LossBreakdown loss_extrap(const ad::Var& e_s, const ad::Var& e_t, const MaskSet& mask);

// lambda * CE(target order, predicted order) + MSE(e_s, e_t reordered by the
// target order). e_s and logits are in shuffled slot order, e_t in original
// order; CE is mean token-wise softmax cross-entropy, MSE mean over N*D.
LossBreakdown loss_shuffle(const ad::Var& logits, const Permutation& target_order, const ad::Var& e_s,
                           const ad::Var& e_t, double lambda);

// comp = mean |e_comp - e_t_global|; decomp = (1/4) sum_i mean |e_decomp_i -
// e_t_sub_i|; total = comp + decomp. All teacher inputs gradient-free.
LossBreakdown loss_comp_decomp(const ad::Var& e_comp, const ad::Var& e_t_global,
                               const std::array<ad::Var, 4>& e_decomp,
                               const std::array<ad::Var, 4>& e_t_subs);

}  // namespace ana
