#include "anatomist/losses.hpp"

#include <cmath>

#include "anatomist/errors.hpp"

namespace ana {

namespace {

void check_teacher_detached(const ad::Var& v, const char* who) {
  if (v->requires_grad)
    throw ShapeError(std::string(who) + ": teacher input must be gradient-free");
}

void check_finite(const LossBreakdown& lb, const char* who) {
  bool ok = std::isfinite(lb.total);
  for (const auto& [name, v] : lb.components) ok = ok && std::isfinite(v);
  if (!ok) throw Error(std::string(who) + ": non-finite loss value");
}

}  // namespace

double LossBreakdown::component(const std::string& name) const {
  for (const auto& [n, v] : components)
    if (n == name) return v;
  throw Error("LossBreakdown: no component named " + name);
}

LossBreakdown loss_extrap(const ad::Var& e_s, const ad::Var& e_t, const MaskSet& mask) {
  check_teacher_detached(e_t, "loss_extrap");
  const long n1_sq = static_cast<long>(mask.n1) * mask.n1;
  if (ad::value(e_s).rows() != n1_sq || ad::value(e_t).rows() != n1_sq)
    throw ShapeError("loss_extrap: embedding maps must have " + std::to_string(n1_sq) + " rows, got " +
                     std::to_string(ad::value(e_s).rows()) + " and " + std::to_string(ad::value(e_t).rows()));
  if (ad::value(e_s).cols() != ad::value(e_t).cols())
    throw ShapeError("loss_extrap: embedding dims differ");
  const std::vector<int> masked = mask.masked_indices();
  if (masked.empty()) throw GeometryError("loss_extrap: mask selects no cells, nothing to extrapolate");

  ad::Var diff = ad::sub(ad::select_rows(e_s, masked), ad::select_rows(e_t, masked));
  ad::Var total = ad::mean_all(ad::abs_val(diff));

  LossBreakdown lb;
  lb.total_var = total;
  lb.total = ad::value(total)(0, 0);
  lb.components = {{"l1_masked", lb.total}};
  check_finite(lb, "loss_extrap");
  return lb;
}

LossBreakdown loss_shuffle(const ad::Var& logits, const Permutation& target_order, const ad::Var& e_s,
                           const ad::Var& e_t, double lambda) {
  check_teacher_detached(e_t, "loss_shuffle");
  if (lambda < 0.0) throw ConfigError("loss_shuffle: lambda must be >= 0");
  const long n = target_order.size();
  if (ad::value(logits).rows() != n || ad::value(logits).cols() != n)
    throw ShapeError("loss_shuffle: logits must be " + std::to_string(n) + "x" + std::to_string(n) +
                     ", got " + std::to_string(ad::value(logits).rows()) + "x" +
                     std::to_string(ad::value(logits).cols()));
  if (ad::value(e_s).rows() != n || ad::value(e_t).rows() != n ||
      ad::value(e_s).cols() != ad::value(e_t).cols())
    throw ShapeError("loss_shuffle: embedding shape mismatch");

  ad::Var ce = ad::cross_entropy_rows(logits, target_order.order);
  ad::Var teacher_reordered = ad::select_rows(e_t, target_order.order);
  ad::Var diff = ad::sub(e_s, teacher_reordered);
  ad::Var mse = ad::mean_all(ad::mul(diff, diff));
  ad::Var total = ad::add(ad::scale(ce, lambda), mse);

  LossBreakdown lb;
  lb.total_var = total;
  lb.total = ad::value(total)(0, 0);
  lb.components = {{"ce_order", ad::value(ce)(0, 0)}, {"mse_consistency", ad::value(mse)(0, 0)}};
  check_finite(lb, "loss_shuffle");
  return lb;
}

LossBreakdown loss_comp_decomp(const ad::Var& e_comp, const ad::Var& e_t_global,
                               const std::array<ad::Var, 4>& e_decomp,
                               const std::array<ad::Var, 4>& e_t_subs) {
  check_teacher_detached(e_t_global, "loss_comp_decomp");
  for (const auto& t : e_t_subs) check_teacher_detached(t, "loss_comp_decomp");
  const long d = ad::value(e_comp).cols();
  if (ad::value(e_comp).rows() != 1 || ad::value(e_t_global).rows() != 1 || ad::value(e_t_global).cols() != d)
    throw ShapeError("loss_comp_decomp: global embeddings must be 1x" + std::to_string(d));
  for (int i = 0; i < 4; ++i)
    if (ad::value(e_decomp[static_cast<std::size_t>(i)]).cols() != d ||
        ad::value(e_t_subs[static_cast<std::size_t>(i)]).cols() != d ||
        ad::value(e_decomp[static_cast<std::size_t>(i)]).rows() != 1 ||
        ad::value(e_t_subs[static_cast<std::size_t>(i)]).rows() != 1)
      throw ShapeError("loss_comp_decomp: sub-embedding " + std::to_string(i) + " must be 1x" +
                       std::to_string(d));

  ad::Var comp = ad::mean_all(ad::abs_val(ad::sub(e_comp, e_t_global)));
  ad::Var decomp;
  for (int i = 0; i < 4; ++i) {
    ad::Var term = ad::mean_all(
        ad::abs_val(ad::sub(e_decomp[static_cast<std::size_t>(i)], e_t_subs[static_cast<std::size_t>(i)])));
    decomp = i == 0 ? term : ad::add(decomp, term);
  }
  decomp = ad::scale(decomp, 0.25);
  ad::Var total = ad::add(comp, decomp);

  LossBreakdown lb;
  lb.total_var = total;
  lb.total = ad::value(total)(0, 0);
  lb.components = {{"comp", ad::value(comp)(0, 0)}, {"decomp", ad::value(decomp)(0, 0)}};
  check_finite(lb, "loss_comp_decomp");
  return lb;
}

}  // namespace ana
