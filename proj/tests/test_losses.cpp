#include <doctest.h>

#include "anatomist/errors.hpp"
#include "anatomist/losses.hpp"
#include "test_support.hpp"

using namespace ana;
using namespace testsupport;

namespace {

Mat random_mat(long rows, long cols, Rng& rng) {
  Mat m(rows, cols);
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c) m(r, c) = rng.normal();
  return m;
}

MaskSet random_mask(int n1, Rng& rng) {
  // Any contiguous inner block, possibly 1x1.
  const int n2 = rng.uniform_int(1, n1 - 1);
  const int off_r = rng.uniform_int(0, n1 - n2);
  const int off_c = rng.uniform_int(0, n1 - n2);
  return mask_from_pair(CropWindow{0, 0, n1}, CropWindow{off_r, off_c, n2});
}

}  // namespace

TEST_SUITE_BEGIN("losses");

TEST_CASE("loss_extrap hand examples") {
  // D=1: masked rows e_s=[1,2], e_t=[0,0] -> mean |.| = 1.5.
  MaskSet mask;
  mask.n1 = 2;
  mask.flags = {true, true, false, false};
  Mat es(4, 1), et(4, 1);
  es << 1, 2, 9, -9;
  et << 0, 0, 4, 4;
  const LossBreakdown lb = loss_extrap(ad::leaf(es), ad::constant(et), mask);
  CHECK(lb.total == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(lb.component("l1_masked") == lb.total);

  // Equal embeddings give exactly zero.
  const LossBreakdown zero = loss_extrap(ad::leaf(et), ad::constant(et), mask);
  CHECK(zero.total == 0.0);

  MaskSet empty;
  empty.n1 = 2;
  empty.flags = {false, false, false, false};
  CHECK_THROWS_AS(loss_extrap(ad::leaf(es), ad::constant(et), empty), GeometryError);
  CHECK_THROWS_AS(loss_extrap(ad::leaf(es), ad::leaf(et), mask), ShapeError);  // teacher must be detached
}

TEST_CASE("loss_extrap is invariant to unmasked entries") {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const int n1 = rng.uniform_int(2, 5);
    const MaskSet mask = random_mask(n1, rng);
    const int d = rng.uniform_int(1, 4);
    const Mat es = random_mat(n1 * n1, d, rng);
    const Mat et = random_mat(n1 * n1, d, rng);
    const double base = loss_extrap(ad::leaf(es), ad::constant(et), mask).total;

    Mat es2 = es;
    for (const int i : mask.unmasked_indices()) es2.row(i) = random_mat(1, d, rng);
    const double perturbed = loss_extrap(ad::leaf(es2), ad::constant(et), mask).total;
    CHECK(perturbed == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("loss_shuffle uniform-logit value and lambda behaviour") {
  Rng rng(2);
  Permutation perm;
  perm.order = {2, 0, 3, 1};
  const Mat logits = Mat::Zero(4, 4);
  const Mat et = random_mat(4, 3, rng);
  const Mat es = apply_permutation_rows(et, perm);  // aligned: e_s = e_t[T^o]

  const LossBreakdown lb = loss_shuffle(ad::leaf(logits), perm, ad::leaf(es), ad::constant(et), 0.1);
  CHECK(lb.total == doctest::Approx(0.1 * std::log(4.0)).epsilon(1e-12));
  CHECK(lb.component("ce_order") == doctest::Approx(std::log(4.0)));
  CHECK(lb.component("mse_consistency") == doctest::Approx(0.0));
  CHECK(lb.total == doctest::Approx(0.1 * lb.component("ce_order") + lb.component("mse_consistency")));

  const LossBreakdown no_ce = loss_shuffle(ad::leaf(logits), perm, ad::leaf(es), ad::constant(et), 0.0);
  CHECK(no_ce.total == doctest::Approx(no_ce.component("mse_consistency")));

  // Sharp correct logits drive CE toward zero but never exactly to zero.
  Mat sharp = Mat::Constant(4, 4, -15.0);
  for (int i = 0; i < 4; ++i) sharp(i, perm.order[static_cast<std::size_t>(i)]) = 15.0;
  const LossBreakdown near_zero = loss_shuffle(ad::leaf(sharp), perm, ad::leaf(es), ad::constant(et), 0.1);
  CHECK(near_zero.component("ce_order") > 0.0);
  CHECK(near_zero.total < 1e-9);
}

TEST_CASE("loss_shuffle mse term is invariant under joint slot permutation") {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = rng.uniform_int(2, 6);
    const int d = rng.uniform_int(1, 4);
    Permutation target = sample_permutation(n, rng, true);
    const Mat es = random_mat(n, d, rng);
    const Mat et = random_mat(n, d, rng);
    const Mat logits = random_mat(n, n, rng);
    const LossBreakdown base = loss_shuffle(ad::leaf(logits), target, ad::leaf(es), ad::constant(et), 0.1);

    // Relabel slots by a random permutation sigma: rows of e_s and logits
    // move together with the target entries.
    Permutation sigma = sample_permutation(n, rng, true);
    Permutation relabeled;
    relabeled.order.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
      relabeled.order[static_cast<std::size_t>(i)] =
          target.order[static_cast<std::size_t>(sigma.order[static_cast<std::size_t>(i)])];
    const LossBreakdown moved =
        loss_shuffle(ad::leaf(apply_permutation_rows(logits, sigma)), relabeled,
                     ad::leaf(apply_permutation_rows(es, sigma)), ad::constant(et), 0.1);
    CHECK(moved.component("mse_consistency") ==
          doctest::Approx(base.component("mse_consistency")).epsilon(1e-12));
    CHECK(moved.component("ce_order") == doctest::Approx(base.component("ce_order")).epsilon(1e-12));
  }
}

TEST_CASE("loss_comp_decomp hand example and component reporting") {
  // D=1: e_comp=2 vs 0 -> comp=2; e_decomp=[1,1,1,1] vs zeros -> decomp=1.
  std::array<ad::Var, 4> decomp = {ad::leaf(Mat::Constant(1, 1, 1.0)), ad::leaf(Mat::Constant(1, 1, 1.0)),
                                   ad::leaf(Mat::Constant(1, 1, 1.0)), ad::leaf(Mat::Constant(1, 1, 1.0))};
  std::array<ad::Var, 4> targets = {ad::constant(Mat::Zero(1, 1)), ad::constant(Mat::Zero(1, 1)),
                                    ad::constant(Mat::Zero(1, 1)), ad::constant(Mat::Zero(1, 1))};
  const LossBreakdown lb = loss_comp_decomp(ad::leaf(Mat::Constant(1, 1, 2.0)),
                                            ad::constant(Mat::Zero(1, 1)), decomp, targets);
  CHECK(lb.component("comp") == doctest::Approx(2.0));
  CHECK(lb.component("decomp") == doctest::Approx(1.0));
  CHECK(lb.total == doctest::Approx(3.0));

  const LossBreakdown zero =
      loss_comp_decomp(ad::leaf(Mat::Zero(1, 1)), ad::constant(Mat::Zero(1, 1)), targets, targets);
  CHECK(zero.total == 0.0);
}

TEST_CASE("all three losses match the brute-force oracles on random instances") {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const int d = rng.uniform_int(1, 4);

    // Extrapolation on 5x3-style inputs.
    const int n1 = rng.uniform_int(2, 5);
    const MaskSet mask = random_mask(n1, rng);
    const Mat es = random_mat(n1 * n1, d, rng);
    const Mat et = random_mat(n1 * n1, d, rng);
    const double mine = loss_extrap(ad::leaf(es), ad::constant(et), mask).total;
    std::vector<bool> flags(mask.flags.begin(), mask.flags.end());
    CHECK(mine == doctest::Approx(oracle_loss_extrap(es, et, flags)).epsilon(1e-9));

    // Order correction.
    const int n = rng.uniform_int(2, 6);
    Permutation perm = sample_permutation(n, rng, true);
    const Mat logits = random_mat(n, n, rng);
    const Mat s2 = random_mat(n, d, rng);
    const Mat t2 = random_mat(n, d, rng);
    const LossBreakdown lb = loss_shuffle(ad::leaf(logits), perm, ad::leaf(s2), ad::constant(t2), 0.1);
    const OracleShuffle oracle = oracle_loss_shuffle(logits, perm.order, s2, t2, 0.1);
    CHECK(lb.total == doctest::Approx(oracle.total).epsilon(1e-9));
    CHECK(lb.component("ce_order") == doctest::Approx(oracle.ce).epsilon(1e-9));

    // Composition / decomposition.
    const Mat comp = random_mat(1, d, rng);
    const Mat glob = random_mat(1, d, rng);
    std::array<ad::Var, 4> dec, sub;
    std::vector<Mat> dec_m, sub_m;
    for (int i = 0; i < 4; ++i) {
      dec_m.push_back(random_mat(1, d, rng));
      sub_m.push_back(random_mat(1, d, rng));
      dec[static_cast<std::size_t>(i)] = ad::leaf(dec_m.back());
      sub[static_cast<std::size_t>(i)] = ad::constant(sub_m.back());
    }
    const LossBreakdown cd = loss_comp_decomp(ad::leaf(comp), ad::constant(glob), dec, sub);
    const OracleCompDecomp oracle_cd = oracle_loss_comp_decomp(comp, glob, dec_m, sub_m);
    CHECK(cd.total == doctest::Approx(oracle_cd.total).epsilon(1e-9));
  }
}

TEST_CASE("losses are non-negative and gradients reach only student inputs") {
  Rng rng(5);
  const MaskSet mask = random_mask(3, rng);
  ad::Var es = ad::leaf(random_mat(9, 4, rng));
  ad::Var et = ad::constant(random_mat(9, 4, rng));
  const LossBreakdown lb = loss_extrap(es, et, mask);
  CHECK(lb.total >= 0.0);
  const ad::GradMap grads = ad::backward(lb.total_var);
  CHECK(grads.contains(es.get()));
  CHECK_FALSE(grads.contains(et.get()));
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(6);
  const MaskSet mask = random_mask(3, rng);
  ad::Var es = ad::leaf(random_mat(9, 3, rng));
  const Mat et = random_mat(9, 3, rng);
  auto build_extrap = [&] { return loss_extrap(es, ad::constant(et), mask).total_var; };
  CHECK(finite_difference_check({es}, build_extrap, 1e-6, 10).max_rel < 1e-5);

  Permutation perm = sample_permutation(5, rng, true);
  ad::Var logits = ad::leaf(random_mat(5, 5, rng));
  ad::Var s = ad::leaf(random_mat(5, 3, rng));
  const Mat t = random_mat(5, 3, rng);
  auto build_shuffle = [&] {
    return loss_shuffle(logits, perm, s, ad::constant(t), 0.1).total_var;
  };
  CHECK(finite_difference_check({logits, s}, build_shuffle, 1e-6, 10).max_rel < 1e-5);
}

TEST_SUITE_END();
