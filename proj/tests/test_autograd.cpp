#include <doctest.h>

#include "anatomist/autograd.hpp"
#include "anatomist/errors.hpp"
#include "anatomist/nn.hpp"
#include "test_support.hpp"

using namespace ana;
using testsupport::finite_difference_check;

namespace {

Mat random_mat(long rows, long cols, Rng& rng) {
  Mat m(rows, cols);
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c) m(r, c) = rng.normal();
  return m;
}

}  // namespace

TEST_SUITE_BEGIN("autograd");

TEST_CASE("matmul chain values and gradients") {
  Rng rng(1);
  ad::Var a = ad::leaf(random_mat(3, 4, rng));
  ad::Var b = ad::leaf(random_mat(4, 2, rng));
  auto build = [&] { return ad::mean_all(ad::matmul(a, b)); };
  const auto report = finite_difference_check({a, b}, build);
  CHECK(report.checked > 0);
  CHECK(report.max_rel < 1e-6);
}

TEST_CASE("every elementwise and reduction op passes finite differences") {
  Rng rng(2);
  ad::Var x = ad::leaf(random_mat(4, 6, rng));
  ad::Var y = ad::leaf(random_mat(4, 6, rng));
  ad::Var bias = ad::leaf(random_mat(1, 6, rng));

  auto build = [&] {
    ad::Var t = ad::add(ad::mul(x, y), ad::scale(ad::sub(x, y), 0.7));
    t = ad::add_rowvec(t, bias);
    t = ad::gelu(t);
    t = ad::abs_val(t);
    return ad::mean_all(t);
  };
  const auto report = finite_difference_check({x, y, bias}, build, 1e-6, 12);
  CHECK(report.max_rel < 1e-5);
}

TEST_CASE("softmax, layer_norm and cross entropy gradients") {
  Rng rng(3);
  ad::Var logits = ad::leaf(random_mat(5, 5, rng));
  ad::Var gamma = ad::leaf(Mat::Ones(1, 5) + 0.1 * random_mat(1, 5, rng));
  ad::Var beta = ad::leaf(0.1 * random_mat(1, 5, rng));
  const std::vector<int> targets = {2, 0, 4, 1, 1};

  auto build = [&] {
    ad::Var n = ad::layer_norm(logits, gamma, beta);
    ad::Var s = ad::softmax_rows(n);
    ad::Var ce = ad::cross_entropy_rows(ad::scale(n, 2.0), targets);
    return ad::add(ce, ad::mean_all(s));
  };
  const auto report = finite_difference_check({logits, gamma, beta}, build, 1e-6, 15);
  CHECK(report.max_rel < 1e-5);
}

TEST_CASE("softmax rows sum to one and cross entropy of uniform logits is ln(n)") {
  ad::Var logits = ad::constant(Mat::Constant(4, 4, 2.5));
  const Mat probs = ad::value(ad::softmax_rows(logits));
  for (long r = 0; r < 4; ++r) CHECK(probs.row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
  ad::Var ce = ad::cross_entropy_rows(logits, {0, 1, 2, 3});
  CHECK(ad::value(ce)(0, 0) == doctest::Approx(std::log(4.0)).epsilon(1e-14));
}

TEST_CASE("structural ops: slice, concat, select, scatter, repeat, patchify") {
  Rng rng(4);
  ad::Var x = ad::leaf(random_mat(6, 8, rng));
  ad::Var row = ad::leaf(random_mat(1, 8, rng));
  ad::Var img = ad::leaf(random_mat(6, 6, rng));

  auto build = [&] {
    ad::Var sliced = ad::slice_cols(x, 2, 4);                       // 6x4
    ad::Var cat = ad::concat_cols({sliced, ad::slice_cols(x, 0, 2)});  // 6x6
    ad::Var sel = ad::select_rows(cat, {0, 0, 3, 5});               // 4x6
    ad::Var scat = ad::scatter_rows(5, {4, 2, 0, 1}, sel);          // 5x6
    ad::Var rep = ad::repeat_row(ad::slice_cols(row, 0, 6), 5);     // 5x6
    ad::Var tok = ad::patchify(img, 2, 2, 3);                       // 4x9
    return ad::add(ad::mean_all(ad::add(scat, rep)), ad::mean_all(tok));
  };
  const auto report = finite_difference_check({x, row, img}, build, 1e-6, 20);
  CHECK(report.max_rel < 1e-6);

  // Values: select then scatter puts rows where expected.
  const Mat scat = ad::value(ad::scatter_rows(3, {2, 0}, ad::constant((Mat(2, 1) << 5.0, 7.0).finished())));
  CHECK(scat(2, 0) == 5.0);
  CHECK(scat(0, 0) == 7.0);
  CHECK(scat(1, 0) == 0.0);
}

TEST_CASE("patchify layout is row-major over cells") {
  Mat img(4, 4);
  for (long r = 0; r < 4; ++r)
    for (long c = 0; c < 4; ++c) img(r, c) = r * 4 + c;
  const Mat tokens = ad::value(ad::patchify(ad::constant(img), 2, 2, 2));
  CHECK(tokens.rows() == 4);
  CHECK(tokens.cols() == 4);
  // Token 1 is the top-right cell; its first pixel is (0, 2).
  CHECK(tokens(1, 0) == 2.0);
  // Cell pixels are row-major within the cell.
  CHECK(tokens(1, 2) == 6.0);
}

TEST_CASE("constants prune the graph and NoGradScope suppresses it") {
  ad::Var a = ad::constant(Mat::Ones(2, 2));
  ad::Var b = ad::constant(Mat::Ones(2, 2));
  ad::Var c = ad::matmul(a, b);
  CHECK_FALSE(c->requires_grad);
  CHECK(c->parents.empty());

  ad::Var leaf = ad::leaf(Mat::Ones(2, 2));
  {
    ad::NoGradScope guard;
    ad::Var d = ad::matmul(leaf, leaf);
    CHECK_FALSE(d->requires_grad);
  }
  ad::Var e = ad::mean_all(ad::matmul(leaf, leaf));
  const ad::GradMap grads = ad::backward(e);
  CHECK(grads.find(leaf.get()) != nullptr);
}

TEST_CASE("gradients accumulate across shared subexpressions") {
  ad::Var x = ad::leaf(Mat::Constant(1, 1, 3.0));
  ad::Var y = ad::add(ad::mul(x, x), x);  // x^2 + x, d/dx = 2x + 1 = 7
  const ad::GradMap grads = ad::backward(y);
  CHECK((*grads.find(x.get()))(0, 0) == doctest::Approx(7.0));
}

TEST_CASE("backward seed scales gradients") {
  ad::Var x = ad::leaf(Mat::Constant(1, 1, 2.0));
  ad::Var y = ad::scale(x, 5.0);
  const ad::GradMap grads = ad::backward(y, 0.5);
  CHECK((*grads.find(x.get()))(0, 0) == doctest::Approx(2.5));
}

TEST_CASE("shape errors name the mismatch") {
  ad::Var a = ad::constant(Mat::Ones(2, 3));
  ad::Var b = ad::constant(Mat::Ones(2, 2));
  CHECK_THROWS_AS(ad::add(a, b), ShapeError);
  CHECK_THROWS_AS(ad::matmul(a, a), ShapeError);
  CHECK_THROWS_AS(ad::backward(a), ShapeError);  // non-scalar root
}

TEST_SUITE_END();
