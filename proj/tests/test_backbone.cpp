#include <doctest.h>

#include "anatomist/backbone.hpp"
#include "anatomist/errors.hpp"
#include "test_support.hpp"

using namespace ana;

namespace {

EncoderConfig toy_config() {
  EncoderConfig cfg;
  cfg.cell_pixels = 3;
  cfg.embed_dim = 8;
  cfg.depth = 2;
  cfg.heads = 2;
  cfg.mlp_ratio = 2;
  return cfg;
}

Mat random_image(int rows, int cols, Rng& rng) {
  Mat img(rows, cols);
  for (long r = 0; r < img.rows(); ++r)
    for (long c = 0; c < img.cols(); ++c) img(r, c) = rng.uniform();
  return img;
}

}  // namespace

TEST_SUITE_BEGIN("backbone");

TEST_CASE("encode produces one token per cell for every layout") {
  Rng rng(1);
  EncoderConfig cfg = EncoderConfig::make(EncoderVariant::tiny, 4);
  EncoderParams enc = EncoderParams::init(cfg, rng);
  for (const auto [rows, cols] : {std::pair{14, 14}, std::pair{11, 11}, std::pair{7, 7}}) {
    const Mat img = random_image(rows * 4, cols * 4, rng);
    const EmbeddingMap emb = encode(enc, img, rows, cols);
    CHECK(emb.count() == rows * cols);
    CHECK(emb.tokens.rows() == rows * cols);
    CHECK(emb.tokens.cols() == cfg.embed_dim);
    CHECK(emb.tokens.allFinite());
  }
}

TEST_CASE("encode is deterministic and spatially sensitive") {
  Rng rng(2);
  EncoderParams enc = EncoderParams::init(toy_config(), rng);
  const Mat img = random_image(9, 9, rng);
  const EmbeddingMap a = encode(enc, img, 3, 3);
  const EmbeddingMap b = encode(enc, img, 3, 3);
  CHECK((a.tokens - b.tokens).cwiseAbs().maxCoeff() == 0.0);

  Mat img2 = img;
  img2.block(0, 0, 3, 3).setConstant(5.0);
  const EmbeddingMap c = encode(enc, img2, 3, 3);
  CHECK((a.tokens - c.tokens).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("encode rejects mismatched region dimensions") {
  Rng rng(3);
  EncoderParams enc = EncoderParams::init(toy_config(), rng);
  CHECK_THROWS_WITH_AS(encode(enc, Mat::Zero(9, 8), 3, 3), doctest::Contains("expected"), ShapeError);
}

TEST_CASE("pool_global is the token mean and rejects empty maps") {
  EmbeddingMap emb;
  emb.tokens = (Mat(2, 2) << 1.0, 3.0, 3.0, 5.0).finished();
  emb.rows = 2;
  emb.cols = 1;
  const Mat pooled = pool_global(emb);
  CHECK(pooled(0, 0) == doctest::Approx(2.0));
  CHECK(pooled(0, 1) == doctest::Approx(4.0));

  EmbeddingMap constant;
  constant.tokens = Mat::Constant(5, 3, 0.7);
  constant.rows = 5;
  constant.cols = 1;
  CHECK((pool_global(constant) - Mat::Constant(1, 3, 0.7)).cwiseAbs().maxCoeff() < 1e-15);

  Rng rng(11);
  Mat tokens = Mat::Random(6, 4);
  EmbeddingMap m1{tokens, 6, 1};
  Permutation p = sample_permutation(6, rng);
  EmbeddingMap m2{apply_permutation_rows(tokens, p), 6, 1};
  CHECK((pool_global(m1) - pool_global(m2)).cwiseAbs().maxCoeff() < 1e-12);

  EmbeddingMap empty;
  empty.tokens = Mat(0, 3);
  CHECK_THROWS_AS(pool_global(empty), ShapeError);
}

TEST_CASE("momentum_schedule endpoints and midpoint") {
  CHECK(momentum_schedule(0, 100, 0.996, 1.0) == doctest::Approx(0.996).epsilon(1e-12));
  CHECK(momentum_schedule(100, 100, 0.996, 1.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(momentum_schedule(50, 100, 0.996, 1.0) == doctest::Approx(0.998).epsilon(1e-12));
  CHECK_THROWS_AS(momentum_schedule(-1, 100, 0.996, 1.0), ConfigError);
  CHECK_THROWS_AS(momentum_schedule(101, 100, 0.996, 1.0), ConfigError);
}

TEST_CASE("ema_update endpoints and elementwise blend") {
  ModelPair pair = ModelPair::init(toy_config(), 7);
  pair.teacher.params.entries()[0].var->value.setConstant(2.0);
  pair.student.params.entries()[0].var->value.setConstant(1.0);

  Mat teacher_before = pair.teacher.params.entries()[0].var->value;
  ema_update(pair, 1.0);
  CHECK((pair.teacher.params.entries()[0].var->value - teacher_before).cwiseAbs().maxCoeff() == 0.0);

  ema_update(pair, 0.9);
  CHECK(pair.teacher.params.entries()[0].var->value(0, 0) == doctest::Approx(1.9).epsilon(1e-12));
  CHECK(pair.student.params.entries()[0].var->value(0, 0) == 1.0);

  ema_update(pair, 0.0);
  CHECK((pair.teacher.params.entries()[0].var->value - pair.student.params.entries()[0].var->value)
            .cwiseAbs()
            .maxCoeff() == 0.0);
}

TEST_CASE("ema contraction: frozen student pulls teacher in by factor m per step") {
  ModelPair pair = ModelPair::init(toy_config(), 9);
  for (auto& e : pair.teacher.params.entries()) e.var->value.array() += 0.5;
  auto distance = [&] {
    double sq = 0.0;
    const auto& s = pair.student.params.entries();
    const auto& t = pair.teacher.params.entries();
    for (std::size_t i = 0; i < s.size(); ++i) sq += (s[i].var->value - t[i].var->value).squaredNorm();
    return std::sqrt(sq);
  };
  double prev = distance();
  for (int step = 0; step < 10; ++step) {
    ema_update(pair, 0.9);
    const double now = distance();
    CHECK(now == doctest::Approx(0.9 * prev).epsilon(1e-9));
    prev = now;
  }
}

TEST_CASE("teacher parameters never receive gradients") {
  ModelPair pair = ModelPair::init(toy_config(), 21);
  for (const auto& e : pair.teacher.params.entries()) CHECK_FALSE(e.var->requires_grad);
  for (const auto& e : pair.student.params.entries()) CHECK(e.var->requires_grad);

  Rng rng(5);
  const Mat img = random_image(6, 6, rng);
  ad::Var loss = ad::mean_all(encode_tokens(pair.student, img, 2, 2));
  {
    ad::NoGradScope guard;
    const ad::Var teacher_tokens = encode_tokens(pair.teacher, img, 2, 2);
    CHECK_FALSE(teacher_tokens->requires_grad);
  }
  const ad::GradMap grads = ad::backward(loss);
  for (const auto& e : pair.teacher.params.entries()) CHECK_FALSE(grads.contains(e.var.get()));
  int student_with_grads = 0;
  for (const auto& e : pair.student.params.entries()) student_with_grads += grads.contains(e.var.get());
  CHECK(student_with_grads > 0);
}

TEST_CASE("tiny encoder input gradients match finite differences") {
  Rng rng(6);
  EncoderConfig cfg = toy_config();
  EncoderParams enc = EncoderParams::init(cfg, rng);
  ad::Var img = ad::leaf(random_image(2 * cfg.cell_pixels, 2 * cfg.cell_pixels, rng));
  auto build = [&] { return ad::mean_all(ad::abs_val(encode_tokens(enc, img, 2, 2))); };
  const auto report = testsupport::finite_difference_check({img}, build, 1e-6, 12);
  CHECK(report.checked > 0);
  CHECK(report.max_rel < 1e-3);
}

TEST_CASE("encoder parameter gradients match finite differences") {
  Rng rng(8);
  EncoderConfig cfg = toy_config();
  cfg.depth = 1;
  EncoderParams enc = EncoderParams::init(cfg, rng);
  const Mat img = random_image(2 * cfg.cell_pixels, 2 * cfg.cell_pixels, rng);
  auto build = [&] {
    ad::Var t = encode_tokens(enc, img, 2, 2);
    return ad::mean_all(ad::mul(t, t));
  };
  std::vector<ad::Var> leaves;
  for (const auto& e : enc.params.entries()) leaves.push_back(e.var);
  const auto report = testsupport::finite_difference_check(leaves, build, 1e-6, 4);
  CHECK(report.max_rel < 1e-3);
}

TEST_CASE("variant presets validate") {
  for (const auto v : {EncoderVariant::tiny, EncoderVariant::small, EncoderVariant::paper}) {
    const EncoderConfig cfg = EncoderConfig::make(v, 8);
    CHECK_NOTHROW(cfg.validate());
    CHECK(to_string(cfg.variant) == to_string(encoder_variant_from_string(to_string(v))));
  }
  EncoderConfig bad = EncoderConfig::make(EncoderVariant::tiny, 8);
  bad.heads = 5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_SUITE_END();
