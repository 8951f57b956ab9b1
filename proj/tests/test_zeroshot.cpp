#include <doctest.h>

#include <cmath>

#include "anatomist/errors.hpp"
#include "anatomist/zeroshot.hpp"
#include "test_support.hpp"

using namespace ana;
using namespace testsupport;

namespace {

PhantomSpec desk_spec() {
  PhantomSpec spec;
  spec.image_pixels = 144;
  return spec;
}

}  // namespace

TEST_SUITE_BEGIN("zeroshot");

TEST_CASE("extract_local_embedding addresses the cell containing the point") {
  const auto probe = make_position_probe_encoder(8);
  Mat img = Mat::Zero(144, 144);
  // Interior point: window centered at it, feature = center of its cell.
  const Mat f = extract_local_embedding(probe, img, 70, 50, 14, 8);
  // Window origin is (70-56, 50-56) -> clamped (14, 0); cell floor((70-14)/8)=7, floor((50-0)/8)=6.
  CHECK(f(0, 0) == doctest::Approx(14 + 7 * 8 + 4));
  CHECK(f(0, 1) == doctest::Approx(0 + 6 * 8 + 4));

  // Near-border point: crop is clamped and the cell recomputed.
  const Mat g = extract_local_embedding(probe, img, 2, 3, 14, 8);
  CHECK(g(0, 0) == doctest::Approx(0 + 0 * 8 + 4));
  CHECK(g(0, 1) == doctest::Approx(0 + 0 * 8 + 4));

  CHECK_THROWS_AS(extract_local_embedding(probe, img, 144, 0, 14, 8), Error);
  CHECK_THROWS_AS(extract_local_embedding(probe, img, -1, 0, 14, 8), Error);

  // Identical calls give identical vectors.
  const Mat h1 = extract_local_embedding(probe, img, 71, 83, 14, 8);
  const Mat h2 = extract_local_embedding(probe, img, 71, 83, 14, 8);
  CHECK((h1 - h2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("key dictionary matches brute-force center enumeration") {
  const auto probe = make_position_probe_encoder(8);
  for (const auto [size, stride] : {std::pair{144, 8}, std::pair{144, 16}, std::pair{96, 7}}) {
    Mat img = Mat::Zero(size, size);
    const KeyDictionary dict = build_key_dictionary(probe, img, stride, 14, 8);
    CHECK(static_cast<long>(dict.positions.size()) ==
          oracle_count_window_placements(size, size, stride));
    for (const auto& [x, y] : dict.positions) {
      CHECK(x % stride == 0);
      CHECK(y % stride == 0);
    }
    CHECK(dict.features.allFinite());
  }
  // stride = image size -> a single entry.
  Mat img = Mat::Zero(144, 144);
  CHECK(build_key_dictionary(probe, img, 144, 14, 8).positions.size() == 1);
  // Full-scale arithmetic: 1024/8 -> 128^2 entries.
  CHECK(oracle_count_window_placements(1024, 1024, 8) == 16384);
  CHECK_THROWS_AS(build_key_dictionary(probe, img, 0, 14, 8), ConfigError);
}

TEST_CASE("match_landmarks: exact feature hit has zero error, ties break to smallest (y,x)") {
  KeyDictionary dict;
  dict.positions = {{0, 0}, {8, 0}, {0, 8}};
  dict.features = Mat::Zero(3, 2);
  dict.features << 1, 0, 0, 1, 0, 1;  // entries 1 and 2 tie for query (0,1)
  LandmarkQuery q;
  q.name = "a";
  q.feature = (Mat(1, 2) << 0, 1).finished();
  q.gt_x = 8;
  q.gt_y = 0;
  const CorrespondenceResult r = match_landmarks({q}, dict);
  CHECK(r.predicted[0] == std::pair<int, int>{8, 0});  // (y,x)=(0,8) beats (8,0)
  CHECK(r.errors[0] == 0.0);

  LandmarkQuery exact;
  exact.name = "b";
  exact.feature = (Mat(1, 2) << 1, 0).finished();
  exact.gt_x = 0;
  exact.gt_y = 0;
  CHECK(match_landmarks({exact}, dict).errors[0] == 0.0);

  CHECK_THROWS_AS(match_landmarks({q}, KeyDictionary{}), Error);
}

TEST_CASE("self-pair correspondence with the position probe stays under the lattice bound") {
  // The bound requires the query window's cell grid to stay aligned with the
  // key windows' (stride | cell). That holds when the query window is not
  // clamped at a border (interior points) and for points on the stride
  // lattice (the residual cancels); both regimes are probed.
  const auto probe = make_position_probe_encoder(8);
  const Dataset ds = make_phantom_dataset(desk_spec(), 3, 31);
  const int lo = 56, hi = 88;  // origins unclamped for x, y in [56, 88]
  for (const auto& item : ds.items) {
    const Mat img = to_double(item.pix);
    std::vector<LandmarkAnnotation> interior, snapped;
    for (const auto& m : ds.landmarks.at(item.id)) {
      interior.push_back({m.image_id, m.landmark_name, std::clamp(m.x, lo, hi), std::clamp(m.y, lo, hi)});
      snapped.push_back({m.image_id, m.landmark_name, (m.x / 8) * 8, (m.y / 8) * 8});
    }
    for (const auto& marks : {interior, snapped}) {
      const CorrespondenceResult r = correspond_pair(probe, img, marks, img, marks, 8, 14, 8);
      CHECK(r.errors.size() == marks.size());
      for (double e : r.errors) CHECK(e <= 8.0 * std::sqrt(2.0) / 2.0 + 1e-9);
    }
  }
}

TEST_CASE("random features match at chance: error level equals the random-position baseline") {
  const auto random_enc = make_random_feature_encoder(16, 99);
  const Dataset ds = make_phantom_dataset(desk_spec(), 6, 32);

  std::vector<CorrespondenceResult> results;
  for (int pair_i = 0; pair_i < 3; ++pair_i) {
    const auto& q = ds.items[static_cast<std::size_t>(2 * pair_i)];
    const auto& k = ds.items[static_cast<std::size_t>(2 * pair_i + 1)];
    results.push_back(correspond_pair(random_enc, to_double(q.pix), ds.landmarks.at(q.id),
                                      to_double(k.pix), ds.landmarks.at(k.id), 8, 14, 8));
  }
  const CorrespondenceSummary got = summarize_correspondence(results);

  // Monte-Carlo oracle: predictions uniform over the stride lattice.
  Rng rng(123);
  std::vector<double> sample_means;
  const int lattice = 144 / 8;
  for (int rep = 0; rep < 4000; ++rep) {
    double total = 0.0;
    int count = 0;
    for (int pair_i = 0; pair_i < 3; ++pair_i) {
      const auto& k = ds.items[static_cast<std::size_t>(2 * pair_i + 1)];
      for (const auto& m : ds.landmarks.at(k.id)) {
        const double px = 8.0 * rng.uniform_int(0, lattice - 1);
        const double py = 8.0 * rng.uniform_int(0, lattice - 1);
        total += std::hypot(px - m.x, py - m.y);
        ++count;
      }
    }
    sample_means.push_back(total / count);
  }
  double mc_mean = 0.0;
  for (double v : sample_means) mc_mean += v;
  mc_mean /= static_cast<double>(sample_means.size());
  double mc_var = 0.0;
  for (double v : sample_means) mc_var += (v - mc_mean) * (v - mc_mean);
  const double mc_sd = std::sqrt(mc_var / sample_means.size());

  const double overall = (results[0].mean + results[1].mean + results[2].mean) / 3.0;
  CHECK(std::fabs(overall - mc_mean) < 5.0 * mc_sd);
  CHECK(got.n_matches == 39);
}

TEST_CASE("dna trials keep windows inside their declared source") {
  const auto random_enc = make_random_feature_encoder(8, 7);
  const Dataset ds = make_phantom_dataset(desk_spec(), 1, 5);
  const Mat img = to_double(ds.items[0].pix);
  DnaGeometry geom;
  Rng rng(9);
  for (int i = 0; i < 200; ++i) {
    const DnaSource source = i % 2 == 0 ? DnaSource::inside_c1 : DnaSource::inside_complement;
    const DnaTrial t = dna_trial(random_enc, img, rng, geom, source);
    CHECK(t.cs_source == source);
    if (source == DnaSource::inside_c1) {
      CHECK(t.c1_window.contains(t.cs_window));
    } else {
      CHECK_FALSE(t.c1_window.intersects(t.cs_window));
    }
    CHECK(t.cs_window.w >= 1);
    CHECK(t.cs_window.x + t.cs_window.w <= 144);
    CHECK(t.cs_window.y + t.cs_window.h <= 144);
  }
}

TEST_CASE("dna accuracy: constant encoder ties to exactly 0.5, random encoder near 0.5") {
  const Dataset ds = make_phantom_dataset(desk_spec(), 4, 6);
  std::vector<const Mat*> imgs;
  std::vector<Mat> storage;
  for (const auto& item : ds.items) storage.push_back(to_double(item.pix));
  for (const auto& m : storage) imgs.push_back(&m);
  DnaGeometry geom;

  // Constant features: every cosine ties, tie-break predicts inside_c1, and
  // balanced trials make that exactly 50%.
  const PatchEncoderFn constant_enc = [](const Mat&, int rows, int cols, int, int) {
    return Mat(Mat::Ones(static_cast<long>(rows) * cols, 4));
  };
  const DnaResult tied = dna_accuracy(constant_enc, imgs, 50, 3, geom);
  CHECK(tied.n_trials == 200);
  CHECK(tied.accuracy == doctest::Approx(0.5));

  // Random features land inside the 99% binomial interval around 0.5.
  const auto random_enc = make_random_feature_encoder(16, 11);
  const DnaResult r = dna_accuracy(random_enc, imgs, 500, 4, geom);
  CHECK(r.n_trials == 2000);
  const double half99 = 2.576 * std::sqrt(0.25 / r.n_trials);
  CHECK(r.accuracy > 0.5 - half99);
  CHECK(r.accuracy < 0.5 + half99);
  CHECK(r.ci_lo < r.accuracy);
  CHECK(r.ci_hi > r.accuracy);

  // Deterministic under the same seed.
  const DnaResult r2 = dna_accuracy(random_enc, imgs, 500, 4, geom);
  CHECK(r.accuracy == r2.accuracy);

  CHECK_THROWS_AS(dna_accuracy(random_enc, {}, 10, 1, geom), Error);
  CHECK_THROWS_AS(dna_accuracy(random_enc, imgs, 0, 1, geom), Error);
}

TEST_CASE("teacher-encoder adapter matches direct encode calls") {
  Rng rng(21);
  EncoderConfig cfg;
  cfg.cell_pixels = 8;
  cfg.embed_dim = 8;
  cfg.depth = 1;
  cfg.heads = 2;
  cfg.mlp_ratio = 1;
  EncoderParams enc = EncoderParams::init(cfg, rng);
  const Dataset ds = make_phantom_dataset(desk_spec(), 1, 8);
  const Mat img = to_double(ds.items[0].pix);
  const auto fn = make_teacher_encoder(enc);
  const Mat via_fn = fn(img.block(0, 0, 112, 112), 14, 14, 0, 0);
  const EmbeddingMap direct = encode(enc, img.block(0, 0, 112, 112), 14, 14);
  CHECK((via_fn - direct.tokens).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("format_mean_std uses the mean±std layout") {
  CHECK(format_mean_std(68.1712, 44.4451) == "68.17±44.45");
}

TEST_SUITE_END();
