#include "anatomist/zeroshot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "anatomist/errors.hpp"

namespace ana {

namespace {

double cosine(const Mat& a, const Mat& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return (a.cwiseProduct(b)).sum() / (na * nb);
}

int clamp_int(int v, int lo, int hi) { return std::max(lo, std::min(hi, v)); }

}  // namespace

PatchEncoderFn make_teacher_encoder(EncoderParams teacher) {
  return [teacher = std::move(teacher)](const Mat& region, int rows, int cols, int, int) {
    return encode(teacher, region, rows, cols).tokens;
  };
}

Mat extract_local_embedding(const PatchEncoderFn& encoder, const Mat& image, int x, int y, int n_cells,
                            int cell_pixels) {
  const int h = static_cast<int>(image.rows()), w = static_cast<int>(image.cols());
  if (x < 0 || y < 0 || x >= w || y >= h)
    throw Error("extract_local_embedding: point (" + std::to_string(x) + "," + std::to_string(y) +
                ") outside " + std::to_string(w) + "x" + std::to_string(h) + " image");
  const int win = n_cells * cell_pixels;
  if (win > w || win > h)
    throw ShapeError("extract_local_embedding: window " + std::to_string(win) + " exceeds image");
  // Center the window at the point, shifting inside bounds near edges; the
  // cell index is recomputed from the shifted origin.
  const int ox = clamp_int(x - win / 2, 0, w - win);
  const int oy = clamp_int(y - win / 2, 0, h - win);
  const Mat window = crop(image, oy, ox, win, win);
  const Mat tokens = encoder(window, n_cells, n_cells, ox, oy);
  const int cell_c = (x - ox) / cell_pixels;
  const int cell_r = (y - oy) / cell_pixels;
  return tokens.row(static_cast<long>(cell_r) * n_cells + cell_c);
}

KeyDictionary build_key_dictionary(const PatchEncoderFn& encoder, const Mat& image, int stride,
                                   int n_cells, int cell_pixels, int threads) {
  if (stride < 1) throw ConfigError("build_key_dictionary: stride must be >= 1");
  const int h = static_cast<int>(image.rows()), w = static_cast<int>(image.cols());
  const int win = n_cells * cell_pixels;
  const int pad_lo = win / 2;
  const int pad_hi = win - pad_lo;
  const Mat padded = zero_pad(image, pad_lo, pad_hi, pad_lo, pad_hi);

  KeyDictionary dict;
  dict.stride = stride;
  dict.window_pixels = win;
  for (int cy = 0; cy < h; cy += stride)
    for (int cx = 0; cx < w; cx += stride) dict.positions.emplace_back(cx, cy);

  const int n = static_cast<int>(dict.positions.size());
  const int center_cell = (win / 2) / cell_pixels;
  std::vector<Mat> rows(static_cast<std::size_t>(n));
  nn::parallel_for(n, threads, [&](int i) {
    const auto [cx, cy] = dict.positions[static_cast<std::size_t>(i)];
    // Window top-left in padded coordinates: (c - win/2) + pad_lo = c.
    const Mat window = padded.block(cy, cx, win, win);
    const Mat tokens = encoder(window, n_cells, n_cells, cx - pad_lo, cy - pad_lo);
    rows[static_cast<std::size_t>(i)] = tokens.row(static_cast<long>(center_cell) * n_cells + center_cell);
  });
  dict.features.resize(n, rows.empty() ? 0 : rows[0].cols());
  for (int i = 0; i < n; ++i) dict.features.row(i) = rows[static_cast<std::size_t>(i)];
  return dict;
}

CorrespondenceResult match_landmarks(const std::vector<LandmarkQuery>& queries, const KeyDictionary& dict) {
  if (dict.positions.empty()) throw Error("match_landmarks: empty key dictionary");
  CorrespondenceResult result;
  for (const auto& q : queries) {
    long best = -1;
    double best_d = 0.0;
    for (long k = 0; k < dict.features.rows(); ++k) {
      const double d = (dict.features.row(k) - q.feature.row(0)).squaredNorm();
      if (best < 0 || d < best_d) {
        best = k;
        best_d = d;
      } else if (d == best_d) {
        const auto& cand = dict.positions[static_cast<std::size_t>(k)];
        const auto& cur = dict.positions[static_cast<std::size_t>(best)];
        if (std::make_pair(cand.second, cand.first) < std::make_pair(cur.second, cur.first)) best = k;
      }
    }
    const auto [px, py] = dict.positions[static_cast<std::size_t>(best)];
    result.names.push_back(q.name);
    result.predicted.emplace_back(px, py);
    result.errors.push_back(std::hypot(static_cast<double>(px - q.gt_x), static_cast<double>(py - q.gt_y)));
  }
  if (!result.errors.empty()) {
    double sum = 0.0;
    for (double e : result.errors) sum += e;
    result.mean = sum / static_cast<double>(result.errors.size());
    double sq = 0.0;
    for (double e : result.errors) sq += (e - result.mean) * (e - result.mean);
    result.stddev = std::sqrt(sq / static_cast<double>(result.errors.size()));
  }
  return result;
}

CorrespondenceResult correspond_pair(const PatchEncoderFn& encoder, const Mat& query_image,
                                     const std::vector<LandmarkAnnotation>& query_marks,
                                     const Mat& key_image,
                                     const std::vector<LandmarkAnnotation>& key_marks, int stride,
                                     int n_cells, int cell_pixels, int threads) {
  const KeyDictionary dict = build_key_dictionary(encoder, key_image, stride, n_cells, cell_pixels, threads);
  std::vector<LandmarkQuery> queries;
  for (const auto& qm : query_marks) {
    const LandmarkAnnotation* gt = nullptr;
    for (const auto& km : key_marks)
      if (km.landmark_name == qm.landmark_name) {
        gt = &km;
        break;
      }
    if (gt == nullptr) continue;
    LandmarkQuery q;
    q.name = qm.landmark_name;
    q.feature = extract_local_embedding(encoder, query_image, qm.x, qm.y, n_cells, cell_pixels);
    q.gt_x = gt->x;
    q.gt_y = gt->y;
    queries.push_back(std::move(q));
  }
  if (queries.empty()) throw Error("correspond_pair: no shared landmarks between the pair");
  return match_landmarks(queries, dict);
}

CorrespondenceSummary summarize_correspondence(const std::vector<CorrespondenceResult>& pairs) {
  CorrespondenceSummary s;
  s.n_pairs = static_cast<int>(pairs.size());
  std::map<std::string, std::pair<double, int>> per_mark;
  double pair_mean_sum = 0.0;
  std::vector<double> all;
  for (const auto& p : pairs) {
    pair_mean_sum += p.mean;
    for (std::size_t i = 0; i < p.errors.size(); ++i) {
      all.push_back(p.errors[i]);
      auto& acc = per_mark[p.names[i]];
      acc.first += p.errors[i];
      acc.second += 1;
    }
  }
  s.n_matches = static_cast<int>(all.size());
  if (s.n_pairs > 0) s.mean = pair_mean_sum / s.n_pairs;
  if (!all.empty()) {
    double mean_all = 0.0;
    for (double e : all) mean_all += e;
    mean_all /= static_cast<double>(all.size());
    double sq = 0.0;
    for (double e : all) sq += (e - mean_all) * (e - mean_all);
    s.stddev = std::sqrt(sq / static_cast<double>(all.size()));
  }
  for (const auto& [name, acc] : per_mark) s.per_landmark_mean[name] = acc.first / acc.second;
  return s;
}

std::string format_mean_std(double mean, double stddev) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f±%.2f", mean, stddev);
  return buf;
}

bool PixelRect::intersects(const PixelRect& o) const {
  return x < o.x + o.w && o.x < x + w && y < o.y + o.h && o.y < y + h;
}

bool PixelRect::contains(const PixelRect& o) const {
  return o.x >= x && o.y >= y && o.x + o.w <= x + w && o.y + o.h <= y + h;
}

std::string to_string(DnaSource s) {
  return s == DnaSource::inside_c1 ? "inside_c1" : "inside_complement";
}

namespace {

// Rectangle with the target area and a random aspect, clamped into [min_side,
// bounds].
PixelRect sample_rect_dims(double target_area, Rng& rng, const DnaGeometry& geom, int max_w, int max_h) {
  const double aspect = std::exp(rng.uniform(std::log(geom.aspect_lo), std::log(geom.aspect_hi)));
  int w = static_cast<int>(std::lround(std::sqrt(target_area * aspect)));
  int h = static_cast<int>(std::lround(std::sqrt(target_area / aspect)));
  w = clamp_int(w, std::min(geom.min_side, max_w), max_w);
  h = clamp_int(h, std::min(geom.min_side, max_h), max_h);
  return PixelRect{0, 0, w, h};
}

Mat rect_crop_canonical(const Mat& image, const PixelRect& r, const DnaGeometry& geom) {
  const Mat raw = crop(image, r.y, r.x, r.h, r.w);
  const int canonical = geom.canonical_cells * geom.cell_pixels;
  return resize_bilinear(raw, canonical, canonical);
}

}  // namespace

DnaTrial dna_trial(const PatchEncoderFn& encoder, const Mat& image, Rng& rng, const DnaGeometry& geom,
                   DnaSource source) {
  const int w = static_cast<int>(image.cols()), h = static_cast<int>(image.rows());
  const double total = static_cast<double>(w) * h;

  DnaTrial trial;
  trial.cs_source = source;

  PixelRect c1 = sample_rect_dims(rng.uniform(geom.c1_area_lo, geom.c1_area_hi) * total, rng, geom, w, h);
  c1.x = rng.uniform_int(0, w - c1.w);
  c1.y = rng.uniform_int(0, h - c1.h);
  trial.c1_window = c1;

  PixelRect cs;
  if (source == DnaSource::inside_c1) {
    cs = sample_rect_dims(rng.uniform(geom.cs_area_lo, geom.cs_area_hi) * c1.area(), rng, geom, c1.w, c1.h);
    cs.x = c1.x + rng.uniform_int(0, c1.w - cs.w);
    cs.y = c1.y + rng.uniform_int(0, c1.h - cs.h);
  } else {
    const double comp_area = total - static_cast<double>(c1.area());
    cs = sample_rect_dims(rng.uniform(geom.cs_area_lo, geom.cs_area_hi) * comp_area, rng, geom, w, h);
    bool placed = false;
    for (int shrink = 0; shrink < 20 && !placed; ++shrink) {
      for (int attempt = 0; attempt < 100; ++attempt) {
        cs.x = rng.uniform_int(0, w - cs.w);
        cs.y = rng.uniform_int(0, h - cs.h);
        if (!cs.intersects(c1)) {
          placed = true;
          break;
        }
      }
      if (!placed) {
        cs.w = std::max(geom.min_side, static_cast<int>(std::lround(cs.w * 0.9)));
        cs.h = std::max(geom.min_side, static_cast<int>(std::lround(cs.h * 0.9)));
      }
    }
    if (!placed) {
      // Deterministic fallback: the largest side strip of the complement.
      std::vector<PixelRect> strips = {{0, 0, c1.x, h},
                                       {c1.x + c1.w, 0, w - (c1.x + c1.w), h},
                                       {c1.x, 0, c1.w, c1.y},
                                       {c1.x, c1.y + c1.h, c1.w, h - (c1.y + c1.h)}};
      const PixelRect* best = nullptr;
      for (const auto& s : strips)
        if (s.w > 0 && s.h > 0 && (best == nullptr || s.area() > best->area())) best = &s;
      if (best == nullptr) throw GeometryError("dna_trial: complement has zero area");
      cs.w = std::min(cs.w, best->w);
      cs.h = std::min(cs.h, best->h);
      cs.x = best->x + rng.uniform_int(0, best->w - cs.w);
      cs.y = best->y + rng.uniform_int(0, best->h - cs.h);
    }
  }
  trial.cs_window = cs;

  const int n = geom.canonical_cells;
  const Mat e_c1_tokens = encoder(rect_crop_canonical(image, c1, geom), n, n, c1.x, c1.y);
  const Mat e_cs_tokens = encoder(rect_crop_canonical(image, cs, geom), n, n, cs.x, cs.y);
  Mat remaining = image;
  remaining.block(c1.y, c1.x, c1.h, c1.w).setZero();
  if (w % geom.cell_pixels != 0 || h % geom.cell_pixels != 0)
    throw ShapeError("dna_trial: image side not divisible by cell_pixels");
  const Mat e_c_tokens =
      encoder(remaining, h / geom.cell_pixels, w / geom.cell_pixels, 0, 0);

  const Mat e_c1 = e_c1_tokens.colwise().mean();
  const Mat e_cs = e_cs_tokens.colwise().mean();
  const Mat e_c = e_c_tokens.colwise().mean();
  trial.cos_c1 = cosine(e_cs, e_c1);
  trial.cos_c = cosine(e_cs, e_c);
  trial.predicted_source = trial.cos_c1 >= trial.cos_c ? DnaSource::inside_c1 : DnaSource::inside_complement;
  trial.correct = trial.predicted_source == trial.cs_source;
  return trial;
}

DnaResult dna_accuracy(const PatchEncoderFn& encoder, const std::vector<const Mat*>& images,
                       int trials_per_image, std::uint64_t seed, const DnaGeometry& geom, int threads) {
  if (images.empty()) throw Error("dna_accuracy: empty image set");
  if (trials_per_image < 1) throw Error("dna_accuracy: need at least one trial per image");
  const int n_images = static_cast<int>(images.size());
  std::vector<std::vector<DnaTrial>> per_image(static_cast<std::size_t>(n_images));
  nn::parallel_for(n_images, threads, [&](int i) {
    Rng rng(mix_seed({seed, 0x646e61ull, static_cast<std::uint64_t>(i)}));
    auto& trials = per_image[static_cast<std::size_t>(i)];
    trials.reserve(static_cast<std::size_t>(trials_per_image));
    for (int k = 0; k < trials_per_image; ++k) {
      const std::int64_t global_index = static_cast<std::int64_t>(i) * trials_per_image + k;
      const DnaSource source =
          global_index % 2 == 0 ? DnaSource::inside_c1 : DnaSource::inside_complement;
      trials.push_back(dna_trial(encoder, *images[static_cast<std::size_t>(i)], rng, geom, source));
    }
  });

  DnaResult result;
  for (const auto& trials : per_image)
    for (const auto& t : trials) {
      result.trials.push_back(t);
      result.n_trials += 1;
      result.n_correct += t.correct ? 1 : 0;
    }
  result.accuracy = static_cast<double>(result.n_correct) / result.n_trials;
  const double half =
      1.96 * std::sqrt(result.accuracy * (1.0 - result.accuracy) / static_cast<double>(result.n_trials));
  result.ci_lo = std::max(0.0, result.accuracy - half);
  result.ci_hi = std::min(1.0, result.accuracy + half);
  return result;
}

}  // namespace ana
