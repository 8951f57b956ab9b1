#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "anatomist/backbone.hpp"
#include "anatomist/data.hpp"

namespace ana {

// Patch feature extractor used by every zero-shot protocol: given a pixel
// region laid out as rows x cols cells and the region's origin in the source
// image, returns the (rows*cols) x D token matrix. The production adapter
// wraps a frozen teacher encoder and ignores the origin; test stubs may use
// it to produce position-dependent features.
using PatchEncoderFn =
    std::function<Mat(const Mat& region, int rows, int cols, int origin_x, int origin_y)>;

PatchEncoderFn make_teacher_encoder(EncoderParams teacher);

// Embedding of the cell containing (x, y), taken from an n_cells-wide crop
// centered at the point (clamped into bounds near edges). Returns 1 x D.
Mat extract_local_embedding(const PatchEncoderFn& encoder, const Mat& image, int x, int y, int n_cells,
                            int cell_pixels);

// Sliding-window feature dictionary over a zero-padded image: one entry per
// window center on the stride lattice {0, stride, 2*stride, ...} per axis,
// each holding the window's center-cell embedding.
struct KeyDictionary {
  std::vector<std::pair<int, int>> positions;  // window centers (x, y)
  Mat features;                                // N_k x D, same order
  int stride = 0;
  int window_pixels = 0;
};

KeyDictionary build_key_dictionary(const PatchEncoderFn& encoder, const Mat& image, int stride,
                                   int n_cells, int cell_pixels, int threads = 0);

struct LandmarkQuery {
  std::string name;
  Mat feature;  // 1 x D
  int gt_x = 0;
  int gt_y = 0;  // ground truth in the key image
};

struct CorrespondenceResult {
  std::vector<std::string> names;
  std::vector<std::pair<int, int>> predicted;
  std::vector<double> errors;  // Euclidean pixels
  double mean = 0.0;
  double stddev = 0.0;
};

// l2 nearest-neighbour match of each query feature against the dictionary;
// exact distance ties resolve to the smallest (y, x) position.
CorrespondenceResult match_landmarks(const std::vector<LandmarkQuery>& queries,
                                     const KeyDictionary& dict);

// Full protocol for one image pair: extract query features at the query
// image's landmarks, match into the key image's dictionary, score against
// the key image's ground truth. Landmarks present in both lists are used.
CorrespondenceResult correspond_pair(const PatchEncoderFn& encoder, const Mat& query_image,
                                     const std::vector<LandmarkAnnotation>& query_marks,
                                     const Mat& key_image,
                                     const std::vector<LandmarkAnnotation>& key_marks, int stride,
                                     int n_cells, int cell_pixels, int threads = 0);

struct CorrespondenceSummary {
  double mean = 0.0;    // mean of per-pair mean errors
  double stddev = 0.0;  // std over all individual errors
  int n_pairs = 0;
  int n_matches = 0;
  std::map<std::string, double> per_landmark_mean;
};

CorrespondenceSummary summarize_correspondence(const std::vector<CorrespondenceResult>& pairs);

// "68.17±44.45"-style formatting.
std::string format_mean_std(double mean, double stddev);

struct PixelRect {
  int x = 0, y = 0, w = 0, h = 0;

  long area() const { return static_cast<long>(w) * h; }
  bool intersects(const PixelRect& o) const;
  bool contains(const PixelRect& o) const;
};

enum class DnaSource { inside_c1, inside_complement };

std::string to_string(DnaSource s);

struct DnaGeometry {
  double c1_area_lo = 0.3;
  double c1_area_hi = 0.5;
  double cs_area_lo = 0.1;  // relative to the source region's area
  double cs_area_hi = 0.3;
  double aspect_lo = 0.8;
  double aspect_hi = 1.25;
  int canonical_cells = 14;  // crops are resized to canonical_cells^2 cells
  int cell_pixels = 8;
  int min_side = 8;
};

struct DnaTrial {
  PixelRect c1_window;
  PixelRect cs_window;
  DnaSource cs_source = DnaSource::inside_c1;
  DnaSource predicted_source = DnaSource::inside_c1;
  bool correct = false;
  double cos_c1 = 0.0;
  double cos_c = 0.0;
};

// One part-whole trial: pooled embeddings of the whole-structure crop C1, of
// the remaining area C (the image with C1 zero-filled) and of the small crop
// C_s drawn from `source`; predicts the source by cosine similarity, ties
// toward inside_c1.
DnaTrial dna_trial(const PatchEncoderFn& encoder, const Mat& image, Rng& rng, const DnaGeometry& geom,
                   DnaSource source);

struct DnaResult {
  int n_trials = 0;
  int n_correct = 0;
  double accuracy = 0.0;
  double ci_lo = 0.0;  // 95% normal-approximation interval
  double ci_hi = 0.0;
  std::vector<DnaTrial> trials;
};

// Balanced trials (alternating source) over the image set; images must be at
// grid resolution (side divisible by cell_pixels).
DnaResult dna_accuracy(const PatchEncoderFn& encoder, const std::vector<const Mat*>& images,
                       int trials_per_image, std::uint64_t seed, const DnaGeometry& geom,
                       int threads = 0);

}  // namespace ana
