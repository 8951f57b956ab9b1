#pragma once

#include <array>
#include <utility>
#include <vector>

#include "anatomist/image.hpp"
#include "anatomist/rng.hpp"

namespace ana {

// Square grid of non-overlapping cells laid over an input image.
struct GridSpec {
  int grid_size;    // cells per side
  int cell_pixels;  // pixels per cell side
  int image_pixels; // = grid_size * cell_pixels
};

// Builds the grid, checking divisibility. Throws ConfigError naming both
// values when image_pixels is not a multiple of grid_size.
GridSpec make_grid(int image_pixels, int grid_size);

// A grid-aligned square window of n x n cells with top-left cell (row, col).
struct CropWindow {
  int row = 0;
  int col = 0;
  int n = 0;

  bool contains(const CropWindow& inner) const {
    return inner.row >= row && inner.col >= col && inner.row + inner.n <= row + n &&
           inner.col + inner.n <= col + n;
  }
};

// Extrapolation mask over an outer window's cells, row-major. flags[i] true
// means cell i is masked (its embedding must be predicted); the false cells
// form exactly one contiguous inner block.
struct MaskSet {
  int n1 = 0;
  std::vector<bool> flags;  // length n1*n1

  int count_masked() const;
  std::vector<int> masked_indices() const;
  std::vector<int> unmasked_indices() const;
};

// Samples an outer n1-cell window uniformly over its grid-aligned placements
// and an inner n2-cell window uniformly inside it.
std::pair<CropWindow, CropWindow> sample_crop_pair(const GridSpec& grid, int n1, int n2, Rng& rng);

// Uniformly random placement of a single n-cell window.
CropWindow sample_crop_window(const GridSpec& grid, int n, Rng& rng);

// Masked cells are the cells of c1 not covered by c2.
MaskSet mask_from_pair(const CropWindow& c1, const CropWindow& c2);

// order[i] = original index of the token now at slot i.
struct Permutation {
  std::vector<int> order;

  static Permutation identity(int n);
  Permutation inverse() const;
  bool is_identity() const;
  int size() const { return static_cast<int>(order.size()); }
};

// Uniform over all permutations; when allow_identity is false (default) an
// identity draw for n >= 2 is resampled once and the second draw is kept.
Permutation sample_permutation(int n_tokens, Rng& rng, bool allow_identity = false);

// output[i] = tokens[perm.order[i]]; throws on length mismatch.
template <typename T>
std::vector<T> apply_permutation(const std::vector<T>& tokens, const Permutation& perm);

// Row-wise variant for embedding matrices: out.row(i) = m.row(order[i]).
Mat apply_permutation_rows(const Mat& m, const Permutation& perm);

// Piecewise schedule for the coarse-to-fine crop ratio. Entries are
// (epoch_threshold, t) with thresholds strictly increasing from 0 and t
// non-decreasing; the active entry is the last whose threshold <= epoch.
struct CropRatioSchedule {
  std::vector<std::pair<int, double>> t_values = {{0, 20.0}, {50, 60.0}};
  double r_min = 0.4;

  void validate() const;
};

// r = exp(-epoch / t(epoch)), clamped to [r_min, 1].
double crop_ratio(int epoch, const CropRatioSchedule& schedule);

// Quadrant ordering shared by every part-whole operation in the project.
enum class Quadrant { TL = 0, TR = 1, BL = 2, BR = 3 };

// Splits a pixel region into 2x2 equal quadrants (TL, TR, BL, BR). Regions
// with an odd side are replicate-padded by one row/column first.
std::array<Mat, 4> split_quadrants(const Mat& region);

// Pixel crop of a grid-aligned window.
Mat crop_cells(const Mat& image, const GridSpec& grid, const CropWindow& window);

// Rearranges the n x n cell blocks of a region: output cell at slot i is the
// input cell perm.order[i]. Region side must be divisible by n.
Mat shuffle_cells(const Mat& region, int n, const Permutation& perm);

}  // namespace ana
