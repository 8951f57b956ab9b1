#include "anatomist/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "anatomist/errors.hpp"

namespace ana {

GridSpec make_grid(int image_pixels, int grid_size) {
  if (grid_size < 2) throw ConfigError("make_grid: grid_size must be >= 2, got " + std::to_string(grid_size));
  if (image_pixels < grid_size)
    throw ConfigError("make_grid: image_pixels " + std::to_string(image_pixels) + " smaller than grid_size " +
                      std::to_string(grid_size));
  if (image_pixels % grid_size != 0)
    throw ConfigError("make_grid: image_pixels " + std::to_string(image_pixels) +
                      " not divisible by grid_size " + std::to_string(grid_size));
  return GridSpec{grid_size, image_pixels / grid_size, image_pixels};
}

int MaskSet::count_masked() const {
  return static_cast<int>(std::count(flags.begin(), flags.end(), true));
}

std::vector<int> MaskSet::masked_indices() const {
  std::vector<int> idx;
  for (int i = 0; i < static_cast<int>(flags.size()); ++i)
    if (flags[static_cast<std::size_t>(i)]) idx.push_back(i);
  return idx;
}

std::vector<int> MaskSet::unmasked_indices() const {
  std::vector<int> idx;
  for (int i = 0; i < static_cast<int>(flags.size()); ++i)
    if (!flags[static_cast<std::size_t>(i)]) idx.push_back(i);
  return idx;
}

CropWindow sample_crop_window(const GridSpec& grid, int n, Rng& rng) {
  if (n < 1 || n > grid.grid_size)
    throw ConfigError("sample_crop_window: n=" + std::to_string(n) + " out of range for grid_size " +
                      std::to_string(grid.grid_size));
  const int max_off = grid.grid_size - n;
  return CropWindow{rng.uniform_int(0, max_off), rng.uniform_int(0, max_off), n};
}

std::pair<CropWindow, CropWindow> sample_crop_pair(const GridSpec& grid, int n1, int n2, Rng& rng) {
  if (n2 >= n1)
    throw ConfigError("sample_crop_pair: n2=" + std::to_string(n2) + " must be < n1=" + std::to_string(n1));
  if (n1 > grid.grid_size)
    throw ConfigError("sample_crop_pair: n1=" + std::to_string(n1) + " exceeds grid_size " +
                      std::to_string(grid.grid_size));
  if (n2 < 1) throw ConfigError("sample_crop_pair: n2 must be >= 1");
  CropWindow c1 = sample_crop_window(grid, n1, rng);
  const int max_off = n1 - n2;
  CropWindow c2{c1.row + rng.uniform_int(0, max_off), c1.col + rng.uniform_int(0, max_off), n2};
  return {c1, c2};
}

MaskSet mask_from_pair(const CropWindow& c1, const CropWindow& c2) {
  if (!c1.contains(c2)) throw GeometryError("mask_from_pair: inner window not contained in outer window");
  MaskSet mask;
  mask.n1 = c1.n;
  mask.flags.assign(static_cast<std::size_t>(c1.n) * c1.n, true);
  const int off_r = c2.row - c1.row;
  const int off_c = c2.col - c1.col;
  for (int r = 0; r < c2.n; ++r)
    for (int c = 0; c < c2.n; ++c)
      mask.flags[static_cast<std::size_t>(off_r + r) * c1.n + (off_c + c)] = false;
  return mask;
}

Permutation Permutation::identity(int n) {
  Permutation p;
  p.order.resize(static_cast<std::size_t>(n));
  std::iota(p.order.begin(), p.order.end(), 0);
  return p;
}

Permutation Permutation::inverse() const {
  Permutation inv;
  inv.order.resize(order.size());
  for (int i = 0; i < size(); ++i) inv.order[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = i;
  return inv;
}

bool Permutation::is_identity() const {
  for (int i = 0; i < size(); ++i)
    if (order[static_cast<std::size_t>(i)] != i) return false;
  return true;
}

Permutation sample_permutation(int n_tokens, Rng& rng, bool allow_identity) {
  if (n_tokens < 1) throw ConfigError("sample_permutation: n_tokens must be >= 1");
  Permutation p = Permutation::identity(n_tokens);
  rng.shuffle(p.order);
  if (!allow_identity && n_tokens >= 2 && p.is_identity()) {
    p = Permutation::identity(n_tokens);
    rng.shuffle(p.order);
  }
  return p;
}

template <typename T>
std::vector<T> apply_permutation(const std::vector<T>& tokens, const Permutation& perm) {
  if (tokens.size() != perm.order.size())
    throw ShapeError("apply_permutation: " + std::to_string(tokens.size()) + " tokens vs permutation of " +
                     std::to_string(perm.order.size()));
  std::vector<T> out;
  out.reserve(tokens.size());
  for (int i = 0; i < perm.size(); ++i)
    out.push_back(tokens[static_cast<std::size_t>(perm.order[static_cast<std::size_t>(i)])]);
  return out;
}

template std::vector<int> apply_permutation(const std::vector<int>&, const Permutation&);
template std::vector<double> apply_permutation(const std::vector<double>&, const Permutation&);
template std::vector<std::string> apply_permutation(const std::vector<std::string>&, const Permutation&);

Mat apply_permutation_rows(const Mat& m, const Permutation& perm) {
  if (m.rows() != perm.size())
    throw ShapeError("apply_permutation_rows: " + std::to_string(m.rows()) + " rows vs permutation of " +
                     std::to_string(perm.size()));
  Mat out(m.rows(), m.cols());
  for (int i = 0; i < perm.size(); ++i) out.row(i) = m.row(perm.order[static_cast<std::size_t>(i)]);
  return out;
}

void CropRatioSchedule::validate() const {
  if (t_values.empty()) throw ConfigError("CropRatioSchedule: empty schedule");
  if (t_values.front().first != 0) throw ConfigError("CropRatioSchedule: first epoch_threshold must be 0");
  for (std::size_t i = 0; i < t_values.size(); ++i) {
    if (t_values[i].second <= 0.0) throw ConfigError("CropRatioSchedule: t must be > 0");
    if (i > 0) {
      if (t_values[i].first <= t_values[i - 1].first)
        throw ConfigError("CropRatioSchedule: epoch_thresholds must be strictly increasing");
      if (t_values[i].second < t_values[i - 1].second)
        throw ConfigError("CropRatioSchedule: t must be non-decreasing");
    }
  }
  if (r_min <= 0.0 || r_min > 1.0) throw ConfigError("CropRatioSchedule: r_min must be in (0, 1]");
}

double crop_ratio(int epoch, const CropRatioSchedule& schedule) {
  if (epoch < 0) throw ConfigError("crop_ratio: epoch must be >= 0");
  schedule.validate();
  double t = schedule.t_values.front().second;
  for (const auto& [threshold, value] : schedule.t_values)
    if (epoch >= threshold) t = value;
  const double r = std::exp(-static_cast<double>(epoch) / t);
  return std::clamp(r, schedule.r_min, 1.0);
}

std::array<Mat, 4> split_quadrants(const Mat& region) {
  Mat m = region;
  // Replicate-pad odd sides so the quadrants tile the region exactly.
  if (m.rows() % 2 != 0) {
    Mat padded(m.rows() + 1, m.cols());
    padded.topRows(m.rows()) = m;
    padded.row(m.rows()) = m.row(m.rows() - 1);
    m = std::move(padded);
  }
  if (m.cols() % 2 != 0) {
    Mat padded(m.rows(), m.cols() + 1);
    padded.leftCols(m.cols()) = m;
    padded.col(m.cols()) = m.col(m.cols() - 1);
    m = std::move(padded);
  }
  const int hr = static_cast<int>(m.rows()) / 2;
  const int hc = static_cast<int>(m.cols()) / 2;
  return {Mat(m.block(0, 0, hr, hc)), Mat(m.block(0, hc, hr, hc)), Mat(m.block(hr, 0, hr, hc)),
          Mat(m.block(hr, hc, hr, hc))};
}

Mat crop_cells(const Mat& image, const GridSpec& grid, const CropWindow& window) {
  if (image.rows() != grid.image_pixels || image.cols() != grid.image_pixels)
    throw ShapeError("crop_cells: image " + std::to_string(image.rows()) + "x" + std::to_string(image.cols()) +
                     " does not match grid resolution " + std::to_string(grid.image_pixels));
  if (window.row < 0 || window.col < 0 || window.row + window.n > grid.grid_size ||
      window.col + window.n > grid.grid_size)
    throw GeometryError("crop_cells: window exceeds grid");
  const int cp = grid.cell_pixels;
  return crop(image, window.row * cp, window.col * cp, window.n * cp, window.n * cp);
}

Mat shuffle_cells(const Mat& region, int n, const Permutation& perm) {
  if (n < 1 || region.rows() != region.cols() || region.rows() % n != 0)
    throw ShapeError("shuffle_cells: region side must be a positive multiple of n");
  if (perm.size() != n * n)
    throw ShapeError("shuffle_cells: permutation size " + std::to_string(perm.size()) + " != n^2 = " +
                     std::to_string(n * n));
  const int cp = static_cast<int>(region.rows()) / n;
  Mat out(region.rows(), region.cols());
  for (int slot = 0; slot < n * n; ++slot) {
    const int src = perm.order[static_cast<std::size_t>(slot)];
    out.block((slot / n) * cp, (slot % n) * cp, cp, cp) = region.block((src / n) * cp, (src % n) * cp, cp, cp);
  }
  return out;
}

}  // namespace ana
