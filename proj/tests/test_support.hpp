#pragma once

// Shared test utilities: brute-force loss oracles (explicit loops, no shared
// code with the implementations under test), a central finite-difference
// checker, and stub patch encoders for the zero-shot protocol contracts.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <vector>

#include "anatomist/autograd.hpp"
#include "anatomist/rng.hpp"
#include "anatomist/zeroshot.hpp"

namespace testsupport {

using ana::Mat;

// ---- brute-force oracles ----

inline double oracle_loss_extrap(const Mat& es, const Mat& et, const std::vector<bool>& masked) {
  double sum = 0.0;
  long count = 0;
  for (long i = 0; i < es.rows(); ++i) {
    if (!masked[static_cast<std::size_t>(i)]) continue;
    for (long d = 0; d < es.cols(); ++d) {
      sum += std::fabs(es(i, d) - et(i, d));
      ++count;
    }
  }
  return sum / static_cast<double>(count);
}

struct OracleShuffle {
  double ce = 0.0;
  double mse = 0.0;
  double total = 0.0;
};

inline OracleShuffle oracle_loss_shuffle(const Mat& logits, const std::vector<int>& order, const Mat& es,
                                         const Mat& et, double lambda) {
  OracleShuffle out;
  const long n = logits.rows();
  for (long i = 0; i < n; ++i) {
    double mx = logits(i, 0);
    for (long j = 1; j < n; ++j) mx = std::max(mx, logits(i, j));
    double denom = 0.0;
    for (long j = 0; j < n; ++j) denom += std::exp(logits(i, j) - mx);
    const double p = std::exp(logits(i, order[static_cast<std::size_t>(i)]) - mx) / denom;
    out.ce += -std::log(p);
  }
  out.ce /= static_cast<double>(n);
  double sq = 0.0;
  for (long i = 0; i < n; ++i)
    for (long d = 0; d < es.cols(); ++d) {
      const double diff = es(i, d) - et(order[static_cast<std::size_t>(i)], d);
      sq += diff * diff;
    }
  out.mse = sq / static_cast<double>(n * es.cols());
  out.total = lambda * out.ce + out.mse;
  return out;
}

struct OracleCompDecomp {
  double comp = 0.0;
  double decomp = 0.0;
  double total = 0.0;
};

inline OracleCompDecomp oracle_loss_comp_decomp(const Mat& e_comp, const Mat& e_t_global,
                                                const std::vector<Mat>& e_decomp,
                                                const std::vector<Mat>& e_t_subs) {
  OracleCompDecomp out;
  for (long d = 0; d < e_comp.cols(); ++d) out.comp += std::fabs(e_comp(0, d) - e_t_global(0, d));
  out.comp /= static_cast<double>(e_comp.cols());
  for (int i = 0; i < 4; ++i) {
    double term = 0.0;
    for (long d = 0; d < e_comp.cols(); ++d)
      term += std::fabs(e_decomp[static_cast<std::size_t>(i)](0, d) -
                        e_t_subs[static_cast<std::size_t>(i)](0, d));
    out.decomp += term / static_cast<double>(e_comp.cols());
  }
  out.decomp /= 4.0;
  out.total = out.comp + out.decomp;
  return out;
}

// Brute-force sliding-window center enumeration (the count oracle for the
// key dictionary).
inline long oracle_count_window_placements(int width, int height, int stride) {
  long count = 0;
  for (int cy = 0; cy < height; cy += stride)
    for (int cx = 0; cx < width; cx += stride) ++count;
  return count;
}

// ---- finite differences ----

struct FdReport {
  double max_rel = 0.0;
  int checked = 0;
};

// Central finite differences on sampled entries of each leaf against the
// analytic gradient of the scalar produced by build_loss (rebuilt per probe).
inline FdReport finite_difference_check(const std::vector<ana::ad::Var>& leaves,
                                        const std::function<ana::ad::Var()>& build_loss,
                                        double h = 1e-5, int samples_per_leaf = 8,
                                        std::uint64_t seed = 17) {
  ana::ad::GradMap grads = ana::ad::backward(build_loss());
  ana::Rng rng(seed);
  FdReport report;
  for (const auto& leaf : leaves) {
    Mat& v = leaf->value;
    const long total = v.size();
    const int samples = static_cast<int>(std::min<long>(total, samples_per_leaf));
    for (int s = 0; s < samples; ++s) {
      const long flat = total <= samples_per_leaf
                            ? s
                            : static_cast<long>(rng.uniform_int(0, static_cast<int>(total - 1)));
      const long r = flat % v.rows();
      const long c = flat / v.rows();
      const double keep = v(r, c);
      v(r, c) = keep + h;
      const double up = ana::ad::value(build_loss())(0, 0);
      v(r, c) = keep - h;
      const double down = ana::ad::value(build_loss())(0, 0);
      v(r, c) = keep;
      const double fd = (up - down) / (2.0 * h);
      const Mat* g = grads.find(leaf.get());
      const double analytic = g == nullptr ? 0.0 : (*g)(r, c);
      // Floor the denominator: central differences carry ~1e-10 absolute
      // noise, so entries below 1e-5 are compared at that absolute scale.
      const double denom = std::max({std::fabs(fd), std::fabs(analytic), 1e-5});
      report.max_rel = std::max(report.max_rel, std::fabs(fd - analytic) / denom);
      ++report.checked;
    }
  }
  return report;
}

// ---- stub patch encoders ----

// Feature of each token = absolute center of its cell, zero-padded to dim.
// Position-distinct by construction, used for the lattice-bound contract.
inline ana::PatchEncoderFn make_position_probe_encoder(int cell_pixels, int dim = 4) {
  return [cell_pixels, dim](const Mat& region, int rows, int cols, int origin_x, int origin_y) {
    (void)region;
    Mat tokens = Mat::Zero(static_cast<long>(rows) * cols, dim);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        const long i = static_cast<long>(r) * cols + c;
        tokens(i, 0) = origin_x + (c + 0.5) * cell_pixels;
        tokens(i, 1) = origin_y + (r + 0.5) * cell_pixels;
      }
    return tokens;
  };
}

// Deterministic pseudo-random features: a hash of the region's exact pixel
// values seeds a gaussian vector per token. Any change of content yields an
// independent feature, which makes cosine comparisons coin flips.
inline ana::PatchEncoderFn make_random_feature_encoder(int dim, std::uint64_t salt) {
  return [dim, salt](const Mat& region, int rows, int cols, int, int) {
    std::uint64_t h = salt;
    for (long i = 0; i < region.size(); ++i) {
      std::uint64_t bits;
      const double v = region.data()[i];
      static_assert(sizeof(bits) == sizeof(v));
      std::memcpy(&bits, &v, sizeof(bits));
      h = ana::splitmix64(h ^ bits);
    }
    Mat tokens(static_cast<long>(rows) * cols, dim);
    for (long i = 0; i < tokens.rows(); ++i) {
      ana::Rng rng(ana::mix_seed({h, static_cast<std::uint64_t>(i)}));
      for (int d = 0; d < dim; ++d) tokens(i, d) = rng.normal();
    }
    return tokens;
  };
}

}  // namespace testsupport
