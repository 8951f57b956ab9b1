#include "anatomist/image.hpp"

#include <algorithm>
#include <cmath>

#include "anatomist/errors.hpp"

namespace ana {

Mat to_double(const MatF& m) { return m.cast<double>(); }

Mat crop(const Mat& img, int row0, int col0, int rows, int cols) {
  if (rows <= 0 || cols <= 0)
    throw ShapeError("crop: non-positive size " + std::to_string(rows) + "x" + std::to_string(cols));
  if (row0 < 0 || col0 < 0 || row0 + rows > img.rows() || col0 + cols > img.cols())
    throw ShapeError("crop: window [" + std::to_string(row0) + "," + std::to_string(col0) + "]+" +
                     std::to_string(rows) + "x" + std::to_string(cols) + " exceeds image " +
                     std::to_string(img.rows()) + "x" + std::to_string(img.cols()));
  return img.block(row0, col0, rows, cols);
}

Mat resize_bilinear(const Mat& img, int out_rows, int out_cols) {
  if (out_rows <= 0 || out_cols <= 0) throw ShapeError("resize_bilinear: non-positive output size");
  const int in_rows = static_cast<int>(img.rows());
  const int in_cols = static_cast<int>(img.cols());
  if (in_rows == out_rows && in_cols == out_cols) return img;

  Mat out(out_rows, out_cols);
  const double sr = static_cast<double>(in_rows) / out_rows;
  const double sc = static_cast<double>(in_cols) / out_cols;
  for (int r = 0; r < out_rows; ++r) {
    double src_r = (r + 0.5) * sr - 0.5;
    src_r = std::clamp(src_r, 0.0, static_cast<double>(in_rows - 1));
    const int r0 = static_cast<int>(std::floor(src_r));
    const int r1 = std::min(r0 + 1, in_rows - 1);
    const double fr = src_r - r0;
    for (int c = 0; c < out_cols; ++c) {
      double src_c = (c + 0.5) * sc - 0.5;
      src_c = std::clamp(src_c, 0.0, static_cast<double>(in_cols - 1));
      const int c0 = static_cast<int>(std::floor(src_c));
      const int c1 = std::min(c0 + 1, in_cols - 1);
      const double fc = src_c - c0;
      out(r, c) = (1 - fr) * ((1 - fc) * img(r0, c0) + fc * img(r0, c1)) +
                  fr * ((1 - fc) * img(r1, c0) + fc * img(r1, c1));
    }
  }
  return out;
}

Mat zero_pad(const Mat& img, int top, int bottom, int left, int right) {
  if (top < 0 || bottom < 0 || left < 0 || right < 0) throw ShapeError("zero_pad: negative padding");
  Mat out = Mat::Zero(img.rows() + top + bottom, img.cols() + left + right);
  out.block(top, left, img.rows(), img.cols()) = img;
  return out;
}

}  // namespace ana
