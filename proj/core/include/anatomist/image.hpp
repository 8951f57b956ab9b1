#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace ana {

// All pixel and embedding math runs in double; dataset storage uses float to
// halve the resident size of large phantom sets.
using Mat = Eigen::MatrixXd;
using MatF = Eigen::MatrixXf;

// A single-channel image. pix(r, c) is the intensity at row r (y) and
// column c (x); coordinates elsewhere in the project are (x, y) with origin
// at the top-left.
struct Image {
  std::string id;
  MatF pix;

  int width() const { return static_cast<int>(pix.cols()); }
  int height() const { return static_cast<int>(pix.rows()); }
};

Mat to_double(const MatF& m);

// Bounds-checked rectangular crop.
Mat crop(const Mat& img, int row0, int col0, int rows, int cols);

// Separable bilinear resize with pixel-center alignment.
Mat resize_bilinear(const Mat& img, int out_rows, int out_cols);

Mat zero_pad(const Mat& img, int top, int bottom, int left, int right);

}  // namespace ana
