#pragma once

#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "anatomist/image.hpp"

namespace ana::ad {

// Minimal reverse-mode autodiff over dense double matrices. Graphs are built
// per forward pass; nodes created while a NoGradScope is active (or whose
// parents all have requires_grad == false) carry no parents and no backward
// closure, so constant subgraphs (e.g. the teacher encoder) cost nothing at
// backward time and release their intermediates eagerly.

struct Node;
using Var = std::shared_ptr<Node>;

// Gradients accumulate outside the nodes so concurrent backward passes over
// shared parameters never race: each pass owns its own GradMap.
class GradMap {
 public:
  void add(const Node* n, const Mat& g);
  const Mat* find(const Node* n) const;
  bool contains(const Node* n) const { return find(n) != nullptr; }
  std::size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<const Node*, Mat> grads_;
};

struct Node {
  Mat value;
  bool requires_grad = false;
  std::vector<Var> parents;
  // Accumulates d(root)/d(parents) given g = d(root)/d(this).
  std::function<void(const Mat& g, GradMap& grads)> backward;
};

// Suppresses graph construction while alive (thread-local).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;
};

bool grad_enabled();

Var constant(Mat value);
Var leaf(Mat value);  // requires_grad = true

inline const Mat& value(const Var& v) { return v->value; }

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  // elementwise
Var scale(const Var& a, double s);
Var matmul(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);  // a * b^T
Var add_rowvec(const Var& a, const Var& bias);  // bias is 1 x C, broadcast over rows
Var slice_cols(const Var& a, int col0, int ncols);
Var concat_cols(const std::vector<Var>& parts);
Var select_rows(const Var& a, std::vector<int> idx);
// n_rows x C matrix with row idx[i] = src.row(i), zeros elsewhere; idx entries unique.
Var scatter_rows(int n_rows, std::vector<int> idx, const Var& src);
Var repeat_row(const Var& row, int n);
Var softmax_rows(const Var& a);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-6);
Var gelu(const Var& x);
Var abs_val(const Var& x);
Var mean_all(const Var& x);   // 1x1
Var mean_rows(const Var& x);  // 1 x C column means
// Mean over rows of -log softmax(logits.row(i))[targets[i]]; returns 1x1.
Var cross_entropy_rows(const Var& logits, std::vector<int> targets);
// Splits an image into a (rows*cols) x (cell*cell) matrix of flattened cells.
Var patchify(const Var& image, int rows, int cols, int cell_pixels);

// Reverse-mode sweep from a 1x1 root; seed is d(loss)/d(root).
GradMap backward(const Var& root, double seed = 1.0);

}  // namespace ana::ad
