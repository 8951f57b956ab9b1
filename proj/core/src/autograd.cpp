#include "anatomist/autograd.hpp"

#include <cmath>
#include <utility>

#include "anatomist/errors.hpp"

namespace ana::ad {

namespace {

constexpr double kGeluC = 0.7978845608028653559;  // sqrt(2/pi)

thread_local int no_grad_depth = 0;

Var make_node(Mat value, std::vector<Var> parents,
              std::function<void(const Mat&, GradMap&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool needs_grad = false;
  if (no_grad_depth == 0)
    for (const auto& p : parents)
      if (p->requires_grad) {
        needs_grad = true;
        break;
      }
  node->requires_grad = needs_grad;
  if (needs_grad) {
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return node;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a->value.rows() != b->value.rows() || a->value.cols() != b->value.cols())
    throw ShapeError(std::string(op) + ": shape mismatch " + std::to_string(a->value.rows()) + "x" +
                     std::to_string(a->value.cols()) + " vs " + std::to_string(b->value.rows()) + "x" +
                     std::to_string(b->value.cols()));
}

}  // namespace

void GradMap::add(const Node* n, const Mat& g) {
  auto it = grads_.find(n);
  if (it == grads_.end())
    grads_.emplace(n, g);
  else
    it->second += g;
}

const Mat* GradMap::find(const Node* n) const {
  auto it = grads_.find(n);
  return it == grads_.end() ? nullptr : &it->second;
}

NoGradScope::NoGradScope() { ++no_grad_depth; }
NoGradScope::~NoGradScope() { --no_grad_depth; }

bool grad_enabled() { return no_grad_depth == 0; }

Var constant(Mat value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = false;
  return node;
}

Var leaf(Mat value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = no_grad_depth == 0;
  return node;
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  return make_node(a->value + b->value, {a, b}, [a, b](const Mat& g, GradMap& grads) {
    if (a->requires_grad) grads.add(a.get(), g);
    if (b->requires_grad) grads.add(b.get(), g);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  return make_node(a->value - b->value, {a, b}, [a, b](const Mat& g, GradMap& grads) {
    if (a->requires_grad) grads.add(a.get(), g);
    if (b->requires_grad) grads.add(b.get(), Mat(-g));
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  return make_node(a->value.cwiseProduct(b->value), {a, b}, [a, b](const Mat& g, GradMap& grads) {
    if (a->requires_grad) grads.add(a.get(), Mat(g.cwiseProduct(b->value)));
    if (b->requires_grad) grads.add(b.get(), Mat(g.cwiseProduct(a->value)));
  });
}

Var scale(const Var& a, double s) {
  return make_node(a->value * s, {a}, [a, s](const Mat& g, GradMap& grads) {
    if (a->requires_grad) grads.add(a.get(), Mat(g * s));
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a->value.cols() != b->value.rows())
    throw ShapeError("matmul: inner dims " + std::to_string(a->value.cols()) + " vs " +
                     std::to_string(b->value.rows()));
  return make_node(a->value * b->value, {a, b}, [a, b](const Mat& g, GradMap& grads) {
    if (a->requires_grad) grads.add(a.get(), Mat(g * b->value.transpose()));
    if (b->requires_grad) grads.add(b.get(), Mat(a->value.transpose() * g));
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  if (a->value.cols() != b->value.cols())
    throw ShapeError("matmul_nt: inner dims " + std::to_string(a->value.cols()) + " vs " +
                     std::to_string(b->value.cols()));
  return make_node(a->value * b->value.transpose(), {a, b}, [a, b](const Mat& g, GradMap& grads) {
    if (a->requires_grad) grads.add(a.get(), Mat(g * b->value));
    if (b->requires_grad) grads.add(b.get(), Mat(g.transpose() * a->value));
  });
}

Var add_rowvec(const Var& a, const Var& bias) {
  if (bias->value.rows() != 1 || bias->value.cols() != a->value.cols())
    throw ShapeError("add_rowvec: bias must be 1x" + std::to_string(a->value.cols()));
  Mat out = a->value;
  out.rowwise() += bias->value.row(0);
  return make_node(std::move(out), {a, bias}, [a, bias](const Mat& g, GradMap& grads) {
    if (a->requires_grad) grads.add(a.get(), g);
    if (bias->requires_grad) grads.add(bias.get(), Mat(g.colwise().sum()));
  });
}

Var slice_cols(const Var& a, int col0, int ncols) {
  if (col0 < 0 || ncols <= 0 || col0 + ncols > a->value.cols()) throw ShapeError("slice_cols: out of range");
  const long rows = a->value.rows(), cols = a->value.cols();
  return make_node(a->value.middleCols(col0, ncols), {a},
                   [a, col0, ncols, rows, cols](const Mat& g, GradMap& grads) {
                     if (!a->requires_grad) return;
                     Mat full = Mat::Zero(rows, cols);
                     full.middleCols(col0, ncols) = g;
                     grads.add(a.get(), full);
                   });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: empty input");
  long rows = parts[0]->value.rows();
  long total = 0;
  for (const auto& p : parts) {
    if (p->value.rows() != rows) throw ShapeError("concat_cols: row mismatch");
    total += p->value.cols();
  }
  Mat out(rows, total);
  long at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p->value.cols()) = p->value;
    at += p->value.cols();
  }
  std::vector<Var> parents(parts.begin(), parts.end());
  return make_node(std::move(out), std::move(parents), [parts](const Mat& g, GradMap& grads) {
    long at = 0;
    for (const auto& p : parts) {
      if (p->requires_grad) grads.add(p.get(), Mat(g.middleCols(at, p->value.cols())));
      at += p->value.cols();
    }
  });
}

Var select_rows(const Var& a, std::vector<int> idx) {
  Mat out(static_cast<long>(idx.size()), a->value.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= a->value.rows()) throw ShapeError("select_rows: index out of range");
    out.row(static_cast<long>(i)) = a->value.row(idx[i]);
  }
  const long rows = a->value.rows(), cols = a->value.cols();
  return make_node(std::move(out), {a}, [a, idx = std::move(idx), rows, cols](const Mat& g, GradMap& grads) {
    if (!a->requires_grad) return;
    Mat full = Mat::Zero(rows, cols);
    for (std::size_t i = 0; i < idx.size(); ++i) full.row(idx[i]) += g.row(static_cast<long>(i));
    grads.add(a.get(), full);
  });
}

Var scatter_rows(int n_rows, std::vector<int> idx, const Var& src) {
  if (static_cast<long>(idx.size()) != src->value.rows())
    throw ShapeError("scatter_rows: index count != source rows");
  Mat out = Mat::Zero(n_rows, src->value.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= n_rows) throw ShapeError("scatter_rows: index out of range");
    out.row(idx[i]) = src->value.row(static_cast<long>(i));
  }
  return make_node(std::move(out), {src}, [src, idx = std::move(idx)](const Mat& g, GradMap& grads) {
    if (!src->requires_grad) return;
    Mat gs(static_cast<long>(idx.size()), g.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) gs.row(static_cast<long>(i)) = g.row(idx[i]);
    grads.add(src.get(), gs);
  });
}

Var repeat_row(const Var& row, int n) {
  if (row->value.rows() != 1) throw ShapeError("repeat_row: input must have one row");
  Mat out = row->value.replicate(n, 1);
  return make_node(std::move(out), {row}, [row](const Mat& g, GradMap& grads) {
    if (row->requires_grad) grads.add(row.get(), Mat(g.colwise().sum()));
  });
}

Var softmax_rows(const Var& a) {
  Mat out = a->value;
  const Eigen::VectorXd row_max = out.rowwise().maxCoeff();
  out = (out.colwise() - row_max).array().exp();
  const Eigen::VectorXd row_sum = out.rowwise().sum();
  out.array().colwise() /= row_sum.array();
  auto probs = std::make_shared<Mat>(out);
  return make_node(std::move(out), {a}, [a, probs](const Mat& g, GradMap& grads) {
    if (!a->requires_grad) return;
    const Eigen::VectorXd dots = g.cwiseProduct(*probs).rowwise().sum();
    Mat gx = probs->cwiseProduct(g.colwise() - dots);
    grads.add(a.get(), gx);
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const long cols = x->value.cols();
  if (gamma->value.rows() != 1 || gamma->value.cols() != cols || beta->value.rows() != 1 ||
      beta->value.cols() != cols)
    throw ShapeError("layer_norm: gamma/beta must be 1x" + std::to_string(cols));
  const long rows = x->value.rows();
  const Eigen::VectorXd mean = x->value.rowwise().mean();
  Mat xhat = x->value.colwise() - mean;
  const Eigen::VectorXd inv_std_v =
      ((xhat.array().square().rowwise().sum() / static_cast<double>(cols)) + eps).sqrt().inverse();
  xhat.array().colwise() *= inv_std_v.array();
  Mat out = xhat.array().rowwise() * gamma->value.row(0).array();
  out.rowwise() += beta->value.row(0);
  auto xhat_s = std::make_shared<Mat>(std::move(xhat));
  auto inv_std_s = std::make_shared<Eigen::VectorXd>(inv_std_v);
  return make_node(std::move(out), {x, gamma, beta},
                   [x, gamma, beta, xhat_s, inv_std_s](const Mat& g, GradMap& grads) {
                     if (gamma->requires_grad)
                       grads.add(gamma.get(), Mat(g.cwiseProduct(*xhat_s).colwise().sum()));
                     if (beta->requires_grad) grads.add(beta.get(), Mat(g.colwise().sum()));
                     if (!x->requires_grad) return;
                     const double n = static_cast<double>(g.cols());
                     Mat gy = (g.array().rowwise() * gamma->value.row(0).array()).matrix();
                     const Eigen::VectorXd sum_gy = gy.rowwise().sum();
                     const Eigen::VectorXd sum_gy_xhat = gy.cwiseProduct(*xhat_s).rowwise().sum();
                     Mat gx = n * gy;
                     gx.colwise() -= sum_gy;
                     gx.array() -= xhat_s->array().colwise() * sum_gy_xhat.array();
                     gx.array().colwise() *= (inv_std_s->array() / n);
                     grads.add(x.get(), gx);
                   });
}

// tanh-form gelu; vectorizes where scalar erf would not.
Var gelu(const Var& x) {
  const auto& v = x->value.array();
  Mat inner = (kGeluC * (v + 0.044715 * v.cube())).matrix();
  Mat t = inner.array().tanh().matrix();
  Mat out = (0.5 * v * (1.0 + t.array())).matrix();
  auto t_s = std::make_shared<Mat>(std::move(t));
  return make_node(std::move(out), {x}, [x, t_s](const Mat& g, GradMap& grads) {
    if (!x->requires_grad) return;
    const auto& v = x->value.array();
    const auto& t = t_s->array();
    // d/dv [0.5 v (1 + tanh(u))] with u = c (v + a v^3).
    const auto du = kGeluC * (1.0 + 3.0 * 0.044715 * v.square());
    Mat d = (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t.square()) * du).matrix();
    grads.add(x.get(), Mat(g.cwiseProduct(d)));
  });
}

Var abs_val(const Var& x) {
  return make_node(x->value.cwiseAbs(), {x}, [x](const Mat& g, GradMap& grads) {
    if (!x->requires_grad) return;
    // Subgradient 0 at exactly 0.
    Mat sign = x->value.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
    grads.add(x.get(), Mat(g.cwiseProduct(sign)));
  });
}

Var mean_all(const Var& x) {
  const long rows = x->value.rows(), cols = x->value.cols();
  if (rows == 0 || cols == 0) throw ShapeError("mean_all: empty matrix");
  Mat out(1, 1);
  out(0, 0) = x->value.mean();
  return make_node(std::move(out), {x}, [x, rows, cols](const Mat& g, GradMap& grads) {
    if (!x->requires_grad) return;
    grads.add(x.get(), Mat(Mat::Constant(rows, cols, g(0, 0) / static_cast<double>(rows * cols))));
  });
}

Var mean_rows(const Var& x) {
  const long rows = x->value.rows();
  if (rows == 0) throw ShapeError("mean_rows: empty matrix");
  return make_node(x->value.colwise().mean(), {x}, [x, rows](const Mat& g, GradMap& grads) {
    if (!x->requires_grad) return;
    grads.add(x.get(), Mat(g.replicate(rows, 1) / static_cast<double>(rows)));
  });
}

Var cross_entropy_rows(const Var& logits, std::vector<int> targets) {
  const long rows = logits->value.rows(), cols = logits->value.cols();
  if (static_cast<long>(targets.size()) != rows)
    throw ShapeError("cross_entropy_rows: " + std::to_string(targets.size()) + " targets vs " +
                     std::to_string(rows) + " rows");
  Mat probs(rows, cols);
  double total = 0.0;
  for (long r = 0; r < rows; ++r) {
    const int t = targets[static_cast<std::size_t>(r)];
    if (t < 0 || t >= cols) throw ShapeError("cross_entropy_rows: target out of range");
    Eigen::RowVectorXd row = logits->value.row(r);
    const double mx = row.maxCoeff();
    row.array() -= mx;
    Eigen::RowVectorXd ex = row.array().exp();
    const double denom = ex.sum();
    probs.row(r) = ex / denom;
    total += std::log(denom) - row(t);
  }
  Mat out(1, 1);
  out(0, 0) = total / static_cast<double>(rows);
  auto probs_s = std::make_shared<Mat>(std::move(probs));
  return make_node(std::move(out), {logits},
                   [logits, targets = std::move(targets), probs_s](const Mat& g, GradMap& grads) {
                     if (!logits->requires_grad) return;
                     Mat gx = *probs_s;
                     for (long r = 0; r < gx.rows(); ++r) gx(r, targets[static_cast<std::size_t>(r)]) -= 1.0;
                     gx *= g(0, 0) / static_cast<double>(gx.rows());
                     grads.add(logits.get(), gx);
                   });
}

Var patchify(const Var& image, int rows, int cols, int cell_pixels) {
  const int cp = cell_pixels;
  if (image->value.rows() != static_cast<long>(rows) * cp || image->value.cols() != static_cast<long>(cols) * cp)
    throw ShapeError("patchify: image " + std::to_string(image->value.rows()) + "x" +
                     std::to_string(image->value.cols()) + ", expected " + std::to_string(rows * cp) + "x" +
                     std::to_string(cols * cp));
  Mat out(static_cast<long>(rows) * cols, static_cast<long>(cp) * cp);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      long token = static_cast<long>(r) * cols + c;
      for (int pr = 0; pr < cp; ++pr)
        for (int pc = 0; pc < cp; ++pc)
          out(token, static_cast<long>(pr) * cp + pc) = image->value(r * cp + pr, c * cp + pc);
    }
  return make_node(std::move(out), {image}, [image, rows, cols, cp](const Mat& g, GradMap& grads) {
    if (!image->requires_grad) return;
    Mat gi = Mat::Zero(static_cast<long>(rows) * cp, static_cast<long>(cols) * cp);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        long token = static_cast<long>(r) * cols + c;
        for (int pr = 0; pr < cp; ++pr)
          for (int pc = 0; pc < cp; ++pc)
            gi(r * cp + pr, c * cp + pc) = g(token, static_cast<long>(pr) * cp + pc);
      }
    grads.add(image.get(), gi);
  });
}

GradMap backward(const Var& root, double seed) {
  if (root->value.rows() != 1 || root->value.cols() != 1)
    throw ShapeError("backward: root must be a 1x1 scalar");
  GradMap grads;
  if (!root->requires_grad) return grads;

  // Iterative post-order DFS: children end up after all their ancestors'
  // dependencies, so the reversed list is a valid topological order.
  std::vector<const Node*> order;
  std::unordered_map<const Node*, bool> visited;
  std::vector<std::pair<const Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited[root.get()] = true;
  while (!stack.empty()) {
    auto& [node, next_child] = stack.back();
    if (next_child < node->parents.size()) {
      const Node* parent = node->parents[next_child].get();
      ++next_child;
      if (parent->requires_grad && !visited[parent]) {
        visited[parent] = true;
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  Mat seed_mat(1, 1);
  seed_mat(0, 0) = seed;
  grads.add(root.get(), seed_mat);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Node* node = *it;
    if (!node->backward) continue;
    const Mat* g = grads.find(node);
    if (g == nullptr) continue;
    node->backward(*g, grads);
  }
  return grads;
}

}  // namespace ana::ad
