#include "anatomist/nn.hpp"

#include <cmath>
#include <mutex>
#include <thread>
#include <tuple>

#include "anatomist/errors.hpp"

namespace ana::nn {

ad::Var ParamSet::add(const std::string& name, Mat init, bool no_decay) {
  if (has(name)) throw ConfigError("ParamSet: duplicate parameter " + name);
  ad::Var v = ad::leaf(std::move(init));
  entries_.push_back({name, v, no_decay});
  return v;
}

const ad::Var& ParamSet::at(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.var;
  throw ConfigError("ParamSet: unknown parameter " + name);
}

bool ParamSet::has(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return true;
  return false;
}

ParamSet ParamSet::clone(bool requires_grad) const {
  ParamSet out;
  for (const auto& e : entries_) {
    ad::Var v = requires_grad ? ad::leaf(e.var->value) : ad::constant(e.var->value);
    out.entries_.push_back({e.name, v, e.no_decay});
  }
  return out;
}

void ParamSet::set_requires_grad(bool requires_grad) {
  for (auto& e : entries_) e.var->requires_grad = requires_grad;
}

Mat normal_init(int rows, int cols, double stddev, Rng& rng) {
  Mat m(rows, cols);
  for (long r = 0; r < m.rows(); ++r)
    for (long c = 0; c < m.cols(); ++c) m(r, c) = stddev * rng.normal();
  return m;
}

BlockParams make_block(ParamSet& params, const std::string& prefix, int dim, int mlp_hidden, Rng& rng) {
  BlockParams b;
  b.ln1_g = params.add(prefix + ".ln1.g", Mat::Ones(1, dim), true);
  b.ln1_b = params.add(prefix + ".ln1.b", Mat::Zero(1, dim), true);
  b.wq = params.add(prefix + ".attn.wq", normal_init(dim, dim, 0.02, rng));
  b.bq = params.add(prefix + ".attn.bq", Mat::Zero(1, dim), true);
  b.wk = params.add(prefix + ".attn.wk", normal_init(dim, dim, 0.02, rng));
  b.bk = params.add(prefix + ".attn.bk", Mat::Zero(1, dim), true);
  b.wv = params.add(prefix + ".attn.wv", normal_init(dim, dim, 0.02, rng));
  b.bv = params.add(prefix + ".attn.bv", Mat::Zero(1, dim), true);
  b.wo = params.add(prefix + ".attn.wo", normal_init(dim, dim, 0.02, rng));
  b.bo = params.add(prefix + ".attn.bo", Mat::Zero(1, dim), true);
  b.ln2_g = params.add(prefix + ".ln2.g", Mat::Ones(1, dim), true);
  b.ln2_b = params.add(prefix + ".ln2.b", Mat::Zero(1, dim), true);
  b.mlp_w1 = params.add(prefix + ".mlp.w1", normal_init(dim, mlp_hidden, 0.02, rng));
  b.mlp_b1 = params.add(prefix + ".mlp.b1", Mat::Zero(1, mlp_hidden), true);
  b.mlp_w2 = params.add(prefix + ".mlp.w2", normal_init(mlp_hidden, dim, 0.02, rng));
  b.mlp_b2 = params.add(prefix + ".mlp.b2", Mat::Zero(1, dim), true);
  return b;
}

BlockParams bind_block(const ParamSet& params, const std::string& prefix) {
  BlockParams b;
  b.ln1_g = params.at(prefix + ".ln1.g");
  b.ln1_b = params.at(prefix + ".ln1.b");
  b.wq = params.at(prefix + ".attn.wq");
  b.bq = params.at(prefix + ".attn.bq");
  b.wk = params.at(prefix + ".attn.wk");
  b.bk = params.at(prefix + ".attn.bk");
  b.wv = params.at(prefix + ".attn.wv");
  b.bv = params.at(prefix + ".attn.bv");
  b.wo = params.at(prefix + ".attn.wo");
  b.bo = params.at(prefix + ".attn.bo");
  b.ln2_g = params.at(prefix + ".ln2.g");
  b.ln2_b = params.at(prefix + ".ln2.b");
  b.mlp_w1 = params.at(prefix + ".mlp.w1");
  b.mlp_b1 = params.at(prefix + ".mlp.b1");
  b.mlp_w2 = params.at(prefix + ".mlp.w2");
  b.mlp_b2 = params.at(prefix + ".mlp.b2");
  return b;
}

ad::Var block_forward(const BlockParams& p, ad::Var x, int heads) {
  const int dim = static_cast<int>(ad::value(x).cols());
  if (dim % heads != 0) throw ShapeError("block_forward: dim not divisible by heads");
  const int dh = dim / heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  ad::Var ln = ad::layer_norm(x, p.ln1_g, p.ln1_b);
  ad::Var q = ad::add_rowvec(ad::matmul(ln, p.wq), p.bq);
  ad::Var k = ad::add_rowvec(ad::matmul(ln, p.wk), p.bk);
  ad::Var v = ad::add_rowvec(ad::matmul(ln, p.wv), p.bv);
  std::vector<ad::Var> head_outs;
  head_outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    ad::Var qh = ad::slice_cols(q, h * dh, dh);
    ad::Var kh = ad::slice_cols(k, h * dh, dh);
    ad::Var vh = ad::slice_cols(v, h * dh, dh);
    ad::Var att = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), att_scale));
    head_outs.push_back(ad::matmul(att, vh));
  }
  ad::Var attn = ad::add_rowvec(ad::matmul(ad::concat_cols(head_outs), p.wo), p.bo);
  x = ad::add(x, attn);

  ad::Var ln2 = ad::layer_norm(x, p.ln2_g, p.ln2_b);
  ad::Var h1 = ad::gelu(ad::add_rowvec(ad::matmul(ln2, p.mlp_w1), p.mlp_b1));
  ad::Var h2 = ad::add_rowvec(ad::matmul(h1, p.mlp_w2), p.mlp_b2);
  return ad::add(x, h2);
}

Mat sincos_position_table(int rows, int cols, int dim) {
  if (dim % 4 != 0) throw ShapeError("sincos_position_table: dim must be divisible by 4");

  // Encoders rebuild this every forward pass; memoize per layout.
  static std::mutex cache_mutex;
  static std::map<std::tuple<int, int, int>, Mat> cache;
  {
    std::lock_guard<std::mutex> lock(cache_mutex);
    auto it = cache.find({rows, cols, dim});
    if (it != cache.end()) return it->second;
  }

  Mat table(static_cast<long>(rows) * cols, dim);
  const int quarter = dim / 4;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const long token = static_cast<long>(r) * cols + c;
      for (int i = 0; i < quarter; ++i) {
        const double freq = std::pow(10000.0, -static_cast<double>(i) / quarter);
        table(token, 2 * i) = std::sin(r * freq);
        table(token, 2 * i + 1) = std::cos(r * freq);
        table(token, 2 * quarter + 2 * i) = std::sin(c * freq);
        table(token, 2 * quarter + 2 * i + 1) = std::cos(c * freq);
      }
    }
  }
  std::lock_guard<std::mutex> lock(cache_mutex);
  return cache.emplace(std::tuple{rows, cols, dim}, std::move(table)).first->second;
}

double lr_at_step(std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps, double base_lr,
                  double final_lr) {
  if (total_steps <= 0) throw ConfigError("lr_at_step: total_steps must be > 0");
  if (warmup_steps > 0 && step < warmup_steps)
    return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  const std::int64_t decay_total = std::max<std::int64_t>(1, total_steps - warmup_steps);
  const std::int64_t decay_step = std::min(std::max<std::int64_t>(0, step - warmup_steps), decay_total);
  const double cosine = 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(decay_step) / decay_total));
  return final_lr + (base_lr - final_lr) * cosine;
}

void AdamW::step(const std::vector<std::pair<std::string, ParamSet*>>& groups,
                 const std::set<std::string>& active, const ad::GradMap& grads, double lr) {
  struct Item {
    std::string name;
    ParamEntry* entry;
    const Mat* grad;
  };
  std::vector<Item> items;
  for (const auto& [prefix, set] : groups) {
    if (!active.count(prefix)) continue;
    for (auto& e : set->entries()) {
      const Mat* g = grads.find(e.var.get());
      if (g != nullptr) items.push_back({prefix + "/" + e.name, &e, g});
    }
  }

  double clip_factor = 1.0;
  if (cfg_.grad_clip > 0.0) {
    double sq = 0.0;
    for (const auto& it : items) sq += it.grad->squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > cfg_.grad_clip) clip_factor = cfg_.grad_clip / norm;
  }

  for (auto& it : items) {
    Slot& slot = state_[it.name];
    if (slot.t == 0) {
      slot.m = Mat::Zero(it.grad->rows(), it.grad->cols());
      slot.v = Mat::Zero(it.grad->rows(), it.grad->cols());
    }
    Mat g = *it.grad * clip_factor;
    slot.t += 1;
    slot.m = cfg_.beta1 * slot.m + (1.0 - cfg_.beta1) * g;
    slot.v = cfg_.beta2 * slot.v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(slot.t));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(slot.t));
    Mat update = (slot.m / bc1).array() / ((slot.v / bc2).array().sqrt() + cfg_.eps);
    Mat& p = it.entry->var->value;
    if (!it.entry->no_decay && cfg_.weight_decay > 0.0) p -= lr * cfg_.weight_decay * p;
    p -= lr * update;
  }
}

void parallel_for(int n, int n_threads, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  if (n_threads <= 0) n_threads = static_cast<int>(std::thread::hardware_concurrency());
  n_threads = std::min(n_threads, n);
  if (n_threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_threads));
  for (int t = 0; t < n_threads; ++t) {
    workers.emplace_back([&, t]() {
      try {
        for (int i = t; i < n; i += n_threads) fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(t)] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace ana::nn
