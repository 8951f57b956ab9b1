#pragma once

#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "anatomist/autograd.hpp"
#include "anatomist/rng.hpp"

namespace ana::nn {

// Ordered, named parameter collection. Order is fixed by construction and
// drives checkpoint layout and optimizer iteration, so it must never depend
// on runtime state.
struct ParamEntry {
  std::string name;
  ad::Var var;
  bool no_decay = false;
};

class ParamSet {
 public:
  ad::Var add(const std::string& name, Mat init, bool no_decay = false);
  const std::vector<ParamEntry>& entries() const { return entries_; }
  std::vector<ParamEntry>& entries() { return entries_; }
  const ad::Var& at(const std::string& name) const;
  bool has(const std::string& name) const;
  std::size_t size() const { return entries_.size(); }

  // Deep copy with fresh nodes; requires_grad set per flag (false for
  // gradient-free twins such as the teacher).
  ParamSet clone(bool requires_grad) const;
  void set_requires_grad(bool requires_grad);

 private:
  std::vector<ParamEntry> entries_;
};

// One pre-LN transformer block: x += attn(LN(x)); x += mlp(LN(x)).
struct BlockParams {
  ad::Var ln1_g, ln1_b;
  ad::Var wq, bq, wk, bk, wv, bv, wo, bo;
  ad::Var ln2_g, ln2_b;
  ad::Var mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

// Registers one block's parameters under "<prefix>." in the set.
BlockParams make_block(ParamSet& params, const std::string& prefix, int dim, int mlp_hidden, Rng& rng);
BlockParams bind_block(const ParamSet& params, const std::string& prefix);

ad::Var block_forward(const BlockParams& p, ad::Var x, int heads);

// 2-D sinusoidal position table for a rows x cols token grid (row-major).
Mat sincos_position_table(int rows, int cols, int dim);

// Linear warmup from 0 over warmup_steps, then cosine decay base -> final.
double lr_at_step(std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps, double base_lr,
                  double final_lr);

// Decoupled-weight-decay Adam. State persists per parameter name so that
// parameters frozen for some epochs keep their moments.
class AdamW {
 public:
  struct Config {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.04;
    double grad_clip = 3.0;  // global norm per step; 0 disables
  };

  AdamW() = default;
  explicit AdamW(const Config& cfg) : cfg_(cfg) {}

  // Applies one step to every active-group parameter that has a gradient.
  // groups: (prefix, params); active: prefixes stepped this call.
  void step(const std::vector<std::pair<std::string, ParamSet*>>& groups,
            const std::set<std::string>& active, const ad::GradMap& grads, double lr);

  const Config& config() const { return cfg_; }

  struct Slot {
    Mat m, v;
    std::int64_t t = 0;
  };
  const std::map<std::string, Slot>& state() const { return state_; }
  std::map<std::string, Slot>& state() { return state_; }

 private:
  Config cfg_;
  std::map<std::string, Slot> state_;
};

// Runs fn(i) for i in [0, n) across up to n_threads workers. Work items are
// independent; callers merge results by index so output is identical for any
// thread count. Exceptions propagate to the caller.
void parallel_for(int n, int n_threads, const std::function<void(int)>& fn);

Mat normal_init(int rows, int cols, double stddev, Rng& rng);

}  // namespace ana::nn
