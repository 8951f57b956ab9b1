#include "anatomist/trainer.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>

#include <nlohmann/json.hpp>

#include "anatomist/errors.hpp"

namespace ana {

using json = nlohmann::json;

namespace {

constexpr std::uint64_t kTagViews = 0x76696577736b6579ull;
constexpr std::uint64_t kTagOrder = 0x6f726465726b6579ull;
constexpr std::uint64_t kTagHead1 = 0x6865616431ull;
constexpr std::uint64_t kTagHead2 = 0x6865616432ull;
constexpr std::uint64_t kTagHead3 = 0x6865616433ull;

void check_known_keys(const json& j, const std::vector<std::string>& allowed, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ConfigError("config: unknown key '" + where + key + "'");
  }
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string to_string(ScheduleMode m) {
  switch (m) {
    case ScheduleMode::cyclic: return "cyclic";
    case ScheduleMode::direct_sum: return "direct_sum";
    case ScheduleMode::single_extrap: return "single_extrap";
    case ScheduleMode::single_shuffle: return "single_shuffle";
    case ScheduleMode::single_compdecomp: return "single_compdecomp";
  }
  throw ConfigError("unknown schedule mode");
}

ScheduleMode schedule_mode_from_string(const std::string& s) {
  if (s == "cyclic") return ScheduleMode::cyclic;
  if (s == "direct_sum") return ScheduleMode::direct_sum;
  if (s == "single_extrap") return ScheduleMode::single_extrap;
  if (s == "single_shuffle") return ScheduleMode::single_shuffle;
  if (s == "single_compdecomp") return ScheduleMode::single_compdecomp;
  throw ConfigError("unknown schedule_mode '" + s +
                    "' (expected cyclic|direct_sum|single_extrap|single_shuffle|single_compdecomp)");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("TrainConfig: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
  if (n2 < 1 || n2 >= n1) throw ConfigError("TrainConfig: need 1 <= n2 < n1");
  if (n1 > grid_size) throw ConfigError("TrainConfig: n1 exceeds grid_size");
  if (lambda < 0.0) throw ConfigError("TrainConfig: lambda must be >= 0");
  if (warmup_epochs < 0) throw ConfigError("TrainConfig: warmup_epochs must be >= 0");
  if (base_lr <= 0.0 || final_lr < 0.0) throw ConfigError("TrainConfig: learning rates must be positive");
  if (checkpoint_every < 1) throw ConfigError("TrainConfig: checkpoint_every must be >= 1");
  if (base_momentum < 0.0 || base_momentum > 1.0 || final_momentum < 0.0 || final_momentum > 1.0)
    throw ConfigError("TrainConfig: momenta must be in [0, 1]");
  const bool uses_compdecomp = schedule_mode == ScheduleMode::cyclic ||
                               schedule_mode == ScheduleMode::direct_sum ||
                               schedule_mode == ScheduleMode::single_compdecomp;
  if (uses_compdecomp && n1 % 2 != 0)
    throw ConfigError("TrainConfig: composition/decomposition requires even n1, got " + std::to_string(n1));
  t_schedule.validate();
  grid();  // divisibility
  EncoderConfig enc = encoder;
  enc.cell_pixels = grid().cell_pixels;
  enc.validate();
  if (head1_layers < 1) throw ConfigError("TrainConfig: head1_layers must be >= 1");
  if (head3_hidden < 0) throw ConfigError("TrainConfig: head3_hidden must be >= 0");
}

GridSpec TrainConfig::grid() const { return make_grid(image_pixels, grid_size); }

std::string TrainConfig::to_json_string() const {
  json j;
  j["epochs"] = epochs;
  j["schedule_mode"] = to_string(schedule_mode);
  j["batch_size"] = batch_size;
  j["base_lr"] = base_lr;
  j["final_lr"] = final_lr;
  j["warmup_epochs"] = warmup_epochs;
  j["weight_decay"] = weight_decay;
  j["grad_clip"] = grad_clip;
  j["seed"] = seed;
  j["n1"] = n1;
  j["n2"] = n2;
  j["lambda"] = lambda;
  j["grid_size"] = grid_size;
  j["image_pixels"] = image_pixels;
  json ts = json::array();
  for (const auto& [epoch, t] : t_schedule.t_values) ts.push_back({epoch, t});
  j["t_schedule"] = ts;
  j["r_min"] = t_schedule.r_min;
  j["base_momentum"] = base_momentum;
  j["final_momentum"] = final_momentum;
  j["checkpoint_every"] = checkpoint_every;
  j["threads"] = threads;
  j["allow_identity_permutation"] = allow_identity_permutation;
  j["encoder"] = {{"variant", to_string(encoder.variant)},
                  {"embed_dim", encoder.embed_dim},
                  {"depth", encoder.depth},
                  {"heads", encoder.heads},
                  {"mlp_ratio", encoder.mlp_ratio}};
  j["head1"] = {{"layers", head1_layers}};
  j["head3"] = {{"hidden", head3_hidden}, {"linear_comp", head3_linear}};
  return j.dump(2);
}

TrainConfig TrainConfig::from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  check_known_keys(j, {"epochs", "schedule_mode", "batch_size", "base_lr", "final_lr", "warmup_epochs",
                       "weight_decay", "grad_clip", "seed", "n1", "n2", "lambda", "grid_size",
                       "image_pixels", "t_schedule", "r_min", "base_momentum", "final_momentum",
                       "checkpoint_every", "threads", "allow_identity_permutation", "encoder", "head1",
                       "head3"},
                   "");
  TrainConfig cfg;
  try {
    if (j.contains("epochs")) cfg.epochs = j["epochs"].get<int>();
    if (j.contains("schedule_mode")) cfg.schedule_mode = schedule_mode_from_string(j["schedule_mode"]);
    if (j.contains("batch_size")) cfg.batch_size = j["batch_size"].get<int>();
    if (j.contains("base_lr")) cfg.base_lr = j["base_lr"].get<double>();
    if (j.contains("final_lr")) cfg.final_lr = j["final_lr"].get<double>();
    if (j.contains("warmup_epochs")) cfg.warmup_epochs = j["warmup_epochs"].get<int>();
    if (j.contains("weight_decay")) cfg.weight_decay = j["weight_decay"].get<double>();
    if (j.contains("grad_clip")) cfg.grad_clip = j["grad_clip"].get<double>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("n1")) cfg.n1 = j["n1"].get<int>();
    if (j.contains("n2")) cfg.n2 = j["n2"].get<int>();
    if (j.contains("lambda")) cfg.lambda = j["lambda"].get<double>();
    if (j.contains("grid_size")) cfg.grid_size = j["grid_size"].get<int>();
    if (j.contains("image_pixels")) cfg.image_pixels = j["image_pixels"].get<int>();
    if (j.contains("t_schedule")) {
      cfg.t_schedule.t_values.clear();
      for (const auto& pair : j["t_schedule"])
        cfg.t_schedule.t_values.emplace_back(pair.at(0).get<int>(), pair.at(1).get<double>());
    }
    if (j.contains("r_min")) cfg.t_schedule.r_min = j["r_min"].get<double>();
    if (j.contains("base_momentum")) cfg.base_momentum = j["base_momentum"].get<double>();
    if (j.contains("final_momentum")) cfg.final_momentum = j["final_momentum"].get<double>();
    if (j.contains("checkpoint_every")) cfg.checkpoint_every = j["checkpoint_every"].get<int>();
    if (j.contains("threads")) cfg.threads = j["threads"].get<int>();
    if (j.contains("allow_identity_permutation"))
      cfg.allow_identity_permutation = j["allow_identity_permutation"].get<bool>();
    if (j.contains("encoder")) {
      const json& e = j["encoder"];
      check_known_keys(e, {"variant", "embed_dim", "depth", "heads", "mlp_ratio"}, "encoder.");
      if (e.contains("variant"))
        cfg.encoder = EncoderConfig::make(encoder_variant_from_string(e["variant"]), cfg.encoder.cell_pixels);
      if (e.contains("embed_dim")) cfg.encoder.embed_dim = e["embed_dim"].get<int>();
      if (e.contains("depth")) cfg.encoder.depth = e["depth"].get<int>();
      if (e.contains("heads")) cfg.encoder.heads = e["heads"].get<int>();
      if (e.contains("mlp_ratio")) cfg.encoder.mlp_ratio = e["mlp_ratio"].get<int>();
    }
    if (j.contains("head1")) {
      check_known_keys(j["head1"], {"layers"}, "head1.");
      if (j["head1"].contains("layers")) cfg.head1_layers = j["head1"]["layers"].get<int>();
    }
    if (j.contains("head3")) {
      check_known_keys(j["head3"], {"hidden", "linear_comp"}, "head3.");
      if (j["head3"].contains("hidden")) cfg.head3_hidden = j["head3"]["hidden"].get<int>();
      if (j["head3"].contains("linear_comp")) cfg.head3_linear = j["head3"]["linear_comp"].get<bool>();
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: bad field type: ") + e.what());
  }
  return cfg;
}

TrainConfig TrainConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json_string(text);
}

void TrainConfig::save(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("config: cannot write " + path);
  out << to_json_string() << "\n";
}

std::vector<std::string> TrainConfig::diff(const TrainConfig& a, const TrainConfig& b) {
  const json ja = json::parse(a.to_json_string());
  const json jb = json::parse(b.to_json_string());
  std::vector<std::string> fields;
  std::function<void(const json&, const json&, const std::string&)> walk =
      [&](const json& x, const json& y, const std::string& prefix) {
        if (x.is_object() && y.is_object()) {
          for (const auto& [key, value] : x.items()) {
            (void)value;
            walk(x.at(key), y.at(key), prefix.empty() ? key : prefix + "." + key);
          }
          return;
        }
        if (x != y) fields.push_back(prefix);
      };
  walk(ja, jb, "");
  return fields;
}

std::string PerspectiveSelector::name() const {
  if (extrap && shuffle && compdecomp) return "direct_sum";
  if (extrap) return "extrap";
  if (shuffle) return "shuffle";
  if (compdecomp) return "compdecomp";
  return "none";
}

PerspectiveSelector select_perspective(int epoch, ScheduleMode mode) {
  if (epoch < 0) throw ConfigError("select_perspective: epoch must be >= 0");
  PerspectiveSelector sel;
  switch (mode) {
    case ScheduleMode::cyclic:
      if (epoch % 3 == 0)
        sel.extrap = true;
      else if (epoch % 3 == 1)
        sel.shuffle = true;
      else
        sel.compdecomp = true;
      break;
    case ScheduleMode::direct_sum:
      sel.extrap = sel.shuffle = sel.compdecomp = true;
      break;
    case ScheduleMode::single_extrap: sel.extrap = true; break;
    case ScheduleMode::single_shuffle: sel.shuffle = true; break;
    case ScheduleMode::single_compdecomp: sel.compdecomp = true; break;
  }
  return sel;
}

TrainState init_train_state(const TrainConfig& cfg, int dataset_size) {
  cfg.validate();
  if (dataset_size < 1) throw ConfigError("init_train_state: dataset is empty");
  TrainState st;
  st.cfg = cfg;
  const GridSpec grid = cfg.grid();

  EncoderConfig enc_cfg = cfg.encoder;
  enc_cfg.cell_pixels = grid.cell_pixels;
  st.cfg.encoder = enc_cfg;
  st.pair = ModelPair::init(enc_cfg, cfg.seed);

  ExtrapolationDecoderConfig h1;
  h1.layers = cfg.head1_layers;
  h1.embed_dim = enc_cfg.embed_dim;
  h1.heads = enc_cfg.heads;
  h1.mlp_ratio = enc_cfg.mlp_ratio;
  h1.n1_max = cfg.grid_size;
  Rng rng1(mix_seed({cfg.seed, kTagHead1}));
  st.head1 = ExtrapolationHead::init(h1, rng1);

  OrderClassifierConfig h2;
  h2.embed_dim = enc_cfg.embed_dim;
  h2.n_classes = cfg.n1 * cfg.n1;
  Rng rng2(mix_seed({cfg.seed, kTagHead2}));
  st.head2 = OrderHead::init(h2, rng2);

  CompDecompConfig h3;
  h3.embed_dim = enc_cfg.embed_dim;
  h3.hidden = cfg.head3_hidden > 0 ? cfg.head3_hidden : 4 * enc_cfg.embed_dim;
  h3.linear_comp = cfg.head3_linear;
  Rng rng3(mix_seed({cfg.seed, kTagHead3}));
  st.head3 = CompDecompHead::init(h3, rng3);

  st.steps_per_epoch = (dataset_size + cfg.batch_size - 1) / cfg.batch_size;
  st.total_steps = st.steps_per_epoch * cfg.epochs;
  st.pair.momentum = {cfg.base_momentum, cfg.final_momentum, 0, st.total_steps};

  nn::AdamW::Config opt_cfg;
  opt_cfg.weight_decay = cfg.weight_decay;
  opt_cfg.grad_clip = cfg.grad_clip;
  st.opt = nn::AdamW(opt_cfg);
  return st;
}

namespace {

struct ImageResult {
  double total = 0.0;
  std::vector<std::pair<std::string, double>> comps;
  ad::GradMap grads;
};

ImageResult per_image_losses(const TrainState& st, const Image& image, const PerspectiveSelector& sel,
                             Rng& rng, int batch_size) {
  const GridSpec grid = st.cfg.grid();
  const Mat img = to_double(image.pix);
  ImageResult result;
  ad::Var total;
  auto accumulate = [&](const char* prefix, const LossBreakdown& lb) {
    total = total ? ad::add(total, lb.total_var) : lb.total_var;
    for (const auto& [name, v] : lb.components)
      result.comps.emplace_back(std::string(prefix) + "/" + name, v);
  };

  if (sel.extrap) {
    auto [c1, c2] = sample_crop_pair(grid, st.cfg.n1, st.cfg.n2, rng);
    const Mat c1_pix = crop_cells(img, grid, c1);
    const Mat c2_pix = crop_cells(img, grid, c2);
    const EmbeddingMap e_t = encode(st.pair.teacher, c1_pix, st.cfg.n1, st.cfg.n1);
    const ad::Var s_tokens = encode_tokens(st.pair.student, c2_pix, st.cfg.n2, st.cfg.n2);
    const MaskSet mask = mask_from_pair(c1, c2);
    const ad::Var e_s = extrapolate(st.head1, s_tokens, mask, {c2.row - c1.row, c2.col - c1.col});
    accumulate("extrap", loss_extrap(e_s, ad::constant(e_t.tokens), mask));
  }

  if (sel.shuffle) {
    const CropWindow c1 = sample_crop_window(grid, st.cfg.n1, rng);
    const Permutation perm =
        sample_permutation(st.cfg.n1 * st.cfg.n1, rng, st.cfg.allow_identity_permutation);
    const Mat c1_pix = crop_cells(img, grid, c1);
    const Mat shuffled = shuffle_cells(c1_pix, st.cfg.n1, perm);
    const EmbeddingMap e_t = encode(st.pair.teacher, c1_pix, st.cfg.n1, st.cfg.n1);
    const ad::Var s_tokens = encode_tokens(st.pair.student, shuffled, st.cfg.n1, st.cfg.n1);
    const ad::Var logits = classify_order(st.head2, s_tokens);
    accumulate("shuffle", loss_shuffle(logits, perm, s_tokens, ad::constant(e_t.tokens), st.cfg.lambda));
  }

  if (sel.compdecomp) {
    const double r = crop_ratio(st.epoch, st.cfg.t_schedule);
    const int s = grid.image_pixels;
    const int side = std::max(grid.cell_pixels, static_cast<int>(std::lround(s * std::sqrt(r))));
    const int max_off = s - std::min(side, s);
    const int top = rng.uniform_int(0, max_off);
    const int left = rng.uniform_int(0, max_off);
    const Mat c1_raw = crop(img, top, left, std::min(side, s), std::min(side, s));
    const int canonical = st.cfg.n1 * grid.cell_pixels;
    const Mat c1_pix = resize_bilinear(c1_raw, canonical, canonical);
    const std::array<Mat, 4> quads = split_quadrants(c1_pix);
    const int nq = st.cfg.n1 / 2;

    const Mat e_t_global = pool_global(encode(st.pair.teacher, c1_pix, st.cfg.n1, st.cfg.n1));
    std::array<ad::Var, 4> e_t_subs;
    std::array<ad::Var, 4> e_s_subs;
    for (int i = 0; i < 4; ++i) {
      e_t_subs[static_cast<std::size_t>(i)] =
          ad::constant(pool_global(encode(st.pair.teacher, quads[static_cast<std::size_t>(i)], nq, nq)));
      e_s_subs[static_cast<std::size_t>(i)] =
          pool_global(encode_tokens(st.pair.student, quads[static_cast<std::size_t>(i)], nq, nq));
    }
    const ad::Var e_comp = compose(st.head3, e_s_subs);
    const ad::Var e_s_global = pool_global(encode_tokens(st.pair.student, c1_pix, st.cfg.n1, st.cfg.n1));
    const std::array<ad::Var, 4> e_decomp = decompose(st.head3, e_s_global);
    accumulate("compdecomp", loss_comp_decomp(e_comp, ad::constant(e_t_global), e_decomp, e_t_subs));
  }

  if (!total) throw ConfigError("train_step: selector enables no perspective");
  result.total = ad::value(total)(0, 0);
  result.grads = ad::backward(total, 1.0 / batch_size);
  return result;
}

}  // namespace

LossBreakdown train_step(TrainState& st, const std::vector<const Image*>& batch,
                         const PerspectiveSelector& sel) {
  if (batch.empty()) throw ConfigError("train_step: empty batch");
  const int b = static_cast<int>(batch.size());

  std::vector<ImageResult> results(static_cast<std::size_t>(b));
  nn::parallel_for(b, st.cfg.threads, [&](int i) {
    Rng rng(mix_seed({st.cfg.seed, kTagViews, static_cast<std::uint64_t>(st.epoch),
                      static_cast<std::uint64_t>(st.step_in_epoch), static_cast<std::uint64_t>(i)}));
    results[static_cast<std::size_t>(i)] =
        per_image_losses(st, *batch[static_cast<std::size_t>(i)], sel, rng, b);
  });

  // Ordered merge keeps the step bit-identical for any thread count.
  LossBreakdown lb;
  lb.total = 0.0;
  for (int i = 0; i < b; ++i) {
    const ImageResult& r = results[static_cast<std::size_t>(i)];
    lb.total += r.total / b;
    for (std::size_t k = 0; k < r.comps.size(); ++k) {
      if (i == 0)
        lb.components.emplace_back(r.comps[k].first, r.comps[k].second / b);
      else
        lb.components[k].second += r.comps[k].second / b;
    }
  }
  bool finite = std::isfinite(lb.total);
  for (const auto& [name, v] : lb.components) finite = finite && std::isfinite(v);
  if (!finite) {
    std::string dump = "train_step: non-finite loss at epoch " + std::to_string(st.epoch) + " step " +
                       std::to_string(st.step_in_epoch) + " perspective " + sel.name();
    for (const auto& [name, v] : lb.components) dump += " " + name + "=" + format_double(v);
    throw Error(dump);
  }

  ad::GradMap merged;
  std::vector<std::pair<std::string, nn::ParamSet*>> groups = {{"student", &st.pair.student.params},
                                                               {"head1", &st.head1.params},
                                                               {"head2", &st.head2.params},
                                                               {"head3", &st.head3.params}};
  for (auto& [prefix, set] : groups) {
    (void)prefix;
    for (const auto& entry : set->entries())
      for (int i = 0; i < b; ++i) {
        const Mat* g = results[static_cast<std::size_t>(i)].grads.find(entry.var.get());
        if (g != nullptr) merged.add(entry.var.get(), *g);
      }
  }
  // Stop-gradient invariant: the teacher graph must never reach the tape.
  for (const auto& entry : st.pair.teacher.params.entries())
    if (merged.contains(entry.var.get()))
      throw Error("train_step: teacher parameter " + entry.name + " received a gradient");

  std::set<std::string> active = {"student"};
  if (sel.extrap) active.insert("head1");
  if (sel.shuffle) active.insert("head2");
  if (sel.compdecomp) active.insert("head3");

  const double eff_base_lr = st.cfg.base_lr * st.cfg.batch_size / 256.0;
  const std::int64_t warmup_steps = static_cast<std::int64_t>(st.cfg.warmup_epochs) * st.steps_per_epoch;
  const double lr = nn::lr_at_step(st.global_step, st.total_steps, warmup_steps, eff_base_lr, st.cfg.final_lr);
  st.opt.step(groups, active, merged, lr);

  const double m = momentum_schedule(st.pair.momentum.step, st.pair.momentum.total_steps,
                                     st.pair.momentum.base_m, st.pair.momentum.final_m);
  ema_update(st.pair, m);
  st.pair.momentum.step += 1;
  st.global_step += 1;
  return lb;
}

void save_checkpoint(const TrainState& st, const std::string& path) {
  Archive a;
  a.put_string("config/train", st.cfg.to_json_string());
  a.put_i64("rng_seed", static_cast<std::int64_t>(st.cfg.seed));
  a.put_string("config/encoder/variant", to_string(st.cfg.encoder.variant));
  a.put_i64("config/encoder/cell_pixels", st.cfg.encoder.cell_pixels);
  a.put_i64("config/encoder/embed_dim", st.cfg.encoder.embed_dim);
  a.put_i64("config/encoder/depth", st.cfg.encoder.depth);
  a.put_i64("config/encoder/heads", st.cfg.encoder.heads);
  a.put_i64("config/encoder/mlp_ratio", st.cfg.encoder.mlp_ratio);
  a.put_i64("trainer/epoch", st.epoch);
  a.put_i64("trainer/global_step", st.global_step);
  a.put_i64("trainer/steps_per_epoch", st.steps_per_epoch);
  a.put_i64("trainer/total_steps", st.total_steps);
  a.put_f64("momentum/base_m", st.pair.momentum.base_m);
  a.put_f64("momentum/final_m", st.pair.momentum.final_m);
  a.put_i64("momentum/step", st.pair.momentum.step);
  a.put_i64("momentum/total_steps", st.pair.momentum.total_steps);
  for (const auto& e : st.pair.student.params.entries()) a.put_tensor("student/" + e.name, e.var->value);
  for (const auto& e : st.pair.teacher.params.entries()) a.put_tensor("teacher/" + e.name, e.var->value);
  for (const auto& e : st.head1.params.entries()) a.put_tensor("head1/" + e.name, e.var->value);
  for (const auto& e : st.head2.params.entries()) a.put_tensor("head2/" + e.name, e.var->value);
  for (const auto& e : st.head3.params.entries()) a.put_tensor("head3/" + e.name, e.var->value);
  for (const auto& [name, slot] : st.opt.state()) {
    a.put_tensor("opt/" + name + "/m", slot.m);
    a.put_tensor("opt/" + name + "/v", slot.v);
    a.put_i64("opt/" + name + "/t", slot.t);
  }
  a.write(path);
}

TrainState load_checkpoint(const std::string& path) {
  const Archive a = Archive::read(path);
  const TrainConfig cfg = TrainConfig::from_json_string(a.str("config/train"));

  // Rebuild with the stored architecture, then overwrite every tensor.
  TrainState st = init_train_state(cfg, std::max<int>(1, cfg.batch_size));
  st.epoch = static_cast<int>(a.i64("trainer/epoch"));
  st.global_step = a.i64("trainer/global_step");
  st.steps_per_epoch = a.i64("trainer/steps_per_epoch");
  st.total_steps = a.i64("trainer/total_steps");
  st.pair.momentum.base_m = a.f64("momentum/base_m");
  st.pair.momentum.final_m = a.f64("momentum/final_m");
  st.pair.momentum.step = a.i64("momentum/step");
  st.pair.momentum.total_steps = a.i64("momentum/total_steps");

  auto restore = [&a](nn::ParamSet& set, const std::string& prefix) {
    for (auto& e : set.entries()) {
      const Mat& t = a.tensor(prefix + "/" + e.name);
      if (t.rows() != e.var->value.rows() || t.cols() != e.var->value.cols())
        throw IoError("checkpoint: tensor " + prefix + "/" + e.name + " has shape " +
                      std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + ", expected " +
                      std::to_string(e.var->value.rows()) + "x" + std::to_string(e.var->value.cols()));
      e.var->value = t;
    }
  };
  restore(st.pair.student.params, "student");
  restore(st.pair.teacher.params, "teacher");
  restore(st.head1.params, "head1");
  restore(st.head2.params, "head2");
  restore(st.head3.params, "head3");

  st.opt.state().clear();
  for (const auto& name : a.names_with_prefix("opt/")) {
    if (name.size() < 3 || name.compare(name.size() - 2, 2, "/m") != 0) continue;
    const std::string key = name.substr(4, name.size() - 6);
    nn::AdamW::Slot slot;
    slot.m = a.tensor("opt/" + key + "/m");
    slot.v = a.tensor("opt/" + key + "/v");
    slot.t = a.i64("opt/" + key + "/t");
    st.opt.state()[key] = std::move(slot);
  }
  return st;
}

namespace {

class LossLog {
 public:
  LossLog(const std::string& path, bool append) {
    file_ = std::fopen(path.c_str(), append ? "ab" : "wb");
    if (file_ == nullptr) throw IoError("loss log: cannot open " + path);
  }
  ~LossLog() {
    if (file_ != nullptr) std::fclose(file_);
  }
  LossLog(const LossLog&) = delete;
  LossLog& operator=(const LossLog&) = delete;

  void record(int epoch, int step, std::int64_t global_step, const std::string& perspective,
              double lr, double momentum, const LossBreakdown& lb) {
    std::fprintf(file_, "{\"epoch\":%d,\"step\":%d,\"global_step\":%" PRId64 ",\"perspective\":\"%s\"",
                 epoch, step, global_step, perspective.c_str());
    std::fprintf(file_, ",\"lr\":%s,\"momentum\":%s,\"total\":%s,\"components\":{",
                 format_double(lr).c_str(), format_double(momentum).c_str(),
                 format_double(lb.total).c_str());
    for (std::size_t i = 0; i < lb.components.size(); ++i)
      std::fprintf(file_, "%s\"%s\":%s", i == 0 ? "" : ",", lb.components[i].first.c_str(),
                   format_double(lb.components[i].second).c_str());
    std::fprintf(file_, "}}\n");
    std::fflush(file_);
  }

 private:
  std::FILE* file_ = nullptr;
};

}  // namespace

TrainResult train(const TrainConfig& cfg, const Dataset& data, const std::string& out_dir,
                  const std::string& resume_ckpt) {
  cfg.validate();
  if (data.items.empty()) throw ConfigError("train: dataset is empty");
  for (const auto& item : data.items)
    if (item.height() != cfg.image_pixels || item.width() != cfg.image_pixels)
      throw ShapeError("train: image " + item.id + " is " + std::to_string(item.height()) + "x" +
                       std::to_string(item.width()) + ", config expects " +
                       std::to_string(cfg.image_pixels) + "^2");

  std::filesystem::create_directories(out_dir);
  TrainState st;
  if (resume_ckpt.empty()) {
    st = init_train_state(cfg, static_cast<int>(data.items.size()));
  } else {
    st = load_checkpoint(resume_ckpt);
    const std::vector<std::string> diffs = TrainConfig::diff(st.cfg, cfg);
    if (!diffs.empty()) {
      std::string msg = "train: resume config differs from checkpoint in:";
      for (const auto& f : diffs) msg += " " + f;
      throw ConfigError(msg);
    }
    const std::int64_t spe =
        (static_cast<std::int64_t>(data.items.size()) + cfg.batch_size - 1) / cfg.batch_size;
    if (spe != st.steps_per_epoch)
      throw ConfigError("train: resume dataset yields " + std::to_string(spe) +
                        " steps/epoch, checkpoint recorded " + std::to_string(st.steps_per_epoch));
  }

  TrainResult result;
  result.loss_log = out_dir + "/loss_log.jsonl";
  LossLog log(result.loss_log, /*append=*/false);

  const int n = static_cast<int>(data.items.size());
  for (int epoch = st.epoch; epoch < cfg.epochs; ++epoch) {
    const PerspectiveSelector sel = select_perspective(epoch, cfg.schedule_mode);
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng shuffle_rng(mix_seed({cfg.seed, kTagOrder, static_cast<std::uint64_t>(epoch)}));
    shuffle_rng.shuffle(order);

    st.epoch = epoch;
    for (int step = 0; step < st.steps_per_epoch; ++step) {
      std::vector<const Image*> batch;
      for (int k = step * cfg.batch_size; k < std::min(n, (step + 1) * cfg.batch_size); ++k)
        batch.push_back(&data.items[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])]);
      st.step_in_epoch = step;
      const std::int64_t gs = st.global_step;
      const double eff_base_lr = cfg.base_lr * cfg.batch_size / 256.0;
      const double lr = nn::lr_at_step(gs, st.total_steps,
                                       static_cast<std::int64_t>(cfg.warmup_epochs) * st.steps_per_epoch,
                                       eff_base_lr, cfg.final_lr);
      const double m = momentum_schedule(st.pair.momentum.step, st.pair.momentum.total_steps,
                                         st.pair.momentum.base_m, st.pair.momentum.final_m);
      const LossBreakdown lb = train_step(st, batch, sel);
      log.record(epoch, step, gs, sel.name(), lr, m, lb);
    }
    st.epoch = epoch + 1;
    st.step_in_epoch = 0;
    if ((epoch + 1) % cfg.checkpoint_every == 0 || epoch + 1 == cfg.epochs) {
      const std::string path = out_dir + "/ckpt_epoch" + std::to_string(epoch + 1) + ".bin";
      save_checkpoint(st, path);
      result.checkpoints.push_back(path);
      result.final_checkpoint = path;
    }
  }
  if (result.final_checkpoint.empty()) result.final_checkpoint = resume_ckpt;  // already at final epoch
  return result;
}

}  // namespace ana
