#pragma once

#include <string>
#include <vector>

#include "anatomist/backbone.hpp"
#include "anatomist/checkpoint.hpp"
#include "anatomist/data.hpp"
#include "anatomist/heads.hpp"
#include "anatomist/losses.hpp"

namespace ana {

enum class ScheduleMode { cyclic, direct_sum, single_extrap, single_shuffle, single_compdecomp };

std::string to_string(ScheduleMode m);
ScheduleMode schedule_mode_from_string(const std::string& s);

struct TrainConfig {
  int epochs = 100;
  ScheduleMode schedule_mode = ScheduleMode::cyclic;
  int batch_size = 64;
  double base_lr = 5e-4;  // scaled by batch_size / 256 at runtime
  double final_lr = 1e-6;
  int warmup_epochs = 10;
  double weight_decay = 0.04;
  double grad_clip = 3.0;
  std::uint64_t seed = 0;
  int n1 = 14;
  int n2 = 11;
  double lambda = 0.1;
  int grid_size = 18;
  int image_pixels = 144;
  CropRatioSchedule t_schedule;  // includes r_min
  double base_momentum = 0.996;
  double final_momentum = 1.0;
  int checkpoint_every = 10;
  int threads = 0;  // 0 = hardware concurrency
  bool allow_identity_permutation = false;

  EncoderConfig encoder = EncoderConfig::make(EncoderVariant::tiny, 8);
  int head1_layers = 2;
  int head3_hidden = 0;  // 0 = 4 * embed_dim
  bool head3_linear = false;

  void validate() const;
  GridSpec grid() const;
  std::string to_json_string() const;  // canonical, key-sorted
  static TrainConfig from_json_string(const std::string& json);
  static TrainConfig load(const std::string& path);  // rejects unknown keys
  void save(const std::string& path) const;

  // Field-level comparison; returns dotted paths of differing fields.
  static std::vector<std::string> diff(const TrainConfig& a, const TrainConfig& b);
};

struct PerspectiveSelector {
  bool extrap = false;
  bool shuffle = false;
  bool compdecomp = false;

  std::string name() const;
};

// Cyclic rotation: epoch % 3 == 0 -> extrapolation, 1 -> order correction,
// 2 -> composition/decomposition. direct_sum activates all three.
PerspectiveSelector select_perspective(int epoch, ScheduleMode mode);

struct TrainState {
  TrainConfig cfg;
  int epoch = 0;  // completed epochs
  int step_in_epoch = 0;
  std::int64_t global_step = 0;
  std::int64_t steps_per_epoch = 0;
  std::int64_t total_steps = 0;
  ModelPair pair;
  ExtrapolationHead head1;
  OrderHead head2;
  CompDecompHead head3;
  nn::AdamW opt;
};

TrainState init_train_state(const TrainConfig& cfg, int dataset_size);

// One optimization step: builds perspective views, runs teacher (gradient
// free) and student forward passes, averages per-image losses, steps the
// active parameters and applies the EMA update. Throws on non-finite loss
// with a diagnostic dump.
LossBreakdown train_step(TrainState& state, const std::vector<const Image*>& batch,
                         const PerspectiveSelector& selector);

void save_checkpoint(const TrainState& state, const std::string& path);
TrainState load_checkpoint(const std::string& path);

struct TrainResult {
  std::string final_checkpoint;
  std::string loss_log;
  std::vector<std::string> checkpoints;
};

// Full pretraining run under out_dir: per-step JSONL loss log plus periodic
// ckpt_epoch{N}.bin archives. With resume_ckpt set, continues that run;
// the stored config must match cfg exactly.
TrainResult train(const TrainConfig& cfg, const Dataset& data, const std::string& out_dir,
                  const std::string& resume_ckpt = "");

}  // namespace ana
