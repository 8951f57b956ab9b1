#pragma once

#include <cstdint>
#include <string>

#include "anatomist/nn.hpp"

namespace ana {

enum class EncoderVariant { tiny, small, paper };

std::string to_string(EncoderVariant v);
EncoderVariant encoder_variant_from_string(const std::string& s);

// Plain patch transformer; variable grid sizes are supported because
// position information is sinusoidal, computed per input layout. The `paper`
// variant documents a capacity-equivalent configuration of the original
// large-scale backbone; `tiny` is the desk-scale default.
struct EncoderConfig {
  int cell_pixels = 8;
  int embed_dim = 32;
  int depth = 2;
  int heads = 4;
  int mlp_ratio = 2;
  EncoderVariant variant = EncoderVariant::tiny;

  static EncoderConfig make(EncoderVariant v, int cell_pixels);
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

// Per-patch embeddings: one D-dim row per grid cell, row-major layout.
struct EmbeddingMap {
  Mat tokens;  // N x D
  int rows = 0;
  int cols = 0;

  int count() const { return rows * cols; }
  int dim() const { return static_cast<int>(tokens.cols()); }
};

struct EncoderParams {
  EncoderConfig cfg;
  nn::ParamSet params;

  static EncoderParams init(const EncoderConfig& cfg, Rng& rng);
};

// Autodiff-visible forward pass; `image` must be (rows*cell) x (cols*cell).
ad::Var encode_tokens(const EncoderParams& enc, const ad::Var& image, int rows, int cols);
ad::Var encode_tokens(const EncoderParams& enc, const Mat& image, int rows, int cols);

// Gradient-free forward for evaluation.
EmbeddingMap encode(const EncoderParams& enc, const Mat& image, int rows, int cols);

// Mean over tokens, one value per dimension (1 x D).
Mat pool_global(const EmbeddingMap& emb);
ad::Var pool_global(const ad::Var& tokens);

struct MomentumState {
  double base_m = 0.996;
  double final_m = 1.0;
  std::int64_t step = 0;
  std::int64_t total_steps = 1;
};

// Cosine ramp base_m -> final_m over total_steps.
double momentum_schedule(std::int64_t step, std::int64_t total_steps, double base_m, double final_m);

// Student-teacher twin: identical parameter shapes, teacher never receives
// gradients (its vars are constants) and moves only through ema_update.
struct ModelPair {
  EncoderParams student;
  EncoderParams teacher;
  MomentumState momentum;

  static ModelPair init(const EncoderConfig& cfg, std::uint64_t seed);
};

// teacher = m * teacher + (1 - m) * student, elementwise; student unchanged.
void ema_update(ModelPair& pair, double m);

}  // namespace ana
