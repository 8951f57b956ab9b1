#pragma once

#include <array>
#include <utility>

#include "anatomist/geometry.hpp"
#include "anatomist/nn.hpp"

namespace ana {

// Masked-embedding decoder: places visible student tokens into the outer
// window's slots, fills masked slots with a learned mask token, adds learned
// absolute positions and runs an attention stack over all slots.
struct ExtrapolationDecoderConfig {
  int layers = 2;   // full-scale setting is 8
  int embed_dim = 32;
  int heads = 4;
  int mlp_ratio = 2;
  int n1_max = 18;  // position table covers up to n1_max^2 slots

  void validate() const;
  bool operator==(const ExtrapolationDecoderConfig&) const = default;
};

struct ExtrapolationHead {
  ExtrapolationDecoderConfig cfg;
  nn::ParamSet params;  // mask_token, pos_table, blk*, ln_f

  static ExtrapolationHead init(const ExtrapolationDecoderConfig& cfg, Rng& rng);
};

// student_tokens: N2 x D over the inner crop; returns all N1 output
// embeddings of the outer window (row-major slots).
ad::Var extrapolate(const ExtrapolationHead& head, const ad::Var& student_tokens, const MaskSet& mask,
                    std::pair<int, int> c2_offset_in_c1);

struct OrderClassifierConfig {
  int embed_dim = 32;
  int n_classes = 196;  // n1^2

  void validate() const;
  bool operator==(const OrderClassifierConfig&) const = default;
};

struct OrderHead {
  OrderClassifierConfig cfg;
  nn::ParamSet params;  // w, b

  static OrderHead init(const OrderClassifierConfig& cfg, Rng& rng);
};

// logits(i, j) = score that shuffled slot i originally occupied position j.
ad::Var classify_order(const OrderHead& head, const ad::Var& student_tokens);

struct CompDecompConfig {
  int embed_dim = 32;
  int hidden = 128;        // >= embed_dim
  bool linear_comp = false;  // single linear map instead of the 3-layer MLP

  void validate() const;
  bool operator==(const CompDecompConfig&) const = default;
};

struct CompDecompHead {
  CompDecompConfig cfg;
  nn::ParamSet params;

  static CompDecompHead init(const CompDecompConfig& cfg, Rng& rng);
};

// Four 1xD quadrant embeddings (TL, TR, BL, BR) -> one 1xD whole embedding.
ad::Var compose(const CompDecompHead& head, const std::array<ad::Var, 4>& sub_embeddings);

// One 1xD whole embedding -> four 1xD quadrant embeddings (TL, TR, BL, BR).
std::array<ad::Var, 4> decompose(const CompDecompHead& head, const ad::Var& global_embedding);

}  // namespace ana
