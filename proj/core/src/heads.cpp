#include "anatomist/heads.hpp"

#include <cmath>

#include "anatomist/errors.hpp"

namespace ana {

void ExtrapolationDecoderConfig::validate() const {
  if (layers < 1) throw ConfigError("ExtrapolationDecoderConfig: layers must be >= 1");
  if (embed_dim < 1 || heads < 1 || embed_dim % heads != 0)
    throw ConfigError("ExtrapolationDecoderConfig: embed_dim must be divisible by heads");
  if (n1_max < 2) throw ConfigError("ExtrapolationDecoderConfig: n1_max must be >= 2");
  if (mlp_ratio < 1) throw ConfigError("ExtrapolationDecoderConfig: mlp_ratio must be >= 1");
}

ExtrapolationHead ExtrapolationHead::init(const ExtrapolationDecoderConfig& cfg, Rng& rng) {
  cfg.validate();
  ExtrapolationHead head;
  head.cfg = cfg;
  head.params.add("mask_token", nn::normal_init(1, cfg.embed_dim, 0.02, rng), true);
  head.params.add("pos_table", nn::normal_init(cfg.n1_max * cfg.n1_max, cfg.embed_dim, 0.02, rng), true);
  for (int i = 0; i < cfg.layers; ++i)
    nn::make_block(head.params, "blk" + std::to_string(i), cfg.embed_dim, cfg.embed_dim * cfg.mlp_ratio, rng);
  head.params.add("ln_f.g", Mat::Ones(1, cfg.embed_dim), true);
  head.params.add("ln_f.b", Mat::Zero(1, cfg.embed_dim), true);
  return head;
}

ad::Var extrapolate(const ExtrapolationHead& head, const ad::Var& student_tokens, const MaskSet& mask,
                    std::pair<int, int> c2_offset_in_c1) {
  const int n1 = mask.n1;
  const int n_slots = n1 * n1;
  if (n_slots > head.cfg.n1_max * head.cfg.n1_max)
    throw ShapeError("extrapolate: mask over " + std::to_string(n_slots) +
                     " slots exceeds position table of " +
                     std::to_string(head.cfg.n1_max * head.cfg.n1_max));
  const std::vector<int> visible = mask.unmasked_indices();
  const std::vector<int> masked = mask.masked_indices();
  const long n2_tokens = ad::value(student_tokens).rows();
  if (static_cast<long>(visible.size()) != n2_tokens)
    throw ShapeError("extrapolate: " + std::to_string(n2_tokens) + " student tokens vs " +
                     std::to_string(visible.size()) + " visible slots");
  if (masked.empty()) throw GeometryError("extrapolate: mask has no masked slots");

  // The offset must place the inner window's cells exactly on the unmasked
  // slots, in matching row-major order.
  const int n2 = static_cast<int>(std::lround(std::sqrt(static_cast<double>(visible.size()))));
  if (n2 * n2 != static_cast<int>(visible.size()))
    throw GeometryError("extrapolate: visible slots do not form a square block");
  const auto [off_r, off_c] = c2_offset_in_c1;
  for (int r = 0; r < n2; ++r)
    for (int c = 0; c < n2; ++c)
      if (visible[static_cast<std::size_t>(r) * n2 + c] != (off_r + r) * n1 + (off_c + c))
        throw GeometryError("extrapolate: offset (" + std::to_string(off_r) + "," + std::to_string(off_c) +
                            ") inconsistent with mask");

  ad::Var seq = ad::scatter_rows(n_slots, visible, student_tokens);
  ad::Var mask_fill = ad::scatter_rows(
      n_slots, masked, ad::repeat_row(head.params.at("mask_token"), static_cast<int>(masked.size())));
  seq = ad::add(seq, mask_fill);

  std::vector<int> slots(static_cast<std::size_t>(n_slots));
  for (int i = 0; i < n_slots; ++i) slots[static_cast<std::size_t>(i)] = i;
  seq = ad::add(seq, ad::select_rows(head.params.at("pos_table"), slots));

  for (int i = 0; i < head.cfg.layers; ++i)
    seq = nn::block_forward(nn::bind_block(head.params, "blk" + std::to_string(i)), seq, head.cfg.heads);
  return ad::layer_norm(seq, head.params.at("ln_f.g"), head.params.at("ln_f.b"));
}

void OrderClassifierConfig::validate() const {
  if (embed_dim < 1) throw ConfigError("OrderClassifierConfig: embed_dim must be >= 1");
  if (n_classes < 1) throw ConfigError("OrderClassifierConfig: n_classes must be >= 1");
}

OrderHead OrderHead::init(const OrderClassifierConfig& cfg, Rng& rng) {
  cfg.validate();
  OrderHead head;
  head.cfg = cfg;
  head.params.add("w", nn::normal_init(cfg.embed_dim, cfg.n_classes, 0.02, rng));
  head.params.add("b", Mat::Zero(1, cfg.n_classes), true);
  return head;
}

ad::Var classify_order(const OrderHead& head, const ad::Var& student_tokens) {
  if (ad::value(student_tokens).rows() != head.cfg.n_classes)
    throw ShapeError("classify_order: " + std::to_string(ad::value(student_tokens).rows()) +
                     " tokens, expected " + std::to_string(head.cfg.n_classes));
  return ad::add_rowvec(ad::matmul(student_tokens, head.params.at("w")), head.params.at("b"));
}

void CompDecompConfig::validate() const {
  if (embed_dim < 1) throw ConfigError("CompDecompConfig: embed_dim must be >= 1");
  if (hidden < embed_dim) throw ConfigError("CompDecompConfig: hidden width must be >= embed_dim");
}

CompDecompHead CompDecompHead::init(const CompDecompConfig& cfg, Rng& rng) {
  cfg.validate();
  CompDecompHead head;
  head.cfg = cfg;
  const int d = cfg.embed_dim;
  const int h = cfg.hidden;
  if (cfg.linear_comp) {
    head.params.add("comp.w", nn::normal_init(4 * d, d, 0.02, rng));
    head.params.add("comp.b", Mat::Zero(1, d), true);
  } else {
    head.params.add("comp.w1", nn::normal_init(4 * d, h, 0.02, rng));
    head.params.add("comp.b1", Mat::Zero(1, h), true);
    head.params.add("comp.w2", nn::normal_init(h, h, 0.02, rng));
    head.params.add("comp.b2", Mat::Zero(1, h), true);
    head.params.add("comp.w3", nn::normal_init(h, d, 0.02, rng));
    head.params.add("comp.b3", Mat::Zero(1, d), true);
  }
  head.params.add("decomp.w1", nn::normal_init(d, h, 0.02, rng));
  head.params.add("decomp.b1", Mat::Zero(1, h), true);
  head.params.add("decomp.w2", nn::normal_init(h, h, 0.02, rng));
  head.params.add("decomp.b2", Mat::Zero(1, h), true);
  head.params.add("decomp.w3", nn::normal_init(h, 4 * d, 0.02, rng));
  head.params.add("decomp.b3", Mat::Zero(1, 4 * d), true);
  return head;
}

ad::Var compose(const CompDecompHead& head, const std::array<ad::Var, 4>& sub_embeddings) {
  const int d = head.cfg.embed_dim;
  for (const auto& e : sub_embeddings)
    if (ad::value(e).rows() != 1 || ad::value(e).cols() != d)
      throw ShapeError("compose: each sub-embedding must be 1x" + std::to_string(d));
  ad::Var x = ad::concat_cols({sub_embeddings[0], sub_embeddings[1], sub_embeddings[2], sub_embeddings[3]});
  if (head.cfg.linear_comp)
    return ad::add_rowvec(ad::matmul(x, head.params.at("comp.w")), head.params.at("comp.b"));
  x = ad::gelu(ad::add_rowvec(ad::matmul(x, head.params.at("comp.w1")), head.params.at("comp.b1")));
  x = ad::gelu(ad::add_rowvec(ad::matmul(x, head.params.at("comp.w2")), head.params.at("comp.b2")));
  return ad::add_rowvec(ad::matmul(x, head.params.at("comp.w3")), head.params.at("comp.b3"));
}

std::array<ad::Var, 4> decompose(const CompDecompHead& head, const ad::Var& global_embedding) {
  const int d = head.cfg.embed_dim;
  if (ad::value(global_embedding).rows() != 1 || ad::value(global_embedding).cols() != d)
    throw ShapeError("decompose: input must be 1x" + std::to_string(d));
  ad::Var x = ad::gelu(
      ad::add_rowvec(ad::matmul(global_embedding, head.params.at("decomp.w1")), head.params.at("decomp.b1")));
  x = ad::gelu(ad::add_rowvec(ad::matmul(x, head.params.at("decomp.w2")), head.params.at("decomp.b2")));
  x = ad::add_rowvec(ad::matmul(x, head.params.at("decomp.w3")), head.params.at("decomp.b3"));
  return {ad::slice_cols(x, 0, d), ad::slice_cols(x, d, d), ad::slice_cols(x, 2 * d, d),
          ad::slice_cols(x, 3 * d, d)};
}

}  // namespace ana
