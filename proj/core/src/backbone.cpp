#include "anatomist/backbone.hpp"

#include <cmath>

#include "anatomist/errors.hpp"

namespace ana {

std::string to_string(EncoderVariant v) {
  switch (v) {
    case EncoderVariant::tiny: return "tiny";
    case EncoderVariant::small: return "small";
    case EncoderVariant::paper: return "paper";
  }
  throw ConfigError("unknown encoder variant");
}

EncoderVariant encoder_variant_from_string(const std::string& s) {
  if (s == "tiny") return EncoderVariant::tiny;
  if (s == "small") return EncoderVariant::small;
  if (s == "paper") return EncoderVariant::paper;
  throw ConfigError("unknown encoder variant '" + s + "' (expected tiny|small|paper)");
}

EncoderConfig EncoderConfig::make(EncoderVariant v, int cell_pixels) {
  EncoderConfig cfg;
  cfg.cell_pixels = cell_pixels;
  cfg.variant = v;
  switch (v) {
    case EncoderVariant::tiny:
      cfg.embed_dim = 32;
      cfg.depth = 2;
      cfg.heads = 4;
      cfg.mlp_ratio = 2;
      break;
    case EncoderVariant::small:
      cfg.embed_dim = 96;
      cfg.depth = 4;
      cfg.heads = 8;
      cfg.mlp_ratio = 2;
      break;
    case EncoderVariant::paper:
      // Capacity-equivalent to a base-size hierarchical transformer.
      cfg.embed_dim = 1024;
      cfg.depth = 24;
      cfg.heads = 16;
      cfg.mlp_ratio = 4;
      break;
  }
  return cfg;
}

void EncoderConfig::validate() const {
  if (cell_pixels < 1) throw ConfigError("EncoderConfig: cell_pixels must be >= 1");
  if (depth < 1) throw ConfigError("EncoderConfig: depth must be >= 1");
  if (heads < 1 || embed_dim % heads != 0)
    throw ConfigError("EncoderConfig: embed_dim " + std::to_string(embed_dim) +
                      " must be divisible by heads " + std::to_string(heads));
  if (embed_dim % 4 != 0) throw ConfigError("EncoderConfig: embed_dim must be divisible by 4");
  if (mlp_ratio < 1) throw ConfigError("EncoderConfig: mlp_ratio must be >= 1");
}

EncoderParams EncoderParams::init(const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  EncoderParams enc;
  enc.cfg = cfg;
  const int patch_dim = cfg.cell_pixels * cfg.cell_pixels;
  enc.params.add("embed.w", nn::normal_init(patch_dim, cfg.embed_dim, 0.02, rng));
  enc.params.add("embed.b", Mat::Zero(1, cfg.embed_dim), true);
  for (int i = 0; i < cfg.depth; ++i)
    nn::make_block(enc.params, "blk" + std::to_string(i), cfg.embed_dim, cfg.embed_dim * cfg.mlp_ratio, rng);
  enc.params.add("ln_f.g", Mat::Ones(1, cfg.embed_dim), true);
  enc.params.add("ln_f.b", Mat::Zero(1, cfg.embed_dim), true);
  return enc;
}

ad::Var encode_tokens(const EncoderParams& enc, const ad::Var& image, int rows, int cols) {
  if (rows < 1 || cols < 1) throw ShapeError("encode_tokens: grid layout must be positive");
  const int cp = enc.cfg.cell_pixels;
  if (ad::value(image).rows() != static_cast<long>(rows) * cp ||
      ad::value(image).cols() != static_cast<long>(cols) * cp)
    throw ShapeError("encode_tokens: region " + std::to_string(ad::value(image).rows()) + "x" +
                     std::to_string(ad::value(image).cols()) + ", expected " + std::to_string(rows * cp) +
                     "x" + std::to_string(cols * cp) + " for layout " + std::to_string(rows) + "x" +
                     std::to_string(cols));

  ad::Var x = ad::patchify(image, rows, cols, cp);
  x = ad::add_rowvec(ad::matmul(x, enc.params.at("embed.w")), enc.params.at("embed.b"));
  x = ad::add(x, ad::constant(nn::sincos_position_table(rows, cols, enc.cfg.embed_dim)));
  for (int i = 0; i < enc.cfg.depth; ++i)
    x = nn::block_forward(nn::bind_block(enc.params, "blk" + std::to_string(i)), x, enc.cfg.heads);
  return ad::layer_norm(x, enc.params.at("ln_f.g"), enc.params.at("ln_f.b"));
}

ad::Var encode_tokens(const EncoderParams& enc, const Mat& image, int rows, int cols) {
  return encode_tokens(enc, ad::constant(image), rows, cols);
}

EmbeddingMap encode(const EncoderParams& enc, const Mat& image, int rows, int cols) {
  ad::NoGradScope no_grad;
  ad::Var tokens = encode_tokens(enc, image, rows, cols);
  EmbeddingMap emb;
  emb.tokens = ad::value(tokens);
  emb.rows = rows;
  emb.cols = cols;
  return emb;
}

Mat pool_global(const EmbeddingMap& emb) {
  if (emb.tokens.rows() == 0) throw ShapeError("pool_global: empty embedding map");
  return emb.tokens.colwise().mean();
}

ad::Var pool_global(const ad::Var& tokens) { return ad::mean_rows(tokens); }

double momentum_schedule(std::int64_t step, std::int64_t total_steps, double base_m, double final_m) {
  if (total_steps < 1) throw ConfigError("momentum_schedule: total_steps must be >= 1");
  if (step < 0 || step > total_steps)
    throw ConfigError("momentum_schedule: step " + std::to_string(step) + " outside [0, " +
                      std::to_string(total_steps) + "]");
  const double cosine = (std::cos(M_PI * static_cast<double>(step) / static_cast<double>(total_steps)) + 1.0) / 2.0;
  return final_m - (final_m - base_m) * cosine;
}

ModelPair ModelPair::init(const EncoderConfig& cfg, std::uint64_t seed) {
  Rng rng(mix_seed({seed, 0x656e636f646572ull}));
  ModelPair pair{EncoderParams::init(cfg, rng), EncoderParams{}, MomentumState{}};
  pair.teacher.cfg = cfg;
  pair.teacher.params = pair.student.params.clone(/*requires_grad=*/false);
  return pair;
}

void ema_update(ModelPair& pair, double m) {
  if (m < 0.0 || m > 1.0) throw ConfigError("ema_update: momentum must be in [0, 1]");
  if (m == 1.0) return;  // teacher must stay bit-identical at the endpoint
  const auto& s_entries = pair.student.params.entries();
  auto& t_entries = pair.teacher.params.entries();
  if (s_entries.size() != t_entries.size()) throw ShapeError("ema_update: parameter count mismatch");
  for (std::size_t i = 0; i < s_entries.size(); ++i) {
    const Mat& s = s_entries[i].var->value;
    Mat& t = t_entries[i].var->value;
    if (s.rows() != t.rows() || s.cols() != t.cols())
      throw ShapeError("ema_update: shape mismatch for " + s_entries[i].name);
    t = m * t + (1.0 - m) * s;
  }
}

}  // namespace ana
