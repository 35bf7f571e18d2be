#include "pitrans/generator.hpp"

#include "pitrans/errors.hpp"
#include "pitrans/ops.hpp"

namespace pitrans {

std::string_view to_string(EncoderVariant v) { return v == EncoderVariant::pconvmlp ? "pconvmlp" : "basic_conv"; }

EncoderVariant parse_encoder_variant(std::string_view s) {
  if (s == "pconvmlp") return EncoderVariant::pconvmlp;
  if (s == "basic_conv") return EncoderVariant::basic_conv;
  throw ConfigError("unknown encoder variant '" + std::string(s) + "' (expected pconvmlp or basic_conv)");
}

GeneratorConfig GeneratorConfig::desk() { return GeneratorConfig{}; }

GeneratorConfig GeneratorConfig::full() {
  GeneratorConfig c;
  c.image_size = 256;
  c.c_l1 = 32;
  return c;
}

void GeneratorConfig::validate() const {
  if (image_size < 16 || image_size % 16 != 0)
    throw ConfigError("image_size must be a positive multiple of 16, got " + std::to_string(image_size));
  if (c_l1 < 2 || c_l1 % 2 != 0) throw ConfigError("c_l1 must be even and >= 2, got " + std::to_string(c_l1));
  if (hc_expansion < 1) throw ConfigError("hc_expansion must be >= 1");
  if (hs_cap < 1) throw ConfigError("hs_cap must be >= 1");
  if (!(bn_momentum > 0.0f && bn_momentum <= 1.0f)) throw ConfigError("bn_momentum must lie in (0, 1]");
  if (!(bn_eps > 0.0f)) throw ConfigError("bn_eps must be positive");
}

std::int64_t GeneratorConfig::level_channels(int level) const { return c_l1 << (level - 1); }
std::int64_t GeneratorConfig::level_size(int level) const { return image_size >> level; }

GeneratorConfig apply_ablation(GeneratorConfig cfg, std::string_view variant) {
  if (variant == "A") {
    cfg.encoder_variant = EncoderVariant::basic_conv;
    cfg.use_itm = false;
  } else if (variant == "E") {
    cfg.encoder_variant = EncoderVariant::pconvmlp;
    cfg.use_itm = false;
  } else if (variant == "F") {
    cfg.encoder_variant = EncoderVariant::pconvmlp;
    cfg.use_itm = true;
  } else {
    throw ConfigError("unknown ablation variant '" + std::string(variant) + "' (expected A, E or F)");
  }
  return cfg;
}

Generator build_variant(const GeneratorConfig& cfg, std::string_view variant) {
  return Generator(apply_ablation(cfg, variant));
}

// ---------------------------------------------------------------------------

Encoder::Encoder(const std::string& name, const GeneratorConfig& cfg, Rng& rng) : name_(name) {
  const BnSettings bn{cfg.bn_momentum, cfg.bn_eps};
  stem = EncoderStem(name + ".stem", cfg.c_l1, rng, bn);
  PConvMlpSettings s;
  s.with_mlps = cfg.encoder_variant == EncoderVariant::pconvmlp;
  s.hc_expansion = cfg.hc_expansion;
  s.hs_cap = cfg.hs_cap;
  s.bn = bn;
  for (int i = 0; i < 3; ++i) {
    const int level = i + 1;
    stages[static_cast<std::size_t>(i)] =
        PConvMLPBlock(name + ".stage" + std::to_string(i), cfg.level_channels(level), cfg.level_size(level),
                      cfg.level_size(level), s, rng);
  }
}

Encoder::Levels Encoder::forward(const Tensor& image) {
  Levels out;
  out.l1 = stem.forward(image);
  trace_point(name_ + ".L1", out.l1);
  out.l2 = stages[0].forward(out.l1);
  trace_point(name_ + ".L2", out.l2);
  out.l3 = stages[1].forward(out.l2);
  trace_point(name_ + ".L3", out.l3);
  out.l4 = stages[2].forward(out.l3);
  trace_point(name_ + ".L4", out.l4);
  return out;
}

Shape Encoder::describe(const Shape& in, CostReport& report) const {
  Shape s = stem.describe(in, report);
  report.add(name_ + ".L1", s, 0, 0);
  for (int i = 0; i < 3; ++i) {
    s = stages[static_cast<std::size_t>(i)].describe(s, report);
    report.add(name_ + ".L" + std::to_string(i + 2), s, 0, 0);
  }
  return s;
}

void Encoder::collect(TensorList& out) const {
  stem.collect(out);
  for (const auto& st : stages) st.collect(out);
}

void Encoder::set_training(bool t) {
  stem.set_training(t);
  for (auto& st : stages) st.set_training(t);
}

// ---------------------------------------------------------------------------

Generator::Generator(const GeneratorConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(cfg_.seed, "generator");
  const BnSettings bn{cfg_.bn_momentum, cfg_.bn_eps};
  const auto c4 = cfg_.level_channels(4), c3 = cfg_.level_channels(3), c2 = cfg_.level_channels(2);

  enc_aerial = Encoder("G.enc_a", cfg_, rng);
  enc_semantic = Encoder("G.enc_s", cfg_, rng);

  direct_levels[0] = UpsampleBlock("G.direct.up_l3", c4, c3, rng, bn);
  direct_levels[1] = UpsampleBlock("G.direct.up_l2", c3, c2, rng, bn);
  direct_post[0] = UpsampleBlock("G.direct.up_1", c2, c2 / 2, rng, bn);
  direct_post[1] = UpsampleBlock("G.direct.up_0", c2 / 2, c2 / 4, rng, bn);
  direct_head = DecoderHead("G.direct.head", c2 / 4, rng, bn);

  fused_chain = LevelChain("G.fused", c4, cfg_.use_itm, cfg_.itm_scale_scores, rng, bn);
  fused_post[0] = UpsampleBlock("G.fused.up_1", c2, c2 / 2, rng, bn);
  fused_post[1] = UpsampleBlock("G.fused.up_0", c2 / 2, c2 / 4, rng, bn);
  fused_head = DecoderHead("G.fused.head", c2 / 4, rng, bn);
}

void Generator::check_inputs(const Tensor& aerial, const Tensor& semantic) const {
  if (aerial.shape() != semantic.shape())
    throw DimensionError("generator: aerial " + shape_str(aerial.shape()) + " and semantic " +
                         shape_str(semantic.shape()) + " shapes differ");
  const auto h = cfg_.image_size;
  if (aerial.rank() != 4 || aerial.dim(1) != 3 || aerial.dim(2) != h || aerial.dim(3) != h)
    throw DimensionError("generator: expected b x 3 x " + std::to_string(h) + " x " + std::to_string(h) +
                         " input, got " + shape_str(aerial.shape()));
}

GeneratorOutputs Generator::forward(const Tensor& aerial, const Tensor& semantic) {
  check_inputs(aerial, semantic);
  const Encoder::Levels a = enc_aerial.forward(aerial);
  const Encoder::Levels s = enc_semantic.forward(semantic);

  // Direct branch: its L3 / L2 features double as attention keys.
  const Tensor k4 = a.l4;
  const Tensor k3 = direct_levels[0].forward(k4);
  const Tensor k2 = direct_levels[1].forward(k3);
  GeneratorOutputs out;
  out.direct = direct_head.forward(direct_post[1].forward(direct_post[0].forward(k2)));

  const Tensor fused = fused_chain.forward({s.l4, s.l3, s.l2}, {k4, k3, k2});
  out.final = fused_head.forward(fused_post[1].forward(fused_post[0].forward(fused)));
  return out;
}

std::array<Tensor, 3> Generator::semantic_level_taps(const Tensor& semantic) {
  check_inputs(semantic, semantic);
  const Encoder::Levels s = enc_semantic.forward(semantic);
  return {s.l2, s.l3, s.l4};
}

Shape Generator::describe(const Shape& in, CostReport& report) const {
  if (in.size() != 3 || in[0] != 3 || in[1] != cfg_.image_size || in[2] != cfg_.image_size)
    throw DimensionError("generator: expected input 3 x " + std::to_string(cfg_.image_size) + " x " +
                         std::to_string(cfg_.image_size) + ", got " + shape_str(in));
  const Shape l4 = enc_aerial.describe(in, report);
  enc_semantic.describe(in, report);
  Shape s = direct_levels[1].describe(direct_levels[0].describe(l4, report), report);
  direct_head.describe(direct_post[1].describe(direct_post[0].describe(s, report), report), report);
  s = fused_chain.describe(l4, report);
  return fused_head.describe(fused_post[1].describe(fused_post[0].describe(s, report), report), report);
}

TensorList Generator::parameters() const {
  TensorList out;
  enc_aerial.collect(out);
  enc_semantic.collect(out);
  for (const auto& u : direct_levels) u.collect(out);
  for (const auto& u : direct_post) u.collect(out);
  direct_head.collect(out);
  fused_chain.collect(out);
  for (const auto& u : fused_post) u.collect(out);
  fused_head.collect(out);
  return out;
}

void Generator::set_training(bool t) {
  enc_aerial.set_training(t);
  enc_semantic.set_training(t);
  for (auto& u : direct_levels) u.set_training(t);
  for (auto& u : direct_post) u.set_training(t);
  direct_head.set_training(t);
  fused_chain.set_training(t);
  for (auto& u : fused_post) u.set_training(t);
  fused_head.set_training(t);
}

}  // namespace pitrans
