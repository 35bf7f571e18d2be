#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "pitrans/implicit_transform.hpp"
#include "pitrans/pconvmlp.hpp"

namespace pitrans {

enum class EncoderVariant { pconvmlp, basic_conv };

std::string_view to_string(EncoderVariant v);
EncoderVariant parse_encoder_variant(std::string_view s);

/// Architecture hyperparameters. Level widths follow C_L1 * {1, 2, 4, 8} at
/// H/{2, 4, 8, 16}; the post-L2 decoder path narrows c_L2 -> c_L2/2 -> c_L2/4 and
/// ends in a DecoderHead of width c_L2/4.
struct GeneratorConfig {
  std::int64_t image_size = 64;
  std::int64_t c_l1 = 8;
  std::int64_t hc_expansion = 1;
  std::int64_t hs_cap = 1024;
  bool itm_scale_scores = false;
  EncoderVariant encoder_variant = EncoderVariant::pconvmlp;
  bool use_itm = true;
  float bn_momentum = 0.1f;
  float bn_eps = 1e-5f;
  std::uint64_t seed = 0;

  /// 64 x 64, C_L1 = 8.
  static GeneratorConfig desk();
  /// 256 x 256, C_L1 = 32.
  static GeneratorConfig full();

  /// Throws ConfigError when a level width or the image size breaks the level law.
  void validate() const;

  std::int64_t level_channels(int level) const;  // level in 1..4
  std::int64_t level_size(int level) const;
};

/// Ablation variants: "A" basic conv encoders without attention, "E" Parallel-ConvMLP
/// encoders without attention, "F" the full model. Throws ConfigError otherwise.
GeneratorConfig apply_ablation(GeneratorConfig cfg, std::string_view variant);

/// Stem plus three down-sampling stages; keeps every level's output.
class Encoder {
 public:
  struct Levels {
    Tensor l1, l2, l3, l4;
  };

  Encoder() = default;
  Encoder(const std::string& name, const GeneratorConfig& cfg, Rng& rng);

  Levels forward(const Tensor& image);
  Shape describe(const Shape& in, CostReport& report) const;
  void collect(TensorList& out) const;
  void set_training(bool t);

  EncoderStem stem;
  std::array<PConvMLPBlock, 3> stages;

 private:
  std::string name_;
};

struct GeneratorOutputs {
  Tensor direct;  ///< I_g'
  Tensor final;   ///< I_g''
};

/// Two encoders (aerial, semantic), the direct-translation decoder and the
/// attention-fused decoder.
///
/// Parameter order (checkpoint contract): enc_a, enc_s, direct.{up_l3, up_l2, up_1, up_0,
/// head}, fused.{chain, up_1, up_0, head}; within a layer weight before bias, BN
/// gamma, beta, running_mean, running_var.
class Generator {
 public:
  explicit Generator(const GeneratorConfig& cfg);

  GeneratorOutputs forward(const Tensor& aerial, const Tensor& semantic);
  /// Semantic encoder features at L2, L3, L4 (in that order).
  std::array<Tensor, 3> semantic_level_taps(const Tensor& semantic);

  /// Static description for a single 3 x H x W input pair.
  Shape describe(const Shape& in, CostReport& report) const;
  TensorList parameters() const;
  void set_training(bool t);

  const GeneratorConfig& config() const { return cfg_; }

  Encoder enc_aerial, enc_semantic;
  std::array<UpsampleBlock, 2> direct_levels;
  std::array<UpsampleBlock, 2> direct_post;
  DecoderHead direct_head;
  LevelChain fused_chain;
  std::array<UpsampleBlock, 2> fused_post;
  DecoderHead fused_head;

 private:
  void check_inputs(const Tensor& aerial, const Tensor& semantic) const;

  GeneratorConfig cfg_;
};

/// apply_ablation + construction.
Generator build_variant(const GeneratorConfig& cfg, std::string_view variant);

}  // namespace pitrans
