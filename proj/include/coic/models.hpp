#pragma once
// Toy derainers: a small U-Net with modulated convolutions and a small
// transformer with modulated cross-attention. Both predict the rain layer and
// return clamp01(x - rain). An undefined z runs the unmodulated path.

#include "coic/coim.hpp"

namespace coic {

// Layer name plus the modulation context produced during a forward pass,
// collected for temperature reporting.
using CtxLog = std::vector<std::pair<std::string, ModulationContext>>;

class ToyUNet {
 public:
  // with_ctx=false builds the unmodulated twin; given the same rng stream the
  // twins share identical base weights (MLP init is drawn from a forked rng).
  static ToyUNet create(int width, int embed_dim, Rng& rng, bool with_ctx = true);

  // x [N,3,H,W], H and W divisible by 4. z [N,embed_dim] or undefined.
  Tensor forward(const Tensor& x, const Tensor& z, CtxLog* log = nullptr) const;

  ParamSet base_params() const;
  ParamSet ctx_params() const;
  ParamSet params() const;  // base followed by ctx

  bool has_ctx() const { return conv_in.has_ctx(); }
  static constexpr int kDownsampleFactor = 4;
  static constexpr int kKernel = 3;

  int width = 0, embed_dim = 0;
  ModulatedConv conv_in, enc1, down1, enc2, down2, mid;
  ModulatedConv up1, dec2, up2, dec1, head;
};

class ToyFormer {
 public:
  static ToyFormer create(int token_dim, int embed_dim, Rng& rng,
                          bool with_ctx = true);

  // x [N,3,H,W], H and W divisible by the patch size.
  Tensor forward(const Tensor& x, const Tensor& z) const;

  ParamSet base_params() const;
  ParamSet ctx_params() const;
  ParamSet params() const;

  bool has_ctx() const { return blocks.empty() ? false : blocks[0].attn.has_ctx(); }
  static constexpr int kPatch = 8;

  int token_dim = 0, embed_dim = 0;
  nn::Linear embed;  // p*p*3 -> token_dim
  struct Block {
    ModulatedAttention attn;
    nn::Linear ff1, ff2;  // token_dim -> 2*token_dim -> token_dim, silu between
  };
  std::vector<Block> blocks;
  nn::Linear out_head;  // token_dim -> p*p*3
};

inline std::size_t count_params(const ParamSet& ps) { return ps.total_size(); }

}  // namespace coic
