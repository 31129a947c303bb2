#pragma once
// Context-based instance-level modulation: adaptive spatial weights for
// convolutions (with the grouped-convolution batch path), cross-attention
// modulation, and the induced channel-pair temperature.

#include <optional>

#include "coic/nn.hpp"

namespace coic {

struct ModulationContext {
  Tensor q;    // [N, C]
  Tensor r;    // [N, C']
  Tensor z;    // [N, k*k]
  Tensor tau;  // [N, C, C'], values only: 1/sigmoid(Q_c + R_c')
  Tensor a;    // [N, C, C', k, k], spatial mean 1 per (c,c')
};

// Convolution layer whose weights are rewritten per sample from the
// instance embedding plus pooled input context.
class ModulatedConv {
 public:
  // with_ctx=false builds the unmodulated twin: same base weights, no MLP.
  static ModulatedConv create(int cin, int cout, int k, int stride, int pad,
                              int embed_dim, Rng& rng, bool with_ctx = true);

  bool has_ctx() const { return mlp_hidden.w.defined(); }

  // z [N, embed_dim], pooled [N, cin]. MLP output is cropped as Q, R, Z.
  ModulationContext gen_context(const Tensor& z, const Tensor& pooled) const;

  // ctx == nullptr runs the exact standard convolution path; otherwise the
  // batch is absorbed into channels and run as one grouped convolution.
  Tensor forward(const Tensor& x, const ModulationContext* ctx) const;
  // Convenience: pooled context from x itself, then modulated forward.
  Tensor forward_with_embedding(const Tensor& x, const Tensor& z) const;

  void register_base_params(ParamSet& ps, const std::string& prefix) const;
  void register_ctx_params(ParamSet& ps, const std::string& prefix) const;

  nn::Conv2d conv;
  nn::Linear mlp_hidden;
  nn::Linear mlp_out;  // zero-init so training starts unmodulated
  int cin = 0, cout = 0, k = 0, embed_dim = 0;
};

// Cross-attention where the embedding shifts keys and values:
// Q = X Wq, K = (X+c) Wk, V = (X+c) Wv, c = fc(silu(z)) broadcast over tokens.
class ModulatedAttention {
 public:
  // with_ctx=false builds the unmodulated twin: same projections, no MLP.
  static ModulatedAttention create(int token_dim, int embed_dim, Rng& rng,
                                   bool with_ctx = true);

  bool has_ctx() const { return mlp_att.w.defined(); }

  // x [N,T,D]; z [N,embed_dim] or undefined for the baseline path.
  Tensor forward(const Tensor& x, const Tensor& z) const;
  // Context vector c = fc(silu(z)); exposed for identity tests.
  Tensor context(const Tensor& z) const;

  void register_base_params(ParamSet& ps, const std::string& prefix) const;
  void register_ctx_params(ParamSet& ps, const std::string& prefix) const;

  nn::Linear wq, wk, wv;  // no bias
  nn::Linear mlp_att;     // zero-init
  int token_dim = 0;
};

struct TemperatureProfile {
  bool infinite = false;     // Z constant: uniform softmax limit
  std::vector<float> t;      // [C, C'] flattened, valid when !infinite
  int c = 0, c_prime = 0;
};

// T_cc' = k^2 * tau_cc' / mean(Z - min Z) for one sample of the context.
TemperatureProfile temperature_profile(const ModulationContext& ctx, int k,
                                       int sample_index = 0);

}  // namespace coic
