#include "coic/coim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace coic {

ModulatedConv ModulatedConv::create(int cin, int cout, int k, int stride, int pad,
                                    int embed_dim, Rng& rng, bool with_ctx) {
  ModulatedConv m;
  m.cin = cin;
  m.cout = cout;
  m.k = k;
  m.embed_dim = embed_dim;
  m.conv = nn::Conv2d::create(cin, cout, k, stride, pad, rng);
  // Always fork so the base-weight stream is identical for both twins.
  Rng mlp_rng = rng.fork(0x6d6c70);
  if (with_ctx) {
    int hidden = std::max(64, (cout + cin) / 2);
    m.mlp_hidden = nn::Linear::create(embed_dim + cin, hidden, mlp_rng);
    m.mlp_out = nn::Linear::create(hidden, cout + cin + k * k, mlp_rng, /*zero_init=*/true);
  }
  return m;
}

ModulationContext ModulatedConv::gen_context(const Tensor& z, const Tensor& pooled) const {
  if (!has_ctx()) throw std::logic_error("gen_context: layer has no context MLP");
  if (z.shape().size() != 2 || z.dim(1) != embed_dim)
    throw std::invalid_argument("gen_context: z must be [N, embed_dim]");
  if (pooled.shape().size() != 2 || pooled.dim(1) != cin || pooled.dim(0) != z.dim(0))
    throw std::invalid_argument("gen_context: pooled must be [N, cin]");
  int n = z.dim(0);

  Tensor h = ops::leaky_relu(mlp_hidden.forward(ops::concat_cols(z, pooled)), 0.1f);
  Tensor raw = mlp_out.forward(h);

  ModulationContext ctx;
  ctx.q = ops::slice_cols(raw, 0, cout);
  ctx.r = ops::slice_cols(raw, cout, cin);
  ctx.z = ops::slice_cols(raw, cout + cin, k * k);
  ctx.a = ops::adaptive_weight(ctx.q, ctx.r, ctx.z, k);

  ctx.tau = Tensor::zeros({n, cout, cin});
  for (int in = 0; in < n; ++in)
    for (int c = 0; c < cout; ++c)
      for (int cp = 0; cp < cin; ++cp) {
        float u = ctx.q.data()[in * cout + c] + ctx.r.data()[in * cin + cp];
        // 1/sigmoid(u) = 1 + e^{-u}
        ctx.tau.data()[(static_cast<std::size_t>(in) * cout + c) * cin + cp] =
            1.f + std::exp(-u);
      }
  return ctx;
}

Tensor ModulatedConv::forward(const Tensor& x, const ModulationContext* ctx) const {
  if (!ctx) return conv.forward(x);
  const auto& xs = x.shape();
  if (xs.size() != 4 || xs[1] != cin)
    throw std::invalid_argument("modulated forward: bad input shape");
  int n = xs[0];
  if (ctx->a.dim(0) != n)
    throw std::invalid_argument("modulated forward: context batch mismatch");

  // Absorb the batch into channels and run one grouped convolution with
  // per-sample weights A .* W.
  Tensor wps = ops::mul_weight_per_sample(ctx->a, conv.w);
  Tensor w_flat = ops::reshape(wps, {n * cout, cin, k, k});
  Tensor x_flat = ops::reshape(x, {1, n * cin, xs[2], xs[3]});
  Tensor b_rep = ops::tile_vec(conv.b, n);
  Tensor out = ops::conv2d(x_flat, w_flat, b_rep, conv.stride, conv.pad, n);
  const auto& os = out.shape();
  return ops::reshape(out, {n, cout, os[2], os[3]});
}

Tensor ModulatedConv::forward_with_embedding(const Tensor& x, const Tensor& z) const {
  ModulationContext ctx = gen_context(z, ops::gap(x));
  return forward(x, &ctx);
}

void ModulatedConv::register_base_params(ParamSet& ps, const std::string& prefix) const {
  conv.register_params(ps, prefix + ".conv");
}

void ModulatedConv::register_ctx_params(ParamSet& ps, const std::string& prefix) const {
  if (!has_ctx()) return;
  mlp_hidden.register_params(ps, prefix + ".mlp_hidden");
  mlp_out.register_params(ps, prefix + ".mlp_out");
}

ModulatedAttention ModulatedAttention::create(int token_dim, int embed_dim, Rng& rng,
                                              bool with_ctx) {
  ModulatedAttention a;
  a.token_dim = token_dim;
  a.wq = nn::Linear::create_no_bias(token_dim, token_dim, rng);
  a.wk = nn::Linear::create_no_bias(token_dim, token_dim, rng);
  a.wv = nn::Linear::create_no_bias(token_dim, token_dim, rng);
  // Always fork so the base-weight stream is identical for both twins.
  Rng mlp_rng = rng.fork(0x6d6c70);
  if (with_ctx)
    a.mlp_att = nn::Linear::create(embed_dim, token_dim, mlp_rng, /*zero_init=*/true);
  return a;
}

Tensor ModulatedAttention::context(const Tensor& z) const {
  if (!has_ctx()) throw std::logic_error("context: layer has no context MLP");
  return mlp_att.forward(ops::silu(z));
}

Tensor ModulatedAttention::forward(const Tensor& x, const Tensor& z) const {
  const auto& xs = x.shape();
  if (xs.size() != 3 || xs[2] != token_dim)
    throw std::invalid_argument("attention: need x[N,T,D]");
  Tensor shifted = x;
  if (z.defined() && has_ctx()) shifted = ops::add_token_bias(x, context(z));
  Tensor q = wq.forward(x);
  Tensor kk = wk.forward(shifted);
  Tensor v = wv.forward(shifted);
  Tensor scores = ops::scale(ops::bmm_nt(q, kk), 1.f / std::sqrt(static_cast<float>(token_dim)));
  return ops::bmm(ops::softmax_rows(scores), v);
}

void ModulatedAttention::register_base_params(ParamSet& ps, const std::string& prefix) const {
  wq.register_params(ps, prefix + ".wq");
  wk.register_params(ps, prefix + ".wk");
  wv.register_params(ps, prefix + ".wv");
}

void ModulatedAttention::register_ctx_params(ParamSet& ps, const std::string& prefix) const {
  if (!has_ctx()) return;
  mlp_att.register_params(ps, prefix + ".mlp_att");
}

TemperatureProfile temperature_profile(const ModulationContext& ctx, int k,
                                       int sample_index) {
  TemperatureProfile tp;
  int c = ctx.tau.dim(1), cp = ctx.tau.dim(2);
  tp.c = c;
  tp.c_prime = cp;
  int k2 = k * k;
  const float* zv = ctx.z.data() + static_cast<std::size_t>(sample_index) * k2;
  float zmin = zv[0], zmax = zv[0];
  for (int j = 1; j < k2; ++j) {
    zmin = std::min(zmin, zv[j]);
    zmax = std::max(zmax, zv[j]);
  }
  if (zmax - zmin < 1e-12f) {
    tp.infinite = true;
    return tp;
  }
  float mean_bar = 0.f;
  for (int j = 0; j < k2; ++j) mean_bar += zv[j] - zmin;
  mean_bar /= static_cast<float>(k2);
  tp.t.resize(static_cast<std::size_t>(c) * cp);
  const float* tau =
      ctx.tau.data() + static_cast<std::size_t>(sample_index) * c * cp;
  for (int i = 0; i < c * cp; ++i) tp.t[i] = k2 * tau[i] / mean_bar;
  return tp;
}

}  // namespace coic
