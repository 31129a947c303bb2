#include "coic/models.hpp"

#include <stdexcept>

namespace coic {

namespace {

// Runs one modulated conv, logging the context when a collector is given.
Tensor run_conv(const ModulatedConv& layer, const Tensor& x, const Tensor& z,
                const char* name, CtxLog* log) {
  if (!z.defined() || !layer.has_ctx()) return layer.forward(x, nullptr);
  ModulationContext ctx = layer.gen_context(z, ops::gap(x));
  Tensor out = layer.forward(x, &ctx);
  if (log) log->emplace_back(name, std::move(ctx));
  return out;
}

Tensor act(const Tensor& x) { return ops::leaky_relu(x, 0.1f); }

}  // namespace

ToyUNet ToyUNet::create(int width, int embed_dim, Rng& rng, bool with_ctx) {
  ToyUNet m;
  m.width = width;
  m.embed_dim = embed_dim;
  int w = width, k = kKernel;
  auto conv = [&](int cin, int cout, int stride) {
    return ModulatedConv::create(cin, cout, k, stride, 1, embed_dim, rng, with_ctx);
  };
  m.conv_in = conv(3, w, 1);
  m.enc1 = conv(w, w, 1);
  m.down1 = conv(w, 2 * w, 2);
  m.enc2 = conv(2 * w, 2 * w, 1);
  m.down2 = conv(2 * w, 4 * w, 2);
  m.mid = conv(4 * w, 4 * w, 1);
  m.up1 = conv(4 * w, 2 * w, 1);
  m.dec2 = conv(4 * w, 2 * w, 1);
  m.up2 = conv(2 * w, w, 1);
  m.dec1 = conv(2 * w, w, 1);
  m.head = conv(w, 3, 1);
  return m;
}

Tensor ToyUNet::forward(const Tensor& x, const Tensor& z, CtxLog* log) const {
  const auto& xs = x.shape();
  if (xs.size() != 4 || xs[1] != 3)
    throw std::invalid_argument("ToyUNet: need x[N,3,H,W]");
  if (xs[2] % kDownsampleFactor != 0 || xs[3] % kDownsampleFactor != 0)
    throw std::invalid_argument("ToyUNet: dims must be divisible by 4");

  Tensor x0 = act(run_conv(conv_in, x, z, "conv_in", log));
  Tensor s1 = act(run_conv(enc1, x0, z, "enc1", log));
  Tensor d1 = act(run_conv(down1, s1, z, "down1", log));
  Tensor s2 = act(run_conv(enc2, d1, z, "enc2", log));
  Tensor d2 = act(run_conv(down2, s2, z, "down2", log));
  Tensor m = act(run_conv(mid, d2, z, "mid", log));
  Tensor u1 = act(run_conv(up1, ops::upsample2_nearest(m), z, "up1", log));
  Tensor y2 = act(run_conv(dec2, ops::concat_channels(u1, s2), z, "dec2", log));
  Tensor u2 = act(run_conv(up2, ops::upsample2_nearest(y2), z, "up2", log));
  Tensor y1 = act(run_conv(dec1, ops::concat_channels(u2, s1), z, "dec1", log));
  Tensor rain = run_conv(head, y1, z, "head", log);
  return ops::clamp01(ops::sub(x, rain));
}

ParamSet ToyUNet::base_params() const {
  ParamSet ps;
  conv_in.register_base_params(ps, "conv_in");
  enc1.register_base_params(ps, "enc1");
  down1.register_base_params(ps, "down1");
  enc2.register_base_params(ps, "enc2");
  down2.register_base_params(ps, "down2");
  mid.register_base_params(ps, "mid");
  up1.register_base_params(ps, "up1");
  dec2.register_base_params(ps, "dec2");
  up2.register_base_params(ps, "up2");
  dec1.register_base_params(ps, "dec1");
  head.register_base_params(ps, "head");
  return ps;
}

ParamSet ToyUNet::ctx_params() const {
  ParamSet ps;
  conv_in.register_ctx_params(ps, "conv_in");
  enc1.register_ctx_params(ps, "enc1");
  down1.register_ctx_params(ps, "down1");
  enc2.register_ctx_params(ps, "enc2");
  down2.register_ctx_params(ps, "down2");
  mid.register_ctx_params(ps, "mid");
  up1.register_ctx_params(ps, "up1");
  dec2.register_ctx_params(ps, "dec2");
  up2.register_ctx_params(ps, "up2");
  dec1.register_ctx_params(ps, "dec1");
  head.register_ctx_params(ps, "head");
  return ps;
}

ParamSet ToyUNet::params() const {
  ParamSet ps = base_params();
  ps.append(ctx_params(), "");
  return ps;
}

ToyFormer ToyFormer::create(int token_dim, int embed_dim, Rng& rng, bool with_ctx) {
  ToyFormer m;
  m.token_dim = token_dim;
  m.embed_dim = embed_dim;
  int in = kPatch * kPatch * 3;
  m.embed = nn::Linear::create(in, token_dim, rng);
  m.blocks.resize(2);
  for (auto& b : m.blocks) {
    b.attn = ModulatedAttention::create(token_dim, embed_dim, rng, with_ctx);
    b.ff1 = nn::Linear::create(token_dim, 2 * token_dim, rng);
    b.ff2 = nn::Linear::create(2 * token_dim, token_dim, rng);
  }
  m.out_head = nn::Linear::create(token_dim, in, rng);
  return m;
}

Tensor ToyFormer::forward(const Tensor& x, const Tensor& z) const {
  const auto& xs = x.shape();
  if (xs.size() != 4 || xs[1] != 3)
    throw std::invalid_argument("ToyFormer: need x[N,3,H,W]");
  if (xs[2] % kPatch != 0 || xs[3] % kPatch != 0)
    throw std::invalid_argument("ToyFormer: dims must be divisible by 8");

  Tensor t = embed.forward(ops::patchify(x, kPatch));
  for (const auto& b : blocks) {
    t = ops::add(t, b.attn.forward(t, z));
    t = ops::add(t, b.ff2.forward(ops::silu(b.ff1.forward(t))));
  }
  Tensor rain = ops::unpatchify(out_head.forward(t), kPatch, 3, xs[2], xs[3]);
  return ops::clamp01(ops::sub(x, rain));
}

ParamSet ToyFormer::base_params() const {
  ParamSet ps;
  embed.register_params(ps, "embed");
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    std::string p = "block" + std::to_string(i);
    blocks[i].attn.register_base_params(ps, p + ".attn");
    blocks[i].ff1.register_params(ps, p + ".ff1");
    blocks[i].ff2.register_params(ps, p + ".ff2");
  }
  out_head.register_params(ps, "out_head");
  return ps;
}

ParamSet ToyFormer::ctx_params() const {
  ParamSet ps;
  for (std::size_t i = 0; i < blocks.size(); ++i)
    blocks[i].attn.register_ctx_params(ps, "block" + std::to_string(i) + ".attn");
  return ps;
}

ParamSet ToyFormer::params() const {
  ParamSet ps = base_params();
  ps.append(ctx_params(), "");
  return ps;
}

}  // namespace coic
