#include "coic/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace coic {

Tensor image_to_tensor(const Image& img) { return images_to_batch({img}); }

Tensor images_to_batch(const std::vector<Image>& imgs) {
  if (imgs.empty()) throw std::invalid_argument("images_to_batch: empty batch");
  int h = imgs[0].height, w = imgs[0].width, c = imgs[0].channels;
  Tensor t = Tensor::zeros({static_cast<int>(imgs.size()), c, h, w});
  float* d = t.data();
  for (std::size_t n = 0; n < imgs.size(); ++n) {
    const Image& img = imgs[n];
    if (img.height != h || img.width != w || img.channels != c)
      throw std::invalid_argument("images_to_batch: inconsistent shapes");
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          d[((n * c + ci) * static_cast<std::size_t>(h) + y) * w + x] = img.at(y, x, ci);
  }
  return t;
}

Image tensor_to_image(const Tensor& t, int batch_index) {
  const auto& s = t.shape();
  if (s.size() != 4) throw std::invalid_argument("tensor_to_image: need NCHW");
  int c = s[1], h = s[2], w = s[3];
  Image img(h, w, c);
  const float* d = t.data();
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        img.at(y, x, ci) =
            d[((static_cast<std::size_t>(batch_index) * c + ci) * h + y) * w + x];
  return img;
}

Encoder Encoder::create(const EncoderConfig& cfg, Rng& rng) {
  Encoder e;
  e.config = cfg;
  e.conv_in = nn::Conv2d::create(3, cfg.base_channels, 3, 1, 1, rng);
  int c = cfg.base_channels;
  for (int i = 0; i < cfg.n_downsamples; ++i) {
    Stage st;
    st.conv = nn::Conv2d::create(c, c, 3, 1, 1, rng);
    st.down = nn::Conv2d::create(c, 2 * c, 3, 2, 1, rng);
    e.stages.push_back(st);
    c *= 2;
  }
  e.proj_hidden = nn::Linear::create(c, c, rng);
  e.proj_out = nn::Linear::create(c, cfg.embed_dim, rng);
  return e;
}

int Encoder::out_channels() const {
  return config.base_channels << config.n_downsamples;
}

Tensor Encoder::extract_features(const Tensor& x) const {
  const auto& s = x.shape();
  if (s.size() != 4 || s[1] != 3) throw std::invalid_argument("extract_features: need [N,3,H,W]");
  int div = 1 << config.n_downsamples;
  if (s[2] % div != 0 || s[3] % div != 0)
    throw std::invalid_argument("extract_features: dims must divide 2^n_downsamples");
  Tensor f = ops::leaky_relu(conv_in.forward(x), config.leaky_slope);
  for (const Stage& st : stages) {
    f = ops::leaky_relu(st.conv.forward(f), config.leaky_slope);
    f = ops::leaky_relu(st.down.forward(f), config.leaky_slope);
  }
  return f;
}

Tensor Encoder::embed_from_features(const Tensor& features) const {
  Tensor pooled = ops::gap(features);
  Tensor h = ops::leaky_relu(proj_hidden.forward(pooled), config.leaky_slope);
  return ops::l2_normalize_rows(proj_out.forward(h));
}

Tensor Encoder::embed(const Tensor& x) const {
  return embed_from_features(extract_features(x));
}

ParamSet Encoder::params() const {
  ParamSet ps;
  conv_in.register_params(ps, "conv_in");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    stages[i].conv.register_params(ps, "stage" + std::to_string(i) + ".conv");
    stages[i].down.register_params(ps, "stage" + std::to_string(i) + ".down");
  }
  proj_hidden.register_params(ps, "proj_hidden");
  proj_out.register_params(ps, "proj_out");
  return ps;
}

Encoder Encoder::momentum_twin() const {
  Encoder t = *this;
  t.conv_in.w = conv_in.w.detach();
  t.conv_in.b = conv_in.b.detach();
  for (std::size_t i = 0; i < stages.size(); ++i) {
    t.stages[i].conv.w = stages[i].conv.w.detach();
    t.stages[i].conv.b = stages[i].conv.b.detach();
    t.stages[i].down.w = stages[i].down.w.detach();
    t.stages[i].down.b = stages[i].down.b.detach();
  }
  t.proj_hidden.w = proj_hidden.w.detach();
  t.proj_hidden.b = proj_hidden.b.detach();
  t.proj_out.w = proj_out.w.detach();
  t.proj_out.b = proj_out.b.detach();
  return t;
}

Image hflip(const Image& x) {
  Image out(x.height, x.width, x.channels);
  for (int y = 0; y < x.height; ++y)
    for (int px = 0; px < x.width; ++px)
      for (int c = 0; c < x.channels; ++c)
        out.at(y, px, c) = x.at(y, x.width - 1 - px, c);
  return out;
}

namespace {

// Bilinear resize to the given shape.
Image resize_bilinear(const Image& src, int oh, int ow) {
  Image out(oh, ow, src.channels);
  double sy = static_cast<double>(src.height) / oh;
  double sx = static_cast<double>(src.width) / ow;
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double fy = (y + 0.5) * sy - 0.5;
      double fx = (x + 0.5) * sx - 0.5;
      int iy = static_cast<int>(std::floor(fy)), ix = static_cast<int>(std::floor(fx));
      double ty = fy - iy, tx = fx - ix;
      int y0 = std::clamp(iy, 0, src.height - 1), y1 = std::clamp(iy + 1, 0, src.height - 1);
      int x0 = std::clamp(ix, 0, src.width - 1), x1 = std::clamp(ix + 1, 0, src.width - 1);
      for (int c = 0; c < src.channels; ++c) {
        double v = src.at(y0, x0, c) * (1 - ty) * (1 - tx) + src.at(y0, x1, c) * (1 - ty) * tx +
                   src.at(y1, x0, c) * ty * (1 - tx) + src.at(y1, x1, c) * ty * tx;
        out.at(y, x, c) = static_cast<float>(v);
      }
    }
  return out;
}

}  // namespace

Image augment(const Image& x, std::uint64_t seed, bool enabled) {
  if (!enabled) return x;
  Rng rng(seed, 0x61756721ULL);
  // Crop between 70% and 100% of each side, then resize back.
  double frac = rng.uniform(0.7, 1.0);
  int ch = std::max(8, static_cast<int>(std::lround(x.height * frac)));
  int cw = std::max(8, static_cast<int>(std::lround(x.width * frac)));
  int oy = static_cast<int>(rng.below(static_cast<std::uint32_t>(x.height - ch + 1)));
  int ox = static_cast<int>(rng.below(static_cast<std::uint32_t>(x.width - cw + 1)));
  Image crop(ch, cw, x.channels);
  for (int y = 0; y < ch; ++y)
    for (int px = 0; px < cw; ++px)
      for (int c = 0; c < x.channels; ++c) crop.at(y, px, c) = x.at(oy + y, ox + px, c);
  Image out = resize_bilinear(crop, x.height, x.width);
  if (rng.uniform() < 0.5) out = hflip(out);
  return out;
}

}  // namespace coic
