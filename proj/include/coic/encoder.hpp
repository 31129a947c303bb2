#pragma once
// Feature extractor E, GAP, and subspace projector producing the unit-norm
// instance embedding, plus a momentum-updated twin and the augmentation used
// for contrastive keys.

#include "coic/image.hpp"
#include "coic/nn.hpp"
#include "coic/rainsim.hpp"

namespace coic {

// Image <-> tensor bridges (NCHW).
Tensor image_to_tensor(const Image& img);
Tensor images_to_batch(const std::vector<Image>& imgs);
Image tensor_to_image(const Tensor& t, int batch_index = 0);

struct EncoderConfig {
  int base_channels = 32;
  int n_downsamples = 3;
  float leaky_slope = 0.1f;
  int embed_dim = 128;
  float momentum = 0.999f;
};

class Encoder {
 public:
  static Encoder create(const EncoderConfig& cfg, Rng& rng);

  // x [N,3,H,W] with H,W divisible by 2^n_downsamples -> [N,C,h,w].
  Tensor extract_features(const Tensor& x) const;
  // gap -> projector -> l2 normalize; [N,C,h,w] -> [N,embed_dim].
  Tensor embed_from_features(const Tensor& features) const;
  Tensor embed(const Tensor& x) const;

  int out_channels() const;
  ParamSet params() const;
  // Structural copy with detached (non-trainable) parameters.
  Encoder momentum_twin() const;

  EncoderConfig config;

  nn::Conv2d conv_in;
  struct Stage {
    nn::Conv2d conv;  // 3x3, keeps channels
    nn::Conv2d down;  // 3x3 stride 2, doubles channels
  };
  std::vector<Stage> stages;
  nn::Linear proj_hidden, proj_out;
};

// Random crop-and-resize back plus horizontal flip, deterministic per seed.
// enabled=false returns x unchanged.
Image augment(const Image& x, std::uint64_t seed, bool enabled = true);
Image hflip(const Image& x);

}  // namespace coic
