#include "coic/contrastive.hpp"

namespace coic {

NegativeSet build_negatives(const ImagePair& pair, const RainBank& bank,
                            std::uint64_t seed, int n_b, double sigma_lo,
                            double sigma_hi) {
  NegativeSet ns;
  Image res = residual_layer(pair);
  const Image& r_tilde = retrieve_most_dissimilar_rain(bank, res);
  ns.rain_negative = compose_pair(pair.clean, r_tilde).rainy;
  Rng rng(seed, 0x6e656773ULL);
  for (int j = 0; j < n_b; ++j) {
    double sigma = rng.uniform(sigma_lo, sigma_hi);
    ns.sigmas.push_back(sigma);
    ns.detail_negatives.push_back(gaussian_blur(pair.clean, sigma));
  }
  return ns;
}

Tensor contrastive_loss(const ContrastiveBatch& batch) {
  const auto& shape = batch.anchor_features.shape();
  if (batch.key_features.shape() != shape ||
      batch.rain_negative_features.shape() != shape)
    throw std::invalid_argument("contrastive_loss: feature shape mismatch");
  for (const auto& f : batch.detail_negative_features)
    if (f.shape() != shape)
      throw std::invalid_argument("contrastive_loss: feature shape mismatch");

  int n = shape[0];
  Tensor anchor = ops::gap(batch.anchor_features);
  Tensor s_pos = ops::cosine_rows(anchor, ops::gap(batch.key_features));

  Tensor s_neg = ops::reshape(
      ops::cosine_rows(anchor, ops::gap(batch.rain_negative_features)), {n, 1});
  for (const auto& f : batch.detail_negative_features) {
    Tensor s = ops::reshape(ops::cosine_rows(anchor, ops::gap(f)), {n, 1});
    s_neg = ops::concat_cols(s_neg, s);
  }
  return ops::info_nce(s_pos, s_neg);
}

}  // namespace coic
