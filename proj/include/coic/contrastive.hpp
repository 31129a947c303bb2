#pragma once
// Rain-/detail-aware negative sets and the contrastive loss constraining
// the embedding space.

#include "coic/encoder.hpp"
#include "coic/rainsim.hpp"

namespace coic {

struct NegativeSet {
  Image rain_negative;                  // clean background + most dissimilar rain
  std::vector<Image> detail_negatives;  // blurred copies of the clean image
  std::vector<double> sigmas;
};

// Rain negative from the bank's most dissimilar layer; n_b blurred copies of
// y with i.i.d. uniform sigmas in [sigma_lo, sigma_hi]. Deterministic per seed.
NegativeSet build_negatives(const ImagePair& pair, const RainBank& bank,
                            std::uint64_t seed, int n_b = 4, double sigma_lo = 0.3,
                            double sigma_hi = 1.5);

struct ContrastiveBatch {
  Tensor anchor_features;                        // F, online extractor
  Tensor key_features;                           // F_k, momentum extractor
  Tensor rain_negative_features;                 // momentum extractor
  std::vector<Tensor> detail_negative_features;  // momentum extractor
};

// -log( e^{s(F,Fk)} / (e^{s(F,Fk)} + e^{s(F,F~)} + sum_j e^{s(F,Fb_j)}) ),
// mean over the batch; s is cosine similarity between GAP-pooled channel
// vectors.
Tensor contrastive_loss(const ContrastiveBatch& batch);

}  // namespace coic
