#pragma once
// Encoder diagnostics: rain-/detail-awareness scores, intra-/inter-dataset
// embedding similarity, 2D projection of embeddings, and layer-wise
// temperature statistics of a modulated CNN.

#include <array>

#include "coic/models.hpp"
#include "coic/trainer.hpp"

namespace coic {

struct AwarenessScores {
  double zeta_b = 0.0;  // cos(GAP(E(x)), GAP(E(y))): background reliance
  double zeta_r = 0.0;  // cos(GAP(E(x)), GAP(E(x'))), x' = clamp(b~ + (x-y))
};

AwarenessScores awareness(const Encoder& enc, const ImagePair& pair,
                          const CleanBank& clean_bank);

struct SimilarityMatrix {
  std::vector<std::string> ids;
  std::vector<double> m;  // n x n row-major; diagonal excludes self-pairs

  double at(std::size_t i, std::size_t j) const { return m[i * ids.size() + j]; }
};

// Samples up to n_per_dataset rainy images per dataset (without replacement,
// deterministic per seed) and averages pairwise embedding cosines.
SimilarityMatrix similarity_matrix(const Encoder& enc,
                                   const std::vector<DatasetManifest>& manifests,
                                   int n_per_dataset, std::uint64_t seed);

struct Pca2 {
  std::vector<std::array<double, 2>> points;
  std::vector<double> eigenvalues;          // all d, descending
  std::vector<std::vector<double>> components;  // 2 x d, sign-fixed
};

// PCA to 2 components; the largest-magnitude loading of each component is
// made positive so output is deterministic.
Pca2 pca_2d(const std::vector<std::vector<float>>& embeddings);
std::vector<std::array<double, 2>> project_2d(
    const std::vector<std::vector<float>>& embeddings);

struct LayerTemperature {
  std::string layer;
  bool infinite = false;  // every probe had constant Z
  double mean_log_t = 0.0;
  double ci_lo = 0.0, ci_hi = 0.0;  // 95% normal-approximation interval
  int n = 0;                        // finite log T samples pooled
};

// Forwards each probe through the modulated CNN and pools log T over
// channel pairs and probes, per layer.
std::vector<LayerTemperature> temperature_report(const ToyUNet& model,
                                                 const Encoder& enc,
                                                 const std::vector<Image>& probes);

void write_temperature_csv(const std::string& path,
                           const std::vector<LayerTemperature>& rows);

}  // namespace coic
