#pragma once
// Procedural rain layers and mixed multi-regime paired datasets, plus the
// per-batch rain / clean banks used by contrastive learning and analysis.

#include <string>
#include <vector>

#include "coic/image.hpp"
#include "coic/rng.hpp"

namespace coic {

struct RainParams {
  double angle = 0.0;      // degrees, [-45, 45]
  double length = 12.0;    // pixels, [4, 32]
  double thickness = 1.0;  // pixels, [1, 3]
  double density = 30.0;   // streaks per 10^4 pixels
  double intensity = 0.6;  // (0, 1]

  void validate() const;
};

struct ImagePair {
  Image rainy;
  Image clean;
  std::string dataset_id;
};

struct DatasetManifest {
  std::string dataset_id;
  std::string regime;  // light | heavy | accumulated
  std::uint64_t seed = 0;
  RainParams rain_params;
  struct Entry {
    std::string rain;
    std::string clean;
  };
  std::vector<Entry> pairs;
  std::string root;  // directory holding manifest.json; paths are relative to it
};

using RainBank = std::vector<Image>;   // 1-channel rain layers
using CleanBank = std::vector<Image>;  // clean images

// Deterministic motion-blurred streak field; 1-channel, zero background.
Image synth_rain_layer(const RainParams& params, int height, int width,
                       std::uint64_t seed);

// x = clamp(y + r, 0, 1); r broadcast across channels.
ImagePair compose_pair(const Image& clean, const Image& layer);

// Per-pixel mean over channels of (x - y); the rain residual used for banks.
Image residual_layer(const ImagePair& pair);

// Self-contained clean source: multi-scale value-noise texture.
Image procedural_texture(int height, int width, int channels, std::uint64_t seed);

struct RegimeSpec {
  std::string name;  // light | heavy | accumulated
  RainParams params;
};

RegimeSpec regime_preset(const std::string& name);

// Writes <out_dir>/<dataset_id>/{rain,clean}/NNN.png + manifest.json per
// regime. Per-pair densities are drawn log-normal around the regime density
// so the pooled histogram is long-tailed. clean_dir, when nonempty, supplies
// PNG backgrounds instead of procedural textures.
std::vector<DatasetManifest> gen_mixed_dataset(const std::vector<RegimeSpec>& regimes,
                                               int n_per_regime,
                                               const std::string& out_dir,
                                               std::uint64_t seed, int image_size = 96,
                                               const std::string& clean_dir = "");

DatasetManifest load_manifest(const std::string& manifest_path);
ImagePair load_pair(const DatasetManifest& m, std::size_t index);

// argmax over the bank of ||query - entry||_1; ties break to lowest index.
std::size_t most_dissimilar_index(const std::vector<Image>& bank, const Image& query);
const Image& retrieve_most_dissimilar_rain(const RainBank& bank, const Image& residual);
const Image& retrieve_most_dissimilar_background(const CleanBank& bank, const Image& y);

}  // namespace coic
