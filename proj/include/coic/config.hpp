#pragma once
// Key/value training configuration: file parsing, CLI overrides, validation.
// Unknown keys are rejected so typos fail loudly (usage error, exit 2).

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace coic {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  float lambda = 0.2f;
  int batch_size = 4;
  int patch_size = 24;
  float lr = 2e-4f;
  int iterations = 200;
  std::uint64_t seed = 1;
  int n_b = 4;
  float sigma_low = 0.3f;
  float sigma_high = 1.5f;
  float momentum_m = 0.999f;
  std::string fidelity = "l1";  // l1 | mse
  std::string model = "unet";   // unet | former
  bool modulated = true;
  bool sample_proportional = false;  // default: uniform over regimes
  int width = 16;
  int token_dim = 64;
  int embed_dim = 128;
  int checkpoint_every = 0;  // 0: final checkpoint only
  bool augment_keys = true;
  std::vector<std::string> data;       // manifest.json paths
  std::vector<std::string> eval_data;  // manifest.json paths

  void validate() const;  // throws ConfigError
};

// Parses `key = value` lines; '#' starts a comment; blank lines skipped.
TrainConfig parse_config_file(const std::string& path);
TrainConfig parse_config_text(const std::string& text);
// Single override, same key set as the file format.
void apply_override(TrainConfig& cfg, const std::string& key, const std::string& value);

// Stable digest of the effective config, for provenance records.
std::string config_digest(const TrainConfig& cfg);
std::string config_to_text(const TrainConfig& cfg);

}  // namespace coic
