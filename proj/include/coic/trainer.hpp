#pragma once
// Training loop over mixed multi-regime manifests: batch assembly, per-batch
// rain banks, loss composition (fidelity + lambda * contrastive), momentum
// updates, checkpoints, evaluation, and lambda sweeps.

#include <functional>
#include <memory>
#include <optional>

#include "coic/checkpoint.hpp"
#include "coic/config.hpp"
#include "coic/contrastive.hpp"
#include "coic/models.hpp"

namespace coic {

struct LossRow {
  int step = 0;
  float fidelity = 0.f;
  float contrastive = 0.f;
  float total = 0.f;
};

class Trainer {
 public:
  // Loads every pair of every manifest into memory.
  Trainer(TrainConfig cfg, const std::vector<DatasetManifest>& manifests);

  void step();
  // Runs until cfg.iterations, invoking on_step (if set) after each step.
  void run(const std::function<void(const LossRow&)>& on_step = {});

  int current_step() const { return step_; }
  const std::vector<LossRow>& history() const { return history_; }
  void write_loss_csv(const std::string& path) const;

  void save_checkpoint(const std::string& path) const;
  // Rebuilds config and data from the checkpoint's embedded config.
  static Trainer resume(const std::string& path);

  // z undefined on the unmodulated path; whole images must fit model strides.
  Image restore(const Image& rainy) const;

  const TrainConfig& config() const { return cfg_; }
  Encoder& encoder() { return enc_; }
  Encoder& momentum_encoder() { return enc_m_; }
  ToyUNet& unet();  // throws unless model=unet
  float lr_at(int step) const;  // cosine decay

 private:
  Tensor model_forward(const Tensor& x, const Tensor& z, CtxLog* log = nullptr) const;
  ParamSet trainable_params() const;

  TrainConfig cfg_;
  struct Regime {
    std::string dataset_id;
    std::vector<ImagePair> pairs;
  };
  std::vector<Regime> regimes_;
  std::size_t total_pairs_ = 0;

  std::optional<ToyUNet> unet_;
  std::optional<ToyFormer> former_;
  Encoder enc_, enc_m_;
  std::unique_ptr<nn::Adam> opt_;
  Rng rng_;
  int step_ = 0;
  std::vector<LossRow> history_;

  friend struct TrainerTestAccess;
};

struct EvalRow {
  std::string dataset_id;
  int n = 0;  // pairs evaluated
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  std::vector<std::string> missing;  // files listed, dataset skipped if any
};

// restore=nullptr evaluates the identity model (output = input).
std::vector<EvalRow> evaluate(const std::function<Image(const Image&)>& restore,
                              const std::vector<DatasetManifest>& manifests);

struct SweepRow {
  float lambda = 0.f;
  double mean_psnr = 0.0;
  bool ok = false;
  std::string error;
};

// One smoke training per lambda value, same seed, evaluated on eval manifests.
// Per-cell failures are recorded and the sweep continues.
std::vector<SweepRow> lambda_sweep(TrainConfig base, const std::vector<float>& values,
                                   const std::vector<DatasetManifest>& train_sets,
                                   const std::vector<DatasetManifest>& eval_sets);

}  // namespace coic
