#include "coic/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace coic {

Trainer::Trainer(TrainConfig cfg, const std::vector<DatasetManifest>& manifests)
    : cfg_(std::move(cfg)), rng_(cfg_.seed, 0x747261696eULL) {
  cfg_.validate();
  if (manifests.empty()) throw std::invalid_argument("trainer: no manifests");
  for (const auto& m : manifests) {
    Regime r;
    r.dataset_id = m.dataset_id;
    for (std::size_t i = 0; i < m.pairs.size(); ++i) r.pairs.push_back(load_pair(m, i));
    if (r.pairs.empty())
      throw std::invalid_argument("trainer: empty manifest " + m.dataset_id);
    for (const auto& p : r.pairs)
      if (p.rainy.height < cfg_.patch_size || p.rainy.width < cfg_.patch_size)
        throw std::invalid_argument("trainer: image smaller than patch_size in " +
                                    m.dataset_id);
    total_pairs_ += r.pairs.size();
    regimes_.push_back(std::move(r));
  }

  Rng init_rng(cfg_.seed, 0x696e6974ULL);
  if (cfg_.model == "unet")
    unet_ = ToyUNet::create(cfg_.width, cfg_.embed_dim, init_rng, cfg_.modulated);
  else
    former_ = ToyFormer::create(cfg_.token_dim, cfg_.embed_dim, init_rng, cfg_.modulated);

  EncoderConfig ec;
  ec.embed_dim = cfg_.embed_dim;
  ec.momentum = cfg_.momentum_m;
  enc_ = Encoder::create(ec, init_rng);
  enc_m_ = enc_.momentum_twin();

  opt_ = std::make_unique<nn::Adam>(trainable_params());
}

ToyUNet& Trainer::unet() {
  if (!unet_) throw std::logic_error("trainer: model is not a unet");
  return *unet_;
}

ParamSet Trainer::trainable_params() const {
  ParamSet ps;
  if (unet_) ps.append(unet_->params(), "model.");
  else ps.append(former_->params(), "model.");
  ps.append(enc_.params(), "encoder.");
  return ps;
}

float Trainer::lr_at(int step) const {
  double frac = static_cast<double>(step) / static_cast<double>(cfg_.iterations);
  return cfg_.lr * 0.5f * (1.f + static_cast<float>(std::cos(3.141592653589793 * frac)));
}

Tensor Trainer::model_forward(const Tensor& x, const Tensor& z, CtxLog* log) const {
  if (unet_) return unet_->forward(x, z, log);
  return former_->forward(x, z);
}

void Trainer::step() {
  float lr = lr_at(step_);

  // Batch assembly: regime (uniform or size-proportional), pair, patch.
  std::vector<Image> xs, ys;
  std::vector<std::pair<std::size_t, std::size_t>> picked;
  for (int i = 0; i < cfg_.batch_size; ++i) {
    std::size_t ridx = 0, pidx = 0;
    if (cfg_.sample_proportional) {
      std::size_t g = rng_.below(static_cast<std::uint32_t>(total_pairs_));
      while (g >= regimes_[ridx].pairs.size()) g -= regimes_[ridx++].pairs.size();
      pidx = g;
    } else {
      ridx = rng_.below(static_cast<std::uint32_t>(regimes_.size()));
      pidx = rng_.below(static_cast<std::uint32_t>(regimes_[ridx].pairs.size()));
    }
    const ImagePair& pr = regimes_[ridx].pairs[pidx];
    int p = cfg_.patch_size;
    int y0 = static_cast<int>(rng_.below(static_cast<std::uint32_t>(pr.rainy.height - p + 1)));
    int x0 = static_cast<int>(rng_.below(static_cast<std::uint32_t>(pr.rainy.width - p + 1)));
    xs.push_back(crop(pr.rainy, y0, x0, p, p));
    ys.push_back(crop(pr.clean, y0, x0, p, p));
    picked.emplace_back(ridx, pidx);
  }

  Tensor x_b = images_to_batch(xs);
  Tensor y_b = images_to_batch(ys);

  Tensor feats = enc_.extract_features(x_b);
  Tensor z = enc_.embed_from_features(feats);
  Tensor out = model_forward(x_b, cfg_.modulated ? z : Tensor());
  Tensor fid = cfg_.fidelity == "l1" ? ops::l1_loss(out, y_b) : ops::mse_loss(out, y_b);

  Tensor contra, total;
  if (cfg_.lambda > 0.f) {
    // Per-batch rain bank from patch residuals; negatives per Eq. 3 / Eq. 6.
    RainBank bank;
    std::vector<ImagePair> patch_pairs(static_cast<std::size_t>(cfg_.batch_size));
    for (int i = 0; i < cfg_.batch_size; ++i) {
      patch_pairs[i] = ImagePair{xs[i], ys[i], regimes_[picked[i].first].dataset_id};
      bank.push_back(residual_layer(patch_pairs[i]));
    }
    std::vector<Image> keys;
    std::vector<Image> rain_negs;
    std::vector<std::vector<Image>> details(static_cast<std::size_t>(cfg_.n_b));
    for (int i = 0; i < cfg_.batch_size; ++i) {
      std::uint64_t s1 = (static_cast<std::uint64_t>(rng_.next_u32()) << 32) | rng_.next_u32();
      NegativeSet ns = build_negatives(patch_pairs[i], bank, s1, cfg_.n_b,
                                       cfg_.sigma_low, cfg_.sigma_high);
      rain_negs.push_back(std::move(ns.rain_negative));
      for (int j = 0; j < cfg_.n_b; ++j)
        details[j].push_back(std::move(ns.detail_negatives[j]));
      std::uint64_t s2 = (static_cast<std::uint64_t>(rng_.next_u32()) << 32) | rng_.next_u32();
      keys.push_back(augment(xs[i], s2, cfg_.augment_keys));
    }
    ContrastiveBatch cb;
    cb.anchor_features = feats;
    cb.key_features = enc_m_.extract_features(images_to_batch(keys));
    cb.rain_negative_features = enc_m_.extract_features(images_to_batch(rain_negs));
    for (int j = 0; j < cfg_.n_b; ++j)
      cb.detail_negative_features.push_back(
          enc_m_.extract_features(images_to_batch(details[j])));
    contra = contrastive_loss(cb);
    total = ops::add(fid, ops::scale(contra, cfg_.lambda));
  } else {
    total = fid;
  }

  float total_v = total.item();
  float fid_v = fid.item();
  float contra_v = contra.defined() ? contra.item() : 0.f;
  if (!std::isfinite(total_v)) {
    std::fprintf(stderr,
                 "NaN/Inf loss at step %d: fidelity=%g contrastive=%g lr=%g\n",
                 step_ + 1, static_cast<double>(fid_v), static_cast<double>(contra_v),
                 static_cast<double>(lr));
    std::fprintf(stderr, "batch samples (regime, pair):");
    for (auto [r, p] : picked)
      std::fprintf(stderr, " (%s, %zu)", regimes_[r].dataset_id.c_str(), p);
    std::fprintf(stderr, "\n");
    throw std::runtime_error("trainer: non-finite loss, aborting");
  }

  opt_->zero_grad();
  total.backward();
  opt_->step(lr);

  ParamSet twin = enc_m_.params();
  momentum_update(enc_.params(), twin, cfg_.momentum_m);

  ++step_;
  history_.push_back(LossRow{step_, fid_v, contra_v, total_v});
}

void Trainer::run(const std::function<void(const LossRow&)>& on_step) {
  while (step_ < cfg_.iterations) {
    step();
    if (on_step) on_step(history_.back());
  }
}

void Trainer::write_loss_csv(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write loss csv: " + path);
  f << "step,fidelity,contrastive,total\n";
  char buf[128];
  for (const auto& r : history_) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g\n", r.step,
                  static_cast<double>(r.fidelity), static_cast<double>(r.contrastive),
                  static_cast<double>(r.total));
    f << buf;
  }
}

Image Trainer::restore(const Image& rainy) const {
  Tensor x = images_to_batch({rainy});
  Tensor z;
  if (cfg_.modulated) z = enc_.embed(x);
  Tensor out = model_forward(x, z);
  return tensor_to_image(out, 0);
}

void Trainer::save_checkpoint(const std::string& path) const {
  Checkpoint ck;
  if (unet_) ck.put_params(unet_->params(), "model.");
  else ck.put_params(former_->params(), "model.");
  ck.put_params(enc_.params(), "encoder.");
  ck.put_params(enc_m_.params(), "momentum.");
  auto& ps = opt_->params();
  for (std::size_t i = 0; i < ps.items.size(); ++i) {
    ck.put_raw("opt.m." + ps.items[i].first, ps.items[i].second.shape(),
               opt_->moment1()[i]);
    ck.put_raw("opt.v." + ps.items[i].first, ps.items[i].second.shape(),
               opt_->moment2()[i]);
  }
  ck.meta["step"] = step_;
  ck.meta["opt_step"] = opt_->step_count();
  ck.meta["rng_state"] = rng_.state();
  ck.meta["rng_inc"] = rng_.inc();
  ck.meta["config"] = config_to_text(cfg_);
  ck.meta["config_digest"] = config_digest(cfg_);
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& r : history_)
    hist.push_back({r.step, r.fidelity, r.contrastive, r.total});
  ck.meta["history"] = hist;
  ck.save(path);
}

Trainer Trainer::resume(const std::string& path) {
  Checkpoint ck = Checkpoint::load(path);
  TrainConfig cfg = parse_config_text(ck.meta.at("config").get<std::string>());
  std::vector<DatasetManifest> manifests;
  for (const auto& p : cfg.data) manifests.push_back(load_manifest(p));

  Trainer tr(cfg, manifests);
  if (tr.unet_) {
    ParamSet mp = tr.unet_->params();
    ck.load_params(mp, "model.");
  } else {
    ParamSet mp = tr.former_->params();
    ck.load_params(mp, "model.");
  }
  ParamSet ep = tr.enc_.params();
  ck.load_params(ep, "encoder.");
  ParamSet tp = tr.enc_m_.params();
  ck.load_params(tp, "momentum.");
  auto& ps = tr.opt_->params();
  for (std::size_t i = 0; i < ps.items.size(); ++i) {
    tr.opt_->moment1()[i] = ck.get("opt.m." + ps.items[i].first).data;
    tr.opt_->moment2()[i] = ck.get("opt.v." + ps.items[i].first).data;
  }
  tr.opt_->step_count() = ck.meta.at("opt_step").get<std::int64_t>();
  tr.rng_.restore(ck.meta.at("rng_state").get<std::uint64_t>(),
                  ck.meta.at("rng_inc").get<std::uint64_t>());
  tr.step_ = ck.meta.at("step").get<int>();
  tr.history_.clear();
  for (const auto& r : ck.meta.at("history"))
    tr.history_.push_back(LossRow{r.at(0).get<int>(), r.at(1).get<float>(),
                                  r.at(2).get<float>(), r.at(3).get<float>()});
  return tr;
}

std::vector<EvalRow> evaluate(const std::function<Image(const Image&)>& restore,
                              const std::vector<DatasetManifest>& manifests) {
  std::vector<EvalRow> rows;
  for (const auto& m : manifests) {
    EvalRow row;
    row.dataset_id = m.dataset_id;
    for (const auto& e : m.pairs) {
      for (const std::string& rel : {e.rain, e.clean}) {
        std::string full = m.root.empty() ? rel : m.root + "/" + rel;
        if (!std::filesystem::exists(full)) row.missing.push_back(full);
      }
    }
    if (!row.missing.empty()) {
      rows.push_back(std::move(row));
      continue;
    }
    double ps = 0.0, ss = 0.0;
    for (std::size_t i = 0; i < m.pairs.size(); ++i) {
      ImagePair pr = load_pair(m, i);
      Image out = restore ? restore(pr.rainy) : pr.rainy;
      ps += psnr(out, pr.clean);
      ss += ssim(out, pr.clean);
    }
    row.n = static_cast<int>(m.pairs.size());
    if (row.n > 0) {
      row.mean_psnr = ps / row.n;
      row.mean_ssim = ss / row.n;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<SweepRow> lambda_sweep(TrainConfig base, const std::vector<float>& values,
                                   const std::vector<DatasetManifest>& train_sets,
                                   const std::vector<DatasetManifest>& eval_sets) {
  if (values.empty()) throw std::invalid_argument("lambda_sweep: no values");
  std::vector<SweepRow> rows;
  for (float v : values) {
    SweepRow row;
    row.lambda = v;
    try {
      TrainConfig cfg = base;
      cfg.lambda = v;
      Trainer tr(cfg, train_sets);
      tr.run();
      auto evals = evaluate([&tr](const Image& x) { return tr.restore(x); }, eval_sets);
      double acc = 0.0;
      int n = 0;
      for (const auto& e : evals)
        if (e.n > 0) {
          acc += e.mean_psnr;
          ++n;
        }
      if (n == 0) throw std::runtime_error("no evaluable datasets");
      row.mean_psnr = acc / n;
      row.ok = true;
    } catch (const std::exception& ex) {
      row.error = ex.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace coic
