// Command-line entry point: data generation, training, evaluation, analysis.
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "coic/analysis.hpp"
#include "coic/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr const char* kVersion = "0.1.0";

int effective_workers(int requested) {
  const char* det = std::getenv("COIM_DETERMINISTIC");
  if (det && std::string(det) == "1") return 1;
  return requested;
}

void write_run_json(const std::string& out_dir, const std::string& subcommand,
                    std::uint64_t seed, const std::string& config_digest,
                    const json& extra = json::object()) {
  fs::create_directories(out_dir);
  json j;
  j["tool"] = "coic";
  j["version"] = kVersion;
  j["subcommand"] = subcommand;
  j["seed"] = seed;
  j["config_digest"] = config_digest;
  j["extra"] = extra;
  std::ofstream f(out_dir + "/run.json");
  if (!f) throw std::runtime_error("cannot write run.json in " + out_dir);
  f << j.dump(2) << "\n";
}

coic::TrainConfig load_config(const std::string& path,
                              const std::vector<std::string>& overrides,
                              bool seed_set, std::uint64_t seed) {
  if (!fs::exists(path)) throw UsageError("config file not found: " + path);
  coic::TrainConfig cfg = coic::parse_config_file(path);
  for (const auto& ov : overrides) {
    std::size_t eq = ov.find('=');
    if (eq == std::string::npos) throw UsageError("override must be key=value: " + ov);
    coic::apply_override(cfg, ov.substr(0, eq), ov.substr(eq + 1));
  }
  if (seed_set) cfg.seed = seed;
  cfg.validate();
  return cfg;
}

std::vector<coic::DatasetManifest> load_manifests(const std::vector<std::string>& paths) {
  std::vector<coic::DatasetManifest> ms;
  for (const auto& p : paths) ms.push_back(coic::load_manifest(p));
  return ms;
}

void print_eval_rows(const std::vector<coic::EvalRow>& rows) {
  std::printf("%-24s %6s %10s %8s\n", "dataset", "pairs", "psnr_db", "ssim");
  for (const auto& r : rows) {
    if (!r.missing.empty()) {
      std::printf("%-24s skipped, missing files:\n", r.dataset_id.c_str());
      for (const auto& m : r.missing) std::printf("  %s\n", m.c_str());
      continue;
    }
    std::printf("%-24s %6d %10.4f %8.5f\n", r.dataset_id.c_str(), r.n, r.mean_psnr,
                r.mean_ssim);
  }
}

void write_eval_csv(const std::string& path, const std::vector<coic::EvalRow>& rows) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "dataset,pairs,psnr_db,ssim,skipped\n";
  for (const auto& r : rows)
    f << r.dataset_id << "," << r.n << "," << r.mean_psnr << "," << r.mean_ssim << ","
      << (r.missing.empty() ? 0 : 1) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixed-regime deraining with instance-level modulation"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Synthesize paired rain datasets");
  std::string gen_regimes = "light,heavy";
  int gen_n = 16, gen_size = 96;
  std::uint64_t gen_seed = 1;
  std::string gen_out = "data", gen_clean_dir;
  gen->add_option("--regimes", gen_regimes, "Comma list: light,heavy,accumulated");
  gen->add_option("--n", gen_n, "Pairs per regime")->check(CLI::PositiveNumber);
  gen->add_option("--size", gen_size, "Square image size")->check(CLI::Range(32, 4096));
  gen->add_option("--seed", gen_seed, "Master seed");
  gen->add_option("--out", gen_out, "Output directory");
  gen->add_option("--clean-dir", gen_clean_dir, "Directory of clean PNG backgrounds");

  // train
  auto* train = app.add_subcommand("train", "Train a derainer on mixed manifests");
  std::string train_config, train_out = "runs/train", train_resume;
  std::uint64_t train_seed = 0;
  int train_workers = 1;
  std::vector<std::string> train_overrides;
  train->add_option("--config", train_config, "TrainConfig key=value file");
  train->add_option("--seed", train_seed, "Override config seed");
  train->add_option("--workers", train_workers, "Worker count (1 = deterministic)");
  train->add_option("--out", train_out, "Output directory");
  train->add_option("--set", train_overrides, "key=value config overrides");
  train->add_option("--resume", train_resume, "Checkpoint to resume from");

  // eval
  auto* ev = app.add_subcommand("eval", "PSNR/SSIM table over manifests");
  std::string ev_ckpt, ev_out;
  std::vector<std::string> ev_data;
  bool ev_identity = false;
  ev->add_option("--checkpoint", ev_ckpt, "Trained checkpoint");
  ev->add_option("--data", ev_data, "manifest.json paths")->required();
  ev->add_option("--out", ev_out, "Output directory (eval.csv, run.json)");
  ev->add_flag("--identity", ev_identity, "Evaluate the identity model");

  // analyze
  auto* an = app.add_subcommand("analyze", "Embedding similarity, projection, awareness");
  std::string an_ckpt, an_out = "runs/analyze";
  std::vector<std::string> an_data;
  int an_per_dataset = 16;
  std::uint64_t an_seed = 1;
  an->add_option("--checkpoint", an_ckpt, "Trained checkpoint")->required();
  an->add_option("--data", an_data, "manifest.json paths")->required();
  an->add_option("--n-per-dataset", an_per_dataset, "Images sampled per dataset");
  an->add_option("--seed", an_seed, "Sampling seed");
  an->add_option("--out", an_out, "Output directory");

  // sweep-lambda
  auto* sw = app.add_subcommand("sweep-lambda", "Train once per lambda, report PSNR");
  std::string sw_config, sw_out = "runs/sweep";
  std::vector<float> sw_values;
  std::uint64_t sw_seed = 0;
  std::vector<std::string> sw_overrides;
  sw->add_option("--config", sw_config, "TrainConfig key=value file");
  sw->add_option("--values", sw_values, "Lambda values")->required();
  sw->add_option("--seed", sw_seed, "Override config seed");
  sw->add_option("--set", sw_overrides, "key=value config overrides");
  sw->add_option("--out", sw_out, "Output directory");

  // temp-report
  auto* tr_cmd = app.add_subcommand("temp-report", "Layer-wise log T statistics");
  std::string tp_ckpt, tp_out = "runs/temp";
  std::vector<std::string> tp_data;
  int tp_probes = 8;
  tr_cmd->add_option("--checkpoint", tp_ckpt, "Trained checkpoint")->required();
  tr_cmd->add_option("--data", tp_data, "manifest.json paths for probe images")->required();
  tr_cmd->add_option("--n-probes", tp_probes, "Probe images per dataset");
  tr_cmd->add_option("--out", tp_out, "Output directory");

  try {
    app.parse(argc, argv);

    if (gen->parsed()) {
      std::vector<coic::RegimeSpec> regimes;
      std::stringstream ss(gen_regimes);
      std::string name;
      while (std::getline(ss, name, ','))
        if (!name.empty()) regimes.push_back(coic::regime_preset(name));
      if (regimes.empty()) throw UsageError("no regimes given");
      auto manifests = coic::gen_mixed_dataset(regimes, gen_n, gen_out, gen_seed,
                                               gen_size, gen_clean_dir);
      json extra;
      for (const auto& m : manifests) extra["datasets"].push_back(m.dataset_id);
      write_run_json(gen_out, "gen-data", gen_seed, "", extra);
      std::printf("wrote %zu datasets under %s\n", manifests.size(), gen_out.c_str());
      return 0;
    }

    if (train->parsed()) {
      (void)effective_workers(train_workers);
      std::unique_ptr<coic::Trainer> t;
      if (!train_resume.empty()) {
        t = std::make_unique<coic::Trainer>(coic::Trainer::resume(train_resume));
      } else {
        if (train_config.empty()) throw UsageError("train requires --config or --resume");
        auto cfg = load_config(train_config, train_overrides,
                               train->count("--seed") > 0, train_seed);
        if (cfg.data.empty()) throw UsageError("config must list data manifests");
        t = std::make_unique<coic::Trainer>(cfg, load_manifests(cfg.data));
      }
      fs::create_directories(train_out);
      write_run_json(train_out, "train", t->config().seed,
                     coic::config_digest(t->config()));
      int every = t->config().checkpoint_every;
      t->run([&](const coic::LossRow& r) {
        if (r.step % 100 == 0 || r.step == t->config().iterations)
          std::printf("step %d fidelity %.6f contrastive %.6f total %.6f\n", r.step,
                      static_cast<double>(r.fidelity),
                      static_cast<double>(r.contrastive),
                      static_cast<double>(r.total));
        if (every > 0 && r.step % every == 0)
          t->save_checkpoint(train_out + "/checkpoint.bin");
      });
      t->write_loss_csv(train_out + "/loss.csv");
      t->save_checkpoint(train_out + "/checkpoint.bin");
      if (!t->config().eval_data.empty()) {
        auto rows = coic::evaluate([&](const coic::Image& x) { return t->restore(x); },
                                   load_manifests(t->config().eval_data));
        print_eval_rows(rows);
        write_eval_csv(train_out + "/eval.csv", rows);
      }
      return 0;
    }

    if (ev->parsed()) {
      if (!ev_identity && ev_ckpt.empty())
        throw UsageError("eval requires --checkpoint or --identity");
      auto manifests = load_manifests(ev_data);
      std::size_t total = 0;
      for (const auto& m : manifests) total += m.pairs.size();
      if (total == 0) {
        std::fprintf(stderr, "eval: all manifests empty\n");
        return 1;
      }
      std::vector<coic::EvalRow> rows;
      std::uint64_t seed = 0;
      std::string digest;
      if (ev_identity) {
        rows = coic::evaluate(nullptr, manifests);
      } else {
        coic::Trainer t = coic::Trainer::resume(ev_ckpt);
        seed = t.config().seed;
        digest = coic::config_digest(t.config());
        rows = coic::evaluate([&](const coic::Image& x) { return t.restore(x); },
                              manifests);
      }
      print_eval_rows(rows);
      if (!ev_out.empty()) {
        fs::create_directories(ev_out);
        write_eval_csv(ev_out + "/eval.csv", rows);
        write_run_json(ev_out, "eval", seed, digest);
      }
      return 0;
    }

    if (an->parsed()) {
      coic::Trainer t = coic::Trainer::resume(an_ckpt);
      auto manifests = load_manifests(an_data);
      fs::create_directories(an_out);

      auto sim = coic::similarity_matrix(t.encoder(), manifests, an_per_dataset, an_seed);
      {
        std::ofstream f(an_out + "/similarity.csv");
        f << "dataset";
        for (const auto& id : sim.ids) f << "," << id;
        f << "\n";
        for (std::size_t i = 0; i < sim.ids.size(); ++i) {
          f << sim.ids[i];
          for (std::size_t j = 0; j < sim.ids.size(); ++j) f << "," << sim.at(i, j);
          f << "\n";
        }
      }

      std::vector<std::vector<float>> embs;
      std::vector<std::string> emb_ids;
      std::ofstream aw(an_out + "/awareness.csv");
      aw << "dataset,pair,zeta_b,zeta_r\n";
      for (const auto& m : manifests) {
        coic::CleanBank bank;
        std::vector<coic::ImagePair> pairs;
        for (std::size_t i = 0; i < m.pairs.size(); ++i) {
          pairs.push_back(coic::load_pair(m, i));
          bank.push_back(pairs.back().clean);
        }
        for (std::size_t i = 0; i < pairs.size(); ++i) {
          auto sc = coic::awareness(t.encoder(), pairs[i], bank);
          aw << m.dataset_id << "," << i << "," << sc.zeta_b << "," << sc.zeta_r << "\n";
          coic::Tensor z = t.encoder().embed(coic::images_to_batch({pairs[i].rainy}));
          embs.push_back(z.values());
          emb_ids.push_back(m.dataset_id);
        }
      }
      auto pts = coic::project_2d(embs);
      {
        std::ofstream f(an_out + "/projection.csv");
        f << "dataset,x,y\n";
        for (std::size_t i = 0; i < pts.size(); ++i)
          f << emb_ids[i] << "," << pts[i][0] << "," << pts[i][1] << "\n";
      }
      write_run_json(an_out, "analyze", an_seed, coic::config_digest(t.config()));
      std::printf("wrote similarity.csv, awareness.csv, projection.csv to %s\n",
                  an_out.c_str());
      return 0;
    }

    if (sw->parsed()) {
      if (sw_config.empty()) throw UsageError("sweep-lambda requires --config");
      auto cfg = load_config(sw_config, sw_overrides, sw->count("--seed") > 0, sw_seed);
      if (cfg.data.empty() || cfg.eval_data.empty())
        throw UsageError("config must list data and eval_data manifests");
      auto rows = coic::lambda_sweep(cfg, sw_values, load_manifests(cfg.data),
                                     load_manifests(cfg.eval_data));
      fs::create_directories(sw_out);
      std::ofstream f(sw_out + "/sweep.csv");
      f << "lambda,psnr_db,ok,error\n";
      std::printf("%-8s %10s  %s\n", "lambda", "psnr_db", "status");
      for (const auto& r : rows) {
        f << r.lambda << "," << r.mean_psnr << "," << (r.ok ? 1 : 0) << ","
          << r.error << "\n";
        std::printf("%-8g %10.4f  %s\n", static_cast<double>(r.lambda), r.mean_psnr,
                    r.ok ? "ok" : r.error.c_str());
      }
      write_run_json(sw_out, "sweep-lambda", cfg.seed, coic::config_digest(cfg));
      return 0;
    }

    if (tr_cmd->parsed()) {
      coic::Trainer t = coic::Trainer::resume(tp_ckpt);
      if (t.config().model != "unet" || !t.config().modulated)
        throw std::runtime_error(
            "temp-report requires a modulated CNN checkpoint (temperatures are "
            "conv-specific)");
      std::vector<coic::Image> probes;
      for (const auto& m : load_manifests(tp_data))
        for (std::size_t i = 0; i < m.pairs.size() && i < static_cast<std::size_t>(tp_probes); ++i)
          probes.push_back(coic::load_pair(m, i).rainy);
      auto rows = coic::temperature_report(t.unet(), t.encoder(), probes);
      fs::create_directories(tp_out);
      coic::write_temperature_csv(tp_out + "/temperature.csv", rows);
      write_run_json(tp_out, "temp-report", t.config().seed,
                     coic::config_digest(t.config()));
      for (const auto& r : rows) {
        if (r.infinite)
          std::printf("%-10s T infinite (constant Z)\n", r.layer.c_str());
        else
          std::printf("%-10s mean log T %.4f  [%.4f, %.4f]  n=%d\n", r.layer.c_str(),
                      r.mean_log_t, r.ci_lo, r.ci_hi, r.n);
      }
      return 0;
    }

    return 2;
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const coic::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
