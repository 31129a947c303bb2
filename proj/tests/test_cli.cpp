// End-to-end CLI checks through real subprocesses: exit codes, produced
// files, and a cross-check of eval output against the library metrics.

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "coic/rainsim.hpp"
#include "coic/trainer.hpp"

using namespace coic;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kCli = COIC_CLI_PATH;

int run(const std::string& args) {
  std::string cmd = kCli + " " + args + " >/dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

fs::path work() {
  static fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "coic_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

// Dataset shared by the pipeline cases; generated through the CLI itself.
fs::path data_dir() {
  static fs::path dir = [] {
    fs::path d = work() / "data";
    REQUIRE(run("gen-data --regimes light,heavy --n 3 --size 32 --seed 9 --out " +
                d.string()) == 0);
    return d;
  }();
  return dir;
}

std::string manifest_args() {
  std::string s;
  for (const auto& e : fs::directory_iterator(data_dir()))
    if (fs::exists(e.path() / "manifest.json"))
      s += " --data " + (e.path() / "manifest.json").string();
  return s;
}

std::string write_train_config(const std::string& name, const std::string& extra = "") {
  std::string datasets;
  for (const auto& e : fs::directory_iterator(data_dir()))
    if (fs::exists(e.path() / "manifest.json")) {
      if (!datasets.empty()) datasets += ",";
      datasets += (e.path() / "manifest.json").string();
    }
  fs::path cfg = work() / name;
  std::ofstream f(cfg);
  f << "iterations = 2\nbatch_size = 2\npatch_size = 16\nwidth = 4\n"
    << "embed_dim = 16\ntoken_dim = 16\nn_b = 2\nseed = 3\n"
    << "data = " << datasets << "\n"
    << extra;
  return cfg.string();
}

}  // namespace

TEST_CASE("gen-data produces datasets and provenance") {
  fs::path d = data_dir();
  int found = 0;
  for (const auto& e : fs::directory_iterator(d))
    if (fs::is_directory(e) && fs::exists(e.path() / "manifest.json")) {
      ++found;
      auto m = load_manifest((e.path() / "manifest.json").string());
      CHECK(m.pairs.size() == 3);
      CHECK(fs::exists(fs::path(m.root) / m.pairs[0].rain));
      CHECK(fs::exists(fs::path(m.root) / m.pairs[0].clean));
    }
  CHECK(found == 2);

  std::ifstream rj(d / "run.json");
  REQUIRE(rj.good());
  json j;
  rj >> j;
  CHECK(j.at("tool") == "coic");
  CHECK(j.at("subcommand") == "gen-data");
  CHECK(j.at("seed") == 9);
  CHECK(j.at("extra").at("datasets").size() == 2);
}

TEST_CASE("usage errors exit with code 2") {
  CHECK(run("train --config " + (work() / "missing.cfg").string()) == 2);
  CHECK(run("train") == 2);  // no config, no resume
  CHECK(run("no-such-subcommand") == 2);
  CHECK(run("eval" + manifest_args()) == 2);  // neither checkpoint nor identity

  std::string cfg = write_train_config("bad_override.cfg");
  CHECK(run("train --config " + cfg + " --set bogus_key=1") == 2);
  CHECK(run("train --config " + cfg + " --set lambda") == 2);  // no '='
  CHECK(run("sweep-lambda --values 0.1") == 2);                // missing config
}

TEST_CASE("identity eval matches the library metrics") {
  fs::path out = work() / "eval_identity";
  REQUIRE(run("eval --identity" + manifest_args() + " --out " + out.string()) == 0);

  std::vector<DatasetManifest> manifests;
  for (const auto& e : fs::directory_iterator(data_dir()))
    if (fs::exists(e.path() / "manifest.json"))
      manifests.push_back(load_manifest((e.path() / "manifest.json").string()));
  auto want = evaluate(nullptr, manifests);

  std::ifstream f(out / "eval.csv");
  REQUIRE(f.good());
  std::string line;
  std::getline(f, line);
  CHECK(line == "dataset,pairs,psnr_db,ssim,skipped");
  int rows = 0;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, pairs, psnr_s, ssim_s, skipped;
    std::getline(ss, id, ',');
    std::getline(ss, pairs, ',');
    std::getline(ss, psnr_s, ',');
    std::getline(ss, ssim_s, ',');
    std::getline(ss, skipped, ',');
    bool matched = false;
    for (const auto& w : want)
      if (w.dataset_id == id) {
        matched = true;
        CHECK(std::stoi(pairs) == w.n);
        CHECK(std::stod(psnr_s) == doctest::Approx(w.mean_psnr).epsilon(1e-4));
        CHECK(std::stod(ssim_s) == doctest::Approx(w.mean_ssim).epsilon(1e-4));
        CHECK(skipped == "0");
      }
    CHECK(matched);
    ++rows;
  }
  CHECK(rows == 2);
  CHECK(fs::exists(out / "run.json"));
}

TEST_CASE("eval over empty manifests is a runtime failure") {
  fs::path dir = work() / "empty_set";
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "manifest.json");
    f << R"({"dataset_id":"empty_0","regime":"light","seed":0,)"
      << R"("rain_params":{"angle":0,"length":12,"thickness":1,"density":30,"intensity":0.6},)"
      << R"("pairs":[]})";
  }
  CHECK(run("eval --identity --data " + (dir / "manifest.json").string()) == 1);
}

TEST_CASE("train, eval, analyze, temp-report, sweep pipeline") {
  std::string cfg = write_train_config("pipeline.cfg");
  fs::path tdir = work() / "train_out";
  REQUIRE(run("train --config " + cfg + " --out " + tdir.string()) == 0);
  CHECK(fs::exists(tdir / "loss.csv"));
  CHECK(fs::exists(tdir / "checkpoint.bin"));
  std::ifstream rj(tdir / "run.json");
  REQUIRE(rj.good());
  json j;
  rj >> j;
  CHECK(j.at("subcommand") == "train");
  CHECK(j.at("seed") == 3);
  CHECK(j.at("config_digest").get<std::string>().size() == 16);

  std::string ckpt = (tdir / "checkpoint.bin").string();

  fs::path edir = work() / "eval_ckpt";
  CHECK(run("eval --checkpoint " + ckpt + manifest_args() + " --out " + edir.string()) ==
        0);
  CHECK(fs::exists(edir / "eval.csv"));

  fs::path adir = work() / "analyze_out";
  CHECK(run("analyze --checkpoint " + ckpt + manifest_args() + " --n-per-dataset 3 --out " +
            adir.string()) == 0);
  CHECK(fs::exists(adir / "similarity.csv"));
  CHECK(fs::exists(adir / "awareness.csv"));
  CHECK(fs::exists(adir / "projection.csv"));

  fs::path pdir = work() / "temp_out";
  CHECK(run("temp-report --checkpoint " + ckpt + manifest_args() + " --n-probes 2 --out " +
            pdir.string()) == 0);
  CHECK(fs::exists(pdir / "temperature.csv"));

  // unmodulated checkpoints are rejected by temp-report (runtime error)
  std::string plain_cfg = write_train_config("plain.cfg", "modulated = false\n");
  fs::path t2 = work() / "train_plain";
  REQUIRE(run("train --config " + plain_cfg + " --out " + t2.string()) == 0);
  CHECK(run("temp-report --checkpoint " + (t2 / "checkpoint.bin").string() +
            manifest_args() + " --out " + (work() / "temp_plain").string()) == 1);

  // resume runs the remaining steps and exits cleanly
  std::string resume_cfg = write_train_config("resume.cfg", "iterations = 3\n");
  fs::path t3 = work() / "train_resume";
  REQUIRE(run("train --config " + resume_cfg + " --out " + t3.string()) == 0);
  CHECK(run("train --resume " + (t3 / "checkpoint.bin").string() + " --out " +
            (work() / "train_resumed").string()) == 0);

  fs::path sdir = work() / "sweep_out";
  std::string sweep_cfg = write_train_config(
      "sweep.cfg", "eval_data = " + (data_dir() / "light_0" / "manifest.json").string() + "\n");
  CHECK(run("sweep-lambda --config " + sweep_cfg + " --values 0 0.2 --out " +
            sdir.string()) == 0);
  std::ifstream sf(sdir / "sweep.csv");
  REQUIRE(sf.good());
  std::string line;
  std::getline(sf, line);
  CHECK(line == "lambda,psnr_db,ok,error");
  int rows = 0;
  while (std::getline(sf, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 2);

  fs::remove_all(work());
}
