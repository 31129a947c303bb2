#include "coic/rainsim.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace coic {

void RainParams::validate() const {
  if (angle < -45.0 || angle > 45.0) throw std::invalid_argument("rain angle out of [-45,45]");
  if (length < 4.0 || length > 32.0) throw std::invalid_argument("rain length out of [4,32]");
  if (thickness < 1.0 || thickness > 3.0)
    throw std::invalid_argument("rain thickness out of [1,3]");
  if (density < 0.0) throw std::invalid_argument("rain density must be nonnegative");
  if (intensity <= 0.0 || intensity > 1.0)
    throw std::invalid_argument("rain intensity out of (0,1]");
}

Image synth_rain_layer(const RainParams& params, int height, int width,
                       std::uint64_t seed) {
  if (height < 32 || width < 32)
    throw std::invalid_argument("synth_rain_layer: shape must be at least 32x32");
  Image layer(height, width, 1);
  int n_streaks = static_cast<int>(
      std::lround(params.density * height * width / 1e4));
  if (n_streaks == 0) return layer;

  Rng rng(seed, 0x7261696eULL);
  double rad = params.angle * 3.14159265358979323846 / 180.0;
  // Streak direction: mostly vertical fall tilted by the angle.
  double dy = std::cos(rad), dx = std::sin(rad);
  double nx = -dy, ny = dx;  // unit normal, for thickness
  int th_steps = static_cast<int>(params.thickness);

  for (int s = 0; s < n_streaks; ++s) {
    double cy = rng.uniform(0.0, height);
    double cx = rng.uniform(0.0, width);
    double len = params.length * rng.uniform(0.8, 1.2);
    float base = static_cast<float>(params.intensity * rng.uniform(0.6, 1.0));
    // Stamp along the motion path; intensity tapers toward the streak ends.
    for (double t = -len / 2; t <= len / 2; t += 0.5) {
      float w = static_cast<float>(1.0 - std::abs(t) / (len / 2 + 1.0));
      for (int it = 0; it < th_steps; ++it) {
        double off = it - (th_steps - 1) / 2.0;
        int py = static_cast<int>(std::lround(cy + t * dy + off * ny));
        int px = static_cast<int>(std::lround(cx + t * dx + off * nx));
        if (py < 0 || py >= height || px < 0 || px >= width) continue;
        float& v = layer.at(py, px, 0);
        v = std::max(v, base * w);
      }
    }
  }
  layer.clamp01();
  return layer;
}

ImagePair compose_pair(const Image& clean, const Image& layer) {
  if (clean.height != layer.height || clean.width != layer.width)
    throw std::invalid_argument("compose_pair: spatial dims mismatch");
  if (layer.channels != 1) throw std::invalid_argument("compose_pair: layer must be 1-channel");
  ImagePair p;
  p.clean = clean;
  p.rainy = clean;
  for (int y = 0; y < clean.height; ++y)
    for (int x = 0; x < clean.width; ++x) {
      float r = layer.at(y, x, 0);
      for (int c = 0; c < clean.channels; ++c)
        p.rainy.at(y, x, c) = std::min(1.f, std::max(0.f, clean.at(y, x, c) + r));
    }
  return p;
}

Image residual_layer(const ImagePair& pair) {
  Image res(pair.rainy.height, pair.rainy.width, 1);
  for (int y = 0; y < res.height; ++y)
    for (int x = 0; x < res.width; ++x) {
      float acc = 0.f;
      for (int c = 0; c < pair.rainy.channels; ++c)
        acc += pair.rainy.at(y, x, c) - pair.clean.at(y, x, c);
      res.at(y, x, 0) = acc / pair.rainy.channels;
    }
  return res;
}

Image procedural_texture(int height, int width, int channels, std::uint64_t seed) {
  Image img(height, width, channels);
  Rng rng(seed, 0x74657874ULL);
  // Sum of bilinearly upsampled random grids, coarse to fine.
  for (int c = 0; c < channels; ++c) {
    double amp = 0.5;
    double bias = 0.5;
    for (int cell = 32; cell >= 4; cell /= 2) {
      int gh = height / cell + 2, gw = width / cell + 2;
      std::vector<float> grid(static_cast<std::size_t>(gh) * gw);
      for (auto& g : grid) g = static_cast<float>(rng.uniform(-1.0, 1.0));
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
          double fy = static_cast<double>(y) / cell, fx = static_cast<double>(x) / cell;
          int iy = static_cast<int>(fy), ix = static_cast<int>(fx);
          double ty = fy - iy, tx = fx - ix;
          float v00 = grid[iy * gw + ix], v01 = grid[iy * gw + ix + 1];
          float v10 = grid[(iy + 1) * gw + ix], v11 = grid[(iy + 1) * gw + ix + 1];
          double v = v00 * (1 - ty) * (1 - tx) + v01 * (1 - ty) * tx + v10 * ty * (1 - tx) +
                     v11 * ty * tx;
          img.at(y, x, c) += static_cast<float>(amp * v);
        }
      amp *= 0.55;
    }
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) img.at(y, x, c) += static_cast<float>(bias);
  }
  img.clamp01();
  return img;
}

RegimeSpec regime_preset(const std::string& name) {
  RegimeSpec r;
  r.name = name;
  if (name == "light") {
    r.params = {-10.0, 10.0, 1.0, 25.0, 0.45};
  } else if (name == "heavy") {
    r.params = {15.0, 18.0, 2.0, 110.0, 0.75};
  } else if (name == "accumulated") {
    r.params = {30.0, 26.0, 2.0, 60.0, 0.55};
  } else {
    throw std::invalid_argument("unknown regime: " + name);
  }
  return r;
}

namespace {

json params_to_json(const RainParams& p) {
  return json{{"angle", p.angle},
              {"length", p.length},
              {"thickness", p.thickness},
              {"density", p.density},
              {"intensity", p.intensity}};
}

RainParams params_from_json(const json& j) {
  RainParams p;
  p.angle = j.at("angle").get<double>();
  p.length = j.at("length").get<double>();
  p.thickness = j.at("thickness").get<double>();
  p.density = j.at("density").get<double>();
  p.intensity = j.at("intensity").get<double>();
  return p;
}

}  // namespace

std::vector<DatasetManifest> gen_mixed_dataset(const std::vector<RegimeSpec>& regimes,
                                               int n_per_regime, const std::string& out_dir,
                                               std::uint64_t seed, int image_size,
                                               const std::string& clean_dir) {
  std::vector<std::string> clean_files;
  if (!clean_dir.empty()) {
    for (const auto& e : fs::directory_iterator(clean_dir))
      if (e.path().extension() == ".png") clean_files.push_back(e.path().string());
    std::sort(clean_files.begin(), clean_files.end());
    if (clean_files.empty())
      throw std::runtime_error("gen_mixed_dataset: no .png files in " + clean_dir);
  }

  std::vector<DatasetManifest> manifests;
  Rng master(seed, 0x64617461ULL);
  for (std::size_t ri = 0; ri < regimes.size(); ++ri) {
    const RegimeSpec& spec = regimes[ri];
    spec.params.validate();
    DatasetManifest m;
    m.dataset_id = spec.name + "_" + std::to_string(ri);
    m.regime = spec.name;
    m.seed = seed;
    m.rain_params = spec.params;
    fs::path root = fs::path(out_dir) / m.dataset_id;
    m.root = root.string();

    Rng regime_rng = master.fork(ri + 1);
    if (n_per_regime > 0) {
      std::error_code ec;
      fs::create_directories(root / "rain", ec);
      fs::create_directories(root / "clean", ec);
      if (ec) throw std::runtime_error("gen_mixed_dataset: cannot create " + root.string());
    }

    for (int i = 0; i < n_per_regime; ++i) {
      Rng pair_rng = regime_rng.fork(i + 1);
      Image clean;
      if (clean_files.empty()) {
        clean = procedural_texture(image_size, image_size, 3, pair_rng.next_u32());
      } else {
        clean = read_png(clean_files[pair_rng.below(
            static_cast<std::uint32_t>(clean_files.size()))]);
      }
      RainParams p = spec.params;
      // Log-normal density spread gives the pooled histogram its long tail.
      p.density = pair_rng.lognormal(std::log(spec.params.density), 0.45);
      Image layer = synth_rain_layer(p, clean.height, clean.width, pair_rng.next_u32());
      ImagePair pair = compose_pair(clean, layer);

      char name[32];
      std::snprintf(name, sizeof(name), "%04d.png", i);
      write_png((root / "rain" / name).string(), pair.rainy);
      write_png((root / "clean" / name).string(), pair.clean);
      m.pairs.push_back({std::string("rain/") + name, std::string("clean/") + name});
    }

    if (n_per_regime > 0) {
      json j{{"dataset_id", m.dataset_id},
             {"regime", m.regime},
             {"seed", m.seed},
             {"rain_params", params_to_json(m.rain_params)}};
      j["pairs"] = json::array();
      for (const auto& e : m.pairs) j["pairs"].push_back({{"rain", e.rain}, {"clean", e.clean}});
      std::ofstream out(root / "manifest.json");
      if (!out) throw std::runtime_error("gen_mixed_dataset: cannot write manifest in " + root.string());
      out << j.dump(2) << "\n";
    }
    manifests.push_back(std::move(m));
  }
  return manifests;
}

DatasetManifest load_manifest(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("load_manifest: cannot open " + manifest_path);
  json j;
  in >> j;
  DatasetManifest m;
  m.dataset_id = j.at("dataset_id").get<std::string>();
  m.regime = j.at("regime").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.rain_params = params_from_json(j.at("rain_params"));
  for (const auto& e : j.at("pairs"))
    m.pairs.push_back({e.at("rain").get<std::string>(), e.at("clean").get<std::string>()});
  m.root = fs::path(manifest_path).parent_path().string();
  return m;
}

ImagePair load_pair(const DatasetManifest& m, std::size_t index) {
  const auto& e = m.pairs.at(index);
  ImagePair p;
  p.rainy = read_png((fs::path(m.root) / e.rain).string());
  p.clean = read_png((fs::path(m.root) / e.clean).string());
  p.dataset_id = m.dataset_id;
  if (!p.rainy.same_shape(p.clean))
    throw std::runtime_error("load_pair: rain/clean shape mismatch in " + m.dataset_id);
  return p;
}

std::size_t most_dissimilar_index(const std::vector<Image>& bank, const Image& query) {
  if (bank.empty()) throw std::invalid_argument("most_dissimilar_index: empty bank");
  double best = -1.0;
  std::size_t best_i = 0;
  for (std::size_t i = 0; i < bank.size(); ++i) {
    const Image& e = bank[i];
    if (!e.same_shape(query))
      throw std::invalid_argument("most_dissimilar_index: bank entry shape mismatch");
    double d = 0.0;
    for (std::size_t j = 0; j < e.size(); ++j) d += std::abs(query.data[j] - e.data[j]);
    if (d > best) {
      best = d;
      best_i = i;
    }
  }
  return best_i;
}

const Image& retrieve_most_dissimilar_rain(const RainBank& bank, const Image& residual) {
  return bank[most_dissimilar_index(bank, residual)];
}

const Image& retrieve_most_dissimilar_background(const CleanBank& bank, const Image& y) {
  return bank[most_dissimilar_index(bank, y)];
}

}  // namespace coic
