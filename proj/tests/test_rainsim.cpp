// Rain synthesis determinism, composition identities, bank retrieval
// against a brute-force oracle, and dataset generation on disk.

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "coic/rainsim.hpp"

using namespace coic;
namespace fs = std::filesystem;

TEST_CASE("rain layer determinism and parameter validation") {
  RainParams p;
  Image a = synth_rain_layer(p, 48, 64, 1234);
  Image b = synth_rain_layer(p, 48, 64, 1234);
  CHECK(a.data == b.data);

  Image c = synth_rain_layer(p, 48, 64, 1235);
  CHECK(a.data != c.data);

  // zero density means an empty layer
  RainParams zero = p;
  zero.density = 0.0;
  Image e = synth_rain_layer(zero, 48, 48, 7);
  for (float v : e.data) CHECK(v == 0.f);

  // a layer with the default density actually contains streaks
  float mass = 0.f;
  for (float v : a.data) mass += v;
  CHECK(mass > 0.f);
  for (float v : a.data) {
    CHECK(v >= 0.f);
    CHECK(v <= 1.f);
  }

  CHECK_THROWS_AS(synth_rain_layer(p, 16, 48, 1), std::invalid_argument);
  RainParams bad = p;
  bad.angle = 50.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = p;
  bad.intensity = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = p;
  bad.density = -1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("compose and residual identities") {
  Image clean(32, 32, 3);
  Rng rng(5);
  for (auto& v : clean.data) v = static_cast<float>(rng.uniform(0.0, 1.0));
  RainParams p;
  p.density = 80.0;
  Image layer = synth_rain_layer(p, 32, 32, 99);

  ImagePair pair = compose_pair(clean, layer);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      for (int c = 0; c < 3; ++c) {
        float want = std::min(1.f, std::max(0.f, clean.at(y, x, c) + layer.at(y, x, 0)));
        CHECK(pair.rainy.at(y, x, c) == want);
      }

  // empty layer leaves the image untouched
  Image none(32, 32, 1);
  ImagePair id = compose_pair(clean, none);
  CHECK(id.rainy.data == clean.data);

  // residual is the channel mean of rainy - clean
  Image res = residual_layer(pair);
  REQUIRE(res.channels == 1);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      float want = 0.f;
      for (int c = 0; c < 3; ++c) want += pair.rainy.at(y, x, c) - clean.at(y, x, c);
      CHECK(res.at(y, x, 0) == doctest::Approx(want / 3.f).epsilon(1e-6));
    }

  Image wrong(16, 32, 1);
  CHECK_THROWS_AS(compose_pair(clean, wrong), std::invalid_argument);
}

TEST_CASE("most_dissimilar retrieval matches brute force") {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t n = 1 + rng.below(8);
    int h = 8, w = 8;
    RainBank bank;
    for (std::size_t i = 0; i < n; ++i) {
      Image e(h, w, 1);
      for (auto& v : e.data) v = static_cast<float>(rng.uniform(0.0, 1.0));
      bank.push_back(std::move(e));
    }
    Image q(h, w, 1);
    for (auto& v : q.data) v = static_cast<float>(rng.uniform(0.0, 1.0));

    double best = -1.0;
    std::size_t want = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double d = 0.0;
      for (std::size_t j = 0; j < q.size(); ++j)
        d += std::abs(q.data[j] - bank[i].data[j]);
      if (d > best) {
        best = d;
        want = i;
      }
    }
    CHECK(most_dissimilar_index(bank, q) == want);
    CHECK(&retrieve_most_dissimilar_rain(bank, q) == &bank[want]);
  }

  // exact ties break to the lowest index
  RainBank tie(3, Image(8, 8, 1, 0.5f));
  Image q(8, 8, 1, 0.f);
  CHECK(most_dissimilar_index(tie, q) == 0);

  CHECK_THROWS_AS(most_dissimilar_index(RainBank{}, q), std::invalid_argument);
  RainBank mismatched(1, Image(4, 8, 1));
  CHECK_THROWS_AS(most_dissimilar_index(mismatched, q), std::invalid_argument);
}

TEST_CASE("procedural texture is deterministic and in range") {
  Image a = procedural_texture(48, 48, 3, 11);
  Image b = procedural_texture(48, 48, 3, 11);
  CHECK(a.data == b.data);
  CHECK(procedural_texture(48, 48, 3, 12).data != a.data);
  for (float v : a.data) {
    CHECK(v >= 0.f);
    CHECK(v <= 1.f);
  }
  // not a constant image
  float mn = 1.f, mx = 0.f;
  for (float v : a.data) {
    mn = std::min(mn, v);
    mx = std::max(mx, v);
  }
  CHECK(mx - mn > 0.1f);
}

TEST_CASE("mixed dataset generation, manifests, and density spread") {
  fs::path dir = fs::temp_directory_path() / "coic_rainsim_test";
  fs::remove_all(dir);

  std::vector<RegimeSpec> regimes = {regime_preset("light"), regime_preset("heavy")};
  auto manifests = gen_mixed_dataset(regimes, 12, dir.string(), 77, 64);
  REQUIRE(manifests.size() == 2);

  std::vector<double> densities;
  for (const auto& m : manifests) {
    CHECK(m.pairs.size() == 12);
    auto loaded = load_manifest((fs::path(m.root) / "manifest.json").string());
    CHECK(loaded.dataset_id == m.dataset_id);
    CHECK(loaded.regime == m.regime);
    CHECK(loaded.pairs.size() == m.pairs.size());

    ImagePair p = load_pair(loaded, 0);
    CHECK(p.rainy.height == 64);
    CHECK(p.rainy.same_shape(p.clean));
    CHECK(p.dataset_id == m.dataset_id);
    // rain only ever adds light before clamping
    for (std::size_t i = 0; i < p.rainy.size(); ++i)
      CHECK(p.rainy.data[i] >= p.clean.data[i] - 1e-6f);
    densities.push_back(m.rain_params.density);
  }
  CHECK(densities[0] < densities[1]);  // light < heavy preset

  // regeneration with the same seed is byte-identical
  Image first = load_pair(manifests[0], 3).rainy;
  fs::remove_all(dir);
  auto again = gen_mixed_dataset(regimes, 12, dir.string(), 77, 64);
  CHECK(load_pair(again[0], 3).rainy.data == first.data);

  // the pooled per-pair residual masses are right-skewed, as expected from
  // the log-normal density draw
  std::vector<double> masses;
  for (const auto& m : again)
    for (std::size_t i = 0; i < m.pairs.size(); ++i) {
      Image r = residual_layer(load_pair(m, i));
      double s = 0.0;
      for (float v : r.data) s += v;
      masses.push_back(s);
    }
  double mean = 0, n = static_cast<double>(masses.size());
  for (double v : masses) mean += v / n;
  double m2 = 0, m3 = 0;
  for (double v : masses) {
    m2 += (v - mean) * (v - mean) / n;
    m3 += (v - mean) * (v - mean) * (v - mean) / n;
  }
  CHECK(m3 / std::pow(m2, 1.5) > 0.0);

  CHECK_THROWS_AS(regime_preset("monsoon"), std::invalid_argument);
  CHECK_THROWS_AS(load_manifest((dir / "nope.json").string()), std::runtime_error);
  fs::remove_all(dir);
}
