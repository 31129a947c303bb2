// Analysis diagnostics: awareness trivial cases, similarity matrix vs an
// exhaustive oracle, PCA geometry, and the temperature report.

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "coic/analysis.hpp"
#include "coic/ops.hpp"

using namespace coic;
namespace fs = std::filesystem;

namespace {

Image noise_image(int h, int w, int c, Rng& rng) {
  Image img(h, w, c);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform(0.0, 1.0));
  return img;
}

Encoder small_encoder(std::uint64_t seed) {
  Rng rng(seed);
  EncoderConfig cfg;
  cfg.base_channels = 4;
  cfg.n_downsamples = 2;
  cfg.embed_dim = 16;
  return Encoder::create(cfg, rng);
}

// Pooled-feature cosine, written independently of the library helpers.
double pooled_cos(const Encoder& enc, const Image& a, const Image& b) {
  Tensor fa = enc.extract_features(images_to_batch({a}));
  Tensor fb = enc.extract_features(images_to_batch({b}));
  Tensor pa = ops::gap(fa), pb = ops::gap(fb);
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    dot += static_cast<double>(pa.values()[i]) * pb.values()[i];
    na += static_cast<double>(pa.values()[i]) * pa.values()[i];
    nb += static_cast<double>(pb.values()[i]) * pb.values()[i];
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

TEST_CASE("awareness trivial cases") {
  Rng rng(3);
  Encoder enc = small_encoder(5);
  Image y = noise_image(32, 32, 3, rng);

  // x == y: background score is exactly the self-cosine
  ImagePair same;
  same.rainy = y;
  same.clean = y;
  AwarenessScores s = awareness(enc, same, CleanBank{y});
  CHECK(s.zeta_b == doctest::Approx(1.0).epsilon(1e-6));
  // bank = {y}: the background swap reproduces x itself
  CHECK(s.zeta_r == doctest::Approx(1.0).epsilon(1e-6));

  // a genuinely rainy pair scores below the trivial case
  RainParams p;
  p.density = 80.0;
  ImagePair pair = compose_pair(y, synth_rain_layer(p, 32, 32, 9));
  Image other = noise_image(32, 32, 3, rng);
  AwarenessScores s2 = awareness(enc, pair, CleanBank{other});
  CHECK(s2.zeta_b < 1.0);
  CHECK(s2.zeta_b == doctest::Approx(pooled_cos(enc, pair.rainy, pair.clean)).epsilon(1e-5));

  // zeta_r against the definition: x' = clamp01(b~ + (x - y))
  Image xprime(32, 32, 3);
  for (std::size_t i = 0; i < xprime.size(); ++i)
    xprime.data[i] = std::min(
        1.f, std::max(0.f, other.data[i] + pair.rainy.data[i] - pair.clean.data[i]));
  CHECK(s2.zeta_r == doctest::Approx(pooled_cos(enc, pair.rainy, xprime)).epsilon(1e-5));
}

TEST_CASE("similarity matrix equals exhaustive oracle at full sampling") {
  fs::path dir = fs::temp_directory_path() / "coic_analysis_simdata";
  fs::remove_all(dir);
  auto manifests = gen_mixed_dataset({regime_preset("light"), regime_preset("heavy")}, 4,
                                     dir.string(), 31, 32);
  Encoder enc = small_encoder(7);

  SimilarityMatrix sm = similarity_matrix(enc, manifests, 16, 99);
  REQUIRE(sm.ids.size() == 2);

  // oracle: embed every rainy image, average pairwise dot products (the
  // embeddings are unit-norm so dot = cosine)
  std::vector<std::vector<std::vector<float>>> z(2);
  for (std::size_t d = 0; d < 2; ++d)
    for (std::size_t i = 0; i < manifests[d].pairs.size(); ++i) {
      Tensor e = enc.embed(images_to_batch({load_pair(manifests[d], i).rainy}));
      z[d].push_back(e.values());
    }
  auto dot = [](const std::vector<float>& a, const std::vector<float>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
    return s;
  };
  for (std::size_t di = 0; di < 2; ++di)
    for (std::size_t dj = 0; dj < 2; ++dj) {
      double want = 0;
      int n = 0;
      if (di == dj) {
        for (std::size_t i = 0; i < z[di].size(); ++i)
          for (std::size_t j = i + 1; j < z[di].size(); ++j) {
            want += dot(z[di][i], z[di][j]);
            ++n;
          }
      } else {
        for (const auto& a : z[di])
          for (const auto& b : z[dj]) {
            want += dot(a, b);
            ++n;
          }
      }
      CHECK(sm.at(di, dj) == doctest::Approx(want / n).epsilon(1e-8));
    }
  CHECK(sm.at(0, 1) == doctest::Approx(sm.at(1, 0)).epsilon(1e-12));

  // same seed reproduces the matrix even at partial sampling
  SimilarityMatrix p1 = similarity_matrix(enc, manifests, 3, 42);
  SimilarityMatrix p2 = similarity_matrix(enc, manifests, 3, 42);
  CHECK(p1.m == p2.m);

  // a dataset with fewer than two sampled images cannot form pairs
  auto single = gen_mixed_dataset({regime_preset("light")}, 1,
                                  (dir / "single").string(), 8, 32);
  try {
    similarity_matrix(enc, single, 4, 1);
    FAIL("expected similarity_matrix to reject a one-image dataset");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find(single[0].dataset_id) != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("pca recovers planar structure") {
  Rng rng(13);
  // points in a 2-d affine subspace of R^6
  std::vector<double> u = {1, 0, 1, 0, 1, 0}, v = {0, 1, 0, -1, 0, 1};
  std::vector<std::vector<float>> emb;
  std::vector<std::array<double, 2>> ab;
  for (int i = 0; i < 12; ++i) {
    double a = rng.uniform(-2.0, 2.0), b = rng.uniform(-1.0, 1.0);
    ab.push_back({a, b});
    std::vector<float> e(6);
    for (int d = 0; d < 6; ++d)
      e[static_cast<std::size_t>(d)] =
          static_cast<float>(0.3 + a * u[static_cast<std::size_t>(d)] +
                             b * v[static_cast<std::size_t>(d)]);
    emb.push_back(e);
  }
  Pca2 p = pca_2d(emb);
  REQUIRE(p.points.size() == 12);
  REQUIRE(p.eigenvalues.size() == 6);

  // eigenvalues descending, only two nonzero for planar data
  for (std::size_t i = 1; i < 6; ++i) CHECK(p.eigenvalues[i] <= p.eigenvalues[i - 1] + 1e-9);
  CHECK(p.eigenvalues[1] > 1e-6);
  for (std::size_t i = 2; i < 6; ++i) CHECK(std::abs(p.eigenvalues[i]) < 1e-6);

  // eigenvalue sum equals the covariance trace
  std::vector<double> mean(6, 0.0);
  for (const auto& e : emb)
    for (int d = 0; d < 6; ++d) mean[static_cast<std::size_t>(d)] += e[static_cast<std::size_t>(d)] / 12.0;
  double trace = 0;
  for (const auto& e : emb)
    for (int d = 0; d < 6; ++d) {
      double c = e[static_cast<std::size_t>(d)] - mean[static_cast<std::size_t>(d)];
      trace += c * c / 12.0;
    }
  double esum = 0;
  for (double ev : p.eigenvalues) esum += ev;
  CHECK(esum == doctest::Approx(trace).epsilon(1e-8));

  // components orthonormal with the dominant loading positive
  for (int c = 0; c < 2; ++c) {
    double nrm = 0, mx = 0;
    for (double w : p.components[static_cast<std::size_t>(c)]) {
      nrm += w * w;
      if (std::abs(w) > std::abs(mx)) mx = w;
    }
    CHECK(nrm == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(mx > 0.0);
  }
  double ortho = 0;
  for (std::size_t d = 0; d < 6; ++d) ortho += p.components[0][d] * p.components[1][d];
  CHECK(std::abs(ortho) < 1e-8);

  // planar data: projection preserves pairwise distances
  for (std::size_t i = 0; i < emb.size(); ++i)
    for (std::size_t j = i + 1; j < emb.size(); ++j) {
      double d6 = 0;
      for (std::size_t d = 0; d < 6; ++d) {
        double c = static_cast<double>(emb[i][d]) - emb[j][d];
        d6 += c * c;
      }
      double d2 = 0;
      for (int c = 0; c < 2; ++c) {
        double w = p.points[i][static_cast<std::size_t>(c)] -
                   p.points[j][static_cast<std::size_t>(c)];
        d2 += w * w;
      }
      CHECK(std::sqrt(d2) == doctest::Approx(std::sqrt(d6)).epsilon(1e-5));
    }

  CHECK(project_2d(emb) == p.points);

  // degenerate input: identical embeddings collapse to the origin
  std::vector<std::vector<float>> same(5, std::vector<float>(4, 0.7f));
  Pca2 flat = pca_2d(same);
  for (const auto& pt : flat.points) {
    CHECK(std::abs(pt[0]) < 1e-9);
    CHECK(std::abs(pt[1]) < 1e-9);
  }
  for (double ev : flat.eigenvalues) CHECK(std::abs(ev) < 1e-12);
}

TEST_CASE("temperature report") {
  Rng rng(17);
  ToyUNet model = ToyUNet::create(4, 16, rng);
  Rng erng(18);
  EncoderConfig ec;
  ec.base_channels = 4;
  ec.n_downsamples = 2;
  ec.embed_dim = 16;
  Encoder enc = Encoder::create(ec, erng);

  std::vector<Image> probes;
  for (int i = 0; i < 3; ++i) probes.push_back(noise_image(32, 32, 3, rng));

  // zero-init context MLPs: Z is constant, every layer reports infinite T
  auto rows = temperature_report(model, enc, probes);
  REQUIRE(rows.size() == 11);
  CHECK(rows[0].layer == "conv_in");
  CHECK(rows.back().layer == "head");
  for (const auto& r : rows) {
    CHECK(r.infinite);
    CHECK(r.n == 0);
  }

  // live context MLPs give finite pooled temperatures with a sane interval
  ParamSet ctx = model.ctx_params();
  for (auto& [name, t] : ctx.items)
    for (auto& v : t.values()) v = static_cast<float>(rng.uniform(-0.2, 0.2));
  rows = temperature_report(model, enc, probes);
  for (const auto& r : rows) {
    CHECK_FALSE(r.infinite);
    CHECK(r.n > 0);
    CHECK(r.ci_lo <= r.mean_log_t);
    CHECK(r.mean_log_t <= r.ci_hi);
  }

  fs::path csv = fs::temp_directory_path() / "coic_temp_report.csv";
  write_temperature_csv(csv.string(), rows);
  std::ifstream in(csv);
  std::string header;
  std::getline(in, header);
  CHECK(header == "layer,infinite,n,mean_log_t,ci_lo,ci_hi");
  int count = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++count;
  CHECK(count == 11);
  fs::remove(csv);

  CHECK_THROWS(temperature_report(model, enc, {}));
  Rng trng(19);
  ToyUNet plain = ToyUNet::create(4, 16, trng, /*with_ctx=*/false);
  CHECK_THROWS(temperature_report(plain, enc, probes));
}
