#include "coic/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace coic {

namespace {

// Cosine between GAP-pooled feature maps of two single images.
double pooled_cosine(const Encoder& enc, const Image& a, const Image& b) {
  Tensor fa = enc.extract_features(images_to_batch({a}));
  Tensor fb = enc.extract_features(images_to_batch({b}));
  Tensor c = ops::cosine_rows(ops::gap(fa), ops::gap(fb));
  return static_cast<double>(c.data()[0]);
}

}  // namespace

AwarenessScores awareness(const Encoder& enc, const ImagePair& pair,
                          const CleanBank& clean_bank) {
  if (clean_bank.empty()) throw std::invalid_argument("awareness: empty clean bank");
  AwarenessScores s;
  s.zeta_b = pooled_cosine(enc, pair.rainy, pair.clean);

  const Image& b = retrieve_most_dissimilar_background(clean_bank, pair.clean);
  if (!b.same_shape(pair.rainy))
    throw std::invalid_argument("awareness: bank image shape mismatch");
  Image xp = b;
  for (std::size_t i = 0; i < xp.data.size(); ++i)
    xp.data[i] += pair.rainy.data[i] - pair.clean.data[i];
  xp.clamp01();
  s.zeta_r = pooled_cosine(enc, pair.rainy, xp);
  return s;
}

SimilarityMatrix similarity_matrix(const Encoder& enc,
                                   const std::vector<DatasetManifest>& manifests,
                                   int n_per_dataset, std::uint64_t seed) {
  SimilarityMatrix out;
  std::vector<std::vector<std::vector<float>>> embs;  // per dataset, per image
  Rng master(seed, 0x73696d6dULL);
  for (const auto& m : manifests) {
    Rng r = master.fork(embs.size() + 1);
    std::vector<std::size_t> idx(m.pairs.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(n_per_dataset),
                                             idx.size());
    // Partial Fisher-Yates; prefix is the sample.
    for (std::size_t i = 0; i < take; ++i) {
      std::size_t j = i + r.below(static_cast<std::uint32_t>(idx.size() - i));
      std::swap(idx[i], idx[j]);
    }
    if (take < 2)
      throw std::invalid_argument("similarity_matrix: dataset too small: " +
                                  m.dataset_id);
    std::vector<std::vector<float>> ds;
    for (std::size_t i = 0; i < take; ++i) {
      ImagePair pr = load_pair(m, idx[i]);
      Tensor z = enc.embed(images_to_batch({pr.rainy}));
      ds.emplace_back(z.values());
    }
    embs.push_back(std::move(ds));
    out.ids.push_back(m.dataset_id);
  }

  std::size_t n = embs.size();
  out.m.assign(n * n, 0.0);
  auto dot = [](const std::vector<float>& a, const std::vector<float>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
      s += static_cast<double>(a[i]) * b[i];
    return s;
  };
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a; b < n; ++b) {
      double acc = 0.0;
      std::size_t cnt = 0;
      if (a == b) {
        for (std::size_t i = 0; i < embs[a].size(); ++i)
          for (std::size_t j = i + 1; j < embs[a].size(); ++j) {
            acc += dot(embs[a][i], embs[a][j]);
            ++cnt;
          }
      } else {
        for (const auto& u : embs[a])
          for (const auto& v : embs[b]) {
            acc += dot(u, v);
            ++cnt;
          }
      }
      out.m[a * n + b] = out.m[b * n + a] = acc / static_cast<double>(cnt);
    }
  return out;
}

namespace {

// Cyclic Jacobi eigendecomposition of a symmetric matrix; returns
// eigenvalues descending with matching eigenvectors as rows of `vecs`.
void jacobi_eigen(std::vector<double>& a, int d, std::vector<double>& eig,
                  std::vector<double>& vecs) {
  vecs.assign(static_cast<std::size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i) vecs[static_cast<std::size_t>(i) * d + i] = 1.0;
  auto A = [&a, d](int i, int j) -> double& { return a[static_cast<std::size_t>(i) * d + j]; };
  auto V = [&vecs, d](int i, int j) -> double& {
    return vecs[static_cast<std::size_t>(i) * d + j];
  };
  for (int sweep = 0; sweep < 60; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < d; ++i)
      for (int j = i + 1; j < d; ++j) off += A(i, j) * A(i, j);
    if (off < 1e-22) break;
    for (int p = 0; p < d; ++p)
      for (int q = p + 1; q < d; ++q) {
        double apq = A(p, q);
        if (std::abs(apq) < 1e-300) continue;
        double theta = (A(q, q) - A(p, p)) / (2.0 * apq);
        double t = (theta >= 0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (int k = 0; k < d; ++k) {
          double akp = A(k, p), akq = A(k, q);
          A(k, p) = c * akp - s * akq;
          A(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < d; ++k) {
          double apk = A(p, k), aqk = A(q, k);
          A(p, k) = c * apk - s * aqk;
          A(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < d; ++k) {
          double vkp = V(p, k), vkq = V(q, k);
          V(p, k) = c * vkp - s * vkq;
          V(q, k) = s * vkp + c * vkq;
        }
      }
  }
  std::vector<int> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int x, int y) { return A(x, x) > A(y, y); });
  eig.resize(d);
  std::vector<double> sorted(vecs.size());
  for (int r = 0; r < d; ++r) {
    eig[r] = A(order[r], order[r]);
    for (int k = 0; k < d; ++k)
      sorted[static_cast<std::size_t>(r) * d + k] = V(order[r], k);
  }
  vecs = std::move(sorted);
}

}  // namespace

Pca2 pca_2d(const std::vector<std::vector<float>>& embeddings) {
  if (embeddings.size() < 3)
    throw std::invalid_argument("pca_2d: need at least 3 embeddings");
  std::size_t n = embeddings.size();
  int d = static_cast<int>(embeddings[0].size());
  for (const auto& e : embeddings)
    if (static_cast<int>(e.size()) != d)
      throw std::invalid_argument("pca_2d: ragged embedding dimensions");

  std::vector<double> mean(d, 0.0);
  for (const auto& e : embeddings)
    for (int k = 0; k < d; ++k) mean[k] += e[k];
  for (int k = 0; k < d; ++k) mean[k] /= static_cast<double>(n);

  std::vector<double> cov(static_cast<std::size_t>(d) * d, 0.0);
  for (const auto& e : embeddings)
    for (int i = 0; i < d; ++i) {
      double di = e[i] - mean[i];
      for (int j = i; j < d; ++j)
        cov[static_cast<std::size_t>(i) * d + j] += di * (e[j] - mean[j]);
    }
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j) {
      cov[static_cast<std::size_t>(i) * d + j] /= static_cast<double>(n);
      cov[static_cast<std::size_t>(j) * d + i] = cov[static_cast<std::size_t>(i) * d + j];
    }

  Pca2 out;
  std::vector<double> vecs;
  jacobi_eigen(cov, d, out.eigenvalues, vecs);

  out.components.assign(2, std::vector<double>(d, 0.0));
  for (int c = 0; c < 2; ++c) {
    for (int k = 0; k < d; ++k) out.components[c][k] = vecs[static_cast<std::size_t>(c) * d + k];
    int arg = 0;
    for (int k = 1; k < d; ++k)
      if (std::abs(out.components[c][k]) > std::abs(out.components[c][arg])) arg = k;
    if (out.components[c][arg] < 0)
      for (int k = 0; k < d; ++k) out.components[c][k] = -out.components[c][k];
  }

  out.points.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < 2; ++c) {
      double s = 0.0;
      for (int k = 0; k < d; ++k)
        s += (embeddings[i][k] - mean[k]) * out.components[c][k];
      out.points[i][c] = s;
    }
  return out;
}

std::vector<std::array<double, 2>> project_2d(
    const std::vector<std::vector<float>>& embeddings) {
  return pca_2d(embeddings).points;
}

std::vector<LayerTemperature> temperature_report(const ToyUNet& model,
                                                 const Encoder& enc,
                                                 const std::vector<Image>& probes) {
  if (!model.has_ctx())
    throw std::invalid_argument("temperature_report: model has no modulation");
  if (probes.empty()) throw std::invalid_argument("temperature_report: no probes");

  std::vector<std::string> layer_order;
  std::vector<std::vector<double>> log_t;   // per layer, pooled over probes
  std::vector<int> infinite_hits;

  for (const Image& img : probes) {
    Tensor x = images_to_batch({img});
    Tensor z = enc.embed(x);
    CtxLog log;
    model.forward(x, z, &log);
    if (layer_order.empty()) {
      for (const auto& [name, ctx] : log) layer_order.push_back(name);
      log_t.assign(layer_order.size(), {});
      infinite_hits.assign(layer_order.size(), 0);
    }
    for (std::size_t li = 0; li < log.size(); ++li) {
      TemperatureProfile tp = temperature_profile(log[li].second, model.kKernel, 0);
      if (tp.infinite) {
        ++infinite_hits[li];
        continue;
      }
      for (float t : tp.t) log_t[li].push_back(std::log(static_cast<double>(t)));
    }
  }

  std::vector<LayerTemperature> rows;
  for (std::size_t li = 0; li < layer_order.size(); ++li) {
    LayerTemperature r;
    r.layer = layer_order[li];
    r.n = static_cast<int>(log_t[li].size());
    if (r.n == 0) {
      r.infinite = true;
    } else {
      double mean = 0.0;
      for (double v : log_t[li]) mean += v;
      mean /= r.n;
      double var = 0.0;
      for (double v : log_t[li]) var += (v - mean) * (v - mean);
      var = r.n > 1 ? var / (r.n - 1) : 0.0;
      double half = 1.959963984540054 * std::sqrt(var / r.n);
      r.mean_log_t = mean;
      r.ci_lo = mean - half;
      r.ci_hi = mean + half;
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_temperature_csv(const std::string& path,
                           const std::vector<LayerTemperature>& rows) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write temperature csv: " + path);
  f << "layer,infinite,n,mean_log_t,ci_lo,ci_hi\n";
  for (const auto& r : rows) {
    f << r.layer << "," << (r.infinite ? 1 : 0) << "," << r.n << ",";
    if (r.infinite) f << ",,\n";
    else f << r.mean_log_t << "," << r.ci_lo << "," << r.ci_hi << "\n";
  }
}

}  // namespace coic
