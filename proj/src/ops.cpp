#include "coic/ops.hpp"

#include <algorithm>
#include <cmath>

#include "coic/kernels.hpp"

namespace coic::ops {

namespace {

namespace kn = coic::kernels;

Tensor make(std::vector<int> shape, std::vector<Tensor> parents,
            std::function<void(TensorNode&)> bw) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->v.assign(numel(n->shape), 0.f);
  bool rg = false;
  for (auto& p : parents) rg = rg || p.requires_grad();
  n->requires_grad = rg;
  if (rg) {
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(bw);
  }
  return Tensor(n);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

// Unary elementwise: f(value), df(value, output_value).
template <class F, class DF>
Tensor unary(const Tensor& a, F f, DF df) {
  Tensor out = make(a.shape(), {a}, [df](TensorNode& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    for (std::size_t i = 0; i < self.size(); ++i)
      p.g[i] += self.g[i] * df(p.v[i], self.v[i]);
  });
  const float* x = a.data();
  float* y = out.data();
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = f(x[i]);
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = make(a.shape(), {a, b}, [](TensorNode& self) {
    for (int k = 0; k < 2; ++k) {
      auto& p = *self.parents[k];
      if (p.requires_grad) kn::add(self.g.data(), p.g.data(), self.size());
    }
  });
  const float* x = a.data();
  const float* y = b.data();
  float* z = out.data();
  for (std::size_t i = 0; i < a.size(); ++i) z[i] = x[i] + y[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = make(a.shape(), {a, b}, [](TensorNode& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) kn::add(self.g.data(), pa.g.data(), self.size());
    if (pb.requires_grad) kn::axpy(-1.f, self.g.data(), pb.g.data(), self.size());
  });
  const float* x = a.data();
  const float* y = b.data();
  float* z = out.data();
  for (std::size_t i = 0; i < a.size(); ++i) z[i] = x[i] - y[i];
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = make(a.shape(), {a, b}, [](TensorNode& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    for (std::size_t i = 0; i < self.size(); ++i) {
      if (pa.requires_grad) pa.g[i] += self.g[i] * pb.v[i];
      if (pb.requires_grad) pb.g[i] += self.g[i] * pa.v[i];
    }
  });
  kn::mul(a.data(), b.data(), out.data(), a.size());
  return out;
}

Tensor scale(const Tensor& a, float s) {
  return unary(
      a, [s](float x) { return s * x; }, [s](float, float) { return s; });
}

Tensor exp(const Tensor& a) {
  return unary(
      a, [](float x) { return std::exp(x); }, [](float, float y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(
      a, [](float x) { return std::log(x); }, [](float x, float) { return 1.f / x; });
}

Tensor leaky_relu(const Tensor& a, float slope) {
  return unary(
      a, [slope](float x) { return x >= 0.f ? x : slope * x; },
      [slope](float x, float) { return x >= 0.f ? 1.f : slope; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a, [](float x) { return 1.f / (1.f + std::exp(-x)); },
      [](float, float y) { return y * (1.f - y); });
}

Tensor silu(const Tensor& a) {
  return unary(
      a,
      [](float x) {
        float s = 1.f / (1.f + std::exp(-x));
        return x * s;
      },
      [](float x, float) {
        float s = 1.f / (1.f + std::exp(-x));
        return s * (1.f + x * (1.f - s));
      });
}

Tensor clamp01(const Tensor& a) {
  return unary(
      a, [](float x) { return std::min(1.f, std::max(0.f, x)); },
      [](float x, float) { return (x >= 0.f && x <= 1.f) ? 1.f : 0.f; });
}

Tensor sum_all(const Tensor& a) {
  Tensor out = make({1}, {a}, [](TensorNode& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    float g = self.g[0];
    for (std::size_t i = 0; i < p.v.size(); ++i) p.g[i] += g;
  });
  out.data()[0] = kn::sum(a.data(), a.size());
  return out;
}

Tensor mean_all(const Tensor& a) { return scale(sum_all(a), 1.f / static_cast<float>(a.size())); }

Tensor l1_loss(const Tensor& a, const Tensor& target) {
  check_same_shape(a, target, "l1_loss");
  Tensor out = make({1}, {a, target}, [](TensorNode& self) {
    auto& pa = *self.parents[0];
    auto& pt = *self.parents[1];
    float g = self.g[0] / static_cast<float>(pa.v.size());
    for (std::size_t i = 0; i < pa.v.size(); ++i) {
      float s = (pa.v[i] > pt.v[i]) ? 1.f : (pa.v[i] < pt.v[i] ? -1.f : 0.f);
      if (pa.requires_grad) pa.g[i] += g * s;
      if (pt.requires_grad) pt.g[i] -= g * s;
    }
  });
  double acc = 0.0;
  const float* x = a.data();
  const float* t = target.data();
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(x[i] - t[i]);
  out.data()[0] = static_cast<float>(acc / a.size());
  return out;
}

Tensor mse_loss(const Tensor& a, const Tensor& target) {
  check_same_shape(a, target, "mse_loss");
  Tensor out = make({1}, {a, target}, [](TensorNode& self) {
    auto& pa = *self.parents[0];
    auto& pt = *self.parents[1];
    float g = 2.f * self.g[0] / static_cast<float>(pa.v.size());
    for (std::size_t i = 0; i < pa.v.size(); ++i) {
      float d = pa.v[i] - pt.v[i];
      if (pa.requires_grad) pa.g[i] += g * d;
      if (pt.requires_grad) pt.g[i] -= g * d;
    }
  });
  double acc = 0.0;
  const float* x = a.data();
  const float* t = target.data();
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = x[i] - t[i];
    acc += d * d;
  }
  out.data()[0] = static_cast<float>(acc / a.size());
  return out;
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
  if (numel(shape) != a.size()) throw std::invalid_argument("reshape: size mismatch");
  Tensor out = make(std::move(shape), {a}, [](TensorNode& self) {
    auto& p = *self.parents[0];
    if (p.requires_grad) kn::add(self.g.data(), p.g.data(), self.size());
  });
  out.values() = a.values();
  return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(0) != b.dim(0))
    throw std::invalid_argument("concat_cols: need [n,p],[n,q]");
  int n = a.dim(0), p = a.dim(1), q = b.dim(1);
  Tensor out = make({n, p + q}, {a, b}, [n, p, q](TensorNode& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    for (int i = 0; i < n; ++i) {
      const float* g = self.g.data() + static_cast<std::size_t>(i) * (p + q);
      if (pa.requires_grad) kn::add(g, pa.g.data() + static_cast<std::size_t>(i) * p, p);
      if (pb.requires_grad) kn::add(g + p, pb.g.data() + static_cast<std::size_t>(i) * q, q);
    }
  });
  for (int i = 0; i < n; ++i) {
    float* o = out.data() + static_cast<std::size_t>(i) * (p + q);
    std::copy_n(a.data() + static_cast<std::size_t>(i) * p, p, o);
    std::copy_n(b.data() + static_cast<std::size_t>(i) * q, q, o + p);
  }
  return out;
}

Tensor slice_cols(const Tensor& a, int start, int len) {
  if (a.shape().size() != 2) throw std::invalid_argument("slice_cols: need 2-d input");
  int n = a.dim(0), p = a.dim(1);
  if (start < 0 || len <= 0 || start + len > p)
    throw std::invalid_argument("slice_cols: out of range");
  Tensor out = make({n, len}, {a}, [n, p, start, len](TensorNode& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    for (int i = 0; i < n; ++i)
      kn::add(self.g.data() + static_cast<std::size_t>(i) * len,
              pa.g.data() + static_cast<std::size_t>(i) * p + start, len);
  });
  for (int i = 0; i < n; ++i)
    std::copy_n(a.data() + static_cast<std::size_t>(i) * p + start, len,
                out.data() + static_cast<std::size_t>(i) * len);
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() != 4 || sb.size() != 4 || sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3])
    throw std::invalid_argument("concat_channels: incompatible shapes");
  int n = sa[0], ca = sa[1], cb = sb[1], hw = sa[2] * sa[3];
  Tensor out = make({n, ca + cb, sa[2], sa[3]}, {a, b}, [n, ca, cb, hw](TensorNode& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    std::size_t block_a = static_cast<std::size_t>(ca) * hw;
    std::size_t block_b = static_cast<std::size_t>(cb) * hw;
    for (int i = 0; i < n; ++i) {
      const float* g = self.g.data() + static_cast<std::size_t>(i) * (block_a + block_b);
      if (pa.requires_grad) kn::add(g, pa.g.data() + i * block_a, block_a);
      if (pb.requires_grad) kn::add(g + block_a, pb.g.data() + i * block_b, block_b);
    }
  });
  std::size_t block_a = static_cast<std::size_t>(ca) * hw;
  std::size_t block_b = static_cast<std::size_t>(cb) * hw;
  for (int i = 0; i < n; ++i) {
    float* o = out.data() + static_cast<std::size_t>(i) * (block_a + block_b);
    std::copy_n(a.data() + i * block_a, block_a, o);
    std::copy_n(b.data() + i * block_b, block_b, o + block_a);
  }
  return out;
}

Tensor tile_vec(const Tensor& a, int times) {
  if (a.shape().size() != 1) throw std::invalid_argument("tile_vec: need 1-d input");
  int n = a.dim(0);
  Tensor out = make({times * n}, {a}, [times, n](TensorNode& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    for (int t = 0; t < times; ++t)
      kn::add(self.g.data() + static_cast<std::size_t>(t) * n, p.g.data(), n);
  });
  for (int t = 0; t < times; ++t)
    std::copy_n(a.data(), n, out.data() + static_cast<std::size_t>(t) * n);
  return out;
}

Tensor upsample2_nearest(const Tensor& a) {
  const auto& s = a.shape();
  if (s.size() != 4) throw std::invalid_argument("upsample2_nearest: need NCHW");
  int n = s[0], c = s[1], h = s[2], w = s[3];
  Tensor out = make({n, c, 2 * h, 2 * w}, {a}, [n, c, h, w](TensorNode& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    int W2 = 2 * w;
    for (int nc = 0; nc < n * c; ++nc) {
      const float* g = self.g.data() + static_cast<std::size_t>(nc) * 4 * h * w;
      float* pg = p.g.data() + static_cast<std::size_t>(nc) * h * w;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const float* g00 = g + (2 * y) * W2 + 2 * x;
          pg[y * w + x] += g00[0] + g00[1] + g00[W2] + g00[W2 + 1];
        }
    }
  });
  int W2 = 2 * w;
  for (int nc = 0; nc < n * c; ++nc) {
    const float* src = a.data() + static_cast<std::size_t>(nc) * h * w;
    float* dst = out.data() + static_cast<std::size_t>(nc) * 4 * h * w;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        float v = src[y * w + x];
        float* d = dst + (2 * y) * W2 + 2 * x;
        d[0] = d[1] = d[W2] = d[W2 + 1] = v;
      }
  }
  return out;
}

namespace {

// token index layout: patch (gy,gx), element (c,py,px)
struct PatchMap {
  int n, c, h, w, p, gy, gx, t, d;
};

PatchMap patch_map(const std::vector<int>& s, int p) {
  PatchMap m;
  m.n = s[0];
  m.c = s[1];
  m.h = s[2];
  m.w = s[3];
  m.p = p;
  if (m.h % p != 0 || m.w % p != 0)
    throw std::invalid_argument("patchify: dims must divide patch size");
  m.gy = m.h / p;
  m.gx = m.w / p;
  m.t = m.gy * m.gx;
  m.d = p * p * m.c;
  return m;
}

template <class F>
void for_each_patch_elem(const PatchMap& m, F f) {
  for (int n = 0; n < m.n; ++n)
    for (int ty = 0; ty < m.gy; ++ty)
      for (int tx = 0; tx < m.gx; ++tx)
        for (int c = 0; c < m.c; ++c)
          for (int py = 0; py < m.p; ++py)
            for (int px = 0; px < m.p; ++px) {
              std::size_t img_idx =
                  ((static_cast<std::size_t>(n) * m.c + c) * m.h + ty * m.p + py) * m.w +
                  tx * m.p + px;
              std::size_t tok_idx =
                  (static_cast<std::size_t>(n) * m.t + ty * m.gx + tx) * m.d +
                  (static_cast<std::size_t>(c) * m.p + py) * m.p + px;
              f(img_idx, tok_idx);
            }
}

}  // namespace

Tensor patchify(const Tensor& x, int p) {
  if (x.shape().size() != 4) throw std::invalid_argument("patchify: need NCHW");
  PatchMap m = patch_map(x.shape(), p);
  Tensor out = make({m.n, m.t, m.d}, {x}, [m](TensorNode& self) {
    auto& px = *self.parents[0];
    if (!px.requires_grad) return;
    for_each_patch_elem(m, [&](std::size_t ii, std::size_t ti) { px.g[ii] += self.g[ti]; });
  });
  for_each_patch_elem(m,
                      [&](std::size_t ii, std::size_t ti) { out.data()[ti] = x.data()[ii]; });
  return out;
}

Tensor unpatchify(const Tensor& t, int p, int c, int h, int w) {
  if (t.shape().size() != 3) throw std::invalid_argument("unpatchify: need [N,T,D]");
  PatchMap m = patch_map({t.dim(0), c, h, w}, p);
  if (t.dim(1) != m.t || t.dim(2) != m.d)
    throw std::invalid_argument("unpatchify: token shape mismatch");
  Tensor out = make({m.n, c, h, w}, {t}, [m](TensorNode& self) {
    auto& pt = *self.parents[0];
    if (!pt.requires_grad) return;
    for_each_patch_elem(m, [&](std::size_t ii, std::size_t ti) { pt.g[ti] += self.g[ii]; });
  });
  for_each_patch_elem(m,
                      [&](std::size_t ii, std::size_t ti) { out.data()[ii] = t.data()[ti]; });
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: bad shapes");
  int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = make({m, n}, {a, b}, [m, k, n](TensorNode& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    for (int i = 0; i < m; ++i) {
      const float* grow = self.g.data() + static_cast<std::size_t>(i) * n;
      for (int kk = 0; kk < k; ++kk) {
        const float* brow = pb.v.data() + static_cast<std::size_t>(kk) * n;
        if (pa.requires_grad) pa.g[i * k + kk] += kn::dot(grow, brow, n);
        if (pb.requires_grad)
          kn::axpy(pa.v[i * k + kk], grow, pb.g.data() + static_cast<std::size_t>(kk) * n, n);
      }
    }
  });
  for (int i = 0; i < m; ++i) {
    float* orow = out.data() + static_cast<std::size_t>(i) * n;
    for (int kk = 0; kk < k; ++kk)
      kn::axpy(a.data()[i * k + kk], b.data() + static_cast<std::size_t>(kk) * n, orow, n);
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  const auto& xs = x.shape();
  if (w.shape().size() != 2) throw std::invalid_argument("linear: weight must be 2-d");
  int in = w.dim(1), outdim = w.dim(0);
  if (xs.back() != in) throw std::invalid_argument("linear: input dim mismatch");
  int rows = static_cast<int>(x.size()) / in;
  std::vector<int> oshape(xs.begin(), xs.end() - 1);
  oshape.push_back(outdim);
  bool has_bias = b.defined();
  if (has_bias && (b.shape().size() != 1 || b.dim(0) != outdim))
    throw std::invalid_argument("linear: bias dim mismatch");

  std::vector<Tensor> parents = {x, w};
  if (has_bias) parents.push_back(b);
  Tensor out = make(oshape, parents, [rows, in, outdim, has_bias](TensorNode& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    for (int i = 0; i < rows; ++i) {
      const float* grow = self.g.data() + static_cast<std::size_t>(i) * outdim;
      const float* xrow = px.v.data() + static_cast<std::size_t>(i) * in;
      float* gxrow = px.requires_grad ? px.g.data() + static_cast<std::size_t>(i) * in : nullptr;
      for (int o = 0; o < outdim; ++o) {
        float g = grow[o];
        if (g == 0.f) continue;
        const float* wrow = pw.v.data() + static_cast<std::size_t>(o) * in;
        if (gxrow) kn::axpy(g, wrow, gxrow, in);
        if (pw.requires_grad)
          kn::axpy(g, xrow, pw.g.data() + static_cast<std::size_t>(o) * in, in);
      }
    }
    if (has_bias && self.parents[2]->requires_grad) {
      auto& pb = *self.parents[2];
      for (int i = 0; i < rows; ++i)
        kn::add(self.g.data() + static_cast<std::size_t>(i) * outdim, pb.g.data(), outdim);
    }
  });
  for (int i = 0; i < rows; ++i) {
    const float* xrow = x.data() + static_cast<std::size_t>(i) * in;
    float* orow = out.data() + static_cast<std::size_t>(i) * outdim;
    for (int o = 0; o < outdim; ++o) {
      float v = kn::dot(xrow, w.data() + static_cast<std::size_t>(o) * in, in);
      orow[o] = has_bias ? v + b.data()[o] : v;
    }
  }
  return out;
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0] || sa[2] != sb[1])
    throw std::invalid_argument("bmm: bad shapes");
  int B = sa[0], m = sa[1], k = sa[2], n = sb[2];
  Tensor out = make({B, m, n}, {a, b}, [B, m, k, n](TensorNode& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    for (int bb = 0; bb < B; ++bb) {
      const float* av = pa.v.data() + static_cast<std::size_t>(bb) * m * k;
      const float* bv = pb.v.data() + static_cast<std::size_t>(bb) * k * n;
      const float* gv = self.g.data() + static_cast<std::size_t>(bb) * m * n;
      float* ga = pa.requires_grad ? pa.g.data() + static_cast<std::size_t>(bb) * m * k : nullptr;
      float* gb = pb.requires_grad ? pb.g.data() + static_cast<std::size_t>(bb) * k * n : nullptr;
      for (int i = 0; i < m; ++i)
        for (int kk = 0; kk < k; ++kk) {
          if (ga) ga[i * k + kk] += kn::dot(gv + i * n, bv + kk * n, n);
          if (gb) kn::axpy(av[i * k + kk], gv + i * n, gb + kk * n, n);
        }
    }
  });
  for (int bb = 0; bb < B; ++bb) {
    const float* av = a.data() + static_cast<std::size_t>(bb) * m * k;
    const float* bv = b.data() + static_cast<std::size_t>(bb) * k * n;
    float* ov = out.data() + static_cast<std::size_t>(bb) * m * n;
    for (int i = 0; i < m; ++i)
      for (int kk = 0; kk < k; ++kk) kn::axpy(av[i * k + kk], bv + kk * n, ov + i * n, n);
  }
  return out;
}

Tensor bmm_nt(const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0] || sa[2] != sb[2])
    throw std::invalid_argument("bmm_nt: bad shapes");
  int B = sa[0], m = sa[1], k = sa[2], n = sb[1];
  Tensor out = make({B, m, n}, {a, b}, [B, m, k, n](TensorNode& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    for (int bb = 0; bb < B; ++bb) {
      const float* av = pa.v.data() + static_cast<std::size_t>(bb) * m * k;
      const float* bv = pb.v.data() + static_cast<std::size_t>(bb) * n * k;
      const float* gv = self.g.data() + static_cast<std::size_t>(bb) * m * n;
      float* ga = pa.requires_grad ? pa.g.data() + static_cast<std::size_t>(bb) * m * k : nullptr;
      float* gb = pb.requires_grad ? pb.g.data() + static_cast<std::size_t>(bb) * n * k : nullptr;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          float g = gv[i * n + j];
          if (g == 0.f) continue;
          if (ga) kn::axpy(g, bv + j * k, ga + i * k, k);
          if (gb) kn::axpy(g, av + i * k, gb + j * k, k);
        }
    }
  });
  for (int bb = 0; bb < B; ++bb) {
    const float* av = a.data() + static_cast<std::size_t>(bb) * m * k;
    const float* bv = b.data() + static_cast<std::size_t>(bb) * n * k;
    float* ov = out.data() + static_cast<std::size_t>(bb) * m * n;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) ov[i * n + j] = kn::dot(av + i * k, bv + j * k, k);
  }
  return out;
}

Tensor softmax_rows(const Tensor& a) {
  int n = a.shape().back();
  int rows = static_cast<int>(a.size()) / n;
  Tensor out = make(a.shape(), {a}, [rows, n](TensorNode& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    for (int i = 0; i < rows; ++i) {
      const float* y = self.v.data() + static_cast<std::size_t>(i) * n;
      const float* g = self.g.data() + static_cast<std::size_t>(i) * n;
      float dotgy = kn::dot(g, y, n);
      float* pg = p.g.data() + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) pg[j] += y[j] * (g[j] - dotgy);
    }
  });
  for (int i = 0; i < rows; ++i) {
    const float* x = a.data() + static_cast<std::size_t>(i) * n;
    float* y = out.data() + static_cast<std::size_t>(i) * n;
    float mx = x[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    float s = 0.f;
    for (int j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - mx);
      s += y[j];
    }
    kn::scale(1.f / s, y, n);
  }
  return out;
}

Tensor add_token_bias(const Tensor& x, const Tensor& c) {
  const auto& xs = x.shape();
  if (xs.size() != 3 || c.shape().size() != 2 || c.dim(0) != xs[0] || c.dim(1) != xs[2])
    throw std::invalid_argument("add_token_bias: need x[B,T,D], c[B,D]");
  int B = xs[0], T = xs[1], D = xs[2];
  Tensor out = make(xs, {x, c}, [B, T, D](TensorNode& self) {
    auto& px = *self.parents[0];
    auto& pc = *self.parents[1];
    if (px.requires_grad) kn::add(self.g.data(), px.g.data(), self.size());
    if (pc.requires_grad)
      for (int b = 0; b < B; ++b)
        for (int t = 0; t < T; ++t)
          kn::add(self.g.data() + (static_cast<std::size_t>(b) * T + t) * D,
                  pc.g.data() + static_cast<std::size_t>(b) * D, D);
  });
  for (int b = 0; b < B; ++b)
    for (int t = 0; t < T; ++t) {
      std::size_t off = (static_cast<std::size_t>(b) * T + t) * D;
      const float* cv = c.data() + static_cast<std::size_t>(b) * D;
      for (int d = 0; d < D; ++d) out.data()[off + d] = x.data()[off + d] + cv[d];
    }
  return out;
}

namespace {

inline int ceil_div_pos(int a, int s) { return a <= 0 ? 0 : (a + s - 1) / s; }

struct ConvDims {
  int n, cin, h, w, cout, cin_g, k, ho, wo, groups, stride, pad;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad, int groups) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (xs.size() != 4 || ws.size() != 4) throw std::invalid_argument("conv2d: need 4-d tensors");
  ConvDims d;
  d.n = xs[0];
  d.cin = xs[1];
  d.h = xs[2];
  d.w = xs[3];
  d.cout = ws[0];
  d.cin_g = ws[1];
  d.k = ws[2];
  if (ws[3] != d.k) throw std::invalid_argument("conv2d: kernel must be square");
  d.groups = groups;
  d.stride = stride;
  d.pad = pad;
  if (groups <= 0 || d.cin % groups != 0 || d.cout % groups != 0 ||
      d.cin / groups != d.cin_g)
    throw std::invalid_argument("conv2d: channel/group mismatch");
  d.ho = (d.h + 2 * pad - d.k) / stride + 1;
  d.wo = (d.w + 2 * pad - d.k) / stride + 1;
  if (d.ho <= 0 || d.wo <= 0) throw std::invalid_argument("conv2d: empty output");
  return d;
}

}  // namespace

// Convolution via im2col: colT[e*R + r] holds the receptive-field value for
// output element e = (oh, ow) and row r = (cil, kh, kw), R = cin_g*k*k, so the
// forward pass is a contiguous dot per output element and both backward
// passes are contiguous axpys.
namespace {

void build_col(const float* xg, const ConvDims& d, float* colT) {
  int R = d.cin_g * d.k * d.k;
  std::size_t plane = static_cast<std::size_t>(d.ho) * d.wo;
  std::size_t xplane = static_cast<std::size_t>(d.h) * d.w;
  std::fill(colT, colT + plane * R, 0.f);
  for (int cil = 0; cil < d.cin_g; ++cil)
    for (int kh = 0; kh < d.k; ++kh)
      for (int kw = 0; kw < d.k; ++kw) {
        int r = (cil * d.k + kh) * d.k + kw;
        const float* xin = xg + cil * xplane;
        int ow_lo = ceil_div_pos(d.pad - kw, d.stride);
        int ow_hi = std::min(d.wo - 1, (d.w - 1 - kw + d.pad) / d.stride);
        if (ow_hi < ow_lo) continue;
        for (int oh = 0; oh < d.ho; ++oh) {
          int ih = oh * d.stride + kh - d.pad;
          if (ih < 0 || ih >= d.h) continue;
          float* dst = colT + (static_cast<std::size_t>(oh) * d.wo + ow_lo) * R + r;
          const float* src = xin + static_cast<std::size_t>(ih) * d.w +
                             ow_lo * d.stride + kw - d.pad;
          for (int ow = ow_lo; ow <= ow_hi; ++ow) {
            *dst = *src;
            dst += R;
            src += d.stride;
          }
        }
      }
}

// Transpose of build_col: accumulates gcolT back into the input gradient.
void scatter_col(const float* gcolT, const ConvDims& d, float* gxg) {
  int R = d.cin_g * d.k * d.k;
  std::size_t xplane = static_cast<std::size_t>(d.h) * d.w;
  for (int cil = 0; cil < d.cin_g; ++cil)
    for (int kh = 0; kh < d.k; ++kh)
      for (int kw = 0; kw < d.k; ++kw) {
        int r = (cil * d.k + kh) * d.k + kw;
        float* gxin = gxg + cil * xplane;
        int ow_lo = ceil_div_pos(d.pad - kw, d.stride);
        int ow_hi = std::min(d.wo - 1, (d.w - 1 - kw + d.pad) / d.stride);
        if (ow_hi < ow_lo) continue;
        for (int oh = 0; oh < d.ho; ++oh) {
          int ih = oh * d.stride + kh - d.pad;
          if (ih < 0 || ih >= d.h) continue;
          const float* src = gcolT + (static_cast<std::size_t>(oh) * d.wo + ow_lo) * R + r;
          float* dst = gxin + static_cast<std::size_t>(ih) * d.w +
                       ow_lo * d.stride + kw - d.pad;
          for (int ow = ow_lo; ow <= ow_hi; ++ow) {
            *dst += *src;
            src += R;
            dst += d.stride;
          }
        }
      }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad,
              int groups) {
  ConvDims d = conv_dims(x, w, stride, pad, groups);
  bool has_bias = bias.defined();
  if (has_bias && (bias.shape().size() != 1 || bias.dim(0) != d.cout))
    throw std::invalid_argument("conv2d: bias dim mismatch");

  std::vector<Tensor> parents = {x, w};
  if (has_bias) parents.push_back(bias);

  auto bw = [d, has_bias](TensorNode& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    TensorNode* pb = has_bias ? self.parents[2].get() : nullptr;
    int cout_g = d.cout / d.groups;
    int R = d.cin_g * d.k * d.k;
    std::size_t xplane = static_cast<std::size_t>(d.h) * d.w;
    std::size_t oplane = static_cast<std::size_t>(d.ho) * d.wo;
    static thread_local std::vector<float> colT, gcolT;
    if (pw.requires_grad) colT.resize(oplane * R);
    if (px.requires_grad) gcolT.resize(oplane * R);
    for (int n = 0; n < d.n; ++n)
      for (int g = 0; g < d.groups; ++g) {
        const float* xg =
            px.v.data() + (static_cast<std::size_t>(n) * d.cin + g * d.cin_g) * xplane;
        if (pw.requires_grad) build_col(xg, d, colT.data());
        if (px.requires_grad) std::fill(gcolT.begin(), gcolT.end(), 0.f);
        for (int col = 0; col < cout_g; ++col) {
          int co = g * cout_g + col;
          const float* gout =
              self.g.data() + (static_cast<std::size_t>(n) * d.cout + co) * oplane;
          if (pb && pb->requires_grad) pb->g[co] += kn::sum(gout, oplane);
          float* gw = pw.requires_grad ? pw.g.data() + static_cast<std::size_t>(co) * R
                                       : nullptr;
          const float* wrow = pw.v.data() + static_cast<std::size_t>(co) * R;
          for (std::size_t e = 0; e < oplane; ++e) {
            float gv = gout[e];
            if (gv == 0.f) continue;
            if (gw) kn::axpy(gv, colT.data() + e * R, gw, R);
            if (px.requires_grad) kn::axpy(gv, wrow, gcolT.data() + e * R, R);
          }
        }
        if (px.requires_grad)
          scatter_col(gcolT.data(), d,
                      px.g.data() +
                          (static_cast<std::size_t>(n) * d.cin + g * d.cin_g) * xplane);
      }
  };

  Tensor out = make({d.n, d.cout, d.ho, d.wo}, parents, bw);

  int cout_g = d.cout / d.groups;
  int R = d.cin_g * d.k * d.k;
  std::size_t xplane = static_cast<std::size_t>(d.h) * d.w;
  std::size_t oplane = static_cast<std::size_t>(d.ho) * d.wo;
  static thread_local std::vector<float> colT;
  colT.resize(oplane * R);
  for (int n = 0; n < d.n; ++n)
    for (int g = 0; g < d.groups; ++g) {
      build_col(x.data() + (static_cast<std::size_t>(n) * d.cin + g * d.cin_g) * xplane,
                d, colT.data());
      for (int col = 0; col < cout_g; ++col) {
        int co = g * cout_g + col;
        float* op = out.data() + (static_cast<std::size_t>(n) * d.cout + co) * oplane;
        const float* wrow = w.data() + static_cast<std::size_t>(co) * R;
        float bv = has_bias ? bias.data()[co] : 0.f;
        for (std::size_t e = 0; e < oplane; ++e)
          op[e] = bv + kn::dot(wrow, colT.data() + e * R, R);
      }
    }
  return out;
}

Tensor gap(const Tensor& x) {
  const auto& s = x.shape();
  if (s.size() != 4) throw std::invalid_argument("gap: need NCHW");
  int n = s[0], c = s[1];
  int hw = s[2] * s[3];
  Tensor out = make({n, c}, {x}, [n, c, hw](TensorNode& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    for (int i = 0; i < n * c; ++i) {
      float g = self.g[i] / static_cast<float>(hw);
      float* pg = p.g.data() + static_cast<std::size_t>(i) * hw;
      for (int j = 0; j < hw; ++j) pg[j] += g;
    }
  });
  for (int i = 0; i < n * c; ++i)
    out.data()[i] = kn::sum(x.data() + static_cast<std::size_t>(i) * hw, hw) / hw;
  return out;
}

Tensor l2_normalize_rows(const Tensor& x) {
  int d = x.shape().back();
  int rows = static_cast<int>(x.size()) / d;
  Tensor out = make(x.shape(), {x}, [rows, d](TensorNode& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    for (int i = 0; i < rows; ++i) {
      const float* xr = p.v.data() + static_cast<std::size_t>(i) * d;
      const float* yr = self.v.data() + static_cast<std::size_t>(i) * d;
      const float* gr = self.g.data() + static_cast<std::size_t>(i) * d;
      float norm = std::sqrt(kn::dot(xr, xr, d));
      float gy_y = kn::dot(gr, yr, d);
      float* pg = p.g.data() + static_cast<std::size_t>(i) * d;
      for (int j = 0; j < d; ++j) pg[j] += (gr[j] - yr[j] * gy_y) / norm;
    }
  });
  for (int i = 0; i < rows; ++i) {
    const float* xr = x.data() + static_cast<std::size_t>(i) * d;
    float norm = std::sqrt(kn::dot(xr, xr, d));
    if (norm < 1e-20f) throw std::domain_error("l2_normalize_rows: zero-norm row");
    float* yr = out.data() + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) yr[j] = xr[j] / norm;
  }
  return out;
}

Tensor cosine_rows(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "cosine_rows");
  int d = a.shape().back();
  int rows = static_cast<int>(a.size()) / d;
  Tensor out = make({rows}, {a, b}, [rows, d](TensorNode& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    for (int i = 0; i < rows; ++i) {
      const float* av = pa.v.data() + static_cast<std::size_t>(i) * d;
      const float* bv = pb.v.data() + static_cast<std::size_t>(i) * d;
      float na = std::sqrt(kn::dot(av, av, d));
      float nb = std::sqrt(kn::dot(bv, bv, d));
      float c = self.v[i];
      float g = self.g[i];
      if (pa.requires_grad) {
        float* ga = pa.g.data() + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < d; ++j) ga[j] += g * (bv[j] / (na * nb) - c * av[j] / (na * na));
      }
      if (pb.requires_grad) {
        float* gb = pb.g.data() + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < d; ++j) gb[j] += g * (av[j] / (na * nb) - c * bv[j] / (nb * nb));
      }
    }
  });
  for (int i = 0; i < rows; ++i) {
    const float* av = a.data() + static_cast<std::size_t>(i) * d;
    const float* bv = b.data() + static_cast<std::size_t>(i) * d;
    float na = std::sqrt(kn::dot(av, av, d));
    float nb = std::sqrt(kn::dot(bv, bv, d));
    if (na < 1e-20f || nb < 1e-20f) throw std::domain_error("cosine_rows: zero-norm row");
    out.data()[i] = kn::dot(av, bv, d) / (na * nb);
  }
  return out;
}

Tensor adaptive_weight(const Tensor& q, const Tensor& r, const Tensor& z, int k) {
  if (q.shape().size() != 2 || r.shape().size() != 2 || z.shape().size() != 2)
    throw std::invalid_argument("adaptive_weight: need Q[N,C], R[N,C'], Z[N,k2]");
  int n = q.dim(0), c = q.dim(1), cp = r.dim(1), k2 = k * k;
  if (r.dim(0) != n || z.dim(0) != n || z.dim(1) != k2)
    throw std::invalid_argument("adaptive_weight: inconsistent dims");

  auto bw = [n, c, cp, k2](TensorNode& self) {
    auto& pq = *self.parents[0];
    auto& pr = *self.parents[1];
    auto& pz = *self.parents[2];
    float kk = static_cast<float>(k2);
    std::vector<float> gl(k2);
    for (int in = 0; in < n; ++in) {
      const float* zv = pz.v.data() + static_cast<std::size_t>(in) * k2;
      for (int ic = 0; ic < c; ++ic)
        for (int icp = 0; icp < cp; ++icp) {
          std::size_t base =
              ((static_cast<std::size_t>(in) * c + ic) * cp + icp) * k2;
          const float* av = self.v.data() + base;  // A = k2 * p
          const float* gA = self.g.data() + base;
          float u = pq.v[in * c + ic] + pr.v[in * cp + icp];
          float s = 1.f / (1.f + std::exp(-u));
          // p = A / k2; gp = k2 * gA; gL = p*(gp - <gp,p>)
          float gp_dot_p = 0.f;
          for (int j = 0; j < k2; ++j) gp_dot_p += kk * gA[j] * (av[j] / kk);
          float gu = 0.f;
          for (int j = 0; j < k2; ++j) {
            float p = av[j] / kk;
            float glj = p * (kk * gA[j] - gp_dot_p);
            gl[j] = glj;
            gu += glj * zv[j];
          }
          gu *= s * (1.f - s);
          if (pq.requires_grad) pq.g[in * c + ic] += gu;
          if (pr.requires_grad) pr.g[in * cp + icp] += gu;
          if (pz.requires_grad) {
            float* gz = pz.g.data() + static_cast<std::size_t>(in) * k2;
            for (int j = 0; j < k2; ++j) gz[j] += gl[j] * s;
          }
        }
    }
  };

  Tensor out = make({n, c, cp, k, k}, {q, r, z}, bw);
  float kk = static_cast<float>(k2);
  std::vector<float> logits(k2);
  for (int in = 0; in < n; ++in) {
    const float* zv = z.data() + static_cast<std::size_t>(in) * k2;
    for (int ic = 0; ic < c; ++ic)
      for (int icp = 0; icp < cp; ++icp) {
        float u = q.data()[in * c + ic] + r.data()[in * cp + icp];
        float s = 1.f / (1.f + std::exp(-u));  // 1/tau
        float mx = -1e30f;
        for (int j = 0; j < k2; ++j) {
          logits[j] = zv[j] * s;
          mx = std::max(mx, logits[j]);
        }
        float denom = 0.f;
        for (int j = 0; j < k2; ++j) denom += std::exp(logits[j] - mx);
        float* av = out.data() + ((static_cast<std::size_t>(in) * c + ic) * cp + icp) * k2;
        for (int j = 0; j < k2; ++j) av[j] = kk * std::exp(logits[j] - mx) / denom;
      }
  }
  return out;
}

Tensor mul_weight_per_sample(const Tensor& a, const Tensor& w) {
  const auto& sa = a.shape();
  const auto& sw = w.shape();
  if (sa.size() != 5 || sw.size() != 4 ||
      !std::equal(sa.begin() + 1, sa.end(), sw.begin()))
    throw std::invalid_argument("mul_weight_per_sample: need A[N,C,C',k,k], W[C,C',k,k]");
  int n = sa[0];
  std::size_t block = numel(sw);
  Tensor out = make(sa, {a, w}, [n, block](TensorNode& self) {
    auto& pa = *self.parents[0];
    auto& pw = *self.parents[1];
    for (int in = 0; in < n; ++in) {
      const float* g = self.g.data() + in * block;
      const float* av = pa.v.data() + in * block;
      if (pa.requires_grad) {
        float* ga = pa.g.data() + in * block;
        for (std::size_t j = 0; j < block; ++j) ga[j] += g[j] * pw.v[j];
      }
      if (pw.requires_grad)
        for (std::size_t j = 0; j < block; ++j) pw.g[j] += g[j] * av[j];
    }
  });
  for (int in = 0; in < n; ++in)
    kn::mul(a.data() + in * block, w.data(), out.data() + in * block, block);
  return out;
}

Tensor info_nce(const Tensor& s_pos, const Tensor& s_neg) {
  if (s_pos.shape().size() != 1 || s_neg.shape().size() != 2 ||
      s_neg.dim(0) != s_pos.dim(0))
    throw std::invalid_argument("info_nce: need s_pos[n], s_neg[n,m]");
  int n = s_pos.dim(0), m = s_neg.dim(1);
  Tensor out = make({1}, {s_pos, s_neg}, [n, m](TensorNode& self) {
    auto& pp = *self.parents[0];
    auto& pn = *self.parents[1];
    float g = self.g[0] / static_cast<float>(n);
    for (int i = 0; i < n; ++i) {
      const float* neg = pn.v.data() + static_cast<std::size_t>(i) * m;
      float mx = pp.v[i];
      for (int j = 0; j < m; ++j) mx = std::max(mx, neg[j]);
      float denom = std::exp(pp.v[i] - mx);
      for (int j = 0; j < m; ++j) denom += std::exp(neg[j] - mx);
      float p_pos = std::exp(pp.v[i] - mx) / denom;
      if (pp.requires_grad) pp.g[i] += g * (p_pos - 1.f);
      if (pn.requires_grad) {
        float* gn = pn.g.data() + static_cast<std::size_t>(i) * m;
        for (int j = 0; j < m; ++j) gn[j] += g * std::exp(neg[j] - mx) / denom;
      }
    }
  });
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const float* neg = s_neg.data() + static_cast<std::size_t>(i) * m;
    float mx = s_pos.data()[i];
    for (int j = 0; j < m; ++j) mx = std::max(mx, neg[j]);
    double denom = std::exp(s_pos.data()[i] - mx);
    for (int j = 0; j < m; ++j) denom += std::exp(neg[j] - mx);
    acc += std::log(denom) + mx - s_pos.data()[i];
  }
  out.data()[0] = static_cast<float>(acc / n);
  return out;
}

}  // namespace coic::ops
