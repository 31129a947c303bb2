#pragma once
// Layer containers and the optimizer. Layers own parameter Tensors and
// register them into a ParamSet so checkpointing and momentum twins see a
// flat named list.

#include <cmath>

#include "coic/ops.hpp"
#include "coic/tensor.hpp"

namespace coic::nn {

inline Tensor kaiming_uniform(std::vector<int> shape, int fan_in, Rng& rng) {
  float bound = std::sqrt(3.f / static_cast<float>(fan_in));
  return Tensor::rand_uniform(std::move(shape), -bound, bound, rng, true);
}

struct Linear {
  Tensor w, b;

  static Linear create(int in, int out, Rng& rng, bool zero_init = false) {
    Linear l;
    if (zero_init) {
      l.w = Tensor::zeros({out, in}, true);
      l.b = Tensor::zeros({out}, true);
    } else {
      l.w = kaiming_uniform({out, in}, in, rng);
      float bound = 1.f / std::sqrt(static_cast<float>(in));
      l.b = Tensor::rand_uniform({out}, -bound, bound, rng, true);
    }
    return l;
  }

  static Linear create_no_bias(int in, int out, Rng& rng) {
    Linear l;
    l.w = kaiming_uniform({out, in}, in, rng);
    return l;
  }

  Tensor forward(const Tensor& x) const { return ops::linear(x, w, b); }

  void register_params(ParamSet& ps, const std::string& prefix) const {
    ps.items.emplace_back(prefix + ".w", w);
    if (b.defined()) ps.items.emplace_back(prefix + ".b", b);
  }
};

struct Conv2d {
  Tensor w, b;
  int stride = 1, pad = 1, groups = 1;

  static Conv2d create(int cin, int cout, int k, int stride, int pad, Rng& rng) {
    Conv2d c;
    int fan_in = cin * k * k;
    c.w = kaiming_uniform({cout, cin, k, k}, fan_in, rng);
    float bound = 1.f / std::sqrt(static_cast<float>(fan_in));
    c.b = Tensor::rand_uniform({cout}, -bound, bound, rng, true);
    c.stride = stride;
    c.pad = pad;
    return c;
  }

  Tensor forward(const Tensor& x) const { return ops::conv2d(x, w, b, stride, pad, groups); }

  void register_params(ParamSet& ps, const std::string& prefix) const {
    ps.items.emplace_back(prefix + ".w", w);
    ps.items.emplace_back(prefix + ".b", b);
  }
};

// Adam with optional cosine decay handled by the caller via the lr argument.
class Adam {
 public:
  explicit Adam(ParamSet params, float beta1 = 0.9f, float beta2 = 0.999f,
                float eps = 1e-8f)
      : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.resize(params_.items.size());
    v_.resize(params_.items.size());
    for (std::size_t i = 0; i < params_.items.size(); ++i) {
      m_[i].assign(params_.items[i].second.size(), 0.f);
      v_[i].assign(params_.items[i].second.size(), 0.f);
    }
  }

  void step(float lr) {
    ++t_;
    float bc1 = 1.f - std::pow(beta1_, static_cast<float>(t_));
    float bc2 = 1.f - std::pow(beta2_, static_cast<float>(t_));
    for (std::size_t i = 0; i < params_.items.size(); ++i) {
      Tensor& p = params_.items[i].second;
      if (p.grad_values().empty()) continue;
      const float* g = p.grad_values().data();
      float* pv = p.data();
      float* m = m_[i].data();
      float* v = v_[i].data();
      for (std::size_t j = 0; j < p.size(); ++j) {
        m[j] = beta1_ * m[j] + (1.f - beta1_) * g[j];
        v[j] = beta2_ * v[j] + (1.f - beta2_) * g[j] * g[j];
        pv[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
      }
    }
  }

  void zero_grad() { params_.zero_grad(); }

  ParamSet& params() { return params_; }
  std::vector<std::vector<float>>& moment1() { return m_; }
  std::vector<std::vector<float>>& moment2() { return v_; }
  std::int64_t& step_count() { return t_; }

 private:
  ParamSet params_;
  float beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

}  // namespace coic::nn
