#pragma once
// Minimal reverse-mode autodiff over dense float tensors. A Tensor is a
// shared handle onto a tape node; ops build the graph, backward() walks it
// in reverse topological order. Only what the models here need.

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "coic/rng.hpp"

namespace coic {

struct TensorNode {
  std::vector<int> shape;
  std::vector<float> v;
  std::vector<float> g;
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  std::size_t size() const { return v.size(); }
  void ensure_grad() {
    if (g.size() != v.size()) g.assign(v.size(), 0.f);
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> n) : n_(std::move(n)) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, float value, bool requires_grad = false);
  static Tensor from(std::vector<int> shape, std::vector<float> data,
                     bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);
  // Uniform in [lo, hi).
  static Tensor rand_uniform(std::vector<int> shape, float lo, float hi, Rng& rng,
                             bool requires_grad = false);

  bool defined() const { return n_ != nullptr; }
  const std::vector<int>& shape() const { return n_->shape; }
  std::size_t size() const { return n_->size(); }
  int dim(int i) const { return n_->shape[static_cast<std::size_t>(i)]; }

  float* data() { return n_->v.data(); }
  const float* data() const { return n_->v.data(); }
  std::vector<float>& values() { return n_->v; }
  const std::vector<float>& values() const { return n_->v; }
  float item() const;

  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool rg) { n_->requires_grad = rg; }
  float* grad() { return n_->g.data(); }
  const std::vector<float>& grad_values() const { return n_->g; }
  void zero_grad() { n_->g.assign(n_->v.size(), 0.f); }

  // Runs reverse-mode accumulation from this (scalar) tensor.
  void backward();

  // Value copy with no graph attachment.
  Tensor detach() const;

  std::shared_ptr<TensorNode>& node() { return n_; }
  const std::shared_ptr<TensorNode>& node() const { return n_; }

 private:
  std::shared_ptr<TensorNode> n_;
};

inline std::size_t numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

// Named parameter collection; order is the serialization order.
struct ParamSet {
  std::vector<std::pair<std::string, Tensor>> items;

  Tensor& add(const std::string& name, Tensor t) {
    items.emplace_back(name, std::move(t));
    return items.back().second;
  }
  Tensor* find(const std::string& name) {
    for (auto& [k, t] : items)
      if (k == name) return &t;
    return nullptr;
  }
  void append(const ParamSet& other, const std::string& prefix) {
    for (const auto& [k, t] : other.items) items.emplace_back(prefix + k, t);
  }
  std::size_t total_size() const {
    std::size_t s = 0;
    for (const auto& [k, t] : items) s += t.size();
    return s;
  }
  void zero_grad() {
    for (auto& [k, t] : items) t.zero_grad();
  }
};

// twin <- m * twin + (1 - m) * online, elementwise over matching entries.
void momentum_update(const ParamSet& online, ParamSet& twin, float m);

// Deep value copy with gradients disabled (momentum twins start here).
ParamSet clone_detached(const ParamSet& src);

}  // namespace coic
