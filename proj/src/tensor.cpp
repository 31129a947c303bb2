#include "coic/tensor.hpp"

#include <unordered_set>

namespace coic {

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->v.assign(numel(n->shape), 0.f);
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::full(std::vector<int> shape, float value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (auto& x : t.values()) x = value;
  return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<float> data, bool requires_grad) {
  if (numel(shape) != data.size()) throw std::invalid_argument("Tensor::from: size mismatch");
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->v = std::move(data);
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

Tensor Tensor::rand_uniform(std::vector<int> shape, float lo, float hi, Rng& rng,
                            bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (auto& x : t.values()) x = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

float Tensor::item() const {
  if (n_->size() != 1) throw std::logic_error("Tensor::item: not a scalar");
  return n_->v[0];
}

Tensor Tensor::detach() const {
  auto n = std::make_shared<TensorNode>();
  n->shape = n_->shape;
  n->v = n_->v;
  n->requires_grad = false;
  return Tensor(n);
}

void Tensor::backward() {
  if (n_->size() != 1) throw std::logic_error("backward: root must be scalar");
  // Iterative post-order topo sort over the grad-requiring subgraph.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.emplace_back(n_.get(), 0);
  visited.insert(n_.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      TensorNode* p = node->parents[idx++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (TensorNode* node : order) node->ensure_grad();
  n_->g[0] += 1.f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* node = *it;
    if (node->backward_fn) {
      for (auto& p : node->parents)
        if (p->requires_grad) p->ensure_grad();
      node->backward_fn(*node);
    }
  }
}

void momentum_update(const ParamSet& online, ParamSet& twin, float m) {
  if (online.items.size() != twin.items.size())
    throw std::invalid_argument("momentum_update: parameter count mismatch");
  for (std::size_t i = 0; i < online.items.size(); ++i) {
    const Tensor& src = online.items[i].second;
    Tensor& dst = twin.items[i].second;
    if (src.shape() != dst.shape())
      throw std::invalid_argument("momentum_update: shape mismatch at " + online.items[i].first);
    float* d = dst.data();
    const float* s = src.data();
    for (std::size_t j = 0; j < src.size(); ++j) d[j] = m * d[j] + (1.f - m) * s[j];
  }
}

ParamSet clone_detached(const ParamSet& src) {
  ParamSet out;
  for (const auto& [k, t] : src.items) out.add(k, t.detach());
  return out;
}

}  // namespace coic
