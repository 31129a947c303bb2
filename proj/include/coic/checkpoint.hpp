#pragma once
// Checkpoint archive: a JSON index {name -> shape, dtype, offset} followed by
// raw little-endian float32 buffers. Loaders verify shapes before copying.

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "coic/tensor.hpp"

namespace coic {

class Checkpoint {
 public:
  struct Entry {
    std::vector<int> shape;
    std::vector<float> data;
  };

  // Value copies; names must be unique.
  void put(const std::string& name, const Tensor& t);
  void put_raw(const std::string& name, std::vector<int> shape, std::vector<float> data);
  void put_params(const ParamSet& ps, const std::string& prefix);

  bool has(const std::string& name) const;
  const Entry& get(const std::string& name) const;  // throws if missing
  // Copies values into the tensor; shape mismatch throws.
  void load_tensor(const std::string& name, Tensor& t) const;
  void load_params(ParamSet& ps, const std::string& prefix) const;

  nlohmann::json meta;  // scalar state: step, rng, loss history, config

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  const std::map<std::string, Entry>& entries() const { return entries_; }

 private:
  std::map<std::string, Entry> entries_;
};

}  // namespace coic
