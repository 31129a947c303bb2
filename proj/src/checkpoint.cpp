#include "coic/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace coic {

namespace {

constexpr char kMagic[8] = {'C', 'O', 'I', 'C', 'K', 'P', 'T', '1'};

void write_u64_le(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64_le(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

// Serialized floats are little endian; this build targets LE hardware.
static_assert(sizeof(float) == 4);

}  // namespace

void Checkpoint::put(const std::string& name, const Tensor& t) {
  put_raw(name, t.shape(), t.values());
}

void Checkpoint::put_raw(const std::string& name, std::vector<int> shape,
                         std::vector<float> data) {
  if (numel(shape) != data.size())
    throw std::invalid_argument("checkpoint put: shape/data size mismatch for " + name);
  if (entries_.count(name))
    throw std::invalid_argument("checkpoint put: duplicate name " + name);
  entries_[name] = Entry{std::move(shape), std::move(data)};
}

void Checkpoint::put_params(const ParamSet& ps, const std::string& prefix) {
  for (const auto& [k, t] : ps.items) put(prefix + k, t);
}

bool Checkpoint::has(const std::string& name) const { return entries_.count(name) > 0; }

const Checkpoint::Entry& Checkpoint::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end())
    throw std::out_of_range("checkpoint: missing tensor " + name);
  return it->second;
}

void Checkpoint::load_tensor(const std::string& name, Tensor& t) const {
  const Entry& e = get(name);
  if (e.shape != t.shape())
    throw std::runtime_error("checkpoint: shape mismatch for " + name);
  t.values() = e.data;
}

void Checkpoint::load_params(ParamSet& ps, const std::string& prefix) const {
  for (auto& [k, t] : ps.items) load_tensor(prefix + k, t);
}

void Checkpoint::save(const std::string& path) const {
  nlohmann::json index;
  index["meta"] = meta;
  std::uint64_t offset = 0;
  nlohmann::json tensors = nlohmann::json::object();
  for (const auto& [name, e] : entries_) {
    tensors[name] = {{"shape", e.shape}, {"dtype", "f32"}, {"offset", offset}};
    offset += e.data.size() * 4;
  }
  index["tensors"] = tensors;
  std::string js = index.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot write " + path);
  f.write(kMagic, 8);
  write_u64_le(f, js.size());
  f.write(js.data(), static_cast<std::streamsize>(js.size()));
  for (const auto& [name, e] : entries_)
    f.write(reinterpret_cast<const char*>(e.data.data()),
            static_cast<std::streamsize>(e.data.size() * 4));
  if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  std::uint64_t js_len = read_u64_le(f);
  std::string js(js_len, '\0');
  f.read(js.data(), static_cast<std::streamsize>(js_len));
  if (!f) throw std::runtime_error("checkpoint: truncated index in " + path);
  nlohmann::json index = nlohmann::json::parse(js);

  Checkpoint ck;
  ck.meta = index.value("meta", nlohmann::json::object());
  std::uint64_t payload_start = 8 + 8 + js_len;
  for (auto& [name, desc] : index.at("tensors").items()) {
    if (desc.at("dtype").get<std::string>() != "f32")
      throw std::runtime_error("checkpoint: unsupported dtype for " + name);
    Entry e;
    e.shape = desc.at("shape").get<std::vector<int>>();
    std::uint64_t off = desc.at("offset").get<std::uint64_t>();
    e.data.resize(numel(e.shape));
    f.seekg(static_cast<std::streamoff>(payload_start + off));
    f.read(reinterpret_cast<char*>(e.data.data()),
           static_cast<std::streamsize>(e.data.size() * 4));
    if (!f) throw std::runtime_error("checkpoint: truncated payload for " + name);
    ck.entries_[name] = std::move(e);
  }
  return ck;
}

}  // namespace coic
