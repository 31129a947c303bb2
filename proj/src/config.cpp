#include "coic/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace coic {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string strip_quotes(const std::string& s) {
  if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') ||
                        (s.front() == '\'' && s.back() == '\'')))
    return s.substr(1, s.size() - 2);
  return s;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = strip_quotes(trim(item));
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

float parse_float(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    float f = std::stof(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return f;
  } catch (const std::exception&) {
    throw ConfigError("bad numeric value for '" + key + "': " + v);
  }
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    long n = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return static_cast<int>(n);
  } catch (const std::exception&) {
    throw ConfigError("bad integer value for '" + key + "': " + v);
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("bad boolean value for '" + key + "': " + v);
}

}  // namespace

void TrainConfig::validate() const {
  if (lambda < 0.f) throw ConfigError("lambda must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (patch_size < 8 || patch_size % 8 != 0)
    throw ConfigError("patch_size must be a positive multiple of 8");
  if (lr <= 0.f) throw ConfigError("lr must be > 0");
  if (iterations < 1) throw ConfigError("iterations must be >= 1");
  if (n_b < 1) throw ConfigError("n_b must be >= 1");
  if (!(sigma_low > 0.f) || !(sigma_high > sigma_low))
    throw ConfigError("sigma range must satisfy 0 < low < high");
  if (momentum_m < 0.f || momentum_m > 1.f)
    throw ConfigError("momentum_m must be in [0, 1]");
  if (fidelity != "l1" && fidelity != "mse")
    throw ConfigError("fidelity must be l1 or mse");
  if (model != "unet" && model != "former")
    throw ConfigError("model must be unet or former");
  if (width < 1 || token_dim < 1 || embed_dim < 1)
    throw ConfigError("width, token_dim, embed_dim must be >= 1");
  if (data.empty()) throw ConfigError("data must list at least one manifest");
}

void apply_override(TrainConfig& cfg, const std::string& key, const std::string& value) {
  std::string v = strip_quotes(trim(value));
  if (key == "lambda") cfg.lambda = parse_float(key, v);
  else if (key == "batch_size") cfg.batch_size = parse_int(key, v);
  else if (key == "patch_size") cfg.patch_size = parse_int(key, v);
  else if (key == "lr") cfg.lr = parse_float(key, v);
  else if (key == "iterations") cfg.iterations = parse_int(key, v);
  else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(std::stoull(v));
  else if (key == "n_b") cfg.n_b = parse_int(key, v);
  else if (key == "sigma_low") cfg.sigma_low = parse_float(key, v);
  else if (key == "sigma_high") cfg.sigma_high = parse_float(key, v);
  else if (key == "momentum_m") cfg.momentum_m = parse_float(key, v);
  else if (key == "fidelity") cfg.fidelity = v;
  else if (key == "model") cfg.model = v;
  else if (key == "modulated") cfg.modulated = parse_bool(key, v);
  else if (key == "sample_proportional") cfg.sample_proportional = parse_bool(key, v);
  else if (key == "width") cfg.width = parse_int(key, v);
  else if (key == "token_dim") cfg.token_dim = parse_int(key, v);
  else if (key == "embed_dim") cfg.embed_dim = parse_int(key, v);
  else if (key == "checkpoint_every") cfg.checkpoint_every = parse_int(key, v);
  else if (key == "augment_keys") cfg.augment_keys = parse_bool(key, v);
  else if (key == "data") cfg.data = split_list(v);
  else if (key == "eval_data") cfg.eval_data = split_list(v);
  else throw ConfigError("unknown config key: " + key);
}

TrainConfig parse_config_text(const std::string& text) {
  TrainConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    apply_override(cfg, key, value);
  }
  return cfg;
}

TrainConfig parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

std::string config_to_text(const TrainConfig& c) {
  std::ostringstream o;
  auto list = [](const std::vector<std::string>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
    return s;
  };
  char buf[64];
  auto f = [&buf](float x) {
    std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(x));
    return std::string(buf);
  };
  o << "lambda = " << f(c.lambda) << "\n"
    << "batch_size = " << c.batch_size << "\n"
    << "patch_size = " << c.patch_size << "\n"
    << "lr = " << f(c.lr) << "\n"
    << "iterations = " << c.iterations << "\n"
    << "seed = " << c.seed << "\n"
    << "n_b = " << c.n_b << "\n"
    << "sigma_low = " << f(c.sigma_low) << "\n"
    << "sigma_high = " << f(c.sigma_high) << "\n"
    << "momentum_m = " << f(c.momentum_m) << "\n"
    << "fidelity = " << c.fidelity << "\n"
    << "model = " << c.model << "\n"
    << "modulated = " << (c.modulated ? "true" : "false") << "\n"
    << "sample_proportional = " << (c.sample_proportional ? "true" : "false") << "\n"
    << "width = " << c.width << "\n"
    << "token_dim = " << c.token_dim << "\n"
    << "embed_dim = " << c.embed_dim << "\n"
    << "checkpoint_every = " << c.checkpoint_every << "\n"
    << "augment_keys = " << (c.augment_keys ? "true" : "false") << "\n"
    << "data = " << list(c.data) << "\n"
    << "eval_data = " << list(c.eval_data) << "\n";
  return o.str();
}

std::string config_digest(const TrainConfig& cfg) {
  // FNV-1a over the canonical text form.
  std::string text = config_to_text(cfg);
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace coic
