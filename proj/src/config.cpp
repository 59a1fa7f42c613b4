#include "pand/config.hpp"

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace pand {

const std::vector<KeySpec>& Config::registry() {
  static const std::vector<KeySpec> kRegistry = {
      {"seed", KeyType::Int, "0"},

      {"data.kind", KeyType::Str, "toy"},  // toy | folder | container
      {"data.root", KeyType::Str, ""},
      {"data.train_split", KeyType::Str, "train.txt"},
      {"data.test_split", KeyType::Str, "test.txt"},
      {"data.classes", KeyType::Int, "10"},
      {"data.per_class", KeyType::Int, "50"},
      {"data.dim", KeyType::Int, "16"},
      {"data.separation", KeyType::Float, "1.0"},
      {"data.noise", KeyType::Float, "0.1"},
      {"data.seed", KeyType::Int, "-1"},

      {"encoder.feature_dim", KeyType::Int, "64"},
      {"encoder.token_dim", KeyType::Int, "32"},
      {"encoder.seed", KeyType::Int, "-1"},

      {"student.hidden_dim", KeyType::Int, "8"},
      {"student.feature_dim", KeyType::Int, "8"},
      {"student.seed", KeyType::Int, "-1"},

      {"psc.lr", KeyType::Float, "0.002"},
      {"psc.momentum", KeyType::Float, "0.9"},
      {"psc.weight_decay", KeyType::Float, "0.0"},
      {"psc.epochs", KeyType::Int, "200"},
      {"psc.batch_size", KeyType::Int, "128"},
      {"psc.tau", KeyType::Float, "0.07"},
      {"psc.n_ctx", KeyType::Int, "16"},
      {"psc.symmetric", KeyType::Bool, "false"},
      {"psc.grad_clip", KeyType::Float, "5.0"},
      {"psc.anchor_mode", KeyType::Str, "learned"},  // learned | template
      {"psc.seed", KeyType::Int, "-1"},

      {"nsd.lr", KeyType::Float, "1e-4"},
      {"nsd.weight_decay", KeyType::Float, "1e-4"},
      {"nsd.epochs", KeyType::Int, "300"},
      {"nsd.batch_size", KeyType::Int, "128"},
      {"nsd.min_lr", KeyType::Float, "1e-5"},
      {"nsd.grad_clip", KeyType::Float, "5.0"},
      {"nsd.nsd_temperature", KeyType::Float, "1.0"},
      {"nsd.seed", KeyType::Int, "-1"},
      {"nsd.weights.lambda_cls", KeyType::Float, "0.01"},
      {"nsd.weights.lambda_vis", KeyType::Float, "0.495"},
      {"nsd.weights.lambda_txt", KeyType::Float, "0.495"},
      {"nsd.weights.lambda_nsd", KeyType::Float, "0.5"},
      {"nsd.weights.tau", KeyType::Float, "2.0"},
      {"nsd.weights.k", KeyType::Int, "3"},
      {"nsd.weights.schedule", KeyType::Str, "fixed"},  // fixed | linear
      {"nsd.weights.lambda_cls_end", KeyType::Float, "-1"},
      {"nsd.weights.lambda_vis_end", KeyType::Float, "-1"},
      {"nsd.weights.lambda_txt_end", KeyType::Float, "-1"},
      {"nsd.weights.lambda_nsd_end", KeyType::Float, "-1"},

      {"sweep.grid", KeyType::Str, "0,0.25,0.5,0.75,1.0"},

      {"paths.anchors", KeyType::Str, "anchors.bin"},
      {"paths.checkpoints", KeyType::Str, "student.ckpt"},
      {"paths.metrics", KeyType::Str, "metrics.jsonl"},
  };
  return kRegistry;
}

const KeySpec& Config::spec_for(const std::string& key) {
  for (const auto& spec : registry()) {
    if (key == spec.key) return spec;
  }
  throw ConfigError("unknown config key: " + key);
}

namespace {

bool parse_int(const std::string& s, long long* out) {
  if (s.empty()) return false;
  char* end = nullptr;
  errno = 0;
  long long v = std::strtoll(s.c_str(), &end, 10);
  if (errno != 0 || end != s.c_str() + s.size()) return false;
  *out = v;
  return true;
}

bool parse_float(const std::string& s, double* out) {
  if (s.empty()) return false;
  char* end = nullptr;
  errno = 0;
  double v = std::strtod(s.c_str(), &end);
  if (errno != 0 || end != s.c_str() + s.size()) return false;
  *out = v;
  return true;
}

bool parse_bool(const std::string& s, bool* out) {
  if (s == "true" || s == "1") { *out = true; return true; }
  if (s == "false" || s == "0") { *out = false; return true; }
  return false;
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

Config Config::defaults() {
  Config c;
  for (const auto& spec : registry()) c.values_[spec.key] = spec.default_value;
  return c;
}

Config Config::from_text(const std::string& text) {
  Config c = defaults();
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected 'key = value', got '" + line + "'");
    }
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

Config Config::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_text(buf.str());
}

void Config::set(const std::string& key, const std::string& value) {
  const KeySpec& spec = spec_for(key);
  switch (spec.type) {
    case KeyType::Int: {
      long long v;
      if (!parse_int(value, &v))
        throw ConfigError("config key " + key + ": '" + value + "' is not an integer");
      break;
    }
    case KeyType::Float: {
      double v;
      if (!parse_float(value, &v))
        throw ConfigError("config key " + key + ": '" + value + "' is not a number");
      break;
    }
    case KeyType::Bool: {
      bool v;
      if (!parse_bool(value, &v))
        throw ConfigError("config key " + key + ": '" + value + "' is not a boolean");
      break;
    }
    case KeyType::Str:
      break;
  }
  values_[key] = value;
}

void Config::apply_override(const std::string& assignment) {
  std::size_t eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("--set expects key=value, got '" + assignment + "'");
  }
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void Config::set_master_seed(long long seed) {
  values_["seed"] = std::to_string(seed);
}

bool Config::has(const std::string& key) const {
  return values_.count(key) != 0;
}

long long Config::get_int(const std::string& key) const {
  const KeySpec& spec = spec_for(key);
  if (spec.type != KeyType::Int) throw ConfigError("config key " + key + " is not an integer");
  long long v = 0;
  parse_int(values_.at(key), &v);
  return v;
}

double Config::get_float(const std::string& key) const {
  const KeySpec& spec = spec_for(key);
  if (spec.type != KeyType::Float && spec.type != KeyType::Int)
    throw ConfigError("config key " + key + " is not numeric");
  double v = 0;
  parse_float(values_.at(key), &v);
  return v;
}

bool Config::get_bool(const std::string& key) const {
  const KeySpec& spec = spec_for(key);
  if (spec.type != KeyType::Bool) throw ConfigError("config key " + key + " is not a boolean");
  bool v = false;
  parse_bool(values_.at(key), &v);
  return v;
}

const std::string& Config::get_str(const std::string& key) const {
  spec_for(key);
  return values_.at(key);
}

Config Config::resolved() const {
  Config c = *this;
  const long long master = get_int("seed");
  // Fixed offsets keep stage streams independent of each other.
  const std::pair<const char*, long long> derived[] = {
      {"data.seed", 1}, {"encoder.seed", 2}, {"student.seed", 3},
      {"psc.seed", 4},  {"nsd.seed", 5},
  };
  for (const auto& [key, offset] : derived) {
    if (c.get_int(key) == -1) {
      c.values_[key] = std::to_string(master * 1000 + offset);
    }
  }
  return c;
}

std::string Config::canonical() const {
  std::string out;
  for (const auto& [key, value] : values_) {
    out += key;
    out += " = ";
    out += value;
    out += "\n";
  }
  return out;
}

}  // namespace pand
