#pragma once

#include "pand/core.hpp"

#include <map>
#include <string>

namespace pand {

// Flat dotted-key configuration.
//
// File grammar, one entry per line:
//   key = value
// '#' starts a comment, blank lines are ignored. Keys must exist in the
// registry; types are checked when a value is set. `--set key=value`
// overrides are applied after the file, `--seed` before `--set`.
//
// Sub-seeds (data.seed, encoder.seed, student.seed, psc.seed, nsd.seed)
// default to -1, meaning "derive from the master `seed` key". resolved()
// replaces them, so the echoed config and its hash always show concrete
// seed values.

enum class KeyType { Int, Float, Bool, Str };

struct KeySpec {
  const char* key;
  KeyType type;
  const char* default_value;
};

class Config {
 public:
  static const std::vector<KeySpec>& registry();

  /// All registry defaults.
  static Config defaults();

  /// defaults() overlaid with the entries of a config file.
  static Config from_file(const std::string& path);

  /// Parses config text (same grammar as from_file).
  static Config from_text(const std::string& text);

  void set(const std::string& key, const std::string& value);

  /// "key=value" as passed to --set.
  void apply_override(const std::string& assignment);

  /// Sets the master seed key.
  void set_master_seed(long long seed);

  bool has(const std::string& key) const;
  long long get_int(const std::string& key) const;
  double get_float(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  const std::string& get_str(const std::string& key) const;

  /// Copy with all derived sub-seeds replaced by concrete values.
  Config resolved() const;

  /// Sorted "key = value" lines; the canonical echo of a resolved config.
  std::string canonical() const;

  std::uint64_t hash() const { return fnv1a64(canonical()); }

 private:
  static const KeySpec& spec_for(const std::string& key);
  std::map<std::string, std::string> values_;
};

}  // namespace pand
