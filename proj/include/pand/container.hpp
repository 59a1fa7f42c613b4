#pragma once

#include "pand/core.hpp"

#include <string>
#include <vector>

namespace pand {

// Named-tensor container, little-endian:
//   magic "PANDCKPT" | u32 version=1 | u32 tensor count
//   per tensor: u32 name length | name | u32 rows | u32 cols | rows*cols f32 row-major
//   u32 meta length | meta bytes
//   u64 FNV-1a of everything before it
// Used for student checkpoints and toy dataset exports.

struct NamedTensor {
  std::string name;
  Mat<float> value;
};

struct Container {
  std::vector<NamedTensor> tensors;
  std::string meta;

  const Mat<float>& find(const std::string& name) const;
  bool contains(const std::string& name) const;
};

void save_container(const std::string& path, const Container& container);
Container load_container(const std::string& path);

}  // namespace pand
