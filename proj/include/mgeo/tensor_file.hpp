#pragma once

// Named-tensor container in the safetensors layout:
//   u64 little-endian header length N, N bytes of JSON header, raw payload.
// Only F32 tensors are read or written.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace mgeo {

struct NamedTensor {
  std::vector<std::int64_t> shape;
  std::vector<float> values;

  std::size_t element_count() const;
};

struct TensorFile {
  std::map<std::string, NamedTensor> tensors;
  std::map<std::string, std::string> metadata;

  const NamedTensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return tensors.count(name) != 0; }
};

/// Tensors are written in lexicographic name order; identical input gives identical bytes.
void write_tensor_file(const std::filesystem::path& path, const TensorFile& file);
TensorFile read_tensor_file(const std::filesystem::path& path);

}  // namespace mgeo
