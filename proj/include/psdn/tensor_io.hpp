#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "psdn/types.hpp"

namespace psdn {

// On-disk tensor: magic "PSDN", version 1, dtype 1 (float32), ndim,
// little-endian u32 dims, row-major little-endian float32 payload.
// Bit-exact round trip on every platform.
struct Tensor {
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  std::size_t size() const;
};

Tensor tensor_from_matrix(const MatF& m);
MatF matrix_from_tensor(const Tensor& t);  // requires ndim == 2

// Rejects non-finite values and ndim > 4.
void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

inline void write_tensor(const std::filesystem::path& path, const MatF& m) {
  write_tensor(path, tensor_from_matrix(m));
}
inline MatF read_matrix(const std::filesystem::path& path) {
  return matrix_from_tensor(read_tensor(path));
}

}  // namespace psdn
