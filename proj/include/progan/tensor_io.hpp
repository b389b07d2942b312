#pragma once

#include <filesystem>
#include <iosfwd>

#include "progan/tensor.hpp"

namespace progan {

// TNSR1 layout: the 5 magic bytes "TNSR1", little-endian u32 rank, rank
// little-endian u32 extents, then the raw little-endian float32 values.

void write_tensor(std::ostream& out, const Tensor& tensor);
Tensor read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace progan
