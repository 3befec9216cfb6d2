#pragma once

#include <filesystem>
#include <iosfwd>

#include "storyboard/tensor.hpp"

namespace storyboard {

// File layout: one UTF-8 JSON header line
//   {"shape":[...],"dtype":"f32","order":"row-major"}
// then '\n' and the little-endian float32 payload.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace storyboard
