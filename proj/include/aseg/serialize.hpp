#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aseg/tensor.hpp"

namespace aseg::io {

// ATSR tensor file: magic "ATSR", u32 rank, u32 extents (little-endian),
// raw little-endian float32 payload.
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

// binary 8-bit PGM (P5)
void save_pgm(const std::string& path, const std::vector<uint8_t>& pixels, int h, int w);
std::vector<uint8_t> load_pgm(const std::string& path, int& h, int& w);

}  // namespace aseg::io
