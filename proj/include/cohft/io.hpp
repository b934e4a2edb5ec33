#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "cohft/tensor.hpp"

// CHFT tensor files.
//
//   "CHFT" | u16 version=1 | u8 dtype (0=f32, 1=f64) | u8 ndim | ndim x u32 extents | payload
//
// All integers and the row-major payload are little-endian. A named
// collection (weights, checkpoints) is stored as
//
//   "CHFN" | u16 version=1 | u32 count | count x (u16 name length | name bytes | CHFT record)
//
// with entries kept in definition order.
namespace cohft::io {

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_tensor(std::ostream& os, const Tensor& t, DType dtype = DType::F64);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t, DType dtype = DType::F64);
Tensor load_tensor(const std::filesystem::path& path);

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

void write_named(std::ostream& os, const NamedTensors& entries, DType dtype = DType::F64);
NamedTensors read_named(std::istream& is);

void save_named(const std::filesystem::path& path, const NamedTensors& entries, DType dtype = DType::F64);
NamedTensors load_named(const std::filesystem::path& path);

}  // namespace cohft::io
