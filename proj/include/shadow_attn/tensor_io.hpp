#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <variant>

#include "shadow_attn/tensor.hpp"

namespace shadow_attn {

// Binary tensor file, all integers little-endian:
//   "SATN" | u32 version (=1) | u8 dtype (0 f32, 1 i8) | u8 ndim |
//   ndim x u64 dims | f32 scale (i8 only) | row-major payload
inline constexpr char kTensorMagic[4] = {'S', 'A', 'T', 'N'};
inline constexpr std::uint32_t kTensorFormatVersion = 1;

enum class DType : std::uint8_t { f32 = 0, i8 = 1 };

using AnyTensor = std::variant<Tensor, QuantizedTensor>;

void write_tensor(std::ostream& out, const Tensor& t);
void write_tensor(std::ostream& out, const QuantizedTensor& q);
AnyTensor read_any_tensor(std::istream& in);

void write_tensor(const std::filesystem::path& path, const Tensor& t);
void write_tensor(const std::filesystem::path& path, const QuantizedTensor& q);

/// Reads a float tensor; an i8 file is rejected as malformed.
Tensor read_tensor(const std::filesystem::path& path);
QuantizedTensor read_quantized_tensor(const std::filesystem::path& path);
AnyTensor read_any_tensor(const std::filesystem::path& path);

}  // namespace shadow_attn
