#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cfr/tensor.hpp"

namespace cfr {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// CFRT container, little-endian throughout:
///
///   "CFRT"            4 bytes
///   version           u8 (= 1)
///   entry count       u32
///   per entry:
///     name length     u16, then that many UTF-8 bytes
///     ndim            u8, then ndim × u32 extents
///     payload         product(dims) × IEEE-754 binary32, row-major
///
/// Values are stored at 32-bit precision; in-memory tensors are 64-bit.
inline constexpr std::uint8_t kTensorFileVersion = 1;

std::vector<std::uint8_t> encode_tensors(std::span<const NamedTensor> tensors);
/// Throws FormatError (bad magic/version/header) or CorruptionError naming the entry.
std::vector<NamedTensor> decode_tensors(std::span<const std::uint8_t> bytes);

void write_tensors(const std::filesystem::path& path, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> read_tensors(const std::filesystem::path& path);

/// Looks up an entry by name; throws InputError if absent.
const Tensor& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name);

/// Raw file helpers shared by the other writers.
void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text(const std::filesystem::path& path, const std::string& text);
std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);

}  // namespace cfr
