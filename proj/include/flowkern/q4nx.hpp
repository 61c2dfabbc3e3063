// SPDX-License-Identifier: Apache-2.0
//
// Q4NX: 4-bit block quantization. A block covers 32 output rows by 256 input
// columns. Groups of 32 consecutive input columns share one bf16 scale and one
// bf16 minimum offset, so a block row holds 8 groups and a block 256 groups.
//
//   w_hat = bf16(float(scale) * code + float(min)),  code in [0, 15]
//
// Group g of a block lives at row g / 8, columns [32 * (g % 8), 32 * (g % 8) + 32).
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "flowkern/bf16.hpp"
#include "flowkern/matrix.hpp"

namespace flowkern::q4nx {

inline constexpr std::size_t kBlockRows = 32;
inline constexpr std::size_t kBlockCols = 256;
inline constexpr std::size_t kGroupSize = 32;
inline constexpr std::size_t kGroupsPerRow = kBlockCols / kGroupSize;
inline constexpr std::size_t kGroupsPerBlock = kBlockRows * kGroupsPerRow;
inline constexpr std::size_t kCodeBytes = kBlockRows * kBlockCols / 2;
inline constexpr std::size_t kBlockBytes = kCodeBytes + 2 * 2 * kGroupsPerBlock;
static_assert(kGroupsPerBlock == 256);
static_assert(kBlockBytes == 5120);

inline constexpr std::size_t group_index(std::size_t row, std::size_t col) {
  return row * kGroupsPerRow + col / kGroupSize;
}

class Block {
 public:
  std::uint8_t code(std::size_t row, std::size_t col) const {
    const std::uint8_t byte = codes_[(row * kBlockCols + col) / 2];
    return (col & 1u) ? static_cast<std::uint8_t>(byte >> 4)
                      : static_cast<std::uint8_t>(byte & 0x0Fu);
  }
  void set_code(std::size_t row, std::size_t col, std::uint8_t value);

  Bf16 scale(std::size_t group) const { return scales_[group]; }
  Bf16 min(std::size_t group) const { return mins_[group]; }
  void set_scale(std::size_t group, Bf16 v) { scales_[group] = v; }
  void set_min(std::size_t group, Bf16 v) { mins_[group] = v; }

  /// Packed nibbles, row-major; even column in the low nibble.
  std::span<const std::uint8_t, kCodeBytes> packed_codes() const {
    return codes_;
  }

  friend bool operator==(const Block&, const Block&) = default;

 private:
  std::array<std::uint8_t, kCodeBytes> codes_{};
  std::array<Bf16, kGroupsPerBlock> scales_{};
  std::array<Bf16, kGroupsPerBlock> mins_{};
};

/// w_hat = d * q + m in float32, rounded to bf16.
inline float dequantize_value(Bf16 scale, Bf16 min, std::uint8_t code) {
  return round_bf16(scale.to_float() * static_cast<float>(code) +
                    min.to_float());
}

/// Quantizes a 32×256 row-major tile. Throws InvalidArgument on non-finite
/// input.
Block quantize_block(std::span<const float> weights);

/// Same, but only the top-left valid_rows × valid_cols region carries data.
/// Elements outside it are excluded from the group statistics and get code 0;
/// groups with no valid element get scale = min = 0.
Block quantize_block(std::span<const float> weights, std::size_t valid_rows,
                     std::size_t valid_cols);

MatrixBf16 dequantize_block(const Block& block);

/// 4096 code bytes, 256 little-endian scales, 256 little-endian mins.
std::array<std::uint8_t, kBlockBytes> serialize_block(const Block& block);
Block parse_block(std::span<const std::uint8_t> bytes);

/// Tensor stored as a row-major grid of blocks, zero padded to multiples of
/// 32 rows and 256 columns.
struct Tensor {
  std::size_t logical_rows = 0;
  std::size_t logical_cols = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<Block> blocks;

  std::size_t block_rows() const { return rows / kBlockRows; }
  std::size_t block_cols() const { return cols / kBlockCols; }
  const Block& block(std::size_t br, std::size_t bc) const {
    return blocks[br * block_cols() + bc];
  }
  bool is_padding(std::size_t row, std::size_t col) const {
    return row >= logical_rows || col >= logical_cols;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

std::size_t padded_rows(std::size_t rows);
std::size_t padded_cols(std::size_t cols);

Tensor quantize_tensor(const MatrixF& weights);

/// Logical M×K result; padding is stripped.
MatrixBf16 dequantize_tensor(const Tensor& tensor);

/// Full padded grid; every padding position is exactly zero.
MatrixBf16 dequantize_tensor_padded(const Tensor& tensor);

// Container file: "Q4NX" | u32 version | u64 logical_rows | u64 logical_cols |
// u32 group_size | u64 rows | u64 cols | blocks (row-major grid, 5120 B each).
// All integers little-endian.
inline constexpr std::uint32_t kContainerVersion = 1;
inline constexpr std::size_t kContainerHeaderBytes = 4 + 4 + 8 + 8 + 4 + 8 + 8;

struct ContainerHeader {
  std::uint32_t version = kContainerVersion;
  std::uint64_t logical_rows = 0;
  std::uint64_t logical_cols = 0;
  std::uint32_t group_size = kGroupSize;
  std::uint64_t rows = 0;
  std::uint64_t cols = 0;
};

std::vector<std::uint8_t> write_container(const Tensor& tensor);
ContainerHeader read_container_header(std::span<const std::uint8_t> bytes);
Tensor read_container(std::span<const std::uint8_t> bytes);

void save(const Tensor& tensor, const std::filesystem::path& path);
Tensor load(const std::filesystem::path& path);

}  // namespace flowkern::q4nx
