// SPDX-License-Identifier: Apache-2.0
#include "flowkern/q4nx.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>

namespace flowkern::q4nx {

void Block::set_code(std::size_t row, std::size_t col, std::uint8_t value) {
  if (value > 15) throw InvalidArgument("q4nx: code out of range");
  std::uint8_t& byte = codes_[(row * kBlockCols + col) / 2];
  if (col & 1u) {
    byte = static_cast<std::uint8_t>((byte & 0x0Fu) | (value << 4));
  } else {
    byte = static_cast<std::uint8_t>((byte & 0xF0u) | value);
  }
}

Block quantize_block(std::span<const float> weights) {
  return quantize_block(weights, kBlockRows, kBlockCols);
}

Block quantize_block(std::span<const float> weights, std::size_t valid_rows,
                     std::size_t valid_cols) {
  if (weights.size() != kBlockRows * kBlockCols) {
    throw ShapeError("quantize_block: expected 32x256 weights");
  }
  for (float w : weights) {
    if (!std::isfinite(w)) {
      throw InvalidArgument("quantize_block: non-finite weight");
    }
  }

  Block block;
  for (std::size_t row = 0; row < valid_rows && row < kBlockRows; ++row) {
    for (std::size_t g = 0; g < kGroupsPerRow; ++g) {
      const std::size_t col0 = g * kGroupSize;
      const std::size_t count =
          valid_cols > col0 ? std::min(kGroupSize, valid_cols - col0) : 0;
      if (count == 0) continue;

      const float* src = weights.data() + row * kBlockCols + col0;
      const auto [lo, hi] = std::minmax_element(src, src + count);
      const Bf16 min = bf16_round(*lo);
      const Bf16 scale =
          *hi == *lo ? Bf16{} : bf16_round((*hi - *lo) / 15.0f);
      const std::size_t group = group_index(row, col0);
      block.set_min(group, min);
      block.set_scale(group, scale);

      const float d = scale.to_float();
      const float m = min.to_float();
      if (d == 0.0f) continue;
      for (std::size_t i = 0; i < count; ++i) {
        const float q = std::clamp(std::nearbyint((src[i] - m) / d), 0.0f, 15.0f);
        // Near a midpoint the bf16 output rounding can favour the other
        // neighbour; keep whichever code dequantizes closer to the weight.
        auto code = static_cast<std::uint8_t>(q);
        float best = std::abs(dequantize_value(scale, min, code) - src[i]);
        for (int step : {-1, 1}) {
          const int alt = static_cast<int>(q) + step;
          if (alt < 0 || alt > 15) continue;
          const auto c = static_cast<std::uint8_t>(alt);
          const float err = std::abs(dequantize_value(scale, min, c) - src[i]);
          if (err < best) {
            best = err;
            code = c;
          }
        }
        block.set_code(row, col0 + i, code);
      }
    }
  }
  return block;
}

MatrixBf16 dequantize_block(const Block& block) {
  MatrixBf16 out(kBlockRows, kBlockCols);
  for (std::size_t r = 0; r < kBlockRows; ++r) {
    for (std::size_t c = 0; c < kBlockCols; ++c) {
      const std::size_t g = group_index(r, c);
      out(r, c) = bf16_round(
          dequantize_value(block.scale(g), block.min(g), block.code(r, c)));
    }
  }
  return out;
}

namespace {

void put_u16(std::uint8_t* dst, std::uint16_t v) {
  dst[0] = static_cast<std::uint8_t>(v & 0xFFu);
  dst[1] = static_cast<std::uint8_t>(v >> 8);
}

std::uint16_t get_u16(const std::uint8_t* src) {
  return static_cast<std::uint16_t>(src[0] | (src[1] << 8));
}

template <typename U>
void append_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFFu));
  }
}

template <typename U>
U read_le(std::span<const std::uint8_t> bytes, std::size_t& offset) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    v |= static_cast<U>(bytes[offset + i]) << (8 * i);
  }
  offset += sizeof(U);
  return v;
}

}  // namespace

std::array<std::uint8_t, kBlockBytes> serialize_block(const Block& block) {
  std::array<std::uint8_t, kBlockBytes> out{};
  const auto codes = block.packed_codes();
  std::copy(codes.begin(), codes.end(), out.begin());
  std::uint8_t* scales = out.data() + kCodeBytes;
  std::uint8_t* mins = scales + 2 * kGroupsPerBlock;
  for (std::size_t g = 0; g < kGroupsPerBlock; ++g) {
    put_u16(scales + 2 * g, block.scale(g).bits);
    put_u16(mins + 2 * g, block.min(g).bits);
  }
  return out;
}

Block parse_block(std::span<const std::uint8_t> bytes) {
  if (bytes.size() != kBlockBytes) {
    throw FormatError("q4nx block: expected 5120 bytes, got " +
                      std::to_string(bytes.size()));
  }
  Block block;
  for (std::size_t i = 0; i < kCodeBytes; ++i) {
    const std::size_t idx = 2 * i;
    block.set_code(idx / kBlockCols, idx % kBlockCols, bytes[i] & 0x0Fu);
    block.set_code(idx / kBlockCols, idx % kBlockCols + 1, bytes[i] >> 4);
  }
  const std::uint8_t* scales = bytes.data() + kCodeBytes;
  const std::uint8_t* mins = scales + 2 * kGroupsPerBlock;
  for (std::size_t g = 0; g < kGroupsPerBlock; ++g) {
    block.set_scale(g, Bf16::from_bits(get_u16(scales + 2 * g)));
    block.set_min(g, Bf16::from_bits(get_u16(mins + 2 * g)));
  }
  return block;
}

std::size_t padded_rows(std::size_t rows) {
  return (rows + kBlockRows - 1) / kBlockRows * kBlockRows;
}

std::size_t padded_cols(std::size_t cols) {
  return (cols + kBlockCols - 1) / kBlockCols * kBlockCols;
}

Tensor quantize_tensor(const MatrixF& weights) {
  Tensor t;
  t.logical_rows = weights.rows();
  t.logical_cols = weights.cols();
  t.rows = padded_rows(weights.rows());
  t.cols = padded_cols(weights.cols());
  t.blocks.reserve(t.block_rows() * t.block_cols());

  std::vector<float> tile(kBlockRows * kBlockCols);
  for (std::size_t br = 0; br < t.block_rows(); ++br) {
    for (std::size_t bc = 0; bc < t.block_cols(); ++bc) {
      const std::size_t r0 = br * kBlockRows;
      const std::size_t c0 = bc * kBlockCols;
      const std::size_t valid_rows = std::min(kBlockRows, t.logical_rows - r0);
      const std::size_t valid_cols = std::min(kBlockCols, t.logical_cols - c0);
      std::fill(tile.begin(), tile.end(), 0.0f);
      for (std::size_t r = 0; r < valid_rows; ++r) {
        const auto src = weights.row(r0 + r).subspan(c0, valid_cols);
        std::copy(src.begin(), src.end(), tile.begin() + r * kBlockCols);
      }
      t.blocks.push_back(quantize_block(tile, valid_rows, valid_cols));
    }
  }
  return t;
}

MatrixBf16 dequantize_tensor_padded(const Tensor& tensor) {
  MatrixBf16 out(tensor.rows, tensor.cols);
  for (std::size_t br = 0; br < tensor.block_rows(); ++br) {
    for (std::size_t bc = 0; bc < tensor.block_cols(); ++bc) {
      const Block& b = tensor.block(br, bc);
      for (std::size_t r = 0; r < kBlockRows; ++r) {
        const std::size_t row = br * kBlockRows + r;
        for (std::size_t c = 0; c < kBlockCols; ++c) {
          const std::size_t col = bc * kBlockCols + c;
          if (tensor.is_padding(row, col)) continue;
          const std::size_t g = group_index(r, c);
          out(row, col) =
              bf16_round(dequantize_value(b.scale(g), b.min(g), b.code(r, c)));
        }
      }
    }
  }
  return out;
}

MatrixBf16 dequantize_tensor(const Tensor& tensor) {
  const MatrixBf16 padded = dequantize_tensor_padded(tensor);
  MatrixBf16 out(tensor.logical_rows, tensor.logical_cols);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    const auto src = padded.row(r).first(out.cols());
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

std::vector<std::uint8_t> write_container(const Tensor& tensor) {
  std::vector<std::uint8_t> out;
  out.reserve(kContainerHeaderBytes + tensor.blocks.size() * kBlockBytes);
  out.insert(out.end(), {'Q', '4', 'N', 'X'});
  append_le<std::uint32_t>(out, kContainerVersion);
  append_le<std::uint64_t>(out, tensor.logical_rows);
  append_le<std::uint64_t>(out, tensor.logical_cols);
  append_le<std::uint32_t>(out, static_cast<std::uint32_t>(kGroupSize));
  append_le<std::uint64_t>(out, tensor.rows);
  append_le<std::uint64_t>(out, tensor.cols);
  for (const Block& b : tensor.blocks) {
    const auto bytes = serialize_block(b);
    out.insert(out.end(), bytes.begin(), bytes.end());
  }
  return out;
}

ContainerHeader read_container_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kContainerHeaderBytes) {
    throw FormatError("q4nx container: truncated header");
  }
  if (std::memcmp(bytes.data(), "Q4NX", 4) != 0) {
    throw FormatError("q4nx container: bad magic");
  }
  std::size_t off = 4;
  ContainerHeader h;
  h.version = read_le<std::uint32_t>(bytes, off);
  h.logical_rows = read_le<std::uint64_t>(bytes, off);
  h.logical_cols = read_le<std::uint64_t>(bytes, off);
  h.group_size = read_le<std::uint32_t>(bytes, off);
  h.rows = read_le<std::uint64_t>(bytes, off);
  h.cols = read_le<std::uint64_t>(bytes, off);

  if (h.version != kContainerVersion) {
    throw FormatError("q4nx container: unsupported version " +
                      std::to_string(h.version));
  }
  if (h.group_size != kGroupSize) {
    throw FormatError("q4nx container: unsupported group size");
  }
  if (h.rows != padded_rows(h.logical_rows) ||
      h.cols != padded_cols(h.logical_cols)) {
    throw FormatError("q4nx container: inconsistent padded dims");
  }
  const std::uint64_t blocks = (h.rows / kBlockRows) * (h.cols / kBlockCols);
  if (bytes.size() != kContainerHeaderBytes + blocks * kBlockBytes) {
    throw FormatError("q4nx container: payload length " +
                      std::to_string(bytes.size() - kContainerHeaderBytes) +
                      " does not match " + std::to_string(blocks) + " blocks");
  }
  return h;
}

Tensor read_container(std::span<const std::uint8_t> bytes) {
  const ContainerHeader h = read_container_header(bytes);
  Tensor t;
  t.logical_rows = h.logical_rows;
  t.logical_cols = h.logical_cols;
  t.rows = h.rows;
  t.cols = h.cols;
  const std::size_t count = t.block_rows() * t.block_cols();
  t.blocks.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    t.blocks.push_back(parse_block(
        bytes.subspan(kContainerHeaderBytes + i * kBlockBytes, kBlockBytes)));
  }
  return t;
}

void save(const Tensor& tensor, const std::filesystem::path& path) {
  const auto bytes = write_container(tensor);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path.string());
}

Tensor load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  return read_container(bytes);
}

}  // namespace flowkern::q4nx
