// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cmath>
#include <cstdint>

namespace flowkern {

/// Brain floating point: the upper 16 bits of an IEEE-754 binary32.
struct Bf16 {
  std::uint16_t bits = 0;

  static constexpr Bf16 from_bits(std::uint16_t b) { return Bf16{b}; }

  float to_float() const {
    return std::bit_cast<float>(static_cast<std::uint32_t>(bits) << 16);
  }

  friend constexpr bool operator==(Bf16, Bf16) = default;
};

/// Round-to-nearest-even conversion. NaN stays NaN (forced quiet), infinities
/// and signed zeros are preserved, subnormals are kept rather than flushed.
inline Bf16 bf16_round(float x) {
  std::uint32_t u = std::bit_cast<std::uint32_t>(x);
  if (std::isnan(x)) {
    return Bf16{static_cast<std::uint16_t>((u >> 16) | 0x0040u)};
  }
  u += 0x7FFFu + ((u >> 16) & 1u);
  return Bf16{static_cast<std::uint16_t>(u >> 16)};
}

/// x rounded to the nearest bf16 value, returned as float.
inline float round_bf16(float x) { return bf16_round(x).to_float(); }

/// Whether kernel outputs are left in float32 or rounded to bf16 on write-out.
enum class OutputRounding { kNone, kBf16 };

inline float apply_rounding(float x, OutputRounding r) {
  return r == OutputRounding::kBf16 ? round_bf16(x) : x;
}

}  // namespace flowkern
