// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"
#include "flowkern/bf16.hpp"

#include <cmath>
#include <limits>
#include <random>

using flowkern::Bf16;
using flowkern::bf16_round;

TEST_CASE("exact values keep their bits") {
  CHECK(bf16_round(1.0f).bits == 0x3F80);
  CHECK(bf16_round(0.0f).bits == 0x0000);
  CHECK(bf16_round(-2.0f).bits == 0xC000);
}

TEST_CASE("ties round to the even mantissa") {
  // 1 + 2^-8 sits halfway between 0x3F80 and 0x3F81.
  CHECK(bf16_round(1.00390625f).bits == 0x3F80);
  // 1 + 3*2^-8 sits halfway between 0x3F81 and 0x3F82.
  CHECK(bf16_round(1.01171875f).bits == 0x3F82);
  // Just above the tie goes up.
  CHECK(bf16_round(std::nextafter(1.00390625f, 2.0f)).bits == 0x3F81);
}

TEST_CASE("NaN stays NaN and infinities survive") {
  CHECK(std::isnan(bf16_round(std::numeric_limits<float>::quiet_NaN()).to_float()));
  CHECK(std::isinf(bf16_round(std::numeric_limits<float>::infinity()).to_float()));
}

TEST_CASE("bf16 to float to bf16 is the identity") {
  for (std::uint32_t b = 0; b < 0x10000; ++b) {
    const Bf16 x = Bf16::from_bits(static_cast<std::uint16_t>(b));
    const float f = x.to_float();
    if (std::isnan(f)) continue;
    REQUIRE(bf16_round(f).bits == x.bits);
  }
}

TEST_CASE("rounding picks the nearest neighbour") {
  std::mt19937 rng(3);
  std::uniform_real_distribution<float> dist(-1e4f, 1e4f);
  for (int i = 0; i < 20000; ++i) {
    const float x = dist(rng);
    const Bf16 r = bf16_round(x);
    const Bf16 up = Bf16::from_bits(static_cast<std::uint16_t>(r.bits + 1));
    const Bf16 dn = Bf16::from_bits(static_cast<std::uint16_t>(r.bits - 1));
    const float err = std::abs(r.to_float() - x);
    CHECK(err <= std::abs(up.to_float() - x));
    CHECK(err <= std::abs(dn.to_float() - x));
  }
}
