#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <string_view>

#include "oblv/common.hpp"

namespace oblv {

// ChaCha20 keystream generator. Seeded instances are fully deterministic
// (tests, simulated runs); os() instances draw their key from the system CSPRNG.
class Rng {
 public:
  using result_type = std::uint64_t;

  static Rng from_seed(std::uint64_t seed);
  static Rng os();

  // Independent child stream; the parent advances by one key's worth of output.
  Rng fork(std::string_view label);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()();

  // Unbiased integer in [0, bound). bound must be > 0.
  std::uint64_t uniform(std::uint64_t bound);
  double unit();  // [0, 1)
  void fill(MutableByteSpan out);

 private:
  explicit Rng(const std::array<std::uint8_t, 32>& key);
  void refill();

  std::array<std::uint8_t, 32> key_{};
  std::uint64_t block_counter_ = 0;
  std::array<std::uint8_t, 256> buffer_{};
  std::size_t pos_ = 256;
};

}  // namespace oblv
