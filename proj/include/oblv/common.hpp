#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace oblv {

inline constexpr std::size_t kBlockSize = 4096;

using Bytes = std::vector<std::uint8_t>;
using ByteSpan = std::span<const std::uint8_t>;
using MutableByteSpan = std::span<std::uint8_t>;
using Block = std::array<std::uint8_t, kBlockSize>;

// Simulated nanoseconds since the start of a run.
using SimTime = std::uint64_t;

using FileId = std::uint32_t;
using PhysBlock = std::uint64_t;

std::string to_hex(ByteSpan bytes);
Bytes from_hex(std::string_view hex);

inline void store_le(std::uint8_t* out, std::uint64_t v, std::size_t width) {
  for (std::size_t i = 0; i < width; ++i) out[i] = static_cast<std::uint8_t>(v >> (8 * i));
}

inline std::uint64_t load_le(const std::uint8_t* in, std::size_t width) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(in[i]) << (8 * i);
  return v;
}

}  // namespace oblv
