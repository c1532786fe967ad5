#include "oblv/common.hpp"

#include "oblv/error.hpp"

namespace oblv {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::alignment: return "alignment";
    case Errc::bounds: return "bounds";
    case Errc::size: return "size";
    case Errc::would_block: return "would-block";
    case Errc::parameter: return "parameter";
    case Errc::mode: return "mode";
    case Errc::integrity: return "integrity";
    case Errc::replay: return "replay";
    case Errc::stale: return "stale";
    case Errc::descriptor: return "descriptor";
    case Errc::space: return "space";
    case Errc::range: return "range";
    case Errc::shuffle_impossible: return "shuffle-impossible";
    case Errc::queue_full: return "queue-full";
    case Errc::routing: return "routing";
    case Errc::handshake: return "handshake";
    case Errc::auth: return "auth";
    case Errc::policy: return "policy";
    case Errc::insufficient_data: return "insufficient-data";
    case Errc::config_mismatch: return "config-mismatch";
    case Errc::format: return "format";
    case Errc::round_budget: return "round-budget";
  }
  return "unknown";
}

std::string to_hex(ByteSpan bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0xf]);
  }
  return out;
}

Bytes from_hex(std::string_view hex) {
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
  };
  if (hex.size() % 2 != 0) throw Error(Errc::format, "odd-length hex string");
  Bytes out(hex.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    int hi = nibble(hex[2 * i]);
    int lo = nibble(hex[2 * i + 1]);
    if (hi < 0 || lo < 0) throw Error(Errc::format, "invalid hex digit");
    out[i] = static_cast<std::uint8_t>((hi << 4) | lo);
  }
  return out;
}

}  // namespace oblv
