#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace oblv {

enum class Errc {
  alignment,
  bounds,
  size,
  would_block,
  parameter,
  mode,
  integrity,
  replay,
  stale,
  descriptor,
  space,
  range,
  shuffle_impossible,
  queue_full,
  routing,
  handshake,
  auth,
  policy,
  insufficient_data,
  config_mismatch,
  format,
  round_budget,
};

std::string_view errc_name(Errc code) noexcept;

// Every recoverable failure in the library is reported as an Error carrying a
// code; callers branch on code(), never on the message.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what),
        code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace oblv
