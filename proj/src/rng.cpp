#include "oblv/rng.hpp"

#include <sodium.h>

#include <algorithm>
#include <cstring>
#include <stdexcept>

#include "sodium_init.hpp"

namespace oblv {

Rng::Rng(const std::array<std::uint8_t, 32>& key) : key_(key) { detail::ensure_sodium(); }

Rng Rng::from_seed(std::uint64_t seed) {
  detail::ensure_sodium();
  std::uint8_t seed_bytes[8];
  store_le(seed_bytes, seed, 8);
  static constexpr char kContext[] = "oblv.rng.seed";
  std::array<std::uint8_t, 32> key{};
  crypto_generichash_state st;
  crypto_generichash_init(&st, nullptr, 0, key.size());
  crypto_generichash_update(&st, reinterpret_cast<const unsigned char*>(kContext), sizeof(kContext) - 1);
  crypto_generichash_update(&st, seed_bytes, sizeof(seed_bytes));
  crypto_generichash_final(&st, key.data(), key.size());
  return Rng(key);
}

Rng Rng::os() {
  detail::ensure_sodium();
  std::array<std::uint8_t, 32> key{};
  randombytes_buf(key.data(), key.size());
  return Rng(key);
}

Rng Rng::fork(std::string_view label) {
  std::array<std::uint8_t, 32> material{};
  fill(material);
  std::array<std::uint8_t, 32> key{};
  crypto_generichash(key.data(), key.size(), reinterpret_cast<const unsigned char*>(label.data()),
                     label.size(), material.data(), material.size());
  return Rng(key);
}

void Rng::refill() {
  std::uint8_t nonce[crypto_stream_chacha20_NONCEBYTES] = {};
  store_le(nonce, block_counter_++, sizeof(nonce));
  crypto_stream_chacha20(buffer_.data(), buffer_.size(), nonce, key_.data());
  pos_ = 0;
}

Rng::result_type Rng::operator()() {
  if (pos_ + 8 > buffer_.size()) refill();
  auto v = load_le(buffer_.data() + pos_, 8);
  pos_ += 8;
  return v;
}

std::uint64_t Rng::uniform(std::uint64_t bound) {
  if (bound == 0) throw std::invalid_argument("Rng::uniform bound must be positive");
  // Rejection sampling on the top of the range keeps the result unbiased.
  const std::uint64_t limit = max() - (max() % bound + 1) % bound;
  std::uint64_t v;
  do {
    v = (*this)();
  } while (v > limit);
  return v % bound;
}

double Rng::unit() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

void Rng::fill(MutableByteSpan out) {
  std::size_t done = 0;
  while (done < out.size()) {
    if (pos_ >= buffer_.size()) refill();
    std::size_t n = std::min(out.size() - done, buffer_.size() - pos_);
    std::memcpy(out.data() + done, buffer_.data() + pos_, n);
    pos_ += n;
    done += n;
  }
}

}  // namespace oblv
