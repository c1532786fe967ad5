#include "oblv/secure_channel.hpp"

#include <sodium.h>

#include <algorithm>
#include <cstring>

#include "oblv/error.hpp"
#include "sodium_init.hpp"

namespace oblv {

namespace {

constexpr char kConfirmContext[] = "oblv.channel.confirm";
constexpr char kProvisioningMagic[4] = {'O', 'B', 'P', 'V'};
constexpr std::size_t kProvisioningPrefix = 4 + 2 + 4;

std::array<std::uint8_t, 4> key_checksum(const PublicKey& key) {
  std::array<std::uint8_t, 4> sum{};
  crypto_generichash(sum.data(), sum.size(), key.bytes.data(), key.bytes.size(), nullptr, 0);
  return sum;
}

std::array<std::uint8_t, 12> frame_nonce(std::uint64_t counter) {
  std::array<std::uint8_t, 12> nonce{};
  store_le(nonce.data() + 4, counter, 8);
  return nonce;
}

class Writer {
 public:
  void bytes(ByteSpan b) { out_.insert(out_.end(), b.begin(), b.end()); }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void le(std::uint64_t v, std::size_t n) {
    const auto at = out_.size();
    out_.resize(at + n);
    store_le(out_.data() + at, v, n);
  }
  void str8(std::string_view s) {
    if (s.size() > 0xff) throw Error(Errc::size, "string too long for provisioning record");
    u8(static_cast<std::uint8_t>(s.size()));
    bytes({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
  }
  void str16(std::string_view s) {
    if (s.size() > 0xffff) throw Error(Errc::size, "string too long for provisioning record");
    le(s.size(), 2);
    bytes({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
  }
  Bytes take() { return std::move(out_); }

 private:
  Bytes out_;
};

class Reader {
 public:
  explicit Reader(ByteSpan in) : in_(in) {}
  ByteSpan bytes(std::size_t n) {
    if (in_.size() - pos_ < n) throw Error(Errc::format, "truncated provisioning record");
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() { return bytes(1)[0]; }
  std::uint64_t le(std::size_t n) { return load_le(bytes(n).data(), n); }
  std::string str(std::size_t len_bytes) {
    auto n = static_cast<std::size_t>(le(len_bytes));
    auto b = bytes(n);
    return {reinterpret_cast<const char*>(b.data()), b.size()};
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  ByteSpan in_;
  std::size_t pos_ = 0;
};

}  // namespace

// --- keys ------------------------------------------------------------------------

std::string PublicKey::text() const { return to_hex(bytes) + ":" + to_hex(key_checksum(*this)); }

PublicKey PublicKey::from_text(std::string_view text) {
  detail::ensure_sodium();
  const auto colon = text.find(':');
  if (colon != 2 * kPublicKeyBytes || text.size() != colon + 1 + 8) {
    throw Error(Errc::handshake, "malformed public key text");
  }
  PublicKey key;
  Bytes raw;
  try {
    raw = from_hex(text.substr(0, colon));
  } catch (const Error&) {
    throw Error(Errc::handshake, "malformed public key text");
  }
  std::copy(raw.begin(), raw.end(), key.bytes.begin());
  if (to_hex(key_checksum(key)) != text.substr(colon + 1)) throw Error(Errc::handshake, "public key checksum mismatch");
  return key;
}

KeyPair KeyPair::generate() {
  detail::ensure_sodium();
  KeyPair kp;
  crypto_kx_keypair(kp.public_.bytes.data(), kp.secret_.data());
  return kp;
}

KeyPair KeyPair::from_rng(Rng& rng) {
  detail::ensure_sodium();
  std::array<std::uint8_t, crypto_kx_SEEDBYTES> seed{};
  rng.fill(seed);
  KeyPair kp;
  crypto_kx_seed_keypair(kp.public_.bytes.data(), kp.secret_.data(), seed.data());
  sodium_memzero(seed.data(), seed.size());
  return kp;
}

// --- replay window ---------------------------------------------------------------

void ReplayWindow::check(std::uint64_t counter) const {
  if (!any_ || counter > highest_) return;
  const auto age = highest_ - counter;
  if (age >= kReplayWindow) throw Error(Errc::stale, "counter " + std::to_string(counter) + " is outside the window");
  if (bits_ & (std::uint64_t{1} << age)) throw Error(Errc::replay, "counter " + std::to_string(counter) + " already seen");
}

void ReplayWindow::accept(std::uint64_t counter) {
  if (!any_) {
    any_ = true;
    highest_ = counter;
    bits_ = 1;
    return;
  }
  if (counter > highest_) {
    const auto shift = counter - highest_;
    bits_ = shift >= kReplayWindow ? 0 : bits_ << shift;
    bits_ |= 1;
    highest_ = counter;
  } else {
    bits_ |= std::uint64_t{1} << (highest_ - counter);
  }
}

// --- sessions --------------------------------------------------------------------

PeerSession PeerSession::establish(const KeyPair& local, const PublicKey& remote, std::uint32_t mtu) {
  detail::ensure_sodium();
  if (mtu <= kFrameOverhead || mtu - kFrameOverhead > 0xffff) throw Error(Errc::parameter, "unusable MTU");
  if (remote == local.public_key()) throw Error(Errc::handshake, "peer key equals the local key");
  PeerSession s;
  s.remote_ = remote;
  s.mtu_ = mtu;
  // The lexicographically smaller key takes the client role so both sides
  // agree on which derived key is used in which direction.
  const bool client = local.public_key() < remote;
  int rc = client ? crypto_kx_client_session_keys(s.rx_.data(), s.tx_.data(), local.public_key().bytes.data(),
                                                  local.secret().data(), remote.bytes.data())
                  : crypto_kx_server_session_keys(s.rx_.data(), s.tx_.data(), local.public_key().bytes.data(),
                                                  local.secret().data(), remote.bytes.data());
  if (rc != 0) throw Error(Errc::handshake, "unusable peer public key");
  return s;
}

std::array<std::uint8_t, 32> PeerSession::confirmation() const {
  std::array<std::uint8_t, 32> out{};
  crypto_generichash(out.data(), out.size(), reinterpret_cast<const unsigned char*>(kConfirmContext),
                     sizeof(kConfirmContext) - 1, tx_.data(), tx_.size());
  return out;
}

void PeerSession::confirm(const std::array<std::uint8_t, 32>& peer_confirmation) const {
  std::array<std::uint8_t, 32> expect{};
  crypto_generichash(expect.data(), expect.size(), reinterpret_cast<const unsigned char*>(kConfirmContext),
                     sizeof(kConfirmContext) - 1, rx_.data(), rx_.size());
  if (sodium_memcmp(expect.data(), peer_confirmation.data(), expect.size()) != 0) {
    throw Error(Errc::handshake, "key confirmation failed");
  }
}

Bytes PeerSession::seal_inner(std::uint16_t inner_len, ByteSpan body) {
  Bytes frame(mtu_, 0);
  const std::uint64_t counter = next_counter_++;
  store_le(frame.data(), counter, kFrameCounterBytes);
  std::uint8_t* inner = frame.data() + kFrameCounterBytes;
  const std::size_t inner_size = mtu_ - kFrameCounterBytes - kFrameTagBytes;
  store_le(inner, inner_len, kFrameLengthBytes);
  std::memcpy(inner + kFrameLengthBytes, body.data(), body.size());
  const auto nonce = frame_nonce(counter);
  crypto_aead_chacha20poly1305_ietf_encrypt_detached(inner, frame.data() + mtu_ - kFrameTagBytes, nullptr, inner,
                                                     inner_size, frame.data(), kFrameCounterBytes, nullptr,
                                                     nonce.data(), tx_.data());
  return frame;
}

Bytes PeerSession::seal(ByteSpan payload) {
  if (payload.empty() || payload.size() > max_payload()) {
    throw Error(Errc::size, "payload of " + std::to_string(payload.size()) + " bytes; allowed 1.." +
                                std::to_string(max_payload()));
  }
  return seal_inner(static_cast<std::uint16_t>(payload.size()), payload);
}

Bytes PeerSession::seal_dummy(Rng& rng) {
  Bytes body(max_payload());
  rng.fill(body);
  return seal_inner(0, body);
}

OpenedFrame PeerSession::open(ByteSpan frame) {
  if (frame.size() != mtu_) throw Error(Errc::size, "frame is not MTU-sized");
  const std::uint64_t counter = load_le(frame.data(), kFrameCounterBytes);
  window_.check(counter);
  const std::size_t inner_size = mtu_ - kFrameCounterBytes - kFrameTagBytes;
  Bytes inner(inner_size);
  const auto nonce = frame_nonce(counter);
  if (crypto_aead_chacha20poly1305_ietf_decrypt_detached(inner.data(), nullptr, frame.data() + kFrameCounterBytes,
                                                         inner_size, frame.data() + mtu_ - kFrameTagBytes,
                                                         frame.data(), kFrameCounterBytes, nonce.data(),
                                                         rx_.data()) != 0) {
    throw Error(Errc::auth, "frame failed authentication");
  }
  window_.accept(counter);
  const auto len = static_cast<std::size_t>(load_le(inner.data(), kFrameLengthBytes));
  if (len > max_payload()) throw Error(Errc::format, "inner length exceeds frame");
  OpenedFrame out;
  out.dummy = len == 0;
  out.payload.assign(inner.begin() + kFrameLengthBytes, inner.begin() + kFrameLengthBytes + len);
  return out;
}

// --- provisioning ----------------------------------------------------------------

bool operator==(const PeerIdentity& a, const PeerIdentity& b) {
  return a.key == b.key && a.vpn_address == b.vpn_address && a.endpoint == b.endpoint &&
         a.endpoint_id == b.endpoint_id;
}

bool operator==(const ProvisioningSecrets& a, const ProvisioningSecrets& b) {
  return a.disk_key == b.disk_key && a.verity_root == b.verity_root && a.peers == b.peers &&
         a.app_path == b.app_path && a.app_args == b.app_args;
}

Bytes encode_provisioning(const ProvisioningSecrets& s) {
  Writer body;
  body.u8(static_cast<std::uint8_t>((s.disk_key ? 1 : 0) | (s.verity_root ? 2 : 0)));
  if (s.disk_key) body.bytes(s.disk_key->bytes);
  if (s.verity_root) body.bytes(*s.verity_root);
  if (s.peers.size() > 0xffff) throw Error(Errc::size, "too many peers");
  body.le(s.peers.size(), 2);
  for (const auto& p : s.peers) {
    body.bytes(p.key.bytes);
    body.le(p.endpoint_id, 8);
    body.str8(p.vpn_address);
    body.str8(p.endpoint);
  }
  body.str16(s.app_path);
  if (s.app_args.size() > 0xffff) throw Error(Errc::size, "too many arguments");
  body.le(s.app_args.size(), 2);
  for (const auto& a : s.app_args) body.str16(a);
  Bytes b = body.take();

  Writer out;
  out.bytes({reinterpret_cast<const std::uint8_t*>(kProvisioningMagic), 4});
  out.le(kProvisioningVersion, 2);
  out.le(b.size(), 4);
  out.bytes(b);
  return out.take();
}

ProvisioningSecrets decode_provisioning(ByteSpan record) {
  Reader r(record);
  if (std::memcmp(r.bytes(4).data(), kProvisioningMagic, 4) != 0) throw Error(Errc::format, "not a provisioning record");
  if (r.le(2) != kProvisioningVersion) throw Error(Errc::format, "unsupported provisioning version");
  const auto body_len = r.le(4);
  if (record.size() != kProvisioningPrefix + body_len) throw Error(Errc::format, "provisioning length mismatch");

  ProvisioningSecrets s;
  const auto flags = r.u8();
  if (flags & ~3u) throw Error(Errc::format, "unknown provisioning flags");
  if (flags & 1) {
    BlockKey key;
    auto b = r.bytes(key.bytes.size());
    std::copy(b.begin(), b.end(), key.bytes.begin());
    s.disk_key = key;
  }
  if (flags & 2) {
    Digest root{};
    auto b = r.bytes(root.size());
    std::copy(b.begin(), b.end(), root.begin());
    s.verity_root = root;
  }
  const auto n_peers = r.le(2);
  for (std::uint64_t i = 0; i < n_peers; ++i) {
    PeerIdentity p;
    auto k = r.bytes(kPublicKeyBytes);
    std::copy(k.begin(), k.end(), p.key.bytes.begin());
    p.endpoint_id = r.le(8);
    p.vpn_address = r.str(1);
    p.endpoint = r.str(1);
    s.peers.push_back(std::move(p));
  }
  s.app_path = r.str(2);
  const auto n_args = r.le(2);
  for (std::uint64_t i = 0; i < n_args; ++i) s.app_args.push_back(r.str(2));
  if (!r.done()) throw Error(Errc::format, "trailing bytes in provisioning record");
  return s;
}

std::vector<Bytes> fragment(ByteSpan record, std::size_t max_piece) {
  if (max_piece == 0) throw Error(Errc::parameter, "fragment size must be positive");
  std::vector<Bytes> out;
  for (std::size_t at = 0; at < record.size(); at += max_piece) {
    const auto n = std::min(max_piece, record.size() - at);
    out.emplace_back(record.begin() + at, record.begin() + at + n);
  }
  return out;
}

// --- trusted endpoint ------------------------------------------------------------

TrustedEndpoint::TrustedEndpoint(KeyPair local, std::uint32_t mtu) : local_(std::move(local)), mtu_(mtu) {}

PeerSession& TrustedEndpoint::establish(const PeerIdentity& remote) {
  if (secrets_) {
    const bool known = std::any_of(secrets_->peers.begin(), secrets_->peers.end(),
                                   [&](const PeerIdentity& p) { return p.key == remote.key; });
    const bool provisioner = first_endpoint_ && sessions_.at(*first_endpoint_).remote() == remote.key;
    if (!known && !provisioner) throw Error(Errc::policy, "peer was not provisioned");
  }
  auto session = PeerSession::establish(local_, remote.key, mtu_);
  sessions_.insert_or_assign(remote.endpoint_id, std::move(session));
  if (!first_endpoint_) first_endpoint_ = remote.endpoint_id;
  return sessions_.at(remote.endpoint_id);
}

PeerSession& TrustedEndpoint::session(std::uint64_t endpoint_id) {
  auto it = sessions_.find(endpoint_id);
  if (it == sessions_.end()) throw Error(Errc::routing, "no session for endpoint " + std::to_string(endpoint_id));
  return it->second;
}

bool TrustedEndpoint::provisioning_frame(std::uint64_t endpoint_id, ByteSpan frame) {
  if (secrets_) throw Error(Errc::policy, "already provisioned");
  if (!first_endpoint_ || endpoint_id != *first_endpoint_) {
    throw Error(Errc::policy, "provisioning is accepted only from the first peer");
  }
  auto opened = session(endpoint_id).open(frame);
  if (opened.dummy) return false;
  pending_.insert(pending_.end(), opened.payload.begin(), opened.payload.end());
  if (pending_.size() >= 4 && std::memcmp(pending_.data(), kProvisioningMagic, 4) != 0) {
    pending_.clear();
    throw Error(Errc::format, "not a provisioning record");
  }
  if (pending_.size() < kProvisioningPrefix) return false;
  const auto total = kProvisioningPrefix + load_le(pending_.data() + 6, 4);
  if (pending_.size() < total) return false;
  if (pending_.size() > total) {
    pending_.clear();
    throw Error(Errc::format, "provisioning record followed by extra bytes");
  }
  secrets_ = decode_provisioning(pending_);
  sodium_memzero(pending_.data(), pending_.size());
  pending_.clear();
  return true;
}

}  // namespace oblv
