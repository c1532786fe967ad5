#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "oblv/block_crypto.hpp"
#include "oblv/common.hpp"
#include "oblv/rng.hpp"

namespace oblv {

inline constexpr std::size_t kPublicKeyBytes = 32;
inline constexpr std::size_t kFrameCounterBytes = 8;
inline constexpr std::size_t kFrameLengthBytes = 2;
inline constexpr std::size_t kFrameTagBytes = 16;
inline constexpr std::size_t kFrameOverhead = kFrameCounterBytes + kFrameLengthBytes + kFrameTagBytes;
inline constexpr std::uint32_t kDefaultMtu = 1500;
inline constexpr std::uint64_t kReplayWindow = 64;

inline std::size_t max_frame_payload(std::uint32_t mtu) { return mtu - kFrameOverhead; }

struct PublicKey {
  std::array<std::uint8_t, kPublicKeyBytes> bytes{};

  // Text form: 64 hex digits, ':' and an 8-digit checksum. Parsing throws
  // Errc::handshake when the checksum does not match.
  std::string text() const;
  static PublicKey from_text(std::string_view text);
  friend bool operator==(const PublicKey&, const PublicKey&) = default;
  friend auto operator<=>(const PublicKey&, const PublicKey&) = default;
};

class KeyPair {
 public:
  static KeyPair generate();
  static KeyPair from_rng(Rng& rng);  // deterministic keys for simulated runs
  const PublicKey& public_key() const noexcept { return public_; }
  const std::array<std::uint8_t, 32>& secret() const noexcept { return secret_; }

 private:
  PublicKey public_;
  std::array<std::uint8_t, 32> secret_{};
};

struct PeerIdentity {
  PublicKey key;
  std::string vpn_address;
  std::string endpoint;      // host:port
  std::uint64_t endpoint_id = 0;  // what the host sees as the destination
};

// Sliding window over received counters.
class ReplayWindow {
 public:
  // Throws Errc::replay for a counter already accepted, Errc::stale for one
  // that fell off the window.
  void check(std::uint64_t counter) const;
  void accept(std::uint64_t counter);

 private:
  std::uint64_t highest_ = 0;
  std::uint64_t bits_ = 0;  // bit i: highest_ - i was accepted
  bool any_ = false;
};

struct OpenedFrame {
  Bytes payload;
  bool dummy = false;
};

// One direction-pair of symmetric keys between two static identities.
class PeerSession {
 public:
  // Throws Errc::handshake for a malformed (low-order) remote key.
  static PeerSession establish(const KeyPair& local, const PublicKey& remote, std::uint32_t mtu = kDefaultMtu);

  // Key-confirmation value sent to the peer; confirm() checks the peer's.
  std::array<std::uint8_t, 32> confirmation() const;
  void confirm(const std::array<std::uint8_t, 32>& peer_confirmation) const;

  Bytes seal(ByteSpan payload);
  Bytes seal_dummy(Rng& rng);
  OpenedFrame open(ByteSpan frame);

  const PublicKey& remote() const noexcept { return remote_; }
  std::uint32_t mtu() const noexcept { return mtu_; }
  std::size_t max_payload() const noexcept { return max_frame_payload(mtu_); }
  const std::array<std::uint8_t, 32>& send_key() const noexcept { return tx_; }
  const std::array<std::uint8_t, 32>& recv_key() const noexcept { return rx_; }
  std::uint64_t sent() const noexcept { return next_counter_; }

 private:
  PeerSession() = default;
  Bytes seal_inner(std::uint16_t inner_len, ByteSpan body);

  PublicKey remote_;
  std::uint32_t mtu_ = kDefaultMtu;
  std::array<std::uint8_t, 32> tx_{};
  std::array<std::uint8_t, 32> rx_{};
  std::uint64_t next_counter_ = 0;
  ReplayWindow window_;
};

struct ProvisioningSecrets {
  std::optional<BlockKey> disk_key;
  std::optional<Digest> verity_root;
  std::vector<PeerIdentity> peers;
  std::string app_path;
  std::vector<std::string> app_args;

  friend bool operator==(const ProvisioningSecrets&, const ProvisioningSecrets&);
};

bool operator==(const PeerIdentity& a, const PeerIdentity& b);

inline constexpr std::uint16_t kProvisioningVersion = 1;

Bytes encode_provisioning(const ProvisioningSecrets& secrets);
ProvisioningSecrets decode_provisioning(ByteSpan record);
// Splits a record into frame-sized pieces.
std::vector<Bytes> fragment(ByteSpan record, std::size_t max_piece);

// The trusted side of the overlay: holds the local identity, per-peer
// sessions and the one-shot provisioning state.
class TrustedEndpoint {
 public:
  explicit TrustedEndpoint(KeyPair local, std::uint32_t mtu = kDefaultMtu);

  // Before provisioning any peer may connect; afterwards only peers named in
  // the secrets (Errc::policy otherwise).
  PeerSession& establish(const PeerIdentity& remote);
  PeerSession& session(std::uint64_t endpoint_id);
  bool has_session(std::uint64_t endpoint_id) const { return sessions_.contains(endpoint_id); }

  // Feeds one provisioning frame received from `endpoint_id`. Returns true
  // once the record is complete and installed. Frames from anything but the
  // first session, or after installation, raise Errc::policy.
  bool provisioning_frame(std::uint64_t endpoint_id, ByteSpan frame);

  bool provisioned() const noexcept { return secrets_.has_value(); }
  const std::optional<ProvisioningSecrets>& secrets() const noexcept { return secrets_; }
  const KeyPair& identity() const noexcept { return local_; }

 private:
  KeyPair local_;
  std::uint32_t mtu_;
  std::map<std::uint64_t, PeerSession> sessions_;
  std::optional<std::uint64_t> first_endpoint_;
  Bytes pending_;
  std::optional<ProvisioningSecrets> secrets_;
};

}  // namespace oblv
