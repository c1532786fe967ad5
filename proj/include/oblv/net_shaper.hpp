#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <string_view>
#include <vector>

#include "oblv/common.hpp"
#include "oblv/host_iface.hpp"
#include "oblv/rng.hpp"
#include "oblv/secure_channel.hpp"

namespace oblv {

// shaped: constant-rate sealed frames with dummies filling the gaps.
// channel: sealed frames sent only when there is data, at most at the line rate.
// plain: cleartext "len u16 | payload" frames, sent like channel.
enum class NetMode : std::uint8_t { plain, channel, shaped };

std::string_view net_mode_name(NetMode mode) noexcept;
std::optional<NetMode> parse_net_mode(std::string_view name) noexcept;

struct ShaperConfig {
  NetMode mode = NetMode::shaped;
  std::uint64_t peer_rate_bps = 200'000'000;
  std::uint32_t mtu = kDefaultMtu;
  std::uint32_t burst_frames = 1;
  std::size_t real_queue_capacity = 4096;
};

struct EmittedFrame {
  std::uint64_t peer = 0;
  SimTime at = 0;
  Bytes frame;
  bool dummy = false;
};

struct ShaperPeerStats {
  std::uint64_t real_frames = 0;
  std::uint64_t dummy_frames = 0;
  std::uint64_t bytes = 0;
};

// Per-peer token buckets with strict priority of real payloads over cover
// traffic. Each peer sends exactly one MTU frame whenever its bucket holds a
// frame's worth of credit; if no real payload is waiting the frame is a dummy.
class NetShaper {
 public:
  NetShaper(ShaperConfig config, Rng rng);

  // The session seals this peer's frames and must outlive the shaper. The
  // first frame goes out at `start` with a full bucket.
  void add_peer(std::uint64_t peer, PeerSession& session, SimTime start = 0,
                std::optional<std::uint64_t> rate_bps = std::nullopt);
  bool has_peer(std::uint64_t peer) const { return peers_.contains(peer); }

  // Errc::routing for an unknown peer, Errc::queue_full when the real queue
  // is at capacity, Errc::size for a payload larger than one frame holds.
  // `now` matters only outside shaped mode, where an idle peer has no slot
  // until data arrives.
  void enqueue(std::uint64_t peer, Bytes payload, SimTime now = 0);

  // Emits every frame whose slot time is <= now, stamped with that slot time,
  // in time order (ties by peer id).
  std::vector<EmittedFrame> tick(SimTime now);
  std::optional<SimTime> next_emission() const;

  std::size_t queued(std::uint64_t peer) const;
  const ShaperPeerStats& stats(std::uint64_t peer) const;
  const ShaperConfig& config() const noexcept { return config_; }
  std::vector<std::uint64_t> peers() const;

 private:
  struct Class {
    PeerSession* session = nullptr;
    std::uint64_t rate_bps = 0;
    // Credit in bit-nanoseconds per second: one bit is 1e9 units, and one
    // nanosecond at rate R adds R units.
    unsigned __int128 credit = 0;
    SimTime credit_at = 0;
    SimTime next_slot = 0;
    std::deque<Bytes> real;
    ShaperPeerStats stats;
  };

  unsigned __int128 frame_cost() const;
  unsigned __int128 bucket_cap() const;
  bool idle(const Class& c) const { return config_.mode != NetMode::shaped && c.real.empty(); }
  Bytes make_frame(Class& c, ByteSpan payload) const;
  void refill(Class& c, SimTime at) const;
  void schedule_next(Class& c) const;

  ShaperConfig config_;
  Rng rng_;
  std::map<std::uint64_t, Class> peers_;
  SimTime last_tick_ = 0;
};

// Reverses the sender's framing for `mode`. Plain frames carry no protection;
// the others go through the session (and its replay window).
OpenedFrame open_frame(NetMode mode, PeerSession& session, ByteSpan frame);

// A remote trusted node on the far side of the untrusted network. It opens
// what the enclave sent, echoes real payloads back and shapes its own
// transmissions the same way.
class EchoPeer {
 public:
  EchoPeer(std::uint64_t endpoint_id, KeyPair identity, const PublicKey& enclave_key, ShaperConfig config, Rng rng);

  const PublicKey& public_key() const noexcept { return identity_.public_key(); }
  std::uint64_t endpoint_id() const noexcept { return endpoint_id_; }

  void receive(ByteSpan frame, SimTime now);
  // Frames due at or before `now`, for the host to deliver to the enclave.
  std::vector<EmittedFrame> tick(SimTime now);
  std::optional<SimTime> next_emission() const { return shaper_.next_emission(); }

  std::uint64_t real_received() const noexcept { return real_received_; }

 private:
  std::uint64_t endpoint_id_;
  KeyPair identity_;
  PeerSession session_;
  NetShaper shaper_;
  std::uint64_t real_received_ = 0;
};

struct NetEngineStats {
  std::uint64_t real_sent = 0;
  std::uint64_t dummy_sent = 0;
  std::uint64_t real_received = 0;
  std::uint64_t dummy_received = 0;
  std::uint64_t rejected = 0;  // frames that failed to open
  std::uint64_t payload_bytes_received = 0;
};

// Drives the enclave side of the overlay through the host interface: at each
// slot it transmits the shaped frame, then polls and drains arrivals. The
// simulated remote peers run in the same loop.
class NetEngine {
 public:
  NetEngine(HostInterface& host, TrustedEndpoint& endpoint, ShaperConfig config, Rng rng);

  void add_peer(const PeerIdentity& peer, std::optional<std::uint64_t> rate_bps = std::nullopt);
  void attach_remote(EchoPeer& remote);

  void send(std::uint64_t endpoint_id, Bytes payload);
  // Runs every slot up to and including `now`.
  void advance_to(SimTime now);
  std::optional<SimTime> next_event() const;

  Bytes take_received(std::uint64_t endpoint_id);
  std::size_t backlog(std::uint64_t endpoint_id) const { return shaper_.queued(endpoint_id); }
  const NetEngineStats& stats() const noexcept { return stats_; }
  const NetShaper& shaper() const noexcept { return shaper_; }

 private:
  void run_slot(SimTime at, std::vector<EmittedFrame> frames);
  void pump_remotes(SimTime at);
  void drain_ingress();

  HostInterface& host_;
  TrustedEndpoint& endpoint_;
  NetShaper shaper_;
  std::vector<EchoPeer*> remotes_;
  std::map<std::uint64_t, Bytes> inbox_;
  NetEngineStats stats_;
};

}  // namespace oblv
