#include "oblv/net_shaper.hpp"

#include <algorithm>
#include <cstring>

#include "oblv/error.hpp"

namespace oblv {

namespace {

constexpr unsigned __int128 kUnitsPerBit = 1'000'000'000;

}  // namespace

std::string_view net_mode_name(NetMode mode) noexcept {
  switch (mode) {
    case NetMode::plain: return "plain";
    case NetMode::channel: return "channel";
    case NetMode::shaped: return "shaped";
  }
  return "unknown";
}

std::optional<NetMode> parse_net_mode(std::string_view name) noexcept {
  for (auto m : {NetMode::plain, NetMode::channel, NetMode::shaped}) {
    if (net_mode_name(m) == name) return m;
  }
  return std::nullopt;
}

OpenedFrame open_frame(NetMode mode, PeerSession& session, ByteSpan frame) {
  if (mode != NetMode::plain) return session.open(frame);
  if (frame.size() != session.mtu()) throw Error(Errc::size, "frame is not MTU-sized");
  const auto len = static_cast<std::size_t>(load_le(frame.data(), kFrameLengthBytes));
  if (len > max_frame_payload(session.mtu())) throw Error(Errc::format, "inner length exceeds frame");
  OpenedFrame out;
  out.dummy = len == 0;
  out.payload.assign(frame.begin() + kFrameLengthBytes, frame.begin() + kFrameLengthBytes + len);
  return out;
}

NetShaper::NetShaper(ShaperConfig config, Rng rng) : config_(config), rng_(std::move(rng)) {
  if (config_.peer_rate_bps == 0) throw Error(Errc::parameter, "peer rate must be positive");
  if (config_.burst_frames == 0) throw Error(Errc::parameter, "burst must be at least one frame");
  if (config_.mtu <= kFrameOverhead) throw Error(Errc::parameter, "MTU too small for a frame");
}

unsigned __int128 NetShaper::frame_cost() const {
  return static_cast<unsigned __int128>(config_.mtu) * 8 * kUnitsPerBit;
}

unsigned __int128 NetShaper::bucket_cap() const { return frame_cost() * config_.burst_frames; }

void NetShaper::add_peer(std::uint64_t peer, PeerSession& session, SimTime start,
                         std::optional<std::uint64_t> rate_bps) {
  if (session.mtu() != config_.mtu) throw Error(Errc::parameter, "session MTU differs from shaper MTU");
  Class c;
  c.session = &session;
  c.rate_bps = rate_bps.value_or(config_.peer_rate_bps);
  if (c.rate_bps == 0) throw Error(Errc::parameter, "peer rate must be positive");
  c.credit = bucket_cap();
  c.credit_at = start;
  c.next_slot = start;
  peers_.insert_or_assign(peer, std::move(c));
}

void NetShaper::enqueue(std::uint64_t peer, Bytes payload, SimTime now) {
  auto it = peers_.find(peer);
  if (it == peers_.end()) throw Error(Errc::routing, "no shaping class for peer " + std::to_string(peer));
  if (payload.empty() || payload.size() > max_frame_payload(config_.mtu)) {
    throw Error(Errc::size, "payload does not fit one frame");
  }
  Class& c = it->second;
  if (c.real.size() >= config_.real_queue_capacity) throw Error(Errc::queue_full, "real queue full");
  const bool wake = idle(c);
  c.real.push_back(std::move(payload));
  if (wake) {
    refill(c, std::max(now, last_tick_));
    schedule_next(c);
  }
}

Bytes NetShaper::make_frame(Class& c, ByteSpan payload) const {
  if (config_.mode != NetMode::plain) return c.session->seal(payload);
  Bytes frame(config_.mtu, 0);
  store_le(frame.data(), payload.size(), kFrameLengthBytes);
  std::memcpy(frame.data() + kFrameLengthBytes, payload.data(), payload.size());
  return frame;
}

void NetShaper::refill(Class& c, SimTime at) const {
  if (at <= c.credit_at) return;
  const unsigned __int128 gained = static_cast<unsigned __int128>(c.rate_bps) * (at - c.credit_at);
  c.credit = std::min(bucket_cap(), c.credit + gained);
  c.credit_at = at;
}

void NetShaper::schedule_next(Class& c) const {
  const auto cost = frame_cost();
  if (c.credit >= cost) {
    c.next_slot = c.credit_at;
    return;
  }
  const unsigned __int128 deficit = cost - c.credit;
  const unsigned __int128 wait = (deficit + c.rate_bps - 1) / c.rate_bps;
  c.next_slot = c.credit_at + static_cast<SimTime>(wait);
}

std::vector<EmittedFrame> NetShaper::tick(SimTime now) {
  if (now < last_tick_) throw Error(Errc::parameter, "shaper time went backwards");
  last_tick_ = now;
  std::vector<EmittedFrame> out;
  while (true) {
    Class* due = nullptr;
    std::uint64_t due_peer = 0;
    for (auto& [peer, c] : peers_) {
      if (idle(c)) continue;
      if (c.next_slot <= now && (due == nullptr || c.next_slot < due->next_slot)) {
        due = &c;
        due_peer = peer;
      }
    }
    if (due == nullptr) break;

    const SimTime at = due->next_slot;
    refill(*due, at);
    due->credit -= frame_cost();
    EmittedFrame f;
    f.peer = due_peer;
    f.at = at;
    if (!due->real.empty()) {
      f.frame = make_frame(*due, due->real.front());
      due->real.pop_front();
      ++due->stats.real_frames;
    } else {
      f.frame = due->session->seal_dummy(rng_);
      f.dummy = true;
      ++due->stats.dummy_frames;
    }
    due->stats.bytes += f.frame.size();
    schedule_next(*due);
    out.push_back(std::move(f));
  }
  return out;
}

std::optional<SimTime> NetShaper::next_emission() const {
  std::optional<SimTime> next;
  for (const auto& [peer, c] : peers_) {
    if (idle(c)) continue;
    if (!next || c.next_slot < *next) next = c.next_slot;
  }
  return next;
}

std::size_t NetShaper::queued(std::uint64_t peer) const {
  auto it = peers_.find(peer);
  if (it == peers_.end()) throw Error(Errc::routing, "no shaping class for peer " + std::to_string(peer));
  return it->second.real.size();
}

const ShaperPeerStats& NetShaper::stats(std::uint64_t peer) const {
  auto it = peers_.find(peer);
  if (it == peers_.end()) throw Error(Errc::routing, "no shaping class for peer " + std::to_string(peer));
  return it->second.stats;
}

std::vector<std::uint64_t> NetShaper::peers() const {
  std::vector<std::uint64_t> out;
  for (const auto& [peer, c] : peers_) out.push_back(peer);
  return out;
}

// --- remote echo peer ----------------------------------------------------------

EchoPeer::EchoPeer(std::uint64_t endpoint_id, KeyPair identity, const PublicKey& enclave_key, ShaperConfig config,
                   Rng rng)
    : endpoint_id_(endpoint_id),
      identity_(std::move(identity)),
      session_(PeerSession::establish(identity_, enclave_key, config.mtu)),
      shaper_(config, std::move(rng)) {
  shaper_.add_peer(endpoint_id_, session_);
}

void EchoPeer::receive(ByteSpan frame, SimTime now) {
  OpenedFrame opened;
  try {
    opened = open_frame(shaper_.config().mode, session_, frame);
  } catch (const Error&) {
    return;
  }
  if (opened.dummy) return;
  ++real_received_;
  try {
    shaper_.enqueue(endpoint_id_, std::move(opened.payload), now);
  } catch (const Error&) {
    // Echo queue full; the payload is lost as on a congested link.
  }
}

std::vector<EmittedFrame> EchoPeer::tick(SimTime now) { return shaper_.tick(now); }

// --- engine --------------------------------------------------------------------

NetEngine::NetEngine(HostInterface& host, TrustedEndpoint& endpoint, ShaperConfig config, Rng rng)
    : host_(host), endpoint_(endpoint), shaper_(config, std::move(rng)) {
  if (config.mtu != host.mtu()) throw Error(Errc::parameter, "shaper MTU differs from the host MTU");
}

void NetEngine::add_peer(const PeerIdentity& peer, std::optional<std::uint64_t> rate_bps) {
  PeerSession& session =
      endpoint_.has_session(peer.endpoint_id) ? endpoint_.session(peer.endpoint_id) : endpoint_.establish(peer);
  shaper_.add_peer(peer.endpoint_id, session, host_.clock().now(), rate_bps);
}

void NetEngine::attach_remote(EchoPeer& remote) { remotes_.push_back(&remote); }

void NetEngine::send(std::uint64_t endpoint_id, Bytes payload) {
  shaper_.enqueue(endpoint_id, std::move(payload), host_.clock().now());
}

std::optional<SimTime> NetEngine::next_event() const {
  auto next = shaper_.next_emission();
  for (const auto* r : remotes_) {
    if (auto t = r->next_emission(); t && (!next || *t < *next)) next = t;
  }
  return next;
}

void NetEngine::advance_to(SimTime now) {
  while (auto next = next_event()) {
    if (*next > now) break;
    run_slot(*next, shaper_.tick(*next));
  }
}

void NetEngine::run_slot(SimTime at, std::vector<EmittedFrame> frames) {
  host_.clock().advance_to(at);
  for (auto& f : frames) {
    host_.net_write(f.peer, f.frame);
    if (f.dummy) {
      host_.annotate_last_dummy();
      ++stats_.dummy_sent;
    } else {
      ++stats_.real_sent;
    }
  }
  pump_remotes(at);
  drain_ingress();
}

void NetEngine::pump_remotes(SimTime at) {
  auto& backend = host_.backend();
  while (auto frame = backend.peer_take()) {
    for (auto* r : remotes_) {
      if (r->endpoint_id() == frame->endpoint) r->receive(frame->data, at);
    }
  }
  for (auto* r : remotes_) {
    for (auto& f : r->tick(at)) backend.peer_send(WireFrame{r->endpoint_id(), std::move(f.frame)});
  }
}

void NetEngine::drain_ingress() {
  // Bounded so a host that always reports readable cannot stall the slot.
  const std::size_t limit = 4 * (remotes_.size() + 1);
  for (std::size_t i = 0; i < limit; ++i) {
    if ((host_.net_poll(kPollReadable) & kPollReadable) == 0) break;
    WireFrame frame;
    try {
      frame = host_.net_read();
    } catch (const Error& e) {
      if (e.code() == Errc::would_block) break;
      throw;
    }
    if (!endpoint_.has_session(frame.endpoint)) {
      ++stats_.rejected;
      continue;
    }
    try {
      auto opened = open_frame(shaper_.config().mode, endpoint_.session(frame.endpoint), frame.data);
      if (opened.dummy) {
        ++stats_.dummy_received;
      } else {
        ++stats_.real_received;
        stats_.payload_bytes_received += opened.payload.size();
        auto& box = inbox_[frame.endpoint];
        box.insert(box.end(), opened.payload.begin(), opened.payload.end());
      }
    } catch (const Error&) {
      ++stats_.rejected;
    }
  }
}

Bytes NetEngine::take_received(std::uint64_t endpoint_id) {
  auto it = inbox_.find(endpoint_id);
  if (it == inbox_.end()) return {};
  Bytes out = std::move(it->second);
  inbox_.erase(it);
  return out;
}

}  // namespace oblv
