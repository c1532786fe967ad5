#include "oblv/host_iface.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

#include "oblv/error.hpp"

namespace oblv {

namespace {

constexpr std::string_view kKindNames[kHostCallKinds] = {
    "disk_read", "disk_write", "net_read", "net_write", "net_poll", "time_read", "forward_signal",
};

enum class SignalClass { memory_fault, faulting_instruction, user_controlled, other };

SignalClass classify(int num) {
  switch (num) {
    case 7:   // SIGBUS
    case 11:  // SIGSEGV
      return SignalClass::memory_fault;
    case 4:  // SIGILL
    case 5:  // SIGTRAP
    case 8:  // SIGFPE
      return SignalClass::faulting_instruction;
    case 1:   // SIGHUP
    case 2:   // SIGINT
    case 3:   // SIGQUIT
    case 10:  // SIGUSR1
    case 12:  // SIGUSR2
    case 15:  // SIGTERM
      return SignalClass::user_controlled;
    default:
      return SignalClass::other;
  }
}

template <typename T>
bool parse_field(std::string_view text, T& out) {
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size();
}

}  // namespace

std::string_view kind_name(HostCallKind kind) noexcept { return kKindNames[static_cast<std::size_t>(kind)]; }

std::optional<HostCallKind> parse_kind(std::string_view name) noexcept {
  for (std::size_t i = 0; i < kHostCallKinds; ++i) {
    if (kKindNames[i] == name) return static_cast<HostCallKind>(i);
  }
  return std::nullopt;
}

std::optional<ClockId> clock_from_raw(std::uint32_t raw) noexcept {
  switch (raw) {
    case 0: return ClockId::realtime;
    case 1: return ClockId::monotonic;
    case 4: return ClockId::monotonic_raw;
    case 5: return ClockId::realtime_coarse;
    case 6: return ClockId::monotonic_coarse;
    case 7: return ClockId::boottime;
    default: return std::nullopt;
  }
}

bool is_monotonic_class(ClockId id) noexcept {
  return id == ClockId::monotonic || id == ClockId::monotonic_raw || id == ClockId::monotonic_coarse ||
         id == ClockId::boottime;
}

// --- Trace -----------------------------------------------------------------

Trace::Trace(const Trace& other) : events_(other.snapshot()) {}

Trace& Trace::operator=(const Trace& other) {
  if (this != &other) {
    auto copy = other.snapshot();
    std::lock_guard lock(mu_);
    events_ = std::move(copy);
  }
  return *this;
}

void Trace::append(const HostCallEvent& event) {
  std::lock_guard lock(mu_);
  if (!events_.empty() && event.timestamp < events_.back().timestamp) {
    throw std::logic_error("trace timestamps must be non-decreasing");
  }
  events_.push_back(event);
}

void Trace::annotate_last_dummy() {
  std::lock_guard lock(mu_);
  if (!events_.empty()) events_.back().is_dummy_ground_truth = true;
}

std::vector<HostCallEvent> Trace::snapshot(std::size_t from) const {
  std::lock_guard lock(mu_);
  if (from >= events_.size()) return {};
  return {events_.begin() + static_cast<std::ptrdiff_t>(from), events_.end()};
}

std::size_t Trace::size() const {
  std::lock_guard lock(mu_);
  return events_.size();
}

void write_trace(std::ostream& out, std::span<const HostCallEvent> events, bool ground_truth) {
  for (const auto& e : events) {
    out << e.timestamp << ',' << kind_name(e.kind) << ',' << e.offset << ',' << e.payload_len;
    if (ground_truth) out << ',' << (e.is_dummy_ground_truth ? 1 : 0);
    out << '\n';
  }
}

std::vector<HostCallEvent> read_trace(std::istream& in) {
  std::vector<HostCallEvent> events;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    while (true) {
      auto comma = rest.find(',');
      fields.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    auto bad = [&] { return Error(Errc::format, "malformed trace line " + std::to_string(line_no)); };
    if (fields.size() != 4 && fields.size() != 5) throw bad();
    HostCallEvent e;
    auto kind = parse_kind(fields[1]);
    if (!kind || !parse_field(fields[0], e.timestamp) || !parse_field(fields[2], e.offset) ||
        !parse_field(fields[3], e.payload_len)) {
      throw bad();
    }
    e.kind = *kind;
    if (fields.size() == 5) {
      if (fields[4] != "0" && fields[4] != "1") throw bad();
      e.is_dummy_ground_truth = fields[4] == "1";
    }
    events.push_back(e);
  }
  return events;
}

// --- HostBackend -------------------------------------------------------------

HostBackend::HostBackend(const HostBackendConfig& config) : HostBackend(config, Bytes(config.image_bytes, 0)) {}

HostBackend::HostBackend(const HostBackendConfig& config, Bytes image) : config_(config), image_(std::move(image)) {
  config_.image_bytes = image_.size();
  if (image_.size() % kBlockSize != 0) throw Error(Errc::size, "disk image size must be a multiple of 4096");
}

void HostBackend::read_block(std::uint64_t offset, MutableByteSpan out) const {
  std::memcpy(out.data(), image_.data() + offset, kBlockSize);
}

void HostBackend::write_block(std::uint64_t offset, ByteSpan block) {
  std::memcpy(image_.data() + offset, block.data(), kBlockSize);
  ++mutations_.disk_writes;
}

void HostBackend::push_egress(WireFrame frame) {
  egress_.push_back(std::move(frame));
  ++mutations_.egress_pushes;
}

std::optional<WireFrame> HostBackend::pop_ingress() {
  if (ingress_.empty()) return std::nullopt;
  WireFrame f = std::move(ingress_.front());
  ingress_.pop_front();
  ++mutations_.ingress_pops;
  return f;
}

std::int64_t HostBackend::clock_value(ClockId id, SimTime sim_now) {
  auto it = scripted_clocks_.find(id);
  if (it != scripted_clocks_.end() && !it->second.empty()) {
    auto v = it->second.front();
    it->second.pop_front();
    return v;
  }
  return static_cast<std::int64_t>(sim_now);
}

void HostBackend::peer_send(WireFrame frame) { ingress_.push_back(std::move(frame)); }

std::optional<WireFrame> HostBackend::peer_take() {
  if (egress_.empty()) return std::nullopt;
  WireFrame f = std::move(egress_.front());
  egress_.pop_front();
  return f;
}

void HostBackend::host_script_clock(ClockId id, std::vector<std::int64_t> values) {
  auto& q = scripted_clocks_[id];
  q.insert(q.end(), values.begin(), values.end());
}

// --- HostInterface -----------------------------------------------------------

HostInterface::HostInterface(HostBackend& backend, SimClock& clock, Trace& trace, HostInterfaceOptions options)
    : backend_(backend), clock_(clock), trace_(trace), options_(options), current_ip_(backend.enclave_range().lo) {}

void HostInterface::record(HostCallKind kind, std::uint64_t offset, std::uint32_t len) {
  trace_.append(HostCallEvent{clock_.now(), kind, offset, len, false});
}

void HostInterface::check_disk_offset(std::uint64_t offset) const {
  if (offset % kBlockSize != 0) throw Error(Errc::alignment, "disk offset " + std::to_string(offset));
  if (offset > backend_.image_size() || backend_.image_size() - offset < kBlockSize) {
    throw Error(Errc::bounds, "disk offset " + std::to_string(offset) + " beyond image");
  }
}

Block HostInterface::disk_read(std::uint64_t offset) {
  check_disk_offset(offset);
  Block block;
  backend_.read_block(offset, block);
  record(HostCallKind::disk_read, offset, kBlockSize);
  return block;
}

void HostInterface::disk_write(std::uint64_t offset, ByteSpan block) {
  check_disk_offset(offset);
  if (block.size() != kBlockSize) throw Error(Errc::size, "disk_write needs exactly 4096 bytes");
  backend_.write_block(offset, block);
  record(HostCallKind::disk_write, offset, kBlockSize);
}

void HostInterface::net_write(std::uint64_t endpoint, ByteSpan frame) {
  if (frame.size() != backend_.mtu()) throw Error(Errc::size, "net_write needs an MTU-sized frame");
  backend_.push_egress(WireFrame{endpoint, Bytes(frame.begin(), frame.end())});
  record(HostCallKind::net_write, endpoint, backend_.mtu());
}

WireFrame HostInterface::net_read() {
  auto frame = backend_.pop_ingress();
  record(HostCallKind::net_read, frame ? frame->endpoint : 0, backend_.mtu());
  if (!frame) throw Error(Errc::would_block, "ingress queue empty");
  // The host controls the length; anything but an MTU frame is discarded here.
  if (frame->data.size() != backend_.mtu()) frame->data.resize(backend_.mtu(), 0);
  return std::move(*frame);
}

std::uint8_t HostInterface::net_poll(std::uint8_t eventmask) {
  eventmask &= kPollReadable | kPollWritable;
  if (eventmask == 0) throw Error(Errc::parameter, "net_poll needs a non-empty event mask");
  std::uint8_t ready = 0;
  if (backend_.faults().lying_poll) {
    ready = eventmask;
  } else {
    if ((eventmask & kPollReadable) && backend_.ingress_ready()) ready |= kPollReadable;
    if ((eventmask & kPollWritable) && backend_.egress_has_space()) ready |= kPollWritable;
  }
  record(HostCallKind::net_poll, eventmask, 0);
  // Only bits that were asked for are believed.
  return ready & eventmask;
}

std::int64_t HostInterface::time_read(std::uint32_t raw_clock) {
  auto id = clock_from_raw(raw_clock);
  if (!id) throw Error(Errc::parameter, "unknown clock id " + std::to_string(raw_clock));
  auto value = backend_.clock_value(*id, clock_.now());
  record(HostCallKind::time_read, raw_clock, sizeof(std::int64_t));
  if (!is_monotonic_class(*id)) return value;
  auto [it, inserted] = monotonic_floor_.try_emplace(*id, value);
  if (!inserted) {
    it->second = std::max(it->second, value);
  }
  return it->second;
}

SanitizedSignal HostInterface::forward_signal(const SignalInfo& raw) {
  record(HostCallKind::forward_signal, static_cast<std::uint64_t>(raw.num), 0);
  SanitizedSignal out{SignalOutcome::rejected, raw};
  switch (classify(raw.num)) {
    case SignalClass::memory_fault:
      if (backend_.enclave_range().contains(raw.addr)) out.outcome = SignalOutcome::delivered;
      break;
    case SignalClass::faulting_instruction:
      out.info.addr = current_ip_;
      out.outcome = SignalOutcome::delivered;
      break;
    case SignalClass::user_controlled:
      out.info.addr = 0;
      out.outcome = options_.ignore_user_signals ? SignalOutcome::dropped : SignalOutcome::delivered;
      break;
    case SignalClass::other:
      break;
  }
  return out;
}

}  // namespace oblv
