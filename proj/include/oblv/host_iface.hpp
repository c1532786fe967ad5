#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <map>
#include <mutex>
#include <optional>
#include <string_view>
#include <vector>

#include "oblv/common.hpp"

namespace oblv {

// The seven calls that cross the trust boundary.
enum class HostCallKind : std::uint8_t {
  disk_read,
  disk_write,
  net_read,
  net_write,
  net_poll,
  time_read,
  forward_signal,
};

inline constexpr std::size_t kHostCallKinds = 7;

std::string_view kind_name(HostCallKind kind) noexcept;
std::optional<HostCallKind> parse_kind(std::string_view name) noexcept;
inline bool is_disk(HostCallKind k) { return k == HostCallKind::disk_read || k == HostCallKind::disk_write; }
inline bool is_net_data(HostCallKind k) { return k == HostCallKind::net_read || k == HostCallKind::net_write; }

// One adversary-visible host call.
//
// `offset` is the byte offset for disk calls, the wire endpoint id for
// net_read/net_write, the clock id for time_read and the signal number for
// forward_signal. `is_dummy_ground_truth` is a test-side annotation that the
// host never sees; equality deliberately ignores it.
struct HostCallEvent {
  SimTime timestamp = 0;
  HostCallKind kind = HostCallKind::disk_read;
  std::uint64_t offset = 0;
  std::uint32_t payload_len = 0;
  bool is_dummy_ground_truth = false;

  friend bool operator==(const HostCallEvent& a, const HostCallEvent& b) {
    return a.timestamp == b.timestamp && a.kind == b.kind && a.offset == b.offset &&
           a.payload_len == b.payload_len;
  }
};

// Append-only recorder of host calls. Snapshots may be taken at any time.
class Trace {
 public:
  Trace() = default;
  Trace(const Trace& other);
  Trace& operator=(const Trace& other);

  // Throws std::logic_error if the timestamp would go backwards.
  void append(const HostCallEvent& event);
  void annotate_last_dummy();

  std::vector<HostCallEvent> snapshot(std::size_t from = 0) const;
  std::size_t size() const;

 private:
  mutable std::mutex mu_;
  std::vector<HostCallEvent> events_;
};

// Line format: `ts,kind,offset,len` plus `,dummy` (0/1) under ground truth.
void write_trace(std::ostream& out, std::span<const HostCallEvent> events, bool ground_truth);
std::vector<HostCallEvent> read_trace(std::istream& in);

class SimClock {
 public:
  SimTime now() const noexcept { return now_; }
  void advance_to(SimTime t) noexcept {
    if (t > now_) now_ = t;
  }
  void advance(SimTime dt) noexcept { now_ += dt; }

 private:
  SimTime now_ = 0;
};

// Linux clock ids; the CLOCK_MONOTONIC* family and BOOTTIME are monotonic-class.
enum class ClockId : std::uint32_t {
  realtime = 0,
  monotonic = 1,
  monotonic_raw = 4,
  realtime_coarse = 5,
  monotonic_coarse = 6,
  boottime = 7,
};

std::optional<ClockId> clock_from_raw(std::uint32_t raw) noexcept;
bool is_monotonic_class(ClockId id) noexcept;

enum PollEvents : std::uint8_t {
  kPollReadable = 1,
  kPollWritable = 2,
};

struct WireFrame {
  std::uint64_t endpoint = 0;
  Bytes data;
};

struct SignalInfo {
  int num = 0;
  int code = 0;
  std::uint64_t addr = 0;
};

struct AddressRange {
  std::uint64_t lo = 0;
  std::uint64_t hi = 0;
  bool contains(std::uint64_t a) const noexcept { return a >= lo && a < hi; }
};

struct FaultInjection {
  bool lying_poll = false;  // net_poll reports every requested event
};

struct HostBackendConfig {
  std::uint64_t image_bytes = 0;
  std::uint32_t mtu = 1500;
  std::size_t egress_capacity = 1 << 16;
  AddressRange enclave_range{0x10000000, 0x20000000};
};

// Counts of state changes made on behalf of enclave calls.
struct BackendMutations {
  std::uint64_t disk_writes = 0;
  std::uint64_t egress_pushes = 0;
  std::uint64_t ingress_pops = 0;
};

// The untrusted host: the disk image, the network device and the host clocks.
// Methods prefixed host_ or peer_ are the host's own (adversarial) actions and
// do not cross the boundary.
class HostBackend {
 public:
  explicit HostBackend(const HostBackendConfig& config);
  HostBackend(const HostBackendConfig& config, Bytes image);

  std::uint64_t image_size() const noexcept { return image_.size(); }
  std::uint32_t mtu() const noexcept { return config_.mtu; }
  const AddressRange& enclave_range() const noexcept { return config_.enclave_range; }
  const BackendMutations& mutations() const noexcept { return mutations_; }
  FaultInjection& faults() noexcept { return faults_; }

  // Boundary-side primitives, used only by HostInterface.
  void read_block(std::uint64_t offset, MutableByteSpan out) const;
  void write_block(std::uint64_t offset, ByteSpan block);
  void push_egress(WireFrame frame);
  std::optional<WireFrame> pop_ingress();
  bool ingress_ready() const noexcept { return !ingress_.empty(); }
  bool egress_has_space() const noexcept { return egress_.size() < config_.egress_capacity; }
  std::int64_t clock_value(ClockId id, SimTime sim_now);

  // Host-side view.
  const Bytes& image() const noexcept { return image_; }
  Bytes& host_image() noexcept { return image_; }
  void peer_send(WireFrame frame);
  std::optional<WireFrame> peer_take();
  std::size_t egress_size() const noexcept { return egress_.size(); }
  void host_script_clock(ClockId id, std::vector<std::int64_t> values);

 private:
  HostBackendConfig config_;
  Bytes image_;
  std::deque<WireFrame> ingress_;
  std::deque<WireFrame> egress_;
  std::map<ClockId, std::deque<std::int64_t>> scripted_clocks_;
  FaultInjection faults_;
  BackendMutations mutations_;
};

enum class SignalOutcome { delivered, rejected, dropped };

struct SanitizedSignal {
  SignalOutcome outcome = SignalOutcome::rejected;
  SignalInfo info;
};

struct HostInterfaceOptions {
  bool ignore_user_signals = true;
};

// The enclave side of the boundary. Each call is recorded into the trace and
// its inputs from the host are sanitised before being returned.
class HostInterface {
 public:
  HostInterface(HostBackend& backend, SimClock& clock, Trace& trace, HostInterfaceOptions options = {});

  Block disk_read(std::uint64_t offset);
  void disk_write(std::uint64_t offset, ByteSpan block);
  void net_write(std::uint64_t endpoint, ByteSpan frame);
  WireFrame net_read();
  std::uint8_t net_poll(std::uint8_t eventmask);
  std::int64_t time_read(std::uint32_t clock);
  SanitizedSignal forward_signal(const SignalInfo& raw);

  // Value substituted for the address of faulting-instruction signals.
  void set_current_instruction(std::uint64_t ip) noexcept { current_ip_ = ip; }
  std::uint64_t current_instruction() const noexcept { return current_ip_; }

  void annotate_last_dummy() { trace_.annotate_last_dummy(); }

  std::uint32_t mtu() const noexcept { return backend_.mtu(); }
  std::uint64_t image_size() const noexcept { return backend_.image_size(); }
  SimClock& clock() noexcept { return clock_; }
  Trace& trace() noexcept { return trace_; }
  HostBackend& backend() noexcept { return backend_; }

 private:
  void record(HostCallKind kind, std::uint64_t offset, std::uint32_t len);
  void check_disk_offset(std::uint64_t offset) const;

  HostBackend& backend_;
  SimClock& clock_;
  Trace& trace_;
  HostInterfaceOptions options_;
  std::uint64_t current_ip_;
  std::map<ClockId, std::int64_t> monotonic_floor_;
};

}  // namespace oblv
