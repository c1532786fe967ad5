#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <vector>

#include "oblv/common.hpp"
#include "oblv/host_iface.hpp"
#include "oblv/rng.hpp"

namespace oblv {

enum class IoKind : std::uint8_t { read, write };

struct IoCompletion {
  bool done = false;
  std::uint64_t round = 0;  // round in which the call was issued (scheduler only)
  Block data{};             // stored bytes, for reads
};

using IoHandle = std::shared_ptr<IoCompletion>;

struct IoRequest {
  IoKind kind = IoKind::read;
  PhysBlock phys = 0;
  Block payload{};  // already protected bytes, for writes
};

inline std::uint64_t block_offset(PhysBlock phys) { return phys * kBlockSize; }

// Where trusted code sends its disk traffic.
class BlockIo {
 public:
  virtual ~BlockIo() = default;
  // Blocks (by driving the engine) while the queue is full.
  virtual IoHandle submit(IoRequest req) = 0;
  virtual void wait(const IoHandle& handle) = 0;
  virtual void drain() = 0;
};

// Passthrough: each request becomes an immediate host call. Used for mount,
// image creation and as the non-oblivious baseline.
class DirectBlockIo final : public BlockIo {
 public:
  explicit DirectBlockIo(HostInterface& host, SimTime per_call_latency_ns = 0)
      : host_(host), latency_(per_call_latency_ns) {}

  IoHandle submit(IoRequest req) override;
  void wait(const IoHandle&) override {}
  void drain() override {}

  std::uint64_t reads() const noexcept { return reads_; }
  std::uint64_t writes() const noexcept { return writes_; }

 private:
  HostInterface& host_;
  SimTime latency_;
  std::uint64_t reads_ = 0;
  std::uint64_t writes_ = 0;
};

struct RoundConfig {
  SimTime round_interval_ns = 100'000;  // 0.1 ms
  std::uint32_t reads_per_round = 1;
  std::uint32_t writes_per_round = 1;
  std::size_t queue_capacity = 1024;

  friend bool operator==(const RoundConfig&, const RoundConfig&) = default;
};

// Supplies the blocks and payloads used to pad a round.
class DummyTargets {
 public:
  virtual ~DummyTargets() = default;
  virtual PhysBlock dummy_read_target(Rng& rng) = 0;
  virtual PhysBlock dummy_write_target(Rng& rng) = 0;
  virtual Block dummy_write_payload(PhysBlock phys) = 0;
};

enum class ClockMode { simulated, wall };

struct SchedulerStats {
  std::uint64_t rounds = 0;
  std::uint64_t real_reads = 0;
  std::uint64_t dummy_reads = 0;
  std::uint64_t real_writes = 0;
  std::uint64_t dummy_writes = 0;
  std::int64_t max_jitter_ns = 0;  // wall-clock mode only
};

// Fixed-cadence batch engine. Every round_interval it issues exactly
// reads_per_round disk_read calls followed by writes_per_round disk_write
// calls; queued requests are served FIFO per kind and any shortfall is filled
// with dummy calls.
class ObliviousScheduler final : public BlockIo {
 public:
  ObliviousScheduler(HostInterface& host, RoundConfig config, DummyTargets& dummies, Rng rng,
                     ClockMode clock_mode = ClockMode::simulated);

  // Returns nullopt when the queue for that kind is full.
  std::optional<IoHandle> try_submit(IoRequest req);
  IoHandle submit(IoRequest req) override;
  void wait(const IoHandle& handle) override;
  void drain() override;

  // Emits one round at `now`, which must be at least one interval after the
  // previous round. Returns the host calls of that round.
  std::vector<HostCallEvent> run_round(SimTime now);
  SimTime next_round_time() const noexcept;
  void run_next_round();
  void run_rounds(std::uint64_t n);

  // After `rounds` rounds, waiting throws Errc::round_budget instead of
  // running further rounds.
  void set_round_budget(std::optional<std::uint64_t> rounds) noexcept { budget_ = rounds; }
  // Called with the round time before each round's host calls, so other
  // engines sharing the clock can catch up first.
  void set_round_hook(std::function<void(SimTime)> hook) { round_hook_ = std::move(hook); }

  const RoundConfig& config() const noexcept { return config_; }
  const SchedulerStats& stats() const noexcept { return stats_; }
  std::size_t pending_reads() const;
  std::size_t pending_writes() const;

 private:
  struct Pending {
    IoRequest req;
    IoHandle handle;
  };

  void ensure_budget() const;

  HostInterface& host_;
  RoundConfig config_;
  DummyTargets& dummies_;
  Rng rng_;
  ClockMode clock_mode_;
  SimTime origin_;
  std::chrono::steady_clock::time_point wall_origin_;
  std::optional<SimTime> last_round_;
  std::optional<std::uint64_t> budget_;
  std::function<void(SimTime)> round_hook_;
  mutable std::mutex mu_;
  std::deque<Pending> reads_;
  std::deque<Pending> writes_;
  SchedulerStats stats_;
};

}  // namespace oblv
