#include "oblv/oblivious_sched.hpp"

#include <algorithm>
#include <thread>

#include "oblv/error.hpp"

namespace oblv {

IoHandle DirectBlockIo::submit(IoRequest req) {
  auto handle = std::make_shared<IoCompletion>();
  host_.clock().advance(latency_);
  if (req.kind == IoKind::read) {
    handle->data = host_.disk_read(block_offset(req.phys));
    ++reads_;
  } else {
    host_.disk_write(block_offset(req.phys), req.payload);
    ++writes_;
  }
  handle->done = true;
  return handle;
}

ObliviousScheduler::ObliviousScheduler(HostInterface& host, RoundConfig config, DummyTargets& dummies, Rng rng,
                                       ClockMode clock_mode)
    : host_(host),
      config_(config),
      dummies_(dummies),
      rng_(std::move(rng)),
      clock_mode_(clock_mode),
      origin_(host.clock().now()),
      wall_origin_(std::chrono::steady_clock::now()) {
  if (config_.round_interval_ns == 0) throw Error(Errc::parameter, "round interval must be positive");
  if (config_.queue_capacity == 0) throw Error(Errc::parameter, "queue capacity must be positive");
}

std::optional<IoHandle> ObliviousScheduler::try_submit(IoRequest req) {
  std::lock_guard lock(mu_);
  auto& queue = req.kind == IoKind::read ? reads_ : writes_;
  if (queue.size() >= config_.queue_capacity) return std::nullopt;
  auto handle = std::make_shared<IoCompletion>();
  queue.push_back(Pending{std::move(req), handle});
  return handle;
}

IoHandle ObliviousScheduler::submit(IoRequest req) {
  while (true) {
    if (auto h = try_submit(req)) return *h;
    ensure_budget();
    run_next_round();
  }
}

void ObliviousScheduler::ensure_budget() const {
  if (budget_ && stats_.rounds >= *budget_) throw Error(Errc::round_budget, "round budget exhausted");
}

void ObliviousScheduler::wait(const IoHandle& handle) {
  while (!handle->done) {
    ensure_budget();
    run_next_round();
  }
}

void ObliviousScheduler::drain() {
  while (pending_reads() + pending_writes() > 0) {
    ensure_budget();
    run_next_round();
  }
}

SimTime ObliviousScheduler::next_round_time() const noexcept {
  return last_round_ ? *last_round_ + config_.round_interval_ns : origin_;
}

void ObliviousScheduler::run_next_round() { run_round(next_round_time()); }

void ObliviousScheduler::run_rounds(std::uint64_t n) {
  for (std::uint64_t i = 0; i < n; ++i) run_next_round();
}

std::vector<HostCallEvent> ObliviousScheduler::run_round(SimTime now) {
  if (last_round_ && now < *last_round_ + config_.round_interval_ns) {
    throw Error(Errc::parameter, "round fired before its interval elapsed");
  }
  if (round_hook_) round_hook_(now);
  std::lock_guard lock(mu_);
  if (clock_mode_ == ClockMode::wall) {
    auto due = wall_origin_ + std::chrono::nanoseconds(now - origin_);
    std::this_thread::sleep_until(due);
    auto late = std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - due).count();
    stats_.max_jitter_ns = std::max<std::int64_t>(stats_.max_jitter_ns, late);
  }
  host_.clock().advance_to(now);
  const auto first_event = host_.trace().size();
  const auto round = stats_.rounds;

  for (std::uint32_t i = 0; i < config_.reads_per_round; ++i) {
    if (!reads_.empty()) {
      auto p = std::move(reads_.front());
      reads_.pop_front();
      p.handle->data = host_.disk_read(block_offset(p.req.phys));
      p.handle->round = round;
      p.handle->done = true;
      ++stats_.real_reads;
    } else {
      host_.disk_read(block_offset(dummies_.dummy_read_target(rng_)));
      host_.annotate_last_dummy();
      ++stats_.dummy_reads;
    }
  }
  for (std::uint32_t i = 0; i < config_.writes_per_round; ++i) {
    if (!writes_.empty()) {
      auto p = std::move(writes_.front());
      writes_.pop_front();
      host_.disk_write(block_offset(p.req.phys), p.req.payload);
      p.handle->round = round;
      p.handle->done = true;
      ++stats_.real_writes;
    } else {
      auto target = dummies_.dummy_write_target(rng_);
      auto payload = dummies_.dummy_write_payload(target);
      host_.disk_write(block_offset(target), payload);
      host_.annotate_last_dummy();
      ++stats_.dummy_writes;
    }
  }
  last_round_ = now;
  ++stats_.rounds;
  return host_.trace().snapshot(first_event);
}

std::size_t ObliviousScheduler::pending_reads() const {
  std::lock_guard lock(mu_);
  return reads_.size();
}

std::size_t ObliviousScheduler::pending_writes() const {
  std::lock_guard lock(mu_);
  return writes_.size();
}

}  // namespace oblv
