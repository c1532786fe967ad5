#include <gtest/gtest.h>

#include <thread>

#include "chi_square.hpp"

#include "oblv/adversary.hpp"
#include "oblv/error.hpp"
#include "oblv/oblivious_sched.hpp"

using namespace oblv;

namespace {

class RangeDummies final : public DummyTargets {
 public:
  RangeDummies(PhysBlock lo, PhysBlock hi) : lo_(lo), hi_(hi) {}
  PhysBlock dummy_read_target(Rng& rng) override { return lo_ + rng.uniform(hi_ - lo_); }
  PhysBlock dummy_write_target(Rng& rng) override { return lo_ + rng.uniform(hi_ - lo_); }
  Block dummy_write_payload(PhysBlock) override {
    Block b;
    b.fill(0xdd);
    return b;
  }

 private:
  PhysBlock lo_, hi_;
};

struct Rig {
  explicit Rig(RoundConfig cfg = {})
      : backend(HostBackendConfig{64 * kBlockSize}),
        host(backend, clock, trace),
        dummies(32, 64),
        sched(host, cfg, dummies, Rng::from_seed(1)) {}

  HostBackend backend;
  SimClock clock;
  Trace trace;
  HostInterface host;
  RangeDummies dummies;
  ObliviousScheduler sched;
};

Block filled(std::uint8_t v) {
  Block b;
  b.fill(v);
  return b;
}

}  // namespace

TEST(Rounds, IdleRoundsAreReadThenWriteAtMultiplesOfInterval) {
  Rig r;
  r.sched.run_rounds(5);
  auto ev = r.trace.snapshot();
  ASSERT_EQ(ev.size(), 10u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(ev[2 * i].kind, HostCallKind::disk_read);
    EXPECT_EQ(ev[2 * i + 1].kind, HostCallKind::disk_write);
    EXPECT_EQ(ev[2 * i].timestamp, i * 100'000);
    EXPECT_EQ(ev[2 * i + 1].timestamp, i * 100'000);
    EXPECT_TRUE(ev[2 * i].is_dummy_ground_truth);
  }
  EXPECT_EQ(r.sched.stats().dummy_reads, 5u);
}

TEST(Rounds, PendingPairServedInReadThenWriteOrder) {
  Rig r;
  auto w = r.sched.submit(IoRequest{IoKind::write, 3, filled(7)});
  auto rd = r.sched.submit(IoRequest{IoKind::read, 4, {}});
  auto ev = r.sched.run_round(r.sched.next_round_time());
  ASSERT_EQ(ev.size(), 2u);
  EXPECT_EQ(ev[0].kind, HostCallKind::disk_read);
  EXPECT_EQ(ev[0].offset, 4 * kBlockSize);
  EXPECT_FALSE(ev[0].is_dummy_ground_truth);
  EXPECT_EQ(ev[1].offset, 3 * kBlockSize);
  EXPECT_TRUE(w->done && rd->done);
  EXPECT_EQ(r.host.disk_read(3 * kBlockSize), filled(7));
}

TEST(Rounds, ThreeReadsCompleteInConsecutiveRounds) {
  Rig r;
  r.sched.run_rounds(2);
  std::vector<IoHandle> hs;
  for (PhysBlock p = 0; p < 3; ++p) hs.push_back(r.sched.submit(IoRequest{IoKind::read, p, {}}));
  r.sched.run_rounds(3);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_TRUE(hs[i]->done);
    EXPECT_EQ(hs[i]->round, 2 + i);
  }
}

TEST(Rounds, TooEarlyRoundRejected) {
  Rig r;
  r.sched.run_round(0);
  EXPECT_THROW(r.sched.run_round(50'000), Error);
}

TEST(Rounds, ZeroIntervalRejected) {
  EXPECT_THROW(Rig(RoundConfig{.round_interval_ns = 0}), Error);
}

TEST(Rounds, WaitDrivesRoundsAndBudgetStopsThem) {
  Rig r;
  r.sched.set_round_budget(2);
  auto h1 = r.sched.submit(IoRequest{IoKind::read, 1, {}});
  auto h2 = r.sched.submit(IoRequest{IoKind::read, 2, {}});
  auto h3 = r.sched.submit(IoRequest{IoKind::read, 3, {}});
  r.sched.wait(h2);
  EXPECT_TRUE(h1->done);
  try {
    r.sched.wait(h3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::round_budget);
  }
}

TEST(Rounds, FullQueueBackpressure) {
  Rig r(RoundConfig{.queue_capacity = 2});
  EXPECT_TRUE(r.sched.try_submit(IoRequest{IoKind::read, 1, {}}));
  EXPECT_TRUE(r.sched.try_submit(IoRequest{IoKind::read, 1, {}}));
  EXPECT_FALSE(r.sched.try_submit(IoRequest{IoKind::read, 1, {}}));
  // Blocking submit runs a round to make room.
  r.sched.submit(IoRequest{IoKind::read, 1, {}});
  EXPECT_EQ(r.sched.stats().rounds, 1u);
}

TEST(Rounds, ShapeIndependentOfLoad) {
  auto shape = [](int load) {
    Rig r;
    auto rng = Rng::from_seed(2);
    for (int round = 0; round < 300; ++round) {
      for (int i = 0; i < load; ++i) {
        r.sched.try_submit(IoRequest{rng.uniform(2) ? IoKind::read : IoKind::write, rng.uniform(32), filled(1)});
      }
      r.sched.run_next_round();
    }
    std::vector<std::tuple<SimTime, HostCallKind, std::uint32_t>> out;
    for (const auto& e : r.trace.snapshot()) out.emplace_back(e.timestamp, e.kind, e.payload_len);
    return out;
  };
  const auto idle = shape(0);
  EXPECT_EQ(idle, shape(1));
  EXPECT_EQ(idle, shape(5));
}

TEST(Rounds, DummyReadOffsetsUniformOverTargets) {
  Rig r;
  r.sched.run_rounds(10'000);
  auto blocks = read_blocks(r.trace.snapshot(), 0, 64);
  std::vector<double> counts(32, 0);
  for (auto b : blocks) {
    ASSERT_GE(b, 32u);
    counts[b - 32] += 1;
  }
  EXPECT_GT(oblv::testing::chi_square_equal_p(counts), 0.01);
}

TEST(Rounds, ConcurrentSubmittersAllComplete) {
  Rig r;
  std::vector<std::thread> threads;
  std::vector<IoHandle> handles(40);
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < 10; ++i) {
        IoHandle h;
        while (!(h = r.sched.try_submit(IoRequest{IoKind::read, static_cast<PhysBlock>(t), {}}).value_or(nullptr))) {
        }
        handles[t * 10 + i] = h;
      }
    });
  }
  for (auto& th : threads) th.join();
  r.sched.drain();
  for (const auto& h : handles) EXPECT_TRUE(h->done);
  EXPECT_EQ(r.sched.stats().real_reads, 40u);
  EXPECT_EQ(r.sched.stats().rounds, 40u);
}

TEST(DirectIo, IssuesImmediateCalls) {
  HostBackend backend(HostBackendConfig{8 * kBlockSize});
  SimClock clock;
  Trace trace;
  HostInterface host(backend, clock, trace);
  DirectBlockIo io(host, 10);
  io.submit(IoRequest{IoKind::write, 2, filled(4)});
  auto h = io.submit(IoRequest{IoKind::read, 2, {}});
  EXPECT_EQ(h->data, filled(4));
  EXPECT_EQ(trace.size(), 2u);
  EXPECT_EQ(clock.now(), 20u);
}
