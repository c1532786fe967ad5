#include <gtest/gtest.h>

#include <algorithm>
#include <csignal>
#include <sstream>

#include "oblv/error.hpp"
#include "oblv/host_iface.hpp"
#include "oblv/rng.hpp"

using namespace oblv;

namespace {

struct Host {
  explicit Host(std::uint64_t blocks = 16, HostBackendConfig cfg = {}) : backend(with_size(cfg, blocks)), host(backend, clock, trace) {}

  static HostBackendConfig with_size(HostBackendConfig cfg, std::uint64_t blocks) {
    cfg.image_bytes = blocks * kBlockSize;
    return cfg;
  }

  HostBackend backend;
  SimClock clock;
  Trace trace;
  HostInterface host;
};

Block pattern(std::uint8_t seed) {
  Block b;
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = static_cast<std::uint8_t>(seed + i * 7);
  return b;
}

template <class Fn>
Errc code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return Errc::format;
}

}  // namespace

TEST(DiskCalls, ZeroImageReadsZeros) {
  Host h;
  auto b = h.host.disk_read(0);
  EXPECT_TRUE(std::all_of(b.begin(), b.end(), [](auto v) { return v == 0; }));
}

TEST(DiskCalls, AlignmentBoundsAndSizeErrors) {
  Host h;
  EXPECT_EQ(code_of([&] { h.host.disk_read(4095); }), Errc::alignment);
  EXPECT_EQ(code_of([&] { h.host.disk_read(16 * kBlockSize); }), Errc::bounds);
  Bytes short_block(4095);
  EXPECT_EQ(code_of([&] { h.host.disk_write(0, short_block); }), Errc::size);
  EXPECT_EQ(h.backend.mutations().disk_writes, 0u);
}

TEST(DiskCalls, WriteLandsAtByteOffsetOfRawImage) {
  Host h;
  auto b = pattern(3);
  h.host.disk_write(7 * kBlockSize, b);
  const auto& img = h.backend.image();
  EXPECT_TRUE(std::equal(b.begin(), b.end(), img.begin() + 7 * kBlockSize));
  EXPECT_EQ(h.host.disk_read(7 * kBlockSize), b);
  // Neighbouring blocks untouched.
  EXPECT_EQ(img[7 * kBlockSize - 1], 0);
  EXPECT_EQ(img[8 * kBlockSize], 0);
}

TEST(DiskCalls, LastWriterWins) {
  Host h;
  h.host.disk_write(kBlockSize, pattern(1));
  h.host.disk_write(kBlockSize, pattern(2));
  EXPECT_EQ(h.host.disk_read(kBlockSize), pattern(2));
}

TEST(NetCalls, LoopbackAndWouldBlock) {
  Host h;
  Bytes f(h.host.mtu(), 0xab);
  h.host.net_write(5, f);
  auto taken = h.backend.peer_take();
  ASSERT_TRUE(taken);
  EXPECT_EQ(taken->endpoint, 5u);
  EXPECT_EQ(taken->data, f);
  EXPECT_EQ(code_of([&] { h.host.net_read(); }), Errc::would_block);
}

TEST(NetCalls, WrongFrameLengthRejected) {
  Host h;
  Bytes f(100);
  EXPECT_EQ(code_of([&] { h.host.net_write(1, f); }), Errc::size);
}

TEST(NetCalls, HundredWritesGiveHundredMtuEvents) {
  Host h;
  Bytes f(h.host.mtu());
  for (int i = 0; i < 100; ++i) h.host.net_write(1, f);
  auto events = h.trace.snapshot();
  ASSERT_EQ(events.size(), 100u);
  for (const auto& e : events) {
    EXPECT_EQ(e.kind, HostCallKind::net_write);
    EXPECT_EQ(e.payload_len, 1500u);
  }
}

TEST(NetCalls, PollReportsReadableAndWritable) {
  Host h;
  EXPECT_EQ(h.host.net_poll(kPollReadable), 0);
  h.backend.peer_send({1, Bytes(h.host.mtu())});
  EXPECT_EQ(h.host.net_poll(kPollReadable), kPollReadable);
  EXPECT_EQ(h.host.net_poll(kPollWritable), kPollWritable);
  EXPECT_EQ(code_of([&] { h.host.net_poll(0); }), Errc::parameter);
}

TEST(NetCalls, LyingPollCausesOnlyRecoverableFailure) {
  Host h;
  h.backend.faults().lying_poll = true;
  EXPECT_EQ(h.host.net_poll(kPollReadable), kPollReadable);
  const auto before = h.backend.mutations();
  EXPECT_EQ(code_of([&] { h.host.net_read(); }), Errc::would_block);
  EXPECT_EQ(h.backend.mutations().ingress_pops, before.ingress_pops);
  // The caller re-polls and reads once a frame actually arrives.
  h.backend.peer_send({2, Bytes(h.host.mtu(), 1)});
  EXPECT_EQ(h.host.net_read().endpoint, 2u);
}

TEST(NetCalls, ShortIngressFrameNormalisedToMtu) {
  Host h;
  h.backend.peer_send({1, Bytes(10, 9)});
  auto f = h.host.net_read();
  EXPECT_EQ(f.data.size(), h.host.mtu());
  EXPECT_EQ(f.data[9], 9);
  EXPECT_EQ(f.data[10], 0);
}

TEST(TimeCalls, MonotonicClampsToPreviousMaximum) {
  Host h;
  h.backend.host_script_clock(ClockId::monotonic, {100, 90, 120});
  std::vector<std::int64_t> seen;
  for (int i = 0; i < 3; ++i) seen.push_back(h.host.time_read(1));
  EXPECT_EQ(seen, (std::vector<std::int64_t>{100, 100, 120}));
}

TEST(TimeCalls, RealtimePassesThroughAndIncreasingIsUnchanged) {
  Host h;
  h.backend.host_script_clock(ClockId::realtime, {50, 10, 30});
  EXPECT_EQ(h.host.time_read(0), 50);
  EXPECT_EQ(h.host.time_read(0), 10);
  EXPECT_EQ(h.host.time_read(0), 30);
  h.backend.host_script_clock(ClockId::boottime, {1, 2, 3});
  EXPECT_EQ(h.host.time_read(7), 1);
  EXPECT_EQ(h.host.time_read(7), 2);
  EXPECT_EQ(h.host.time_read(7), 3);
}

TEST(TimeCalls, UnknownClockIsParameterError) {
  Host h;
  EXPECT_EQ(code_of([&] { h.host.time_read(42); }), Errc::parameter);
}

TEST(TimeCalls, AdversarialMonotonicSequenceNeverDecreases) {
  auto rng = Rng::from_seed(11);
  for (int trial = 0; trial < 50; ++trial) {
    Host h;
    std::vector<std::int64_t> script(200);
    for (auto& v : script) v = static_cast<std::int64_t>(rng.uniform(1'000'000)) - 500'000;
    h.backend.host_script_clock(ClockId::monotonic_raw, script);
    std::int64_t prev = std::numeric_limits<std::int64_t>::min();
    for (std::size_t i = 0; i < script.size(); ++i) {
      const auto v = h.host.time_read(4);
      ASSERT_GE(v, prev);
      prev = v;
    }
  }
}

TEST(Signals, MemoryFaultAddressMustLieInEnclave) {
  Host h;
  const auto inside = h.backend.enclave_range().lo + 64;
  auto ok = h.host.forward_signal({SIGSEGV, 0, inside});
  EXPECT_EQ(ok.outcome, SignalOutcome::delivered);
  EXPECT_EQ(ok.info.addr, inside);
  EXPECT_EQ(h.host.forward_signal({SIGSEGV, 0, 0x1000}).outcome, SignalOutcome::rejected);
  EXPECT_EQ(h.host.forward_signal({SIGBUS, 0, h.backend.enclave_range().hi}).outcome, SignalOutcome::rejected);
}

TEST(Signals, FaultingInstructionAddressReplaced) {
  Host h;
  h.host.set_current_instruction(0x10002000);
  auto s = h.host.forward_signal({SIGILL, 0, 0xdeadbeef});
  EXPECT_EQ(s.outcome, SignalOutcome::delivered);
  EXPECT_EQ(s.info.addr, 0x10002000u);
}

TEST(Signals, UserSignalsDroppedWhenIgnored) {
  Host h;
  EXPECT_EQ(h.host.forward_signal({SIGUSR1, 0, 0}).outcome, SignalOutcome::dropped);
}

TEST(Boundary, EveryBackendMutationHasAnEvent) {
  Host h;
  auto rng = Rng::from_seed(5);
  for (int i = 0; i < 500; ++i) {
    switch (rng.uniform(4)) {
      case 0: h.host.disk_write(rng.uniform(16) * kBlockSize, pattern(static_cast<std::uint8_t>(i))); break;
      case 1: h.host.disk_read(rng.uniform(16) * kBlockSize); break;
      case 2: h.host.net_write(1, Bytes(h.host.mtu())); break;
      case 3:
        h.backend.peer_send({1, Bytes(h.host.mtu())});
        if (h.host.net_poll(kPollReadable)) h.host.net_read();
        break;
    }
  }
  std::array<std::uint64_t, kHostCallKinds> counts{};
  for (const auto& e : h.trace.snapshot()) ++counts[static_cast<std::size_t>(e.kind)];
  const auto& m = h.backend.mutations();
  EXPECT_EQ(m.disk_writes, counts[static_cast<std::size_t>(HostCallKind::disk_write)]);
  EXPECT_EQ(m.egress_pushes, counts[static_cast<std::size_t>(HostCallKind::net_write)]);
  EXPECT_EQ(m.ingress_pops, counts[static_cast<std::size_t>(HostCallKind::net_read)]);
  for (const auto& e : h.trace.snapshot()) {
    if (is_disk(e.kind)) {
      EXPECT_EQ(e.payload_len, kBlockSize);
    }
    if (is_net_data(e.kind)) {
      EXPECT_EQ(e.payload_len, h.host.mtu());
    }
  }
}

TEST(TraceFormat, RoundTripsAndGroundTruthColumn) {
  std::vector<HostCallEvent> events{{0, HostCallKind::disk_read, 4096, 4096, false},
                                    {100000, HostCallKind::disk_write, 8192, 4096, true},
                                    {100000, HostCallKind::net_poll, 1, 0, false}};
  std::ostringstream plain, truth;
  write_trace(plain, events, false);
  write_trace(truth, events, true);
  EXPECT_EQ(plain.str(), "0,disk_read,4096,4096\n100000,disk_write,8192,4096\n100000,net_poll,1,0\n");
  EXPECT_EQ(truth.str(), "0,disk_read,4096,4096,0\n100000,disk_write,8192,4096,1\n100000,net_poll,1,0,0\n");
  std::istringstream in(truth.str());
  auto back = read_trace(in);
  EXPECT_EQ(back, events);
  EXPECT_TRUE(back[1].is_dummy_ground_truth);
}

TEST(TraceFormat, EqualityIgnoresGroundTruth) {
  HostCallEvent a{5, HostCallKind::disk_read, 0, 4096, false};
  HostCallEvent b = a;
  b.is_dummy_ground_truth = true;
  EXPECT_EQ(a, b);
}
