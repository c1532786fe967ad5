#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "oblv/adversary.hpp"
#include "oblv/block_crypto.hpp"
#include "oblv/host_iface.hpp"
#include "oblv/net_shaper.hpp"
#include "oblv/oblivious_sched.hpp"
#include "oblv/volume.hpp"

namespace oblv {

enum class WorkloadKind : std::uint8_t { seqread, randread, reread, kvtrace, netecho, idle };

// Textual forms:
//   seqread:FILE[:LEN]       read LEN bytes (default: whole file) front to back
//   randread:FILE:COUNT      COUNT reads of one random block each
//   reread:FILE:BLOCK:COUNT  read one block COUNT times
//   kvtrace:PATH             replay "R|W FILE OFFSET LEN" lines
//   netecho:PEER:BYTES       send BYTES to PEER and wait for the echo
//   idle:ROUNDS              let ROUNDS rounds pass
struct WorkloadSpec {
  WorkloadKind kind = WorkloadKind::idle;
  std::string file;
  std::uint64_t len = 0;    // seqread length, 0 = whole file
  std::uint64_t count = 0;  // randread / reread
  std::uint64_t block = 0;  // reread
  std::string path;         // kvtrace
  std::uint64_t peer = 0;   // netecho endpoint id
  std::uint64_t bytes = 0;  // netecho
  std::uint64_t rounds = 0; // idle

  static WorkloadSpec parse(std::string_view text);
  std::string text() const;
};

struct KvOp {
  bool write = false;
  std::string file;
  std::uint64_t offset = 0;
  std::uint64_t len = 0;
};

std::vector<KvOp> parse_kvtrace(std::string_view contents);

struct PeerSpec {
  std::uint64_t endpoint_id = 0;
  std::optional<PublicKey> key;  // none: a simulated echo peer with a derived key
  std::string address;
  std::uint64_t rate_bps = 200'000'000;
};

// "PUBKEY,ADDR,RATE" where PUBKEY may be "sim"; RATE accepts k/M/G suffixes.
PeerSpec parse_peer(std::string_view text, std::uint64_t endpoint_id);

struct RunConfig {
  std::optional<BlockKey> key;
  std::optional<Digest> verity_root;
  std::optional<ProtectionMode> expect_mode;
  IoPath path = IoPath::oblivious;
  RoundConfig rounds;
  ClockMode clock = ClockMode::simulated;
  std::size_t cache_pages = 0;
  std::vector<PeerSpec> peers;
  std::vector<WorkloadSpec> workloads;
  std::uint64_t seed = 1;
  // Oblivious path: idle up to exactly this many rounds after the workload;
  // also the round budget.
  std::optional<std::uint64_t> total_rounds;
  std::optional<std::size_t> eager_shuffle_after;
  DummyReadDomain dummy_reads = DummyReadDomain::data_area;
  ShaperConfig shaper;
  SimTime passthrough_latency_ns = 0;
  bool persist = true;
};

struct RunResult {
  std::vector<HostCallEvent> trace;  // execution phase only
  VolumeStats volume;
  NetEngineStats net;
  std::uint64_t app_bytes = 0;   // bytes the workload read or wrote
  SimTime sim_elapsed_ns = 0;
  double wall_seconds = 0;
  bool budget_exhausted = false;
  FsLayout layout;
  Bytes image;  // image contents after the run
};

// Mounts `image`, runs the workloads and returns the trace of the execution
// phase (mount and persistence calls excluded).
RunResult run_experiment(const RunConfig& config, Bytes image, const std::string& kvtrace_base = ".");

double bytes_per_second(const RunResult& r, IoPath path);

struct BenchRow {
  std::string label;
  double bytes_per_sec = 0;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  double plain_over_oblivious = 0;
  bool integrity_slower_than_plain = false;
};

struct BenchOptions {
  std::uint64_t file_bytes = 4 << 20;
  int repetitions = 3;
  std::uint64_t seed = 1;
};

// Wall-clock seqread throughput for plain, crypt and crypt+integrity
// passthrough and for the oblivious path with real-time rounds.
BenchReport run_bench(const BenchOptions& options);

}  // namespace oblv
