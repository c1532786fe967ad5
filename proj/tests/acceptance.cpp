// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
// The CLI path is passed as argv[1]; criteria 8 and 9 drive it as a user would.

#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

#include "mem_stack.hpp"
#include "oblv/adversary.hpp"
#include "oblv/error.hpp"
#include "oblv/experiment.hpp"
#include "oblv/net_shaper.hpp"
#include "oblv/secure_channel.hpp"
#include "oblv/shuffle.hpp"

namespace fs = std::filesystem;
using namespace oblv;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int prec = 3) {
  std::ostringstream o;
  o.precision(prec);
  o << v;
  return o.str();
}

fs::path scratch_dir() {
  auto dir = fs::temp_directory_path() / ("oblv-accept-" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir;
}

// Runs a shell command, returning exit status and stdout.
std::pair<int, std::string> run_command(const std::string& cmd) {
  std::string out;
  FILE* p = ::popen((cmd + " 2>&1").c_str(), "r");
  if (!p) return {-1, ""};
  std::array<char, 512> buf{};
  while (std::fgets(buf.data(), buf.size(), p)) out += buf.data();
  const int status = ::pclose(p);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// --- 1: disk obliviousness -------------------------------------------------------

struct Fixture {
  CreatedImage image;
  std::map<std::string, std::uint64_t> file_blocks;
};

Fixture oblivious_fixture() {
  auto rng = Rng::from_seed(1001);
  std::vector<ImageFile> files{{"a", Bytes(120 * kBlockSize)}, {"b", Bytes(60 * kBlockSize)}, {"c", Bytes(30 * kBlockSize)}};
  Fixture f;
  for (auto& file : files) {
    rng.fill(file.data);
    f.file_blocks[file.name] = file.data.size() / kBlockSize;
  }
  f.image = create_image(ImageSpec{.n_blocks = 1024, .mode = ProtectionMode::crypt_integrity}, files, rng);
  return f;
}

std::vector<WorkloadSpec> random_workload(const Fixture& f, Rng& rng, const fs::path& dir, int tag) {
  static const std::array<std::string, 3> names{"a", "b", "c"};
  std::vector<WorkloadSpec> out;
  const auto n = 1 + rng.uniform(3);
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto& file = names[rng.uniform(names.size())];
    const auto blocks = f.file_blocks.at(file);
    switch (rng.uniform(5)) {
      case 0:
        out.push_back(WorkloadSpec::parse("seqread:" + file + ":" + std::to_string(1 + rng.uniform(blocks * kBlockSize))));
        break;
      case 1:
        out.push_back(WorkloadSpec::parse("randread:" + file + ":" + std::to_string(1 + rng.uniform(400))));
        break;
      case 2:
        out.push_back(WorkloadSpec::parse("reread:" + file + ":" + std::to_string(rng.uniform(blocks)) + ":" +
                                          std::to_string(1 + rng.uniform(200))));
        break;
      case 3: {
        const auto path = dir / ("kv" + std::to_string(tag) + "_" + std::to_string(i) + ".trace");
        std::ofstream kv(path);
        for (int op = 0, ops = 1 + static_cast<int>(rng.uniform(150)); op < ops; ++op) {
          const auto len = 1 + rng.uniform(3 * kBlockSize);
          kv << (rng.uniform(3) == 0 ? "W " : "R ") << file << " " << rng.uniform(blocks * kBlockSize - len) << " "
             << len << "\n";
        }
        out.push_back(WorkloadSpec::parse("kvtrace:" + path.string()));
        break;
      }
      default:
        out.push_back(WorkloadSpec::parse("idle:" + std::to_string(rng.uniform(3000))));
    }
  }
  return out;
}

Outcome disk_obliviousness() {
  constexpr int kPairs = 20;
  constexpr int kReps = 5;
  constexpr std::uint64_t kRounds = 10'000;
  const auto t0 = std::chrono::steady_clock::now();
  const auto f = oblivious_fixture();
  const auto dir = scratch_dir();
  auto rng = Rng::from_seed(2024);

  std::vector<std::array<std::vector<WorkloadSpec>, 2>> pairs;
  for (int i = 0; i < kPairs; ++i) {
    pairs.push_back({random_workload(f, rng, dir, 2 * i), random_workload(f, rng, dir, 2 * i + 1)});
  }

  RunConfig base;
  base.key = f.image.key;
  base.total_rounds = kRounds;
  base.persist = false;
  const std::uint64_t lo = f.image.layout.data_start;
  const std::uint64_t hi = f.image.layout.n_blocks;

  int shape_fail = 0;
  std::size_t comparisons = 0;
  std::map<std::pair<int, int>, std::vector<double>> p_values;  // (pair, side) -> per repetition
  std::uint64_t real_reads = 0;
  std::uint64_t shuffles = 0;
  for (int rep = 0; rep < kReps; ++rep) {
    for (int i = 0; i < kPairs; ++i) {
      std::array<RunResult, 2> r;
      for (int side = 0; side < 2; ++side) {
        auto cfg = base;
        cfg.workloads = pairs[i][side];
        cfg.seed = 1 + static_cast<std::uint64_t>(rep) * 1000 + 2 * i + side;
        r[side] = run_experiment(cfg, f.image.image, dir.string());
        real_reads += r[side].volume.real_reads;
        shuffles += r[side].volume.shuffles;
        auto blocks = read_blocks(r[side].trace, lo, hi);
        p_values[{i, side}].push_back(uniformity_test(blocks, lo, hi));
      }
      ++comparisons;
      if (!compare_traces(r[0].trace, base.rounds, r[1].trace, base.rounds).shape_equal) ++shape_fail;
    }
  }
  int uniform_fail = 0;
  double min_p = 1;
  for (const auto& [key, ps] : p_values) {
    if (!majority_pass(ps)) ++uniform_fail;
    for (auto p : ps) min_p = std::min(min_p, p);
  }
  fs::remove_all(dir);
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = shape_fail == 0 && uniform_fail == 0 && secs < 120;
  o.detail = std::to_string(comparisons - shape_fail) + "/" + std::to_string(comparisons) + " shape-equal, " +
             std::to_string(p_values.size() - uniform_fail) + "/" + std::to_string(p_values.size()) +
             " traces uniform by majority (min p " + fmt(min_p) + "), " + std::to_string(real_reads) +
             " real reads, " + std::to_string(shuffles) + " shuffles, " + fmt(secs) + " s";
  return o;
}

// --- 2: round cadence ------------------------------------------------------------

Outcome batch_cadence() {
  constexpr std::uint64_t kRounds = 10'000;
  const auto f = oblivious_fixture();
  RunConfig cfg;
  cfg.key = f.image.key;
  cfg.total_rounds = kRounds;
  cfg.persist = false;
  auto r = run_experiment(cfg, f.image.image);
  const SimTime t = cfg.rounds.round_interval_ns;
  std::uint64_t reads = 0, writes = 0, bad = 0;
  for (std::size_t i = 0; i < r.trace.size(); ++i) {
    const auto& e = r.trace[i];
    reads += e.kind == HostCallKind::disk_read;
    writes += e.kind == HostCallKind::disk_write;
    const auto expect_kind = i % 2 == 0 ? HostCallKind::disk_read : HostCallKind::disk_write;
    if (e.kind != expect_kind || e.timestamp % t != 0) ++bad;
    if (i % 2 == 1 && e.timestamp != r.trace[i - 1].timestamp) ++bad;
    if (i >= 2 && i % 2 == 0 && e.timestamp != r.trace[i - 2].timestamp + t) ++bad;
  }
  Outcome o;
  o.pass = reads == kRounds && writes == kRounds && r.trace.size() == 2 * kRounds && bad == 0;
  o.detail = std::to_string(kRounds) + " rounds: " + std::to_string(reads) + " reads, " + std::to_string(writes) +
             " writes, " + std::to_string(bad) + " out of order or off the 0.1 ms grid";
  return o;
}

// --- 3: at-most-once reads -------------------------------------------------------

Outcome at_most_once() {
  const auto f = oblivious_fixture();
  constexpr std::uint32_t kBlock = 17;
  PhysBlock phys = 0;
  {
    HostBackend backend(HostBackendConfig{f.image.image.size()}, f.image.image);
    SimClock clock;
    Trace trace;
    HostInterface host(backend, clock, trace);
    auto v = Volume::mount(host, VolumeOptions{.key = f.image.key, .path = IoPath::passthrough}, Rng::from_seed(1));
    phys = v->fs().physical(v->open("a"), kBlock);
  }
  RunConfig cfg;
  cfg.key = f.image.key;
  cfg.persist = false;
  cfg.workloads = {WorkloadSpec::parse("reread:a:" + std::to_string(kBlock) + ":100")};
  auto r = run_experiment(cfg, f.image.image);
  std::uint64_t real_of_block = 0, real_total = 0;
  for (const auto& e : r.trace) {
    if (e.kind != HostCallKind::disk_read || e.is_dummy_ground_truth) continue;
    ++real_total;
    real_of_block += e.offset == phys * kBlockSize;
  }
  Outcome o;
  o.pass = real_of_block == 1 && real_total == 1 && r.volume.shuffles == 0;
  o.detail = "100 reads of one block: " + std::to_string(real_of_block) + " real read(s) of it, " +
             std::to_string(real_total) + " real reads in total, " + std::to_string(r.volume.rounds) + " rounds";
  return o;
}

// --- 4: shuffle correctness and placement ----------------------------------------

Outcome shuffle_uniformity() {
  constexpr int kShuffles = 1000;
  const auto t0 = std::chrono::steady_clock::now();
  testing::MemStack s(64, 4, 77, 0.0, ProtectionMode::crypt_integrity);
  auto rng = Rng::from_seed(77);
  std::vector<FileId> files{s.add_file("x", testing::random_bytes(rng, 5 * kBlockSize)),
                            s.add_file("y", testing::random_bytes(rng, 3 * kBlockSize + 100)),
                            s.add_file("z", testing::random_bytes(rng, 2 * kBlockSize))};
  std::vector<Bytes> expect;
  for (auto fd : files) expect.push_back(s.fs->file_read(fd, 0, s.fs->file_size(fd)));
  const std::uint64_t lo = s.fs->layout().data_start;

  int mismatches = 0;
  std::vector<std::uint64_t> placement;
  for (int i = 0; i < kShuffles; ++i) {
    oblivious_shuffle(*s.fs, files, *s.cache, s.io, s.protector, rng);
    s.cache->flush(true);
    for (std::size_t k = 0; k < files.size(); ++k) {
      if (s.fs->file_read(files[k], 0, expect[k].size()) != expect[k]) ++mismatches;
      for (auto p : s.fs->inode(files[k]).block_map) placement.push_back(p);
    }
    s.cache->flush(true);
  }
  const double p = uniformity_test(placement, lo, 64);
  const bool consistent = s.fs->check().empty();
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = mismatches == 0 && consistent && p > kSignificance && secs < 60;
  o.detail = std::to_string(kShuffles) + " shuffles, " + std::to_string(mismatches) + " byte mismatches, placement p " +
             fmt(p) + " over blocks " + std::to_string(lo) + "..63, " + fmt(secs) + " s";
  return o;
}

// --- 5: block crypto -------------------------------------------------------------

Outcome block_crypto() {
  auto rng = Rng::from_seed(55);
  const auto key = BlockKey::generate();
  constexpr int kTrials = 10'000;
  constexpr std::size_t kBits = (kNonceBytes + kBlockSize + kTagBytes) * 8;

  int undetected = 0;
  for (int t = 0; t < kTrials; ++t) {
    Block plain;
    rng.fill(plain);
    const auto phys = rng.uniform(1 << 20);
    auto enc = seal_block(key, phys, plain, 1 + rng.uniform(1000));
    const auto bit = rng.uniform(kBits);
    const auto byte = bit / 8;
    const auto mask = static_cast<std::uint8_t>(1u << (bit % 8));
    if (byte < kNonceBytes) {
      enc.nonce[byte] ^= mask;
    } else if (byte < kNonceBytes + kBlockSize) {
      enc.ciphertext[byte - kNonceBytes] ^= mask;
    } else {
      enc.tag[byte - kNonceBytes - kBlockSize] ^= mask;
    }
    try {
      open_block(key, phys, enc);
      ++undetected;
    } catch (const Error&) {
    }
  }

  std::set<Block> ciphertexts;
  Block same;
  same.fill(0x42);
  for (int t = 0; t < kTrials; ++t) ciphertexts.insert(seal_block(key, 3, same, 1).ciphertext);

  BlockSealer sealer(ProtectionMode::crypt_integrity, key, 16);
  Block v1, v2;
  v1.fill(1);
  v2.fill(2);
  const auto old = sealer.seal_block(5, v1);
  sealer.seal_block(5, v2);
  bool replay_rejected = false;
  try {
    sealer.open_block(5, old);
  } catch (const Error& e) {
    replay_rejected = e.code() == Errc::replay;
  }

  Outcome o;
  o.pass = undetected == 0 && ciphertexts.size() == kTrials && replay_rejected;
  o.detail = std::to_string(kTrials - undetected) + "/" + std::to_string(kTrials) + " bit flips detected, " +
             std::to_string(ciphertexts.size()) + " distinct ciphertexts of one plaintext, stale version " +
             (replay_rejected ? "rejected" : "accepted");
  return o;
}

// --- 6: shaper constancy ---------------------------------------------------------

struct ShaperRun {
  bool rate_ok = false;
  bool all_mtu = false;
  std::uint64_t dummies = 0;
  std::uint64_t frames = 0;
  double worst_window_dev = 0;  // bytes
  double total_dev = 0;         // bytes
};

ShaperRun shape_for(double offered_bps) {
  constexpr std::uint64_t kRate = 200'000'000;
  constexpr SimTime kDuration = 10'000'000'000;
  constexpr SimTime kWindow = 100'000'000;
  constexpr SimTime kStep = 1'000'000;

  HostBackend backend(HostBackendConfig{16 * kBlockSize});
  SimClock clock;
  Trace trace;
  HostInterface host(backend, clock, trace);
  auto rng = Rng::from_seed(6);
  TrustedEndpoint enclave(KeyPair::from_rng(rng));
  auto peer = KeyPair::from_rng(rng);
  ShaperConfig sc{.peer_rate_bps = kRate};
  NetEngine engine(host, enclave, sc, Rng::from_seed(7));
  engine.add_peer(PeerIdentity{peer.public_key(), "10.0.0.2", "peer:1", 1});

  const std::size_t payload = max_frame_payload(sc.mtu);
  const double frames_per_step = offered_bps * (static_cast<double>(kStep) / 1e9) / (8.0 * sc.mtu);
  double owed = 0;
  for (SimTime t = 0; t < kDuration; t += kStep) {
    owed += frames_per_step;
    while (owed >= 1) {
      owed -= 1;
      try {
        engine.send(1, Bytes(payload, 0x5a));
      } catch (const Error& e) {
        if (e.code() != Errc::queue_full) throw;
        // A saturated sender is held back, as a socket buffer would.
      }
    }
    engine.advance_to(t + kStep - 1);
  }

  const auto events = trace.snapshot();
  ShaperRun out;
  out.all_mtu = true;
  std::uint64_t bytes = 0;
  for (const auto& e : events) {
    if (e.kind != HostCallKind::net_write) continue;
    ++out.frames;
    bytes += e.payload_len;
    if (e.payload_len != sc.mtu) out.all_mtu = false;
  }
  out.dummies = engine.stats().dummy_sent;

  // Windows of the adversary's rate report, plus the whole run.
  const double expect_window = static_cast<double>(kRate) * (static_cast<double>(kWindow) / 1e9) / 8.0;
  auto rates = rate_report(events, kWindow);
  out.rate_ok = rates.size() == 1 && rates[0].window_bps.size() + 1 >= kDuration / kWindow;
  for (const auto& r : rates) {
    for (double bps : r.window_bps) {
      const double window_bytes = bps * (static_cast<double>(kWindow) / 1e9) / 8.0;
      out.worst_window_dev = std::max(out.worst_window_dev, std::abs(window_bytes - expect_window));
    }
  }
  const double expect_total = static_cast<double>(kRate) * (static_cast<double>(kDuration) / 1e9) / 8.0;
  out.total_dev = std::abs(static_cast<double>(bytes) - expect_total);
  out.rate_ok = out.rate_ok && out.worst_window_dev <= sc.mtu && out.total_dev <= sc.mtu;
  return out;
}

Outcome shaper_constancy() {
  constexpr double kRate = 200e6;
  Outcome o{true, ""};
  const std::array<std::pair<const char*, double>, 3> loads{{{"0", 0.0}, {"R/2", kRate / 2}, {"2R", 2 * kRate}}};
  for (const auto& [label, bps] : loads) {
    const auto r = shape_for(bps);
    bool ok = r.rate_ok && r.all_mtu;
    if (bps > kRate) ok = ok && r.dummies == 0;
    o.pass = o.pass && ok;
    if (!o.detail.empty()) o.detail += "; ";
    o.detail += std::string("load ") + label + ": " + std::to_string(r.frames) + " frames, worst window off by " +
                fmt(r.worst_window_dev, 5) + " B, total off by " + fmt(r.total_dev, 5) + " B, " +
                std::to_string(r.dummies) + " dummies" + (r.all_mtu ? ", all MTU" : ", NOT all MTU");
  }
  return o;
}

// --- 7: channel replay and provisioning policy ------------------------------------

Outcome channel_security() {
  auto rng = Rng::from_seed(70);
  auto a_keys = KeyPair::from_rng(rng);
  auto b_keys = KeyPair::from_rng(rng);
  auto a = PeerSession::establish(a_keys, b_keys.public_key());
  auto b = PeerSession::establish(b_keys, a_keys.public_key());
  std::vector<Bytes> sent;
  for (int i = 0; i < 200; ++i) {
    sent.push_back(a.seal(Bytes(64, static_cast<std::uint8_t>(i))));
    b.open(sent.back());
  }
  int accepted = 0;
  for (int i = 0; i < 10'000; ++i) {
    try {
      b.open(sent[rng.uniform(sent.size())]);
      ++accepted;
    } catch (const Error&) {
    }
  }

  auto enclave_keys = KeyPair::from_rng(rng);
  TrustedEndpoint enclave(enclave_keys);
  std::vector<KeyPair> peers;
  std::vector<PeerSession> remote;
  for (std::uint64_t id = 1; id <= 5; ++id) {
    peers.push_back(KeyPair::from_rng(rng));
    enclave.establish(PeerIdentity{peers.back().public_key(), "10.0.0." + std::to_string(id), "p", id});
    remote.push_back(PeerSession::establish(peers.back(), enclave_keys.public_key()));
  }
  ProvisioningSecrets secrets;
  secrets.disk_key = BlockKey::generate();
  secrets.peers = {PeerIdentity{peers[1].public_key(), "10.0.0.2", "p", 2}};
  const auto record = encode_provisioning(secrets);
  int rogue_rejected = 0;
  for (std::size_t i = 1; i < remote.size(); ++i) {
    try {
      for (const auto& piece : fragment(record, remote[i].max_payload())) {
        enclave.provisioning_frame(i + 1, remote[i].seal(piece));
      }
    } catch (const Error& e) {
      rogue_rejected += e.code() == Errc::policy;
    }
  }
  bool installed = false;
  for (const auto& piece : fragment(record, remote[0].max_payload())) {
    installed = enclave.provisioning_frame(1, remote[0].seal(piece));
  }
  const bool secrets_match = installed && enclave.secrets() && *enclave.secrets() == secrets;

  Outcome o;
  o.pass = accepted == 0 && rogue_rejected == 4 && secrets_match;
  o.detail = std::to_string(accepted) + "/10000 replayed frames accepted, " + std::to_string(rogue_rejected) +
             "/4 non-first peers refused, first peer " + (secrets_match ? "provisioned" : "NOT provisioned");
  return o;
}

// --- 8, 9: through the CLI ---------------------------------------------------------

Outcome determinism(const std::string& cli) {
  const auto dir = scratch_dir() / "det";
  fs::create_directories(dir);
  const auto image = (dir / "disk.img").string();
  auto [rc, out] = run_command(cli + " create-image --out " + image +
                               " --size 4M --mode crypt+integrity --synth data:1M --seed 9");
  if (rc != 0) return {false, "create-image failed: " + out};
  const auto key_at = out.find("key ");
  if (key_at == std::string::npos) return {false, "no key printed"};
  const auto key = out.substr(key_at + 4, 64);

  std::vector<std::string> logs;
  for (int i = 0; i < 3; ++i) {
    const auto run_dir = dir / ("run" + std::to_string(i));
    auto [code, text] = run_command(cli + " run --image " + image + " --key " + key +
                                    " --mode oblivious --workload seqread:data --workload randread:data:50"
                                    " --peer sim,10.0.0.2,200M --rounds 3000 --seed 11 --ground-truth --out " +
                                    run_dir.string());
    if (code != 0) return {false, "run " + std::to_string(i) + " failed: " + text};
    logs.push_back(slurp(run_dir / "trace.log"));
  }
  fs::remove_all(dir);
  const bool same = !logs[0].empty() && logs[0] == logs[1] && logs[1] == logs[2];
  return {same, "3 runs, trace.log " + std::to_string(logs[0].size()) + " bytes, " +
                    (same ? "bit-identical" : "DIFFERENT")};
}

Outcome bench(const std::string& cli) {
  auto [rc, out] = run_command(cli + " bench --file-size 4M --reps 3");
  if (rc != 0) return {false, "bench failed: " + out};
  auto line_of = [&](const std::string& prefix) {
    const auto at = out.find(prefix);
    if (at == std::string::npos) return std::string();
    return out.substr(at + prefix.size(), out.find('\n', at) - at - prefix.size());
  };
  const auto ratio = line_of("plain/oblivious ratio ");
  const auto below = line_of("crypt+integrity below plain: ");
  std::string rows;
  std::istringstream lines(out);
  for (std::string l; std::getline(lines, l);) {
    if (l.find("MB/s") == std::string::npos) continue;
    std::istringstream words(l);
    std::string label, value;
    words >> label >> value;
    rows += (rows.empty() ? "" : ", ") + label + " " + value + " MB/s";
  }
  return {!ratio.empty() && below == "yes",
          "plain/oblivious ratio " + ratio + ", crypt+integrity below plain: " + below + " (" + rows + ")"};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: acceptance PATH_TO_CLI\n";
    return 2;
  }
  const std::string cli = argv[1];
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"disk obliviousness", disk_obliviousness},
      {"round cadence", batch_cadence},
      {"at-most-once reads", at_most_once},
      {"shuffle correctness and placement", shuffle_uniformity},
      {"block crypto", block_crypto},
      {"shaper constancy", shaper_constancy},
      {"channel replay and provisioning", channel_security},
      {"trace determinism", [&] { return determinism(cli); }},
      {"throughput report", [&] { return bench(cli); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << i + 1 << " " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
