#include "oblv/experiment.hpp"

#include <chrono>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include "oblv/error.hpp"

namespace oblv {

namespace {

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto at = text.find(sep, start);
    out.push_back(text.substr(start, at == std::string_view::npos ? std::string_view::npos : at - start));
    if (at == std::string_view::npos) break;
    start = at + 1;
  }
  return out;
}

std::uint64_t parse_u64(std::string_view s, std::string_view what) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw Error(Errc::parameter, "bad " + std::string(what) + ": '" + std::string(s) + "'");
  }
  return v;
}

std::uint64_t parse_rate(std::string_view s) {
  for (std::string_view unit : {"bps", "bit/s"}) {
    if (s.size() > unit.size() && s.ends_with(unit)) s.remove_suffix(unit.size());
  }
  std::uint64_t mult = 1;
  if (!s.empty()) {
    switch (s.back()) {
      case 'k': case 'K': mult = 1'000; break;
      case 'm': case 'M': mult = 1'000'000; break;
      case 'g': case 'G': mult = 1'000'000'000; break;
      default: break;
    }
    if (mult != 1) s.remove_suffix(1);
  }
  return parse_u64(s, "rate") * mult;
}

}  // namespace

WorkloadSpec WorkloadSpec::parse(std::string_view text) {
  auto parts = split(text, ':');
  const auto kind = parts[0];
  WorkloadSpec w;
  auto need = [&](std::size_t lo, std::size_t hi) {
    if (parts.size() < lo || parts.size() > hi) throw Error(Errc::parameter, "bad workload '" + std::string(text) + "'");
  };
  if (kind == "seqread") {
    need(2, 3);
    w.kind = WorkloadKind::seqread;
    w.file = parts[1];
    if (parts.size() == 3) w.len = parse_u64(parts[2], "length");
  } else if (kind == "randread") {
    need(3, 3);
    w.kind = WorkloadKind::randread;
    w.file = parts[1];
    w.count = parse_u64(parts[2], "count");
  } else if (kind == "reread") {
    need(4, 4);
    w.kind = WorkloadKind::reread;
    w.file = parts[1];
    w.block = parse_u64(parts[2], "block");
    w.count = parse_u64(parts[3], "count");
  } else if (kind == "kvtrace") {
    if (parts.size() < 2) throw Error(Errc::parameter, "kvtrace needs a path");
    w.kind = WorkloadKind::kvtrace;
    w.path = text.substr(kind.size() + 1);
  } else if (kind == "netecho") {
    need(3, 3);
    w.kind = WorkloadKind::netecho;
    w.peer = parse_u64(parts[1], "peer");
    w.bytes = parse_u64(parts[2], "byte count");
  } else if (kind == "idle") {
    need(2, 2);
    w.kind = WorkloadKind::idle;
    w.rounds = parse_u64(parts[1], "round count");
  } else {
    throw Error(Errc::parameter, "unknown workload '" + std::string(kind) + "'");
  }
  return w;
}

std::string WorkloadSpec::text() const {
  switch (kind) {
    case WorkloadKind::seqread: return "seqread:" + file + (len ? ":" + std::to_string(len) : "");
    case WorkloadKind::randread: return "randread:" + file + ":" + std::to_string(count);
    case WorkloadKind::reread: return "reread:" + file + ":" + std::to_string(block) + ":" + std::to_string(count);
    case WorkloadKind::kvtrace: return "kvtrace:" + path;
    case WorkloadKind::netecho: return "netecho:" + std::to_string(peer) + ":" + std::to_string(bytes);
    case WorkloadKind::idle: return "idle:" + std::to_string(rounds);
  }
  return {};
}

std::vector<KvOp> parse_kvtrace(std::string_view contents) {
  std::vector<KvOp> ops;
  std::istringstream in{std::string(contents)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string op;
    KvOp k;
    if (!(ls >> op >> k.file >> k.offset >> k.len) || (op != "R" && op != "W")) {
      throw Error(Errc::format, "kvtrace line " + std::to_string(line_no) + " malformed");
    }
    k.write = op == "W";
    ops.push_back(std::move(k));
  }
  return ops;
}

PeerSpec parse_peer(std::string_view text, std::uint64_t endpoint_id) {
  auto parts = split(text, ',');
  if (parts.empty() || parts.size() > 3) throw Error(Errc::parameter, "bad peer '" + std::string(text) + "'");
  PeerSpec p;
  p.endpoint_id = endpoint_id;
  if (parts[0] != "sim") p.key = PublicKey::from_text(parts[0]);
  if (parts.size() > 1) p.address = parts[1];
  if (parts.size() > 2) p.rate_bps = parse_rate(parts[2]);
  return p;
}

namespace {

class Runner {
 public:
  Runner(const RunConfig& config, Bytes image, std::string kv_base)
      : config_(config),
        kv_base_(std::move(kv_base)),
        backend_(HostBackendConfig{image.size(), config.shaper.mtu}, std::move(image)),
        host_(backend_, clock_, trace_),
        root_(Rng::from_seed(config.seed)),
        workload_rng_(root_.fork("workload")) {}

  RunResult run() {
    const auto wall_start = std::chrono::steady_clock::now();
    VolumeOptions vo;
    vo.expect_mode = config_.expect_mode;
    vo.key = config_.key;
    vo.verity_root = config_.verity_root;
    vo.path = config_.path;
    vo.rounds = config_.rounds;
    vo.clock = config_.clock;
    vo.cache_pages = config_.cache_pages;
    vo.dummy_reads = config_.dummy_reads;
    vo.eager_shuffle_after = config_.eager_shuffle_after;
    vo.passthrough_latency_ns = config_.passthrough_latency_ns;
    volume_ = Volume::mount(host_, vo, root_.fork("volume"));
    const auto mark = trace_.size();
    const SimTime start = clock_.now();

    setup_network();
    auto* sched = volume_->scheduler();
    if (sched) sched->set_round_budget(config_.total_rounds);

    RunResult result;
    try {
      for (const auto& w : config_.workloads) run_workload(w, result);
    } catch (const Error& e) {
      if (e.code() != Errc::round_budget) throw;
      result.budget_exhausted = true;
    }
    if (sched && config_.total_rounds && sched->stats().rounds < *config_.total_rounds) {
      sched->run_rounds(*config_.total_rounds - sched->stats().rounds);
    }
    result.trace = trace_.snapshot(mark);
    result.sim_elapsed_ns = clock_.now() - start;
    result.volume = volume_->stats();
    if (net_) result.net = net_->stats();
    result.layout = volume_->fs().layout();

    if (sched) sched->set_round_budget(std::nullopt);
    if (config_.persist) volume_->persist();
    result.image = backend_.image();
    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
    return result;
  }

 private:
  void setup_network() {
    if (config_.peers.empty()) return;
    auto key_rng = root_.fork("keys");
    endpoint_ = std::make_unique<TrustedEndpoint>(KeyPair::from_rng(key_rng), config_.shaper.mtu);
    net_ = std::make_unique<NetEngine>(host_, *endpoint_, config_.shaper, root_.fork("net"));
    for (const auto& p : config_.peers) {
      PeerIdentity id;
      id.endpoint_id = p.endpoint_id;
      id.vpn_address = p.address;
      if (p.key) {
        id.key = *p.key;
      } else {
        ShaperConfig remote_cfg = config_.shaper;
        remote_cfg.peer_rate_bps = p.rate_bps;
        auto remote = std::make_unique<EchoPeer>(p.endpoint_id, KeyPair::from_rng(key_rng),
                                                 endpoint_->identity().public_key(), remote_cfg,
                                                 root_.fork("remote-" + std::to_string(p.endpoint_id)));
        id.key = remote->public_key();
        remotes_.push_back(std::move(remote));
      }
      net_->add_peer(id, p.rate_bps);
      if (!p.key) net_->attach_remote(*remotes_.back());
    }
    if (auto* sched = volume_->scheduler()) {
      sched->set_round_hook([this](SimTime t) { net_->advance_to(t); });
    }
  }

  // Lets time pass by one step of whichever engine drives the clock.
  void step() {
    if (auto* sched = volume_->scheduler()) {
      if (config_.total_rounds && sched->stats().rounds >= *config_.total_rounds) {
        throw Error(Errc::round_budget, "round budget exhausted");
      }
      sched->run_next_round();
    } else if (net_) {
      if (auto next = net_->next_event()) {
        clock_.advance_to(*next);
        net_->advance_to(*next);
      }
    } else {
      clock_.advance(config_.rounds.round_interval_ns);
    }
  }

  void run_workload(const WorkloadSpec& w, RunResult& result) {
    switch (w.kind) {
      case WorkloadKind::seqread: {
        const auto fd = volume_->open(w.file);
        const auto size = volume_->fs().file_size(fd);
        const auto len = w.len ? std::min(w.len, size) : size;
        for (std::uint64_t off = 0; off < len; off += kBlockSize) {
          result.app_bytes += volume_->read(fd, off, std::min<std::uint64_t>(kBlockSize, len - off)).size();
        }
        break;
      }
      case WorkloadKind::randread: {
        const auto fd = volume_->open(w.file);
        const auto blocks = volume_->fs().num_blocks(fd);
        if (blocks == 0) throw Error(Errc::range, "randread on an empty file");
        for (std::uint64_t i = 0; i < w.count; ++i) {
          const auto b = workload_rng_.uniform(blocks);
          result.app_bytes += volume_->read(fd, b * kBlockSize, kBlockSize).size();
        }
        break;
      }
      case WorkloadKind::reread: {
        const auto fd = volume_->open(w.file);
        if (w.block >= volume_->fs().num_blocks(fd)) throw Error(Errc::range, "reread block beyond EOF");
        for (std::uint64_t i = 0; i < w.count; ++i) {
          result.app_bytes += volume_->read(fd, w.block * kBlockSize, kBlockSize).size();
        }
        break;
      }
      case WorkloadKind::kvtrace: {
        std::filesystem::path p(w.path);
        if (p.is_relative()) p = std::filesystem::path(kv_base_) / p;
        std::ifstream in(p, std::ios::binary);
        if (!in) throw Error(Errc::parameter, "cannot open kvtrace " + p.string());
        std::stringstream ss;
        ss << in.rdbuf();
        for (const auto& op : parse_kvtrace(ss.str())) {
          const auto fd = volume_->open(op.file);
          if (op.write) {
            Bytes data(op.len);
            workload_rng_.fill(data);
            result.app_bytes += volume_->write(fd, op.offset, data);
          } else {
            result.app_bytes += volume_->read(fd, op.offset, op.len).size();
          }
        }
        break;
      }
      case WorkloadKind::netecho: run_netecho(w, result); break;
      case WorkloadKind::idle:
        for (std::uint64_t i = 0; i < w.rounds; ++i) step();
        break;
    }
  }

  void run_netecho(const WorkloadSpec& w, RunResult& result) {
    if (!net_) throw Error(Errc::routing, "netecho needs a --peer");
    Bytes sent(w.bytes);
    workload_rng_.fill(sent);
    const auto piece = max_frame_payload(config_.shaper.mtu);
    Bytes received;
    std::size_t queued = 0;
    // Generous bound on slots before the echo is declared lost.
    std::uint64_t patience = 4 * (w.bytes / piece + 1) + 10'000;
    while (received.size() < sent.size()) {
      while (queued < sent.size()) {
        const auto n = std::min(piece, sent.size() - queued);
        try {
          net_->send(w.peer, Bytes(sent.begin() + queued, sent.begin() + queued + n));
        } catch (const Error& e) {
          if (e.code() != Errc::queue_full) throw;
          break;
        }
        queued += n;
      }
      step();
      auto got = net_->take_received(w.peer);
      received.insert(received.end(), got.begin(), got.end());
      if (patience-- == 0) throw Error(Errc::would_block, "echo from peer " + std::to_string(w.peer) + " not received");
    }
    if (received != sent) throw Error(Errc::integrity, "echoed bytes differ from the sent bytes");
    result.app_bytes += sent.size();
  }

  const RunConfig& config_;
  std::string kv_base_;
  SimClock clock_;
  Trace trace_;
  HostBackend backend_;
  HostInterface host_;
  Rng root_;
  Rng workload_rng_;
  std::unique_ptr<Volume> volume_;
  std::unique_ptr<TrustedEndpoint> endpoint_;
  std::unique_ptr<NetEngine> net_;
  std::vector<std::unique_ptr<EchoPeer>> remotes_;
};

}  // namespace

RunResult run_experiment(const RunConfig& config, Bytes image, const std::string& kvtrace_base) {
  Runner runner(config, std::move(image), kvtrace_base);
  return runner.run();
}

double bytes_per_second(const RunResult& r, IoPath path) {
  if (path == IoPath::oblivious && r.sim_elapsed_ns > 0) {
    return static_cast<double>(r.app_bytes) / (static_cast<double>(r.sim_elapsed_ns) / 1e9);
  }
  return r.wall_seconds > 0 ? static_cast<double>(r.app_bytes) / r.wall_seconds : 0.0;
}

BenchReport run_bench(const BenchOptions& options) {
  auto rng = Rng::from_seed(options.seed);
  ImageFile file{"data", Bytes(options.file_bytes)};
  rng.fill(file.data);
  const std::uint64_t file_blocks = (options.file_bytes + kBlockSize - 1) / kBlockSize;
  ImageSpec spec;
  spec.n_blocks = 2 * file_blocks + 64;

  auto measure = [&](ProtectionMode mode, IoPath path) {
    spec.mode = mode;
    auto layout_rng = Rng::from_seed(options.seed);
    auto created = create_image(spec, std::span(&file, 1), layout_rng);
    RunConfig rc;
    rc.key = created.key;
    rc.path = path;
    rc.clock = path == IoPath::oblivious ? ClockMode::wall : ClockMode::simulated;
    rc.workloads = {WorkloadSpec::parse("seqread:data")};
    rc.persist = false;
    rc.seed = options.seed;
    double best = 0;
    for (int i = 0; i < options.repetitions; ++i) {
      auto r = run_experiment(rc, created.image);
      best = std::max(best, static_cast<double>(r.app_bytes) / r.wall_seconds);
    }
    return best;
  };

  BenchReport report;
  const double plain = measure(ProtectionMode::plain, IoPath::passthrough);
  const double crypt = measure(ProtectionMode::crypt, IoPath::passthrough);
  const double integrity = measure(ProtectionMode::crypt_integrity, IoPath::passthrough);
  const double oblivious = measure(ProtectionMode::crypt_integrity, IoPath::oblivious);
  report.rows = {{"plain", plain}, {"crypt", crypt}, {"crypt+integrity", integrity}, {"oblivious", oblivious}};
  report.plain_over_oblivious = oblivious > 0 ? plain / oblivious : 0;
  report.integrity_slower_than_plain = integrity < plain;
  return report;
}

}  // namespace oblv
