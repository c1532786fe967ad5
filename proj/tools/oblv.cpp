// oblv: build images, run workloads through the protected stack and export
// traces, verdicts and summaries.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "oblv/adversary.hpp"
#include "oblv/error.hpp"
#include "oblv/experiment.hpp"
#include "oblv/secure_channel.hpp"
#include "oblv/volume.hpp"

namespace fs = std::filesystem;
using namespace oblv;

namespace {

Bytes read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(Errc::parameter, "cannot read " + p.string());
  return Bytes(std::istreambuf_iterator<char>(in), {});
}

void write_file(const fs::path& p, ByteSpan data) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::parameter, "cannot write " + p.string());
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
}

std::uint64_t parse_size(const std::string& text) {
  std::size_t used = 0;
  const double v = std::stod(text, &used);
  std::string unit = text.substr(used);
  double mult = 1;
  if (unit == "K" || unit == "KB" || unit == "KiB") mult = 1024;
  else if (unit == "M" || unit == "MB" || unit == "MiB") mult = 1024.0 * 1024;
  else if (unit == "G" || unit == "GB" || unit == "GiB") mult = 1024.0 * 1024 * 1024;
  else if (!unit.empty() && unit != "B") throw Error(Errc::parameter, "bad size '" + text + "'");
  return static_cast<std::uint64_t>(v * mult);
}

SimTime parse_interval(const std::string& text) {
  std::size_t used = 0;
  const double v = std::stod(text, &used);
  std::string unit = text.substr(used);
  double mult = 1;
  if (unit == "us") mult = 1e3;
  else if (unit == "ms") mult = 1e6;
  else if (unit == "s") mult = 1e9;
  else if (!unit.empty() && unit != "ns") throw Error(Errc::parameter, "bad interval '" + text + "'");
  return static_cast<SimTime>(std::llround(v * mult));
}

ProtectionMode protection(const std::string& name) {
  auto m = parse_mode(name);
  if (!m) throw Error(Errc::parameter, "unknown protection mode '" + name + "'");
  return *m;
}

NetMode net_mode(const std::string& name) {
  auto m = parse_net_mode(name);
  if (!m) throw Error(Errc::parameter, "unknown net mode '" + name + "'");
  return *m;
}

struct RunFlags {
  std::string image;
  std::string key;
  std::string verity_root;
  std::string mode = "oblivious";
  std::string round_interval;
  std::size_t cache_k = 0;
  std::vector<std::string> peers;
  std::vector<std::string> workloads;
  std::uint64_t seed = 1;
  std::string out = ".";
  bool assert_oblivious = false;
  bool ground_truth = false;
  std::uint64_t rounds = 0;
  std::string config;
  bool persist = false;
  std::string dummy_reads = "data";
  std::string net;
  std::size_t eager_shuffle = 0;
  std::uint32_t reads_per_round = 1;
  std::uint32_t writes_per_round = 1;
};

RunConfig build_run_config(const RunFlags& f, CLI::App& app) {
  RunConfig rc;
  rc.seed = f.seed;
  if (!f.config.empty()) {
    std::ifstream in(f.config);
    if (!in) throw Error(Errc::parameter, "cannot read config " + f.config);
    auto j = nlohmann::json::parse(in);
    rc.rounds.round_interval_ns = j.value("round_interval_ns", rc.rounds.round_interval_ns);
    rc.rounds.reads_per_round = j.value("reads_per_round", rc.rounds.reads_per_round);
    rc.rounds.writes_per_round = j.value("writes_per_round", rc.rounds.writes_per_round);
    rc.shaper.peer_rate_bps = j.value("peer_rate_bps", rc.shaper.peer_rate_bps);
    rc.shaper.mtu = j.value("mtu", rc.shaper.mtu);
    rc.shaper.burst_frames = j.value("burst_frames", rc.shaper.burst_frames);
    if (j.contains("net")) rc.shaper.mode = net_mode(j["net"].get<std::string>());
    rc.cache_pages = j.value("cache_k", rc.cache_pages);
    rc.seed = j.value("seed", rc.seed);
    if (j.contains("rounds")) rc.total_rounds = j["rounds"].get<std::uint64_t>();
    if (j.contains("eager_shuffle_after")) rc.eager_shuffle_after = j["eager_shuffle_after"].get<std::size_t>();
    for (const auto& w : j.value("workloads", std::vector<std::string>{})) rc.workloads.push_back(WorkloadSpec::parse(w));
  }
  if (app.count("--seed")) rc.seed = f.seed;
  if (!f.round_interval.empty()) rc.rounds.round_interval_ns = parse_interval(f.round_interval);
  if (app.count("--reads-per-round")) rc.rounds.reads_per_round = f.reads_per_round;
  if (app.count("--writes-per-round")) rc.rounds.writes_per_round = f.writes_per_round;
  if (f.cache_k) rc.cache_pages = f.cache_k;
  if (f.rounds) rc.total_rounds = f.rounds;
  if (f.eager_shuffle) rc.eager_shuffle_after = f.eager_shuffle;
  if (!f.key.empty()) rc.key = BlockKey::from_hex(f.key);
  if (!f.verity_root.empty()) rc.verity_root = digest_from_hex(f.verity_root);
  if (f.mode == "oblivious") {
    rc.path = IoPath::oblivious;
  } else {
    rc.path = IoPath::passthrough;
    rc.expect_mode = protection(f.mode);
  }
  if (!f.net.empty()) rc.shaper.mode = net_mode(f.net);
  if (f.dummy_reads == "data") {
    rc.dummy_reads = DummyReadDomain::data_area;
  } else if (f.dummy_reads == "pad") {
    rc.dummy_reads = DummyReadDomain::dummy_files;
  } else {
    throw Error(Errc::parameter, "--dummy-reads is 'data' or 'pad'");
  }
  std::uint64_t endpoint = 1;
  for (const auto& p : f.peers) rc.peers.push_back(parse_peer(p, endpoint++));
  for (const auto& w : f.workloads) {
    // A bare "idle" means: nothing but the rounds requested with --rounds.
    rc.workloads.push_back(w == "idle" ? WorkloadSpec{} : WorkloadSpec::parse(w));
  }
  rc.persist = f.persist;
  return rc;
}

void write_summary(const fs::path& path, const RunResult& r, IoPath io_path, bool ground_truth) {
  std::ofstream out(path);
  auto split = [&](std::uint64_t v) { return ground_truth ? std::to_string(v) : std::string(); };
  out << "rounds,real_reads,dummy_reads,real_writes,dummy_writes,shuffles,cache_hits,net_real,net_dummy,"
         "bytes_per_sec\n";
  out << r.volume.rounds << ',' << split(r.volume.real_reads) << ',' << split(r.volume.dummy_reads) << ','
      << split(r.volume.real_writes) << ',' << split(r.volume.dummy_writes) << ',' << r.volume.shuffles << ','
      << r.volume.cache_hits << ',' << split(r.net.real_sent) << ',' << split(r.net.dummy_sent) << ','
      << std::fixed << std::setprecision(1) << bytes_per_second(r, io_path) << '\n';
}

void write_rates(const fs::path& path, const std::vector<PeerRate>& rates) {
  std::ofstream out(path);
  out << "peer,window,bits_per_sec\n";
  for (const auto& r : rates) {
    for (std::size_t w = 0; w < r.window_bps.size(); ++w) {
      out << r.peer << ',' << w << ',' << std::fixed << std::setprecision(0) << r.window_bps[w] << '\n';
    }
  }
}

int cmd_run(const RunFlags& f, CLI::App& app) {
  RunConfig rc = build_run_config(f, app);
  const Bytes image = read_file(f.image);
  const fs::path out_dir(f.out);
  fs::create_directories(out_dir);
  const std::string kv_base = ".";

  std::vector<RunConfig> runs;
  if (f.assert_oblivious) {
    if (rc.path != IoPath::oblivious) throw Error(Errc::mode, "--assert-oblivious needs --mode oblivious");
    // Each workload becomes its own run; a single one is compared against idle.
    auto specs = rc.workloads;
    if (specs.size() < 2) specs.push_back(WorkloadSpec{});
    for (const auto& w : specs) {
      RunConfig one = rc;
      one.workloads = {w};
      one.persist = false;
      runs.push_back(std::move(one));
    }
    if (!rc.total_rounds) {
      std::uint64_t longest = 0;
      for (const auto& r : runs) longest = std::max(longest, run_experiment(r, image, kv_base).volume.rounds);
      for (auto& r : runs) r.total_rounds = longest;
    }
  } else {
    runs.push_back(rc);
  }

  std::vector<RunResult> results;
  for (const auto& r : runs) results.push_back(run_experiment(r, image, kv_base));
  const RunResult& main = results.front();

  {
    std::ofstream trace_out(out_dir / "trace.log");
    write_trace(trace_out, main.trace, f.ground_truth);
  }
  write_summary(out_dir / "summary.csv", main, rc.path, f.ground_truth);

  TraceVerdict verdict;
  verdict.shape_equal = true;
  for (std::size_t i = 1; i < results.size(); ++i) {
    auto v = compare_traces(main.trace, runs.front().rounds, results[i].trace, runs[i].rounds);
    if (!v.shape_equal) {
      verdict.shape_equal = false;
      verdict.first_mismatch = v.first_mismatch;
    }
  }
  verdict.timing_cv = timing_cv(main.trace);
  auto blocks = read_blocks(main.trace, main.layout.data_start, main.layout.n_blocks);
  if (blocks.size() >= kMinUniformitySamples) {
    verdict.offset_uniformity_p = uniformity_test(blocks, main.layout.data_start, main.layout.n_blocks);
  }
  verdict.rates = rate_report(main.trace, 100'000'000);
  write_rates(out_dir / "rates.csv", verdict.rates);
  {
    std::ofstream v(out_dir / "verdict.txt");
    v << "runs=" << results.size() << "\n" << describe(verdict);
  }
  if (f.persist) write_file(f.image, main.image);

  std::cout << "rounds " << main.volume.rounds << ", events " << main.trace.size() << ", shuffles "
            << main.volume.shuffles << "\n";
  if (main.budget_exhausted) std::cout << "round budget reached before the workload finished\n";
  if (f.assert_oblivious) {
    std::cout << "shape_equal " << (verdict.shape_equal ? "true" : "false") << " over " << results.size()
              << " runs\n";
    if (!verdict.shape_equal) return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"oblv: oblivious storage and network runtime harness"};
  app.require_subcommand(1);

  // create-image
  auto* create = app.add_subcommand("create-image", "format, populate and seal a new image");
  std::string c_out, c_size = "64M", c_mode = "crypt+integrity", c_key;
  std::vector<std::string> c_files, c_synth;
  std::uint64_t c_seed = 1;
  double c_dummy = 0.10;
  create->add_option("--out,-o", c_out, "image path")->required();
  create->add_option("--size", c_size, "image data size, e.g. 64M");
  create->add_option("--mode", c_mode, "plain | verity | crypt | crypt+integrity");
  create->add_option("--file", c_files, "add a host file (named by its basename)");
  create->add_option("--synth", c_synth, "add NAME:BYTES of seeded random content");
  create->add_option("--seed", c_seed, "layout seed");
  create->add_option("--dummy-fraction", c_dummy, "share of blocks reserved for padding files");
  create->add_option("--key", c_key, "hex disk key (generated when absent)");

  // run
  auto* run = app.add_subcommand("run", "run workloads and export trace, summary and verdict");
  RunFlags rf;
  run->add_option("--image", rf.image)->required();
  run->add_option("--key", rf.key, "hex disk key");
  run->add_option("--verity-root", rf.verity_root, "hex verity root");
  run->add_option("--mode", rf.mode, "plain | verity | crypt | crypt+integrity | oblivious");
  run->add_option("--round-interval", rf.round_interval, "e.g. 100000, 100us, 0.1ms");
  run->add_option("--cache-k", rf.cache_k, "page cache size in blocks");
  run->add_option("--peer", rf.peers, "PUBKEY|sim,ADDR,RATE");
  run->add_option("--workload", rf.workloads, "workload spec, repeatable");
  run->add_option("--seed", rf.seed);
  run->add_option("--out", rf.out, "output directory");
  run->add_flag("--assert-oblivious", rf.assert_oblivious, "compare workloads; exit 1 unless shapes match");
  run->add_flag("--ground-truth", rf.ground_truth, "label dummy calls in trace and summary");
  run->add_option("--rounds", rf.rounds, "exact number of rounds (oblivious)");
  run->add_option("--config", rf.config, "JSON config file");
  run->add_flag("--persist", rf.persist, "write the image back after the run");
  run->add_option("--dummy-reads", rf.dummy_reads, "data | pad");
  run->add_option("--net", rf.net, "plain | channel | shaped (default shaped)");
  run->add_option("--eager-shuffle", rf.eager_shuffle, "shuffle after this many fetches per epoch");
  run->add_option("--reads-per-round", rf.reads_per_round);
  run->add_option("--writes-per-round", rf.writes_per_round);

  // shuffle
  auto* shuffle = app.add_subcommand("shuffle", "offline shuffle of every file in an image");
  std::string s_image, s_key;
  std::uint64_t s_seed = 1;
  shuffle->add_option("--image", s_image)->required();
  shuffle->add_option("--key", s_key);
  shuffle->add_option("--seed", s_seed);

  // fsck
  auto* fsck = app.add_subcommand("fsck", "check file-system consistency and block integrity");
  std::string f_image, f_key, f_root;
  fsck->add_option("--image", f_image)->required();
  fsck->add_option("--key", f_key);
  fsck->add_option("--verity-root", f_root);

  // provision
  auto* provision = app.add_subcommand("provision", "deliver keys over the simulated channel and mount");
  std::string p_image, p_key, p_root, p_app = "/bin/app";
  std::vector<std::string> p_peers, p_args;
  std::uint64_t p_seed = 1;
  bool p_rogue = false;
  provision->add_option("--image", p_image)->required();
  provision->add_option("--key", p_key);
  provision->add_option("--verity-root", p_root);
  provision->add_option("--peer", p_peers, "additional peer PUBKEY,ADDR");
  provision->add_option("--app", p_app);
  provision->add_option("--arg", p_args);
  provision->add_option("--seed", p_seed);
  provision->add_flag("--rogue", p_rogue, "also let a second peer attempt provisioning");

  // bench
  auto* bench = app.add_subcommand("bench", "wall-clock seqread throughput per protection level");
  std::string b_size = "4M", b_out;
  int b_reps = 3;
  bench->add_option("--file-size", b_size);
  bench->add_option("--reps", b_reps);
  bench->add_option("--out", b_out, "write bench.csv here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*create) {
      ImageSpec spec;
      spec.mode = protection(c_mode);
      spec.n_blocks = parse_size(c_size) / kBlockSize;
      spec.fs.dummy_fraction = c_dummy;
      std::vector<ImageFile> files;
      auto content_rng = Rng::from_seed(c_seed).fork("content");
      for (const auto& p : c_files) files.push_back({fs::path(p).filename().string(), read_file(p)});
      for (const auto& s : c_synth) {
        auto colon = s.rfind(':');
        if (colon == std::string::npos) throw Error(Errc::parameter, "--synth is NAME:BYTES");
        ImageFile file{s.substr(0, colon), Bytes(parse_size(s.substr(colon + 1)))};
        content_rng.fill(file.data);
        files.push_back(std::move(file));
      }
      auto rng = Rng::from_seed(c_seed);
      std::optional<BlockKey> key;
      if (!c_key.empty()) key = BlockKey::from_hex(c_key);
      auto img = create_image(spec, files, rng, key);
      write_file(c_out, img.image);
      std::cout << "image " << c_out << ": " << spec.n_blocks << " blocks, mode " << mode_name(spec.mode)
                << ", data from block " << img.layout.data_start << "\n";
      if (img.key) std::cout << "key " << img.key->hex() << "\n";
      if (img.verity_root) std::cout << "verity_root " << to_hex(*img.verity_root) << "\n";
      return 0;
    }
    if (*run) return cmd_run(rf, *run);
    if (*shuffle) {
      RunConfig rc;
      rc.path = IoPath::passthrough;
      if (!s_key.empty()) rc.key = BlockKey::from_hex(s_key);
      Bytes image = read_file(s_image);
      HostBackend backend(HostBackendConfig{image.size()}, std::move(image));
      SimClock clock;
      Trace trace;
      HostInterface host(backend, clock, trace);
      VolumeOptions vo;
      vo.key = rc.key;
      vo.path = IoPath::passthrough;
      auto vol = Volume::mount(host, vo, Rng::from_seed(s_seed));
      auto report = vol->shuffle();
      vol->persist();
      write_file(s_image, backend.image());
      std::cout << "swaps " << report.swaps << " donors " << report.num_donors << "\n";
      return 0;
    }
    if (*fsck) {
      Bytes image = read_file(f_image);
      HostBackend backend(HostBackendConfig{image.size()}, std::move(image));
      SimClock clock;
      Trace trace;
      HostInterface host(backend, clock, trace);
      VolumeOptions vo;
      if (!f_key.empty()) vo.key = BlockKey::from_hex(f_key);
      if (!f_root.empty()) vo.verity_root = digest_from_hex(f_root);
      vo.path = IoPath::passthrough;
      auto vol = Volume::mount(host, vo, Rng::from_seed(1));
      auto problems = vol->fs().check();
      std::uint64_t blocks = 0;
      for (auto fd : vol->fs().list()) {
        const auto& node = vol->fs().inode(fd);
        for (std::uint32_t b = 0; b < node.block_map.size(); ++b) {
          const auto phys = node.block_map[b];
          try {
            vol->protector().decode(phys, host.disk_read(phys * kBlockSize));
            ++blocks;
          } catch (const Error& e) {
            problems.push_back(node.name + " block " + std::to_string(b) + ": " + e.what());
          }
        }
      }
      for (const auto& p : problems) std::cout << "problem: " << p << "\n";
      std::cout << vol->fs().list().size() << " files, " << blocks << " blocks verified, "
                << vol->fs().free_blocks() << " free, mode " << mode_name(vol->mode()) << "\n";
      return problems.empty() ? 0 : 1;
    }
    if (*provision) {
      Bytes image = read_file(p_image);
      HostBackend backend(HostBackendConfig{image.size()}, std::move(image));
      SimClock clock;
      Trace trace;
      HostInterface host(backend, clock, trace);
      auto rng = Rng::from_seed(p_seed);
      TrustedEndpoint enclave(KeyPair::from_rng(rng));
      KeyPair sp = KeyPair::from_rng(rng);
      std::cout << "attestation: unverified (stub)\n";

      PeerIdentity sp_id{sp.public_key(), "10.0.0.1", "sp:51820", 1};
      auto& enclave_side = enclave.establish(sp_id);
      auto sp_side = PeerSession::establish(sp, enclave.identity().public_key());
      enclave_side.confirm(sp_side.confirmation());
      sp_side.confirm(enclave_side.confirmation());

      ProvisioningSecrets secrets;
      if (!p_key.empty()) secrets.disk_key = BlockKey::from_hex(p_key);
      if (!p_root.empty()) secrets.verity_root = digest_from_hex(p_root);
      std::uint64_t endpoint = 2;
      for (const auto& p : p_peers) {
        auto spec = parse_peer(p, endpoint++);
        if (!spec.key) throw Error(Errc::parameter, "provisioned peers need a public key");
        secrets.peers.push_back({*spec.key, spec.address, "", spec.endpoint_id});
      }
      secrets.app_path = p_app;
      secrets.app_args = p_args;

      auto pieces = fragment(encode_provisioning(secrets), sp_side.max_payload());
      for (const auto& piece : pieces) backend.peer_send(WireFrame{1, sp_side.seal(piece)});
      bool done = false;
      while (!done && (host.net_poll(kPollReadable) & kPollReadable)) {
        auto frame = host.net_read();
        done = enclave.provisioning_frame(frame.endpoint, frame.data);
      }
      if (!done) throw Error(Errc::format, "provisioning record incomplete");
      std::cout << "provisioned over peer 1 in " << pieces.size() << " frame(s)\n";

      if (p_rogue) {
        KeyPair rogue = KeyPair::from_rng(rng);
        PeerIdentity rogue_id{rogue.public_key(), "10.0.0.66", "rogue:51820", 99};
        try {
          auto& rs = enclave.establish(rogue_id);
          auto rogue_side = PeerSession::establish(rogue, enclave.identity().public_key());
          (void)rs;
          enclave.provisioning_frame(99, rogue_side.seal(encode_provisioning(secrets)));
          std::cout << "rogue provisioning accepted\n";
          return 1;
        } catch (const Error& e) {
          std::cout << "rogue peer rejected: " << errc_name(e.code()) << "\n";
        }
      }

      VolumeOptions vo;
      vo.key = enclave.secrets()->disk_key;
      vo.verity_root = enclave.secrets()->verity_root;
      vo.path = IoPath::passthrough;
      auto vol = Volume::mount(host, vo, Rng::from_seed(p_seed));
      std::cout << "mounted " << mode_name(vol->mode()) << " image, " << vol->fs().list().size() << " files\n";
      for (auto fd : vol->fs().list()) {
        std::cout << "  " << vol->fs().inode(fd).name << " " << vol->fs().file_size(fd) << " bytes\n";
      }
      return 0;
    }
    if (*bench) {
      BenchOptions bo;
      bo.file_bytes = parse_size(b_size);
      bo.repetitions = b_reps;
      auto report = run_bench(bo);
      std::cout << std::fixed << std::setprecision(1);
      for (const auto& row : report.rows) {
        std::cout << std::left << std::setw(18) << row.label << row.bytes_per_sec / 1e6 << " MB/s\n";
      }
      std::cout << "plain/oblivious ratio " << std::setprecision(2) << report.plain_over_oblivious << "\n";
      std::cout << "crypt+integrity below plain: " << (report.integrity_slower_than_plain ? "yes" : "no") << "\n";
      if (!b_out.empty()) {
        fs::create_directories(b_out);
        std::ofstream csv(fs::path(b_out) / "bench.csv");
        csv << "label,bytes_per_sec\n";
        for (const auto& row : report.rows) csv << row.label << ',' << std::setprecision(0) << row.bytes_per_sec << '\n';
        csv << "plain_over_oblivious," << std::setprecision(3) << report.plain_over_oblivious << '\n';
      }
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
