#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "oblv/block_crypto.hpp"
#include "oblv/blockfs.hpp"
#include "oblv/host_iface.hpp"
#include "oblv/oblivious_sched.hpp"
#include "oblv/page_cache.hpp"
#include "oblv/rng.hpp"
#include "oblv/shuffle.hpp"

namespace oblv {

// In-memory block store; used to assemble images before they are sealed.
class MemoryBlockIo final : public BlockIo {
 public:
  explicit MemoryBlockIo(std::vector<Block>& blocks) : blocks_(blocks) {}
  IoHandle submit(IoRequest req) override;
  void wait(const IoHandle&) override {}
  void drain() override {}

 private:
  std::vector<Block>& blocks_;
};

struct ImageFile {
  std::string name;
  Bytes data;
};

struct ImageSpec {
  std::uint64_t n_blocks = 0;
  ProtectionMode mode = ProtectionMode::crypt_integrity;
  FsOptions fs;
};

struct CreatedImage {
  Bytes image;  // data blocks followed by the metadata region
  std::optional<BlockKey> key;
  std::optional<Digest> verity_root;
  FsLayout layout;
};

// Formats, populates and seals an image. The layout is drawn from `rng`; a key
// is generated for encrypted modes unless one is supplied.
CreatedImage create_image(const ImageSpec& spec, std::span<const ImageFile> files, Rng& rng,
                          std::optional<BlockKey> key = std::nullopt);

// Size in bytes of an image with n data blocks.
std::uint64_t image_bytes(std::uint64_t n_blocks, ProtectionMode mode);

enum class IoPath : std::uint8_t { passthrough, oblivious };
enum class DummyReadDomain : std::uint8_t { data_area, dummy_files };

struct VolumeOptions {
  std::optional<ProtectionMode> expect_mode;  // mount fails with Errc::mode on mismatch
  std::optional<BlockKey> key;
  std::optional<Digest> verity_root;
  IoPath path = IoPath::oblivious;
  RoundConfig rounds;
  ClockMode clock = ClockMode::simulated;
  std::size_t cache_pages = 0;  // 0: ceil(sqrt(n_blocks))
  DummyReadDomain dummy_reads = DummyReadDomain::data_area;
  // Lazy shuffles run when an evicted block is requested again; eager ones
  // additionally run once the epoch has fetched this many blocks.
  std::optional<std::size_t> eager_shuffle_after;
  bool shuffle_dummy_pad = true;
  std::vector<std::string> shuffle_only;  // empty: all regular files
  SimTime passthrough_latency_ns = 0;
};

struct VolumeStats {
  std::uint64_t rounds = 0;
  std::uint64_t real_reads = 0;
  std::uint64_t dummy_reads = 0;
  std::uint64_t real_writes = 0;
  std::uint64_t dummy_writes = 0;
  std::uint64_t shuffles = 0;
  std::uint64_t cache_hits = 0;
  std::uint64_t cache_misses = 0;
};

// A mounted image: protection, file system, page cache and the I/O path,
// wired together on top of one HostInterface.
class Volume final : private DummyTargets {
 public:
  static std::unique_ptr<Volume> mount(HostInterface& host, VolumeOptions options, Rng rng);
  ~Volume() override;
  Volume(const Volume&) = delete;
  Volume& operator=(const Volume&) = delete;

  Bytes read(FileId fd, std::uint64_t offset, std::size_t len);
  std::size_t write(FileId fd, std::uint64_t offset, ByteSpan data);
  FileId open(const std::string& name) const;

  ShuffleReport shuffle();
  std::vector<FileId> shuffle_set() const;

  // Writes dirty pages, file-system metadata and the metadata region back.
  void persist();
  void drain() { io_->drain(); }
  // Oblivious path only: runs idle rounds.
  void idle(std::uint64_t rounds);

  FileSystem& fs() noexcept { return *fs_; }
  PageCache& cache() noexcept { return *cache_; }
  BlockProtector& protector() noexcept { return *protector_; }
  BlockIo& io() noexcept { return *io_; }
  ObliviousScheduler* scheduler() noexcept { return scheduler_; }
  HostInterface& host() noexcept { return host_; }
  ProtectionMode mode() const noexcept { return protector_->mode(); }
  IoPath path() const noexcept { return options_.path; }
  VolumeStats stats() const;

 private:
  Volume(HostInterface& host, VolumeOptions options, Rng rng);

  PhysBlock dummy_read_target(Rng& rng) override;
  PhysBlock dummy_write_target(Rng& rng) override;
  Block dummy_write_payload(PhysBlock phys) override;

  void on_shuffle_required();
  void maybe_eager_shuffle();
  void index_pad_files();

  HostInterface& host_;
  VolumeOptions options_;
  Rng rng_;
  Rng payload_rng_;
  std::uint64_t n_blocks_ = 0;
  std::unique_ptr<BlockProtector> protector_;
  std::unique_ptr<FileSystem> fs_;
  std::unique_ptr<BlockIo> io_;
  ObliviousScheduler* scheduler_ = nullptr;
  std::unique_ptr<PageCache> cache_;
  std::vector<std::pair<FileId, std::uint32_t>> pad_files_;  // id, blocks
  std::uint64_t pad_total_ = 0;
  std::uint64_t shuffles_ = 0;
  bool shuffling_ = false;
};

}  // namespace oblv
