#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "oblv/common.hpp"
#include "oblv/rng.hpp"

namespace oblv {

class PageCache;

struct FsOptions {
  std::uint32_t max_inodes = 64;
  std::uint32_t max_file_blocks = 0;  // 0: min(n_blocks, 1024)
  double dummy_fraction = 0.10;       // share of the disk reserved as dummy-pad files
};

// Block 0 is the superblock, followed by the allocation bitmap and the inode
// table; data blocks start at data_start.
struct FsLayout {
  std::uint64_t n_blocks = 0;
  std::uint64_t bitmap_start = 1;
  std::uint64_t bitmap_blocks = 0;
  std::uint64_t inode_start = 0;
  std::uint64_t inode_blocks = 0;
  std::uint32_t max_inodes = 0;
  std::uint32_t max_file_blocks = 0;
  std::uint64_t data_start = 0;

  std::uint64_t metadata_blocks() const noexcept { return data_start; }
  std::uint64_t inode_bytes() const noexcept { return 64 + 4ull * max_file_blocks; }
};

// Throws Errc::size when n_blocks leaves no room for data.
FsLayout compute_layout(std::uint64_t n_blocks, const FsOptions& options);

enum class FileKind : std::uint8_t { regular = 1, donor = 2, dummy_pad = 3 };

inline constexpr std::size_t kMaxNameBytes = 40;

struct Inode {
  FileId id = 0;
  FileKind kind = FileKind::regular;
  std::string name;
  std::uint64_t size = 0;
  std::vector<PhysBlock> block_map;  // logical index -> physical block
};

struct FsStats {
  std::uint64_t free_blk = 0;
  std::map<FileId, std::uint32_t> num_blocks;
};

// Flat, direct-mapped file system. Metadata lives in trusted memory while
// mounted and is persisted through serialize_metadata(); file data goes
// through the attached page cache.
class FileSystem {
 public:
  static FileSystem format(std::uint64_t n_blocks, const FsOptions& options, Rng rng);
  static FsLayout read_layout(const Block& superblock);
  static FileSystem load(std::span<const Block> metadata_blocks, Rng rng);
  std::vector<Block> serialize_metadata() const;

  // Without a hook, shuffle_required simply starts a new epoch and retries.
  void attach(PageCache* cache, std::function<void()> on_shuffle_required = {});
  void set_read_only(bool ro) noexcept { read_only_ = ro; }
  bool read_only() const noexcept { return read_only_; }

  FileId create(const std::string& name);
  std::optional<FileId> lookup(const std::string& name) const;
  std::vector<FileId> list() const;  // regular files only
  std::vector<FileId> files_of_kind(FileKind kind) const;
  void unlink(FileId fd);

  std::size_t file_write(FileId fd, std::uint64_t offset, ByteSpan data);
  Bytes file_read(FileId fd, std::uint64_t offset, std::size_t len);

  // Exchanges the physical blocks behind logical block_no of two files. File
  // contents are exchanged with them; the bitmap is untouched.
  void move_extent(FileId a, FileId b, std::uint32_t block_no);

  std::vector<FileId> create_donors(std::uint64_t count, std::uint32_t size_blocks);
  void unlink_all(std::span<const FileId> fds);

  std::uint64_t free_blocks() const noexcept { return free_list_.size(); }
  std::uint32_t num_blocks(FileId fd) const;
  std::uint64_t file_size(FileId fd) const { return inode(fd).size; }
  PhysBlock physical(FileId fd, std::uint32_t logical) const;
  const Inode& inode(FileId fd) const;
  bool is_allocated(PhysBlock phys) const { return allocated_.at(phys); }
  FsStats stats() const;
  const FsLayout& layout() const noexcept { return layout_; }
  std::vector<PhysBlock> blocks_of_kind(FileKind kind) const;

  // Consistency problems (empty when healthy): bitmap vs. block maps, free
  // count, and one-to-one mapping of allocated blocks.
  std::vector<std::string> check() const;

 private:
  FileSystem(FsLayout layout, Rng rng);

  Inode& inode_mut(FileId fd);
  PhysBlock allocate_random();
  void release(PhysBlock phys);
  void debug_check() const;
  PageCache& cache();
  FileId add_inode(const std::string& name, FileKind kind);

  FsLayout layout_;
  Rng rng_;
  std::vector<bool> allocated_;
  std::vector<PhysBlock> free_list_;
  std::vector<std::uint64_t> free_pos_;  // index into free_list_, or npos
  std::map<FileId, Inode> inodes_;
  FileId next_id_ = 1;
  FileId next_donor_id_ = 0x80000000u;
  PageCache* cache_ = nullptr;
  std::function<void()> on_shuffle_required_;
  bool read_only_ = false;
};

}  // namespace oblv
