#include "oblv/blockfs.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <set>

#include "oblv/error.hpp"
#include "oblv/page_cache.hpp"

namespace oblv {

namespace {

constexpr char kFsMagic[4] = {'O', 'B', 'F', 'S'};
constexpr std::uint32_t kFsVersion = 1;
constexpr std::uint64_t kNotFree = std::numeric_limits<std::uint64_t>::max();
constexpr std::uint32_t kBitsPerBlock = kBlockSize * 8;

std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

}  // namespace

FsLayout compute_layout(std::uint64_t n_blocks, const FsOptions& options) {
  if (n_blocks > std::numeric_limits<std::uint32_t>::max()) throw Error(Errc::size, "too many blocks");
  if (options.max_inodes == 0) throw Error(Errc::parameter, "max_inodes must be positive");
  FsLayout l;
  l.n_blocks = n_blocks;
  l.max_inodes = options.max_inodes;
  l.max_file_blocks = options.max_file_blocks != 0
                          ? options.max_file_blocks
                          : static_cast<std::uint32_t>(std::min<std::uint64_t>(n_blocks, 1024));
  l.bitmap_start = 1;
  l.bitmap_blocks = ceil_div(std::max<std::uint64_t>(n_blocks, 1), kBitsPerBlock);
  l.inode_start = l.bitmap_start + l.bitmap_blocks;
  l.inode_blocks = ceil_div(l.inode_bytes() * l.max_inodes, kBlockSize);
  l.data_start = l.inode_start + l.inode_blocks;
  if (n_blocks <= l.data_start) {
    throw Error(Errc::size, std::to_string(n_blocks) + " blocks cannot hold " + std::to_string(l.data_start) +
                                " metadata blocks plus data");
  }
  return l;
}

FileSystem::FileSystem(FsLayout layout, Rng rng)
    : layout_(layout), rng_(std::move(rng)), allocated_(layout.n_blocks, false), free_pos_(layout.n_blocks, kNotFree) {
  for (PhysBlock b = 0; b < layout_.data_start; ++b) allocated_[b] = true;
}

FileSystem FileSystem::format(std::uint64_t n_blocks, const FsOptions& options, Rng rng) {
  FileSystem fs(compute_layout(n_blocks, options), std::move(rng));
  for (PhysBlock b = fs.layout_.data_start; b < n_blocks; ++b) {
    fs.free_pos_[b] = fs.free_list_.size();
    fs.free_list_.push_back(b);
  }
  if (options.dummy_fraction < 0 || options.dummy_fraction >= 1) {
    throw Error(Errc::parameter, "dummy_fraction must be in [0, 1)");
  }
  auto pad = static_cast<std::uint64_t>(std::llround(options.dummy_fraction * static_cast<double>(n_blocks)));
  if (pad > fs.free_blocks()) throw Error(Errc::space, "dummy-pad share does not fit");
  for (std::uint32_t i = 0; pad > 0; ++i) {
    auto n = static_cast<std::uint32_t>(std::min<std::uint64_t>(pad, fs.layout_.max_file_blocks));
    FileId id = fs.add_inode(".pad" + std::to_string(i), FileKind::dummy_pad);
    auto& node = fs.inodes_.at(id);
    for (std::uint32_t j = 0; j < n; ++j) node.block_map.push_back(fs.allocate_random());
    node.size = static_cast<std::uint64_t>(n) * kBlockSize;
    pad -= n;
  }
  fs.debug_check();
  return fs;
}

FileId FileSystem::add_inode(const std::string& name, FileKind kind) {
  if (name.empty() || name.size() > kMaxNameBytes) throw Error(Errc::parameter, "file name must be 1..40 bytes");
  if (kind != FileKind::donor) {
    auto persisted = std::count_if(inodes_.begin(), inodes_.end(),
                                   [](const auto& kv) { return kv.second.kind != FileKind::donor; });
    if (static_cast<std::uint32_t>(persisted) >= layout_.max_inodes) throw Error(Errc::space, "inode table full");
  }
  FileId id = kind == FileKind::donor ? next_donor_id_++ : next_id_++;
  inodes_.emplace(id, Inode{id, kind, name, 0, {}});
  return id;
}

// --- persistence ---------------------------------------------------------------

FsLayout FileSystem::read_layout(const Block& sb) {
  if (std::memcmp(sb.data(), kFsMagic, 4) != 0 || load_le(sb.data() + 4, 4) != kFsVersion) {
    throw Error(Errc::format, "no file system superblock");
  }
  FsLayout l;
  l.n_blocks = load_le(sb.data() + 8, 8);
  l.bitmap_start = load_le(sb.data() + 16, 8);
  l.bitmap_blocks = load_le(sb.data() + 24, 8);
  l.inode_start = load_le(sb.data() + 32, 8);
  l.inode_blocks = load_le(sb.data() + 40, 8);
  l.max_inodes = static_cast<std::uint32_t>(load_le(sb.data() + 48, 4));
  l.max_file_blocks = static_cast<std::uint32_t>(load_le(sb.data() + 52, 4));
  l.data_start = load_le(sb.data() + 72, 8);
  FsOptions check_opts{l.max_inodes, l.max_file_blocks, 0.0};
  auto expect = compute_layout(l.n_blocks, check_opts);
  if (expect.bitmap_blocks != l.bitmap_blocks || expect.inode_start != l.inode_start ||
      expect.inode_blocks != l.inode_blocks || expect.data_start != l.data_start || l.bitmap_start != 1) {
    throw Error(Errc::format, "inconsistent superblock layout");
  }
  return l;
}

std::vector<Block> FileSystem::serialize_metadata() const {
  std::vector<Block> out(layout_.data_start);
  for (auto& b : out) b.fill(0);
  auto& sb = out[0];
  std::memcpy(sb.data(), kFsMagic, 4);
  store_le(sb.data() + 4, kFsVersion, 4);
  store_le(sb.data() + 8, layout_.n_blocks, 8);
  store_le(sb.data() + 16, layout_.bitmap_start, 8);
  store_le(sb.data() + 24, layout_.bitmap_blocks, 8);
  store_le(sb.data() + 32, layout_.inode_start, 8);
  store_le(sb.data() + 40, layout_.inode_blocks, 8);
  store_le(sb.data() + 48, layout_.max_inodes, 4);
  store_le(sb.data() + 52, layout_.max_file_blocks, 4);
  store_le(sb.data() + 56, free_blocks(), 8);
  store_le(sb.data() + 64, next_id_, 4);
  store_le(sb.data() + 72, layout_.data_start, 8);

  for (PhysBlock b = 0; b < layout_.n_blocks; ++b) {
    if (!allocated_[b]) continue;
    auto& blk = out[layout_.bitmap_start + b / kBitsPerBlock];
    auto bit = b % kBitsPerBlock;
    blk[bit / 8] |= static_cast<std::uint8_t>(1u << (bit % 8));
  }

  Bytes table(layout_.inode_blocks * kBlockSize, 0);
  std::size_t slot = 0;
  for (const auto& [id, node] : inodes_) {
    if (node.kind == FileKind::donor) continue;
    std::uint8_t* p = table.data() + slot * layout_.inode_bytes();
    p[0] = 1;
    p[1] = static_cast<std::uint8_t>(node.kind);
    p[2] = static_cast<std::uint8_t>(node.name.size());
    store_le(p + 4, node.id, 4);
    store_le(p + 8, node.size, 8);
    store_le(p + 16, node.block_map.size(), 4);
    std::memcpy(p + 24, node.name.data(), node.name.size());
    for (std::size_t i = 0; i < node.block_map.size(); ++i) store_le(p + 64 + 4 * i, node.block_map[i], 4);
    ++slot;
  }
  for (std::uint64_t i = 0; i < layout_.inode_blocks; ++i) {
    std::memcpy(out[layout_.inode_start + i].data(), table.data() + i * kBlockSize, kBlockSize);
  }
  return out;
}

FileSystem FileSystem::load(std::span<const Block> meta, Rng rng) {
  if (meta.empty()) throw Error(Errc::format, "missing superblock");
  FsLayout layout = read_layout(meta[0]);
  if (meta.size() < layout.data_start) throw Error(Errc::format, "missing metadata blocks");
  FileSystem fs(layout, std::move(rng));
  fs.next_id_ = static_cast<FileId>(load_le(meta[0].data() + 64, 4));

  for (PhysBlock b = layout.data_start; b < layout.n_blocks; ++b) {
    const auto& blk = meta[layout.bitmap_start + b / kBitsPerBlock];
    auto bit = b % kBitsPerBlock;
    if (blk[bit / 8] & (1u << (bit % 8))) {
      fs.allocated_[b] = true;
    } else {
      fs.free_pos_[b] = fs.free_list_.size();
      fs.free_list_.push_back(b);
    }
  }

  Bytes table(layout.inode_blocks * kBlockSize);
  for (std::uint64_t i = 0; i < layout.inode_blocks; ++i) {
    std::memcpy(table.data() + i * kBlockSize, meta[layout.inode_start + i].data(), kBlockSize);
  }
  for (std::uint32_t slot = 0; slot < layout.max_inodes; ++slot) {
    const std::uint8_t* p = table.data() + slot * layout.inode_bytes();
    if (p[0] == 0) continue;
    Inode node;
    if (p[1] != static_cast<std::uint8_t>(FileKind::regular) && p[1] != static_cast<std::uint8_t>(FileKind::dummy_pad)) {
      throw Error(Errc::format, "bad inode kind");
    }
    node.kind = static_cast<FileKind>(p[1]);
    if (p[2] == 0 || p[2] > kMaxNameBytes) throw Error(Errc::format, "bad inode name");
    node.id = static_cast<FileId>(load_le(p + 4, 4));
    node.size = load_le(p + 8, 8);
    auto n = load_le(p + 16, 4);
    if (n > layout.max_file_blocks || node.size > n * kBlockSize) throw Error(Errc::format, "bad inode size");
    node.name.assign(reinterpret_cast<const char*>(p + 24), p[2]);
    for (std::uint64_t i = 0; i < n; ++i) {
      PhysBlock b = load_le(p + 64 + 4 * i, 4);
      if (b < layout.data_start || b >= layout.n_blocks) throw Error(Errc::format, "block map out of range");
      node.block_map.push_back(b);
    }
    if (node.id >= fs.next_id_ || fs.inodes_.contains(node.id)) throw Error(Errc::format, "bad inode id");
    fs.inodes_.emplace(node.id, std::move(node));
  }
  if (auto problems = fs.check(); !problems.empty()) throw Error(Errc::format, "inconsistent file system: " + problems[0]);
  return fs;
}

// --- allocation ------------------------------------------------------------------

PhysBlock FileSystem::allocate_random() {
  if (free_list_.empty()) throw Error(Errc::space, "no free blocks");
  auto idx = rng_.uniform(free_list_.size());
  PhysBlock b = free_list_[idx];
  free_list_[idx] = free_list_.back();
  free_pos_[free_list_[idx]] = idx;
  free_list_.pop_back();
  free_pos_[b] = kNotFree;
  allocated_[b] = true;
  return b;
}

void FileSystem::release(PhysBlock b) {
  allocated_[b] = false;
  free_pos_[b] = free_list_.size();
  free_list_.push_back(b);
}

void FileSystem::debug_check() const {
#ifndef NDEBUG
  if (auto problems = check(); !problems.empty()) throw std::logic_error("file system invariant: " + problems[0]);
#endif
}

// --- files -------------------------------------------------------------------------

void FileSystem::attach(PageCache* cache, std::function<void()> on_shuffle_required) {
  cache_ = cache;
  on_shuffle_required_ = std::move(on_shuffle_required);
}

PageCache& FileSystem::cache() {
  if (cache_ == nullptr) throw Error(Errc::descriptor, "file system has no page cache attached");
  return *cache_;
}

const Inode& FileSystem::inode(FileId fd) const {
  auto it = inodes_.find(fd);
  if (it == inodes_.end()) throw Error(Errc::descriptor, "no file " + std::to_string(fd));
  return it->second;
}

Inode& FileSystem::inode_mut(FileId fd) {
  auto it = inodes_.find(fd);
  if (it == inodes_.end()) throw Error(Errc::descriptor, "no file " + std::to_string(fd));
  return it->second;
}

FileId FileSystem::create(const std::string& name) {
  if (read_only_) throw Error(Errc::mode, "file system is read-only");
  if (lookup(name)) throw Error(Errc::parameter, "file exists: " + name);
  return add_inode(name, FileKind::regular);
}

std::optional<FileId> FileSystem::lookup(const std::string& name) const {
  for (const auto& [id, node] : inodes_) {
    if (node.name == name && node.kind != FileKind::donor) return id;
  }
  return std::nullopt;
}

std::vector<FileId> FileSystem::list() const { return files_of_kind(FileKind::regular); }

std::vector<FileId> FileSystem::files_of_kind(FileKind kind) const {
  std::vector<FileId> out;
  for (const auto& [id, node] : inodes_) {
    if (node.kind == kind) out.push_back(id);
  }
  return out;
}

std::vector<PhysBlock> FileSystem::blocks_of_kind(FileKind kind) const {
  std::vector<PhysBlock> out;
  for (const auto& [id, node] : inodes_) {
    if (node.kind == kind) out.insert(out.end(), node.block_map.begin(), node.block_map.end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void FileSystem::unlink(FileId fd) {
  auto& node = inode_mut(fd);
  if (read_only_ && node.kind != FileKind::donor) throw Error(Errc::mode, "file system is read-only");
  for (auto b : node.block_map) release(b);
  if (cache_) cache_->forget_file(fd);
  inodes_.erase(fd);
  debug_check();
}

std::uint32_t FileSystem::num_blocks(FileId fd) const {
  return static_cast<std::uint32_t>(inode(fd).block_map.size());
}

PhysBlock FileSystem::physical(FileId fd, std::uint32_t logical) const {
  const auto& node = inode(fd);
  if (logical >= node.block_map.size()) throw Error(Errc::range, "logical block " + std::to_string(logical));
  return node.block_map[logical];
}

std::size_t FileSystem::file_write(FileId fd, std::uint64_t offset, ByteSpan data) {
  if (read_only_) throw Error(Errc::mode, "file system is read-only");
  auto& node = inode_mut(fd);
  if (data.empty()) return 0;
  const std::uint64_t end = offset + data.size();
  if (end > static_cast<std::uint64_t>(layout_.max_file_blocks) * kBlockSize) {
    throw Error(Errc::size, "write beyond the maximum file size");
  }
  const auto need_blocks = static_cast<std::uint32_t>(ceil_div(end, kBlockSize));
  if (need_blocks > node.block_map.size() && need_blocks - node.block_map.size() > free_blocks()) {
    throw Error(Errc::space, "disk full");
  }
  // Files are dense: a write past EOF allocates every block up to its end.
  const std::uint64_t old_size = node.size;
  while (node.block_map.size() < need_blocks) node.block_map.push_back(allocate_random());

  std::size_t done = 0;
  while (done < data.size()) {
    const std::uint64_t pos = offset + done;
    const auto logical = static_cast<std::uint32_t>(pos / kBlockSize);
    const std::uint64_t block_start = static_cast<std::uint64_t>(logical) * kBlockSize;
    const std::size_t in_block = pos % kBlockSize;
    const std::size_t n = std::min(kBlockSize - in_block, data.size() - done);
    Page* page = nullptr;
    if (n == kBlockSize || block_start >= old_size) {
      page = &cache().install_block(fd, logical);
      if (n != kBlockSize && block_start >= old_size) page->data.fill(0);
    }
    while (page == nullptr) {
      auto access = cache().get_block(fd, logical, Intent::write);
      if (access.outcome == CacheOutcome::shuffle_required) {
        if (on_shuffle_required_) {
          on_shuffle_required_();
        } else {
          cache().reset_epoch();
        }
        continue;
      }
      page = access.page;
    }
    std::memcpy(page->data.data() + in_block, data.data() + done, n);
    done += n;
  }
  node.size = std::max(node.size, end);
  debug_check();
  return done;
}

Bytes FileSystem::file_read(FileId fd, std::uint64_t offset, std::size_t len) {
  const auto size = inode(fd).size;
  if (offset >= size) return {};
  len = static_cast<std::size_t>(std::min<std::uint64_t>(len, size - offset));
  Bytes out(len);
  std::size_t done = 0;
  while (done < len) {
    const std::uint64_t pos = offset + done;
    const auto logical = static_cast<std::uint32_t>(pos / kBlockSize);
    const std::size_t in_block = pos % kBlockSize;
    const std::size_t n = std::min(kBlockSize - in_block, len - done);
    auto access = cache().get_block(fd, logical, Intent::read);
    if (access.outcome == CacheOutcome::shuffle_required) {
      if (on_shuffle_required_) {
        on_shuffle_required_();
      } else {
        cache().reset_epoch();
      }
      continue;
    }
    std::memcpy(out.data() + done, access.page->data.data() + in_block, n);
    done += n;
  }
  return out;
}

void FileSystem::move_extent(FileId a, FileId b, std::uint32_t block_no) {
  auto& na = inode_mut(a);
  auto& nb = inode_mut(b);
  if (block_no >= na.block_map.size() || block_no >= nb.block_map.size()) {
    throw Error(Errc::range, "move_extent block " + std::to_string(block_no) + " not in both files");
  }
  std::swap(na.block_map[block_no], nb.block_map[block_no]);
  if (cache_) cache_->swap_pages(PageKey{a, block_no}, PageKey{b, block_no});
  debug_check();
}

std::vector<FileId> FileSystem::create_donors(std::uint64_t count, std::uint32_t size_blocks) {
  if (count * size_blocks > free_blocks()) throw Error(Errc::space, "not enough free blocks for donors");
  if (size_blocks > layout_.max_file_blocks) throw Error(Errc::size, "donor larger than the maximum file size");
  std::vector<FileId> donors;
  donors.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    FileId id = add_inode(".donor" + std::to_string(i), FileKind::donor);
    auto& node = inodes_.at(id);
    for (std::uint32_t j = 0; j < size_blocks; ++j) node.block_map.push_back(allocate_random());
    node.size = static_cast<std::uint64_t>(size_blocks) * kBlockSize;
    donors.push_back(id);
  }
  debug_check();
  return donors;
}

void FileSystem::unlink_all(std::span<const FileId> fds) {
  for (auto fd : fds) unlink(fd);
}

FsStats FileSystem::stats() const {
  FsStats s;
  s.free_blk = free_blocks();
  for (const auto& [id, node] : inodes_) s.num_blocks[id] = static_cast<std::uint32_t>(node.block_map.size());
  return s;
}

std::vector<std::string> FileSystem::check() const {
  std::vector<std::string> problems;
  std::vector<int> owners(layout_.n_blocks, 0);
  for (PhysBlock b = 0; b < layout_.data_start; ++b) {
    if (!allocated_[b]) problems.push_back("metadata block " + std::to_string(b) + " not allocated");
  }
  for (const auto& [id, node] : inodes_) {
    if (node.block_map.size() > layout_.max_file_blocks) problems.push_back("file " + std::to_string(id) + " too large");
    if (node.size > node.block_map.size() * kBlockSize) problems.push_back("file " + std::to_string(id) + " size beyond blocks");
    for (auto b : node.block_map) {
      if (b < layout_.data_start || b >= layout_.n_blocks) {
        problems.push_back("file " + std::to_string(id) + " maps block " + std::to_string(b) + " outside data area");
        continue;
      }
      if (++owners[b] > 1) problems.push_back("block " + std::to_string(b) + " mapped more than once");
      if (!allocated_[b]) problems.push_back("block " + std::to_string(b) + " mapped but free in bitmap");
    }
  }
  std::uint64_t zero_bits = 0;
  for (PhysBlock b = layout_.data_start; b < layout_.n_blocks; ++b) {
    if (!allocated_[b]) {
      ++zero_bits;
      if (free_pos_[b] == kNotFree || free_list_[free_pos_[b]] != b) problems.push_back("free list misses block " + std::to_string(b));
    } else if (owners[b] == 0) {
      problems.push_back("block " + std::to_string(b) + " allocated but unowned");
    }
  }
  if (zero_bits != free_list_.size()) problems.push_back("free count does not match bitmap");
  return problems;
}

}  // namespace oblv
