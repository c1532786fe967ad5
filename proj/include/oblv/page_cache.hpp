#pragma once

#include <cstdint>
#include <functional>
#include <list>
#include <optional>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "oblv/block_crypto.hpp"
#include "oblv/common.hpp"
#include "oblv/oblivious_sched.hpp"

namespace oblv {

enum class Intent : std::uint8_t { read, write };
enum class CacheOutcome : std::uint8_t { hit, miss_fetched, shuffle_required };

struct PageKey {
  FileId file = 0;
  std::uint32_t logical = 0;
  friend bool operator==(const PageKey&, const PageKey&) = default;
};

struct PageKeyHash {
  std::size_t operator()(const PageKey& k) const noexcept {
    return std::hash<std::uint64_t>{}((static_cast<std::uint64_t>(k.file) << 32) | k.logical);
  }
};

struct Page {
  Block data{};
  bool dirty = false;
};

struct CacheStats {
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  std::uint64_t shuffle_required = 0;
  std::uint64_t writebacks = 0;
};

using BlockLocator = std::function<PhysBlock(FileId, std::uint32_t)>;

// Trusted LRU page cache acting as the shelter: a block is fetched from the
// host at most once per epoch. Requesting a block that was fetched and then
// evicted in the same epoch yields shuffle_required and no host call.
class PageCache {
 public:
  PageCache(std::size_t capacity, BlockIo& io, BlockProtector& protector, BlockLocator locate);

  struct Access {
    Page* page = nullptr;  // null when outcome is shuffle_required
    CacheOutcome outcome = CacheOutcome::hit;
  };

  Access get_block(FileId file, std::uint32_t logical, Intent intent);
  // Makes a page resident without reading it from the host, for blocks that
  // are new or about to be overwritten whole. Marks it dirty.
  Page& install_block(FileId file, std::uint32_t logical);

  // Re-seals every dirty page and submits it as a write. epoch_end also
  // clears the epoch read set.
  std::vector<IoHandle> flush(bool epoch_end);
  void reset_epoch();

  bool resident(FileId file, std::uint32_t logical) const;
  const Page* peek(FileId file, std::uint32_t logical) const;
  void forget_file(FileId file);
  // Exchanges whatever is cached under two keys, including queued write-backs.
  void swap_pages(const PageKey& a, const PageKey& b);

  bool fetched_this_epoch(PhysBlock phys) const { return epoch_reads_.contains(phys); }
  std::size_t epoch_read_count() const noexcept { return epoch_reads_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t size() const noexcept { return pages_.size(); }
  const CacheStats& stats() const noexcept { return stats_; }

 private:
  struct Entry {
    Page page;
    std::list<PageKey>::iterator lru;
  };
  struct WriteBack {
    Block data;
    IoHandle handle;
  };

  Page& insert(const PageKey& key, Page page);
  void evict_one();
  void prune_writebacks();
  void rekey(const PageKey& from, const PageKey& to);

  std::size_t capacity_;
  BlockIo& io_;
  BlockProtector& protector_;
  BlockLocator locate_;
  std::list<PageKey> lru_;  // front = most recent
  std::unordered_map<PageKey, Entry, PageKeyHash> pages_;
  std::unordered_map<PageKey, WriteBack, PageKeyHash> writebacks_;
  std::unordered_set<PhysBlock> epoch_reads_;
  CacheStats stats_;
};

}  // namespace oblv
