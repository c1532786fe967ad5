#include "oblv/page_cache.hpp"

#include "oblv/error.hpp"

namespace oblv {

PageCache::PageCache(std::size_t capacity, BlockIo& io, BlockProtector& protector, BlockLocator locate)
    : capacity_(capacity), io_(io), protector_(protector), locate_(std::move(locate)) {
  if (capacity_ == 0) throw Error(Errc::parameter, "page cache needs at least one page");
}

void PageCache::prune_writebacks() {
  std::erase_if(writebacks_, [](const auto& kv) { return kv.second.handle->done; });
}

PageCache::Access PageCache::get_block(FileId file, std::uint32_t logical, Intent intent) {
  prune_writebacks();
  const PageKey key{file, logical};
  if (auto it = pages_.find(key); it != pages_.end()) {
    lru_.splice(lru_.begin(), lru_, it->second.lru);
    ++stats_.hits;
    if (intent == Intent::write) it->second.page.dirty = true;
    return {&it->second.page, CacheOutcome::hit};
  }
  if (auto wb = writebacks_.find(key); wb != writebacks_.end()) {
    // Its write is still queued; the queued bytes are the current content.
    Page page{wb->second.data, intent == Intent::write};
    writebacks_.erase(wb);
    ++stats_.hits;
    return {&insert(key, page), CacheOutcome::hit};
  }

  const PhysBlock phys = locate_(file, logical);
  if (epoch_reads_.contains(phys)) {
    ++stats_.shuffle_required;
    return {nullptr, CacheOutcome::shuffle_required};
  }
  auto handle = io_.submit(IoRequest{IoKind::read, phys, {}});
  io_.wait(handle);
  epoch_reads_.insert(phys);
  ++stats_.misses;
  Page page{protector_.decode(phys, handle->data), intent == Intent::write};
  return {&insert(key, page), CacheOutcome::miss_fetched};
}

Page& PageCache::install_block(FileId file, std::uint32_t logical) {
  prune_writebacks();
  const PageKey key{file, logical};
  writebacks_.erase(key);
  if (auto it = pages_.find(key); it != pages_.end()) {
    lru_.splice(lru_.begin(), lru_, it->second.lru);
    it->second.page.dirty = true;
    return it->second.page;
  }
  return insert(key, Page{Block{}, true});
}

Page& PageCache::insert(const PageKey& key, Page page) {
  while (pages_.size() >= capacity_) evict_one();
  lru_.push_front(key);
  auto [it, _] = pages_.emplace(key, Entry{std::move(page), lru_.begin()});
  return it->second.page;
}

void PageCache::evict_one() {
  const PageKey victim = lru_.back();
  auto it = pages_.find(victim);
  if (it->second.page.dirty) {
    const PhysBlock phys = locate_(victim.file, victim.logical);
    auto handle = io_.submit(IoRequest{IoKind::write, phys, protector_.encode(phys, it->second.page.data)});
    writebacks_[victim] = WriteBack{it->second.page.data, handle};
    ++stats_.writebacks;
  }
  lru_.pop_back();
  pages_.erase(it);
}

std::vector<IoHandle> PageCache::flush(bool epoch_end) {
  std::vector<IoHandle> handles;
  // Oldest first keeps the write order stable for a given access history.
  for (auto it = lru_.rbegin(); it != lru_.rend(); ++it) {
    auto& entry = pages_.at(*it);
    if (!entry.page.dirty) continue;
    const PhysBlock phys = locate_(it->file, it->logical);
    handles.push_back(io_.submit(IoRequest{IoKind::write, phys, protector_.encode(phys, entry.page.data)}));
    entry.page.dirty = false;
    ++stats_.writebacks;
  }
  if (epoch_end) reset_epoch();
  return handles;
}

void PageCache::reset_epoch() { epoch_reads_.clear(); }

bool PageCache::resident(FileId file, std::uint32_t logical) const {
  const PageKey key{file, logical};
  return pages_.contains(key) || writebacks_.contains(key);
}

const Page* PageCache::peek(FileId file, std::uint32_t logical) const {
  const PageKey key{file, logical};
  if (auto it = pages_.find(key); it != pages_.end()) return &it->second.page;
  return nullptr;
}

void PageCache::forget_file(FileId file) {
  for (auto it = pages_.begin(); it != pages_.end();) {
    if (it->first.file == file) {
      lru_.erase(it->second.lru);
      it = pages_.erase(it);
    } else {
      ++it;
    }
  }
  std::erase_if(writebacks_, [file](const auto& kv) { return kv.first.file == file; });
}

void PageCache::rekey(const PageKey& from, const PageKey& to) {
  auto node = pages_.extract(from);
  node.key() = to;
  *node.mapped().lru = to;
  pages_.insert(std::move(node));
}

void PageCache::swap_pages(const PageKey& a, const PageKey& b) {
  if (a == b) return;
  auto ia = pages_.find(a);
  auto ib = pages_.find(b);
  if (ia != pages_.end() && ib != pages_.end()) {
    std::swap(ia->second.page, ib->second.page);
    std::swap(*ia->second.lru, *ib->second.lru);
    std::swap(ia->second.lru, ib->second.lru);
  } else if (ia != pages_.end()) {
    rekey(a, b);
  } else if (ib != pages_.end()) {
    rekey(b, a);
  }
  auto wa = writebacks_.extract(a);
  auto wb = writebacks_.extract(b);
  if (!wa.empty()) {
    wa.key() = b;
    writebacks_.insert(std::move(wa));
  }
  if (!wb.empty()) {
    wb.key() = a;
    writebacks_.insert(std::move(wb));
  }
}

}  // namespace oblv
