#include "oblv/shuffle.hpp"

#include <algorithm>
#include <unordered_map>

#include "oblv/block_crypto.hpp"
#include "oblv/error.hpp"
#include "oblv/oblivious_sched.hpp"
#include "oblv/page_cache.hpp"

namespace oblv {

std::vector<std::uint64_t> fisher_yates(std::uint64_t n, Rng& rng) {
  std::vector<std::uint64_t> perm(n);
  for (std::uint64_t i = 0; i < n; ++i) perm[i] = i;
  for (std::uint64_t i = n; i > 1; --i) {
    std::swap(perm[i - 1], perm[rng.uniform(i)]);
  }
  return perm;
}

ShufflePlan plan_shuffle(const FileSystem& fs, std::span<const FileId> files, Rng& rng) {
  ShufflePlan plan;
  plan.files.assign(files.begin(), files.end());
  for (auto fd : files) {
    const auto n = fs.num_blocks(fd);
    plan.max_blk = std::max(plan.max_blk, n);
    for (std::uint32_t b = 0; b < n; ++b) plan.sources.push_back({fd, b});
  }
  plan.num_shuff_blk = plan.sources.size();
  if (plan.num_shuff_blk == 0) return plan;

  const auto free_blk = fs.free_blocks();
  if (free_blk == 0 || free_blk < plan.max_blk) {
    throw Error(Errc::shuffle_impossible, std::to_string(free_blk) + " free blocks, need " +
                                              std::to_string(plan.max_blk) + " for one donor");
  }
  plan.num_donors = free_blk / plan.max_blk;
  plan.permutation = fisher_yates(plan.num_shuff_blk, rng);
  return plan;
}

ShuffleReport oblivious_shuffle(FileSystem& fs, std::span<const FileId> files, PageCache& cache, BlockIo& io,
                                BlockProtector& protector, Rng& rng) {
  if (fs.read_only()) throw Error(Errc::mode, "cannot shuffle a read-only file system");
  const ShufflePlan plan = plan_shuffle(fs, files, rng);
  ShuffleReport report;
  if (plan.num_shuff_blk == 0) return report;
  report.num_donors = plan.num_donors;

  cache.flush(false);
  io.drain();

  const auto donors = fs.create_donors(plan.num_donors, plan.max_blk);
  std::vector<std::vector<bool>> slot_used(donors.size(), std::vector<bool>(plan.max_blk, false));

  const std::uint64_t n = plan.num_shuff_blk;
  std::vector<PhysBlock> origin(n);
  for (std::uint64_t i = 0; i < n; ++i) origin[i] = fs.physical(plan.sources[i].file, plan.sources[i].logical);
  std::vector<bool> fetched(n, false);  // original location read during this shuffle
  std::unordered_map<std::uint64_t, Block> staged;

  auto is_cached = [&](std::uint64_t idx) {
    return cache.peek(plan.sources[idx].file, plan.sources[idx].logical) != nullptr;
  };
  auto read_origin = [&](std::uint64_t idx) {
    auto h = io.submit(IoRequest{IoKind::read, origin[idx], {}});
    io.wait(h);
    fetched[idx] = true;
    return h;
  };
  auto read_source = [&](std::uint64_t idx) {
    auto h = read_origin(idx);
    ++report.source_reads;
    if (fs.inode(plan.sources[idx].file).kind == FileKind::dummy_pad) {
      // Padding blocks carry no data and may be rewritten by dummy writes at
      // any time, so they are re-randomised rather than decoded.
      Block junk;
      rng.fill(junk);
      return junk;
    }
    return protector.decode(origin[idx], h->data);
  };

  // Every step issues exactly one read, and every source location is read
  // exactly once, whatever the cache holds.
  std::uint64_t ahead = 0;   // permutation cursor for read-ahead
  std::uint64_t unread = 0;  // permutation cursor for locations not yet read
  for (std::uint64_t pos = 0; pos < n; ++pos) {
    const std::uint64_t idx = plan.permutation[pos];
    const SourceBlock src = plan.sources[idx];

    Block content;
    bool read_this_step = false;
    if (auto it = staged.find(idx); it != staged.end()) {
      content = it->second;
      staged.erase(it);
    } else if (const Page* page = cache.peek(src.file, src.logical)) {
      content = page->data;
    } else {
      content = read_source(idx);
      read_this_step = true;
    }
    if (!read_this_step) {
      while (ahead < n && (ahead <= pos || fetched[plan.permutation[ahead]] || is_cached(plan.permutation[ahead]))) {
        ++ahead;
      }
      if (ahead < n) {
        const std::uint64_t next = plan.permutation[ahead];
        staged.emplace(next, read_source(next));
      } else {
        // Everything left is cached: read the old location of one of them.
        std::uint64_t victim = idx;
        if (fetched[victim]) {
          while (fetched[plan.permutation[unread]]) ++unread;
          victim = plan.permutation[unread];
        }
        read_origin(victim);
        ++report.filler_reads;
      }
    }

    std::vector<std::size_t> spare;
    for (std::size_t d = 0; d < donors.size(); ++d) {
      if (!slot_used[d][src.logical]) spare.push_back(d);
    }
    const std::size_t d = spare.empty() ? rng.uniform(donors.size()) : spare[rng.uniform(spare.size())];
    slot_used[d][src.logical] = true;

    fs.move_extent(src.file, donors[d], src.logical);
    // The cached page belongs to the logical block, not to its old location.
    cache.swap_pages(PageKey{src.file, src.logical}, PageKey{donors[d], src.logical});

    const PhysBlock target = fs.physical(src.file, src.logical);
    io.submit(IoRequest{IoKind::write, target, protector.encode(target, content)});
    ++report.swaps;
  }

  io.drain();
  fs.unlink_all(donors);
  cache.reset_epoch();
  return report;
}

}  // namespace oblv
