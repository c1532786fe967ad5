#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "oblv/blockfs.hpp"
#include "oblv/common.hpp"
#include "oblv/rng.hpp"

namespace oblv {

class BlockIo;
class BlockProtector;
class PageCache;

// Uniform random permutation of [0, n).
std::vector<std::uint64_t> fisher_yates(std::uint64_t n, Rng& rng);

struct SourceBlock {
  FileId file = 0;
  std::uint32_t logical = 0;
};

struct ShufflePlan {
  std::vector<FileId> files;
  std::uint32_t max_blk = 0;
  std::uint64_t num_shuff_blk = 0;
  std::uint64_t num_donors = 0;
  std::vector<SourceBlock> sources;        // enumeration order
  std::vector<std::uint64_t> permutation;  // indexes into sources
};

// Throws Errc::shuffle_impossible when no donor of max_blk blocks fits.
ShufflePlan plan_shuffle(const FileSystem& fs, std::span<const FileId> files, Rng& rng);

struct ShuffleReport {
  std::uint64_t swaps = 0;
  std::uint64_t source_reads = 0;
  std::uint64_t filler_reads = 0;  // old locations of cached sources, read once nothing uncached is left
  std::uint64_t num_donors = 0;
};

// Moves every block of `files` to a fresh random physical location while
// keeping file contents intact. Dirty pages are flushed and the I/O queue
// drained first; on return the cache epoch is reset.
ShuffleReport oblivious_shuffle(FileSystem& fs, std::span<const FileId> files, PageCache& cache, BlockIo& io,
                                BlockProtector& protector, Rng& rng);

}  // namespace oblv
