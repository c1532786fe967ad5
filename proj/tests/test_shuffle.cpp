#include <gtest/gtest.h>

#include <map>
#include <set>

#include "chi_square.hpp"
#include "mem_stack.hpp"
#include "oblv/error.hpp"
#include "oblv/shuffle.hpp"

using namespace oblv;
using namespace oblv::testing;

namespace {

std::map<FileId, Bytes> snapshot(FileSystem& fs, std::span<const FileId> files) {
  std::map<FileId, Bytes> out;
  for (auto f : files) out[f] = fs.file_read(f, 0, fs.file_size(f));
  return out;
}

ShuffleReport run_shuffle(MemStack& s, std::span<const FileId> files, Rng& rng) {
  return oblivious_shuffle(*s.fs, files, *s.cache, s.io, s.protector, rng);
}

}  // namespace

TEST(FisherYates, SingleElement) {
  auto rng = Rng::from_seed(1);
  EXPECT_EQ(fisher_yates(1, rng), std::vector<std::uint64_t>{0});
  EXPECT_TRUE(fisher_yates(0, rng).empty());
}

TEST(FisherYates, AllSixPermutationsOfThreeEquallyLikely) {
  auto rng = Rng::from_seed(2);
  std::map<std::vector<std::uint64_t>, double> counts;
  for (int i = 0; i < 60'000; ++i) counts[fisher_yates(3, rng)] += 1;
  ASSERT_EQ(counts.size(), 6u);
  for (const auto& [perm, c] : counts) EXPECT_NEAR(c, 10'000, 500);
  EXPECT_GT(chi_square_equal_p(counts_of(counts)), 0.01);
}

TEST(FisherYates, SeedReproducesAndResultIsBijection) {
  auto a = Rng::from_seed(3);
  auto b = Rng::from_seed(3);
  auto p = fisher_yates(1000, a);
  EXPECT_EQ(p, fisher_yates(1000, b));
  std::set<std::uint64_t> seen(p.begin(), p.end());
  EXPECT_EQ(seen.size(), 1000u);
  EXPECT_EQ(*seen.rbegin(), 999u);
}

TEST(Plan, DonorCountFollowsFreeSpace) {
  MemStack s(64, 8, 4);
  auto a = s.add_file("a", Bytes(10 * kBlockSize));
  s.add_file("filler", Bytes(7 * kBlockSize));
  ASSERT_EQ(s.fs->free_blocks(), 40u);
  auto rng = Rng::from_seed(4);
  std::vector<FileId> files{a};
  auto plan = plan_shuffle(*s.fs, files, rng);
  EXPECT_EQ(plan.max_blk, 10u);
  EXPECT_EQ(plan.num_shuff_blk, 10u);
  EXPECT_EQ(plan.num_donors, 4u);
  EXPECT_EQ(plan.permutation.size(), 10u);
}

TEST(Shuffle, EmptyFileSetIsNoOp) {
  MemStack s(64, 8, 5);
  auto rng = Rng::from_seed(5);
  s.io.log.clear();
  auto r = run_shuffle(s, {}, rng);
  EXPECT_EQ(r.swaps, 0u);
  EXPECT_TRUE(s.io.log.empty());
}

TEST(Shuffle, ZeroFreeBlocksIsImpossible) {
  MemStack s(64, 8, 6);
  auto a = s.add_file("a", Bytes(57 * kBlockSize));
  auto rng = Rng::from_seed(6);
  std::vector<FileId> files{a};
  try {
    run_shuffle(s, files, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::shuffle_impossible);
  }
}

TEST(Shuffle, FourBlockFileWithEightFreePreservesContent) {
  MemStack s(64, 2, 7);
  auto rng = Rng::from_seed(7);
  auto a = s.add_file("a", random_bytes(rng, 4 * kBlockSize));
  s.add_file("filler", Bytes(45 * kBlockSize));
  ASSERT_EQ(s.fs->free_blocks(), 8u);
  std::vector<FileId> files{a};
  auto before = snapshot(*s.fs, files);
  auto r = run_shuffle(s, files, rng);
  EXPECT_EQ(r.swaps, 4u);
  EXPECT_EQ(r.num_donors, 2u);
  EXPECT_EQ(s.fs->free_blocks(), 8u);
  EXPECT_EQ(snapshot(*s.fs, files), before);
  EXPECT_TRUE(s.fs->check().empty());
}

TEST(Shuffle, RepeatedShufflesPreserveContentAndReadEachSourceOnce) {
  auto rng = Rng::from_seed(8);
  for (int trial = 0; trial < 30; ++trial) {
    MemStack s(128, 1 + rng.uniform(5), 200 + trial, 0.1, ProtectionMode::crypt_integrity);
    std::vector<FileId> files;
    for (int f = 0; f < 3; ++f) {
      files.push_back(s.add_file("f" + std::to_string(f), random_bytes(rng, 1 + rng.uniform(12 * kBlockSize))));
    }
    // Warm part of the cache so the cached-source path is exercised.
    for (int i = 0; i < 4; ++i) s.fs->file_read(files[rng.uniform(3)], rng.uniform(4000), 10);
    auto before = snapshot(*s.fs, files);
    const auto free_before = s.fs->free_blocks();

    std::set<PhysBlock> source_phys;
    for (auto f : files) {
      for (auto p : s.fs->inode(f).block_map) source_phys.insert(p);
    }
    s.io.log.clear();
    auto r = run_shuffle(s, files, rng);
    std::map<PhysBlock, int> reads;
    for (const auto& e : s.io.log) {
      if (e.kind == IoKind::read && source_phys.contains(e.phys)) ++reads[e.phys];
    }
    for (const auto& [p, n] : reads) ASSERT_EQ(n, 1) << "source block read twice";
    EXPECT_EQ(r.swaps, source_phys.size());
    EXPECT_EQ(s.fs->free_blocks(), free_before);
    EXPECT_EQ(snapshot(*s.fs, files), before);
  }
}

TEST(Shuffle, EveryStepIsOneReadThenOneWrite) {
  MemStack s(128, 3, 9);
  auto rng = Rng::from_seed(9);
  std::vector<FileId> files{s.add_file("a", random_bytes(rng, 9 * kBlockSize)),
                            s.add_file("b", random_bytes(rng, 5 * kBlockSize))};
  s.fs->file_read(files[0], 0, 3 * kBlockSize);
  s.cache->flush(false);
  s.io.log.clear();
  auto r = run_shuffle(s, files, rng);
  ASSERT_EQ(s.io.log.size(), 2 * r.swaps);
  for (std::size_t i = 0; i < s.io.log.size(); ++i) {
    EXPECT_EQ(s.io.log[i].kind, i % 2 == 0 ? IoKind::read : IoKind::write);
  }
}

TEST(Shuffle, TraceShapeIndependentOfContentAndLayout) {
  auto shape = [](std::uint64_t seed, std::uint8_t fill) {
    MemStack s(128, 4, seed);
    auto rng = Rng::from_seed(seed);
    std::vector<FileId> files{s.add_file("a", Bytes(6 * kBlockSize, fill)), s.add_file("b", Bytes(3 * kBlockSize, fill))};
    s.cache->flush(true);
    s.cache = std::make_unique<PageCache>(4, s.io, s.protector,
                                          [&s](FileId f, std::uint32_t l) { return s.fs->physical(f, l); });
    s.fs->attach(s.cache.get());
    s.io.log.clear();
    run_shuffle(s, files, rng);
    std::vector<IoKind> kinds;
    for (const auto& e : s.io.log) kinds.push_back(e.kind);
    return kinds;
  };
  const auto a = shape(10, 0x00);
  EXPECT_EQ(a, shape(11, 0xff));
  EXPECT_EQ(a, shape(12, 0x5a));
}

TEST(Shuffle, PlacementOfSmallFileIsUniform) {
  MemStack s(64, 2, 13);
  auto rng = Rng::from_seed(13);
  auto a = s.add_file("a", random_bytes(rng, 3 * kBlockSize));
  std::vector<FileId> files{a};
  const auto content = snapshot(*s.fs, files);
  std::map<PhysBlock, double> where;
  for (PhysBlock b = s.fs->layout().data_start; b < 64; ++b) where[b] = 0;
  for (int i = 0; i < 1000; ++i) {
    run_shuffle(s, files, rng);
    where[s.fs->physical(a, 0)] += 1;
  }
  EXPECT_EQ(snapshot(*s.fs, files), content);
  EXPECT_GT(chi_square_equal_p(counts_of(where)), 0.01);
}

TEST(Shuffle, ReadOnlyIsModeError) {
  MemStack s(64, 2, 14);
  auto a = s.add_file("a", Bytes(kBlockSize));
  s.fs->set_read_only(true);
  auto rng = Rng::from_seed(14);
  std::vector<FileId> files{a};
  EXPECT_THROW(run_shuffle(s, files, rng), Error);
}
