#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "oblv/common.hpp"

namespace oblv {

class Rng;

enum class ProtectionMode : std::uint8_t {
  plain = 0,
  verity = 1,           // read-only integrity (Merkle tree, trusted root)
  crypt = 2,            // confidentiality
  crypt_integrity = 3,  // confidentiality + read/write integrity + freshness
};

std::string_view mode_name(ProtectionMode mode) noexcept;
std::optional<ProtectionMode> parse_mode(std::string_view name) noexcept;
inline bool is_encrypted(ProtectionMode m) {
  return m == ProtectionMode::crypt || m == ProtectionMode::crypt_integrity;
}

inline constexpr std::size_t kNonceBytes = 24;
inline constexpr std::size_t kTagBytes = 16;
inline constexpr std::size_t kSlotBytes = kNonceBytes + kTagBytes;
inline constexpr std::uint8_t kAeadXChaCha20Poly1305 = 1;
inline constexpr std::uint8_t kHashBlake2b256 = 1;

using Nonce = std::array<std::uint8_t, kNonceBytes>;
using Tag = std::array<std::uint8_t, kTagBytes>;
using Digest = std::array<std::uint8_t, 32>;

struct BlockKey {
  std::array<std::uint8_t, 32> bytes{};

  static BlockKey generate();
  static BlockKey from_hex(std::string_view hex);
  std::string hex() const { return to_hex(bytes); }
  friend bool operator==(const BlockKey&, const BlockKey&) = default;
};

Digest digest_from_hex(std::string_view hex);

struct EncryptedBlock {
  Nonce nonce{};
  Block ciphertext{};
  Tag tag{};
};

// The last eight nonce bytes carry the block's write version (little endian);
// the first sixteen are fresh random bytes.
std::uint64_t nonce_version(const Nonce& nonce) noexcept;

// AEAD primitives. The physical index and version are bound as associated
// data, so a block presented at the wrong index fails authentication.
EncryptedBlock seal_block(const BlockKey& key, PhysBlock phys, ByteSpan plaintext, std::uint64_t version);
Block open_block(const BlockKey& key, PhysBlock phys, const EncryptedBlock& enc);

// Per-physical-block write counters held in trusted memory.
class FreshnessTable {
 public:
  explicit FreshnessTable(std::uint64_t n_blocks) : versions_(n_blocks, 0) {}

  std::uint64_t version(PhysBlock phys) const { return versions_.at(phys); }
  std::uint64_t advance(PhysBlock phys) { return ++versions_.at(phys); }
  void set(PhysBlock phys, std::uint64_t v) { versions_.at(phys) = v; }
  std::uint64_t size() const noexcept { return versions_.size(); }

 private:
  std::vector<std::uint64_t> versions_;
};

class BlockSealer {
 public:
  BlockSealer(ProtectionMode mode, const BlockKey& key, std::uint64_t n_blocks);

  // Fresh nonce per call; advances the freshness counter under crypt_integrity.
  EncryptedBlock seal_block(PhysBlock phys, ByteSpan plaintext);
  // Verifies the tag, then (crypt_integrity) that the version is current.
  Block open_block(PhysBlock phys, const EncryptedBlock& enc) const;

  ProtectionMode mode() const noexcept { return mode_; }
  const BlockKey& key() const noexcept { return key_; }
  FreshnessTable& freshness() noexcept { return freshness_; }
  const FreshnessTable& freshness() const noexcept { return freshness_; }

 private:
  void check_phys(PhysBlock phys) const;

  ProtectionMode mode_;
  BlockKey key_;
  FreshnessTable freshness_;
};

// --- verity ------------------------------------------------------------------

Digest hash_leaf(PhysBlock phys, ByteSpan block);
Digest hash_node(const Digest& left, const Digest& right);

// Binary Merkle tree over per-block leaf hashes. levels[0] holds the leaves,
// levels.back() the single root. A lone node at the end of a level is carried
// up unchanged.
class VerityTree {
 public:
  static VerityTree from_leaves(std::vector<Digest> leaves);

  const Digest& root() const { return levels_.back().front(); }
  std::uint64_t leaf_count() const noexcept { return levels_.front().size(); }
  const std::vector<std::vector<Digest>>& levels() const noexcept { return levels_; }

  Bytes serialize() const;
  static VerityTree deserialize(ByteSpan data);
  static std::size_t serialized_size(std::uint64_t leaves);

 private:
  std::vector<std::vector<Digest>> levels_;
};

VerityTree build_verity(std::span<const Block> blocks);
// True iff the block's hash path through `tree` ends at `trusted_root`.
bool verify_verity(const VerityTree& tree, const Digest& trusted_root, PhysBlock phys, ByteSpan block);

// --- image metadata region -----------------------------------------------------

struct ImageHeader {
  std::uint32_t block_size = kBlockSize;
  std::uint64_t n_blocks = 0;
  ProtectionMode mode = ProtectionMode::plain;
  std::uint8_t aead_id = kAeadXChaCha20Poly1305;
  std::uint8_t hash_id = kHashBlake2b256;
};

inline constexpr std::size_t kHeaderBytes = 20;

struct BlockSlot {
  Nonce nonce{};
  Tag tag{};
};

struct ImageMetadata {
  ImageHeader header;
  std::vector<BlockSlot> slots;
  std::optional<VerityTree> tree;
};

// Region size rounded up to whole blocks.
std::uint64_t metadata_region_bytes(std::uint64_t n_blocks, ProtectionMode mode);
Bytes encode_metadata(const ImageMetadata& meta);
ImageMetadata decode_metadata(ByteSpan region);
// Reads only the fixed-size header (first block of the region).
ImageHeader decode_header(ByteSpan first_block);

// Volume-level protection for every mode: turns plaintext blocks into the
// bytes stored on the host and back, keeping per-block nonce/tag slots in
// trusted memory.
class BlockProtector {
 public:
  BlockProtector(ProtectionMode mode, std::optional<BlockKey> key, std::uint64_t n_blocks);
  // Adopts the on-image slots and versions. For verity images the trusted root
  // must be supplied out of band.
  static BlockProtector from_metadata(ImageMetadata meta, std::optional<BlockKey> key,
                                      std::optional<Digest> trusted_root);

  Block encode(PhysBlock phys, ByteSpan plaintext);
  Block decode(PhysBlock phys, const Block& stored) const;
  // A sealed block of fresh random content (dummy writes, wiping free space).
  Block encode_random(PhysBlock phys);

  // Verity only: fixes the tree over the current image contents. Later writes
  // are rejected.
  Digest seal_verity(std::span<const Block> blocks);
  bool sealed() const noexcept { return verity_root_.has_value(); }
  const std::optional<Digest>& verity_root() const noexcept { return verity_root_; }

  ProtectionMode mode() const noexcept { return mode_; }
  std::uint64_t n_blocks() const noexcept { return slots_.size(); }
  ImageMetadata metadata() const;

 private:
  ProtectionMode mode_;
  std::optional<BlockSealer> sealer_;
  std::vector<BlockSlot> slots_;
  std::optional<VerityTree> tree_;
  std::optional<Digest> verity_root_;
};

}  // namespace oblv
