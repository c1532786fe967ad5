#include "oblv/block_crypto.hpp"

#include <sodium.h>

#include <cstring>

#include "oblv/error.hpp"
#include "oblv/rng.hpp"
#include "sodium_init.hpp"

namespace oblv {

namespace {

constexpr char kMagic[5] = {'O', 'B', 'L', 'V', '1'};
constexpr std::size_t kAdBytes = 20;

std::array<std::uint8_t, kAdBytes> associated_data(PhysBlock phys, std::uint64_t version) {
  std::array<std::uint8_t, kAdBytes> ad{'O', 'B', 'L', 'V'};
  store_le(ad.data() + 4, phys, 8);
  store_le(ad.data() + 12, version, 8);
  return ad;
}

}  // namespace

std::string_view mode_name(ProtectionMode mode) noexcept {
  switch (mode) {
    case ProtectionMode::plain: return "plain";
    case ProtectionMode::verity: return "verity";
    case ProtectionMode::crypt: return "crypt";
    case ProtectionMode::crypt_integrity: return "crypt+integrity";
  }
  return "unknown";
}

std::optional<ProtectionMode> parse_mode(std::string_view name) noexcept {
  for (auto m : {ProtectionMode::plain, ProtectionMode::verity, ProtectionMode::crypt,
                 ProtectionMode::crypt_integrity}) {
    if (mode_name(m) == name) return m;
  }
  if (name == "crypt-integrity" || name == "integrity") return ProtectionMode::crypt_integrity;
  return std::nullopt;
}

BlockKey BlockKey::generate() {
  detail::ensure_sodium();
  BlockKey k;
  crypto_aead_xchacha20poly1305_ietf_keygen(k.bytes.data());
  return k;
}

BlockKey BlockKey::from_hex(std::string_view hex) {
  auto raw = oblv::from_hex(hex);
  if (raw.size() != 32) throw Error(Errc::format, "block key must be 32 bytes of hex");
  BlockKey k;
  std::memcpy(k.bytes.data(), raw.data(), 32);
  return k;
}

Digest digest_from_hex(std::string_view hex) {
  auto raw = from_hex(hex);
  if (raw.size() != 32) throw Error(Errc::format, "digest must be 32 bytes of hex");
  Digest d;
  std::memcpy(d.data(), raw.data(), 32);
  return d;
}

std::uint64_t nonce_version(const Nonce& nonce) noexcept { return load_le(nonce.data() + 16, 8); }

EncryptedBlock seal_block(const BlockKey& key, PhysBlock phys, ByteSpan plaintext, std::uint64_t version) {
  detail::ensure_sodium();
  if (plaintext.size() != kBlockSize) throw Error(Errc::size, "plaintext block must be 4096 bytes");
  EncryptedBlock out;
  randombytes_buf(out.nonce.data(), 16);
  store_le(out.nonce.data() + 16, version, 8);
  auto ad = associated_data(phys, version);
  crypto_aead_xchacha20poly1305_ietf_encrypt_detached(out.ciphertext.data(), out.tag.data(), nullptr,
                                                      plaintext.data(), plaintext.size(), ad.data(), ad.size(),
                                                      nullptr, out.nonce.data(), key.bytes.data());
  return out;
}

Block open_block(const BlockKey& key, PhysBlock phys, const EncryptedBlock& enc) {
  detail::ensure_sodium();
  Block out;
  auto ad = associated_data(phys, nonce_version(enc.nonce));
  if (crypto_aead_xchacha20poly1305_ietf_decrypt_detached(out.data(), nullptr, enc.ciphertext.data(),
                                                          enc.ciphertext.size(), enc.tag.data(), ad.data(),
                                                          ad.size(), enc.nonce.data(), key.bytes.data()) != 0) {
    throw Error(Errc::integrity, "block " + std::to_string(phys) + " failed authentication");
  }
  return out;
}

// --- BlockSealer -------------------------------------------------------------

BlockSealer::BlockSealer(ProtectionMode mode, const BlockKey& key, std::uint64_t n_blocks)
    : mode_(mode), key_(key), freshness_(n_blocks) {}

void BlockSealer::check_phys(PhysBlock phys) const {
  if (phys >= freshness_.size()) throw Error(Errc::range, "block index " + std::to_string(phys));
}

EncryptedBlock BlockSealer::seal_block(PhysBlock phys, ByteSpan plaintext) {
  if (!is_encrypted(mode_)) throw Error(Errc::mode, std::string("cannot seal in mode ") + std::string(mode_name(mode_)));
  check_phys(phys);
  std::uint64_t version = 0;
  if (mode_ == ProtectionMode::crypt_integrity) version = freshness_.advance(phys);
  return oblv::seal_block(key_, phys, plaintext, version);
}

Block BlockSealer::open_block(PhysBlock phys, const EncryptedBlock& enc) const {
  if (!is_encrypted(mode_)) throw Error(Errc::mode, std::string("cannot open in mode ") + std::string(mode_name(mode_)));
  check_phys(phys);
  Block plain = oblv::open_block(key_, phys, enc);
  if (mode_ == ProtectionMode::crypt_integrity) {
    auto v = nonce_version(enc.nonce);
    if (v != freshness_.version(phys)) {
      throw Error(Errc::replay, "block " + std::to_string(phys) + " version " + std::to_string(v) +
                                    " is not current (" + std::to_string(freshness_.version(phys)) + ")");
    }
  }
  return plain;
}

// --- verity ------------------------------------------------------------------

Digest hash_leaf(PhysBlock phys, ByteSpan block) {
  detail::ensure_sodium();
  std::uint8_t prefix[9] = {0x00};
  store_le(prefix + 1, phys, 8);
  Digest d;
  crypto_generichash_state st;
  crypto_generichash_init(&st, nullptr, 0, d.size());
  crypto_generichash_update(&st, prefix, sizeof(prefix));
  crypto_generichash_update(&st, block.data(), block.size());
  crypto_generichash_final(&st, d.data(), d.size());
  return d;
}

Digest hash_node(const Digest& left, const Digest& right) {
  std::uint8_t buf[1 + 64];
  buf[0] = 0x01;
  std::memcpy(buf + 1, left.data(), 32);
  std::memcpy(buf + 33, right.data(), 32);
  Digest d;
  crypto_generichash(d.data(), d.size(), buf, sizeof(buf), nullptr, 0);
  return d;
}

VerityTree VerityTree::from_leaves(std::vector<Digest> leaves) {
  if (leaves.empty()) throw Error(Errc::size, "verity tree needs at least one block");
  VerityTree t;
  t.levels_.push_back(std::move(leaves));
  while (t.levels_.back().size() > 1) {
    const auto& below = t.levels_.back();
    std::vector<Digest> up;
    up.reserve((below.size() + 1) / 2);
    for (std::size_t i = 0; i < below.size(); i += 2) {
      up.push_back(i + 1 < below.size() ? hash_node(below[i], below[i + 1]) : below[i]);
    }
    t.levels_.push_back(std::move(up));
  }
  return t;
}

std::size_t VerityTree::serialized_size(std::uint64_t leaves) {
  std::size_t total = 4;
  std::uint64_t n = leaves;
  while (true) {
    total += 8 + 32 * n;
    if (n <= 1) break;
    n = (n + 1) / 2;
  }
  return total;
}

Bytes VerityTree::serialize() const {
  Bytes out(serialized_size(leaf_count()));
  std::uint8_t* p = out.data();
  store_le(p, levels_.size(), 4);
  p += 4;
  for (const auto& level : levels_) {
    store_le(p, level.size(), 8);
    p += 8;
    for (const auto& d : level) {
      std::memcpy(p, d.data(), 32);
      p += 32;
    }
  }
  return out;
}

VerityTree VerityTree::deserialize(ByteSpan data) {
  auto need = [&](std::size_t pos, std::size_t n) {
    if (pos + n > data.size()) throw Error(Errc::format, "truncated verity tree");
  };
  std::size_t pos = 0;
  need(pos, 4);
  auto n_levels = load_le(data.data(), 4);
  pos += 4;
  if (n_levels == 0 || n_levels > 64) throw Error(Errc::format, "bad verity level count");
  VerityTree t;
  for (std::uint64_t l = 0; l < n_levels; ++l) {
    need(pos, 8);
    auto count = load_le(data.data() + pos, 8);
    pos += 8;
    if (count == 0 || count > data.size() / 32) throw Error(Errc::format, "bad verity level size");
    need(pos, count * 32);
    std::vector<Digest> level(count);
    for (auto& d : level) {
      std::memcpy(d.data(), data.data() + pos, 32);
      pos += 32;
    }
    t.levels_.push_back(std::move(level));
  }
  for (std::size_t l = 1; l < t.levels_.size(); ++l) {
    if (t.levels_[l].size() != (t.levels_[l - 1].size() + 1) / 2) throw Error(Errc::format, "inconsistent verity shape");
  }
  if (t.levels_.back().size() != 1) throw Error(Errc::format, "verity tree has no single root");
  return t;
}

VerityTree build_verity(std::span<const Block> blocks) {
  std::vector<Digest> leaves;
  leaves.reserve(blocks.size());
  for (std::size_t i = 0; i < blocks.size(); ++i) leaves.push_back(hash_leaf(i, blocks[i]));
  return VerityTree::from_leaves(std::move(leaves));
}

bool verify_verity(const VerityTree& tree, const Digest& trusted_root, PhysBlock phys, ByteSpan block) {
  if (phys >= tree.leaf_count()) return false;
  Digest h = hash_leaf(phys, block);
  std::uint64_t idx = phys;
  const auto& levels = tree.levels();
  for (std::size_t l = 0; l + 1 < levels.size(); ++l) {
    const auto& level = levels[l];
    std::uint64_t sibling = idx ^ 1;
    if (sibling < level.size()) {
      h = (idx & 1) ? hash_node(level[sibling], h) : hash_node(h, level[sibling]);
    }
    idx >>= 1;
  }
  return sodium_memcmp(h.data(), trusted_root.data(), h.size()) == 0;
}

// --- metadata region -----------------------------------------------------------

std::uint64_t metadata_region_bytes(std::uint64_t n_blocks, ProtectionMode mode) {
  std::uint64_t raw = kHeaderBytes + n_blocks * kSlotBytes;
  if (mode == ProtectionMode::verity) raw += VerityTree::serialized_size(n_blocks);
  return (raw + kBlockSize - 1) / kBlockSize * kBlockSize;
}

Bytes encode_metadata(const ImageMetadata& meta) {
  const auto& h = meta.header;
  if (meta.slots.size() != h.n_blocks) throw Error(Errc::size, "slot count does not match block count");
  Bytes out(metadata_region_bytes(h.n_blocks, h.mode), 0);
  std::memcpy(out.data(), kMagic, 5);
  store_le(out.data() + 5, h.block_size, 4);
  store_le(out.data() + 9, h.n_blocks, 8);
  out[17] = static_cast<std::uint8_t>(h.mode);
  out[18] = h.aead_id;
  out[19] = h.hash_id;
  std::uint8_t* p = out.data() + kHeaderBytes;
  for (const auto& s : meta.slots) {
    std::memcpy(p, s.nonce.data(), kNonceBytes);
    std::memcpy(p + kNonceBytes, s.tag.data(), kTagBytes);
    p += kSlotBytes;
  }
  if (h.mode == ProtectionMode::verity) {
    if (!meta.tree) throw Error(Errc::format, "verity image without a tree");
    auto tree = meta.tree->serialize();
    std::memcpy(p, tree.data(), tree.size());
  }
  return out;
}

ImageHeader decode_header(ByteSpan first_block) {
  if (first_block.size() < kHeaderBytes || std::memcmp(first_block.data(), kMagic, 5) != 0) {
    throw Error(Errc::format, "not an OBLV1 image");
  }
  ImageHeader h;
  h.block_size = static_cast<std::uint32_t>(load_le(first_block.data() + 5, 4));
  h.n_blocks = load_le(first_block.data() + 9, 8);
  if (first_block[17] > 3) throw Error(Errc::format, "unknown protection mode");
  h.mode = static_cast<ProtectionMode>(first_block[17]);
  h.aead_id = first_block[18];
  h.hash_id = first_block[19];
  if (h.block_size != kBlockSize) throw Error(Errc::format, "unsupported block size");
  if (h.aead_id != kAeadXChaCha20Poly1305 || h.hash_id != kHashBlake2b256) {
    throw Error(Errc::format, "unsupported algorithm identifiers");
  }
  return h;
}

ImageMetadata decode_metadata(ByteSpan region) {
  ImageMetadata meta;
  meta.header = decode_header(region);
  const auto n = meta.header.n_blocks;
  if (region.size() < metadata_region_bytes(n, meta.header.mode)) throw Error(Errc::format, "truncated metadata region");
  meta.slots.resize(n);
  const std::uint8_t* p = region.data() + kHeaderBytes;
  for (auto& s : meta.slots) {
    std::memcpy(s.nonce.data(), p, kNonceBytes);
    std::memcpy(s.tag.data(), p + kNonceBytes, kTagBytes);
    p += kSlotBytes;
  }
  if (meta.header.mode == ProtectionMode::verity) {
    auto used = static_cast<std::size_t>(p - region.data());
    meta.tree = VerityTree::deserialize(region.subspan(used));
    if (meta.tree->leaf_count() != n) throw Error(Errc::format, "verity tree size mismatch");
  }
  return meta;
}

// --- BlockProtector ------------------------------------------------------------

BlockProtector::BlockProtector(ProtectionMode mode, std::optional<BlockKey> key, std::uint64_t n_blocks)
    : mode_(mode), slots_(n_blocks) {
  if (is_encrypted(mode)) {
    if (!key) throw Error(Errc::parameter, "encrypted modes need a key");
    sealer_.emplace(mode, *key, n_blocks);
  }
}

BlockProtector BlockProtector::from_metadata(ImageMetadata meta, std::optional<BlockKey> key,
                                             std::optional<Digest> trusted_root) {
  BlockProtector p(meta.header.mode, std::move(key), meta.header.n_blocks);
  p.slots_ = std::move(meta.slots);
  if (p.sealer_ && p.mode_ == ProtectionMode::crypt_integrity) {
    // Versions are adopted from the image at mount; durable freshness across
    // restarts is not provided.
    for (PhysBlock i = 0; i < p.slots_.size(); ++i) p.sealer_->freshness().set(i, nonce_version(p.slots_[i].nonce));
  }
  if (p.mode_ == ProtectionMode::verity) {
    if (!trusted_root) throw Error(Errc::parameter, "verity image needs the trusted root hash");
    p.tree_ = std::move(meta.tree);
    p.verity_root_ = trusted_root;
  }
  return p;
}

Block BlockProtector::encode(PhysBlock phys, ByteSpan plaintext) {
  if (phys >= slots_.size()) throw Error(Errc::range, "block index " + std::to_string(phys));
  if (plaintext.size() != kBlockSize) throw Error(Errc::size, "plaintext block must be 4096 bytes");
  switch (mode_) {
    case ProtectionMode::verity:
      if (sealed()) throw Error(Errc::mode, "verity image is read-only");
      [[fallthrough]];
    case ProtectionMode::plain: {
      Block out;
      std::memcpy(out.data(), plaintext.data(), kBlockSize);
      return out;
    }
    case ProtectionMode::crypt:
    case ProtectionMode::crypt_integrity: {
      auto enc = sealer_->seal_block(phys, plaintext);
      slots_[phys] = BlockSlot{enc.nonce, enc.tag};
      return enc.ciphertext;
    }
  }
  throw Error(Errc::mode, "unknown mode");
}

Block BlockProtector::decode(PhysBlock phys, const Block& stored) const {
  if (phys >= slots_.size()) throw Error(Errc::range, "block index " + std::to_string(phys));
  switch (mode_) {
    case ProtectionMode::plain:
      return stored;
    case ProtectionMode::verity:
      if (sealed() && !verify_verity(*tree_, *verity_root_, phys, stored)) {
        throw Error(Errc::integrity, "block " + std::to_string(phys) + " does not match the verity root");
      }
      return stored;
    case ProtectionMode::crypt:
    case ProtectionMode::crypt_integrity:
      return sealer_->open_block(phys, EncryptedBlock{slots_[phys].nonce, stored, slots_[phys].tag});
  }
  throw Error(Errc::mode, "unknown mode");
}

Block BlockProtector::encode_random(PhysBlock phys) {
  detail::ensure_sodium();
  Block plain;
  randombytes_buf(plain.data(), plain.size());
  return encode(phys, plain);
}

Digest BlockProtector::seal_verity(std::span<const Block> blocks) {
  if (mode_ != ProtectionMode::verity) throw Error(Errc::mode, "seal_verity needs a verity image");
  if (blocks.size() != slots_.size()) throw Error(Errc::size, "verity needs every data block");
  tree_ = build_verity(blocks);
  verity_root_ = tree_->root();
  return *verity_root_;
}

ImageMetadata BlockProtector::metadata() const {
  ImageMetadata m;
  m.header.n_blocks = slots_.size();
  m.header.mode = mode_;
  m.slots = slots_;
  m.tree = tree_;
  return m;
}

}  // namespace oblv
