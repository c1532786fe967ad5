#include "oblv/volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "oblv/error.hpp"

namespace oblv {

IoHandle MemoryBlockIo::submit(IoRequest req) {
  auto handle = std::make_shared<IoCompletion>();
  if (req.phys >= blocks_.size()) throw Error(Errc::bounds, "block " + std::to_string(req.phys));
  if (req.kind == IoKind::read) {
    handle->data = blocks_[req.phys];
  } else {
    blocks_[req.phys] = req.payload;
  }
  handle->done = true;
  return handle;
}

std::uint64_t image_bytes(std::uint64_t n_blocks, ProtectionMode mode) {
  return n_blocks * kBlockSize + metadata_region_bytes(n_blocks, mode);
}

CreatedImage create_image(const ImageSpec& spec, std::span<const ImageFile> files, Rng& rng,
                          std::optional<BlockKey> key) {
  const auto n = spec.n_blocks;
  auto fs = FileSystem::format(n, spec.fs, rng.fork("layout"));

  std::vector<Block> plain(n);
  for (auto& b : plain) b.fill(0);
  {
    MemoryBlockIo mem(plain);
    BlockProtector passthrough(ProtectionMode::plain, std::nullopt, n);
    PageCache staging(n, mem, passthrough, [&fs](FileId f, std::uint32_t l) { return fs.physical(f, l); });
    fs.attach(&staging);
    for (const auto& file : files) {
      auto fd = fs.create(file.name);
      fs.file_write(fd, 0, file.data);
    }
    staging.flush(true);
    fs.attach(nullptr);
  }

  auto meta = fs.serialize_metadata();
  std::copy(meta.begin(), meta.end(), plain.begin());
  // Free space and padding files get random content so that live blocks
  // cannot be told apart from unused ones.
  auto filler = Rng::os();
  for (PhysBlock b = fs.layout().data_start; b < n; ++b) {
    if (!fs.is_allocated(b)) filler.fill(plain[b]);
  }
  for (auto b : fs.blocks_of_kind(FileKind::dummy_pad)) filler.fill(plain[b]);

  CreatedImage out;
  out.layout = fs.layout();
  if (is_encrypted(spec.mode)) out.key = key ? *key : BlockKey::generate();
  BlockProtector protector(spec.mode, out.key, n);
  out.image.resize(image_bytes(n, spec.mode));
  for (PhysBlock b = 0; b < n; ++b) {
    auto stored = protector.encode(b, plain[b]);
    std::memcpy(out.image.data() + b * kBlockSize, stored.data(), kBlockSize);
  }
  if (spec.mode == ProtectionMode::verity) out.verity_root = protector.seal_verity(plain);
  auto region = encode_metadata(protector.metadata());
  std::memcpy(out.image.data() + n * kBlockSize, region.data(), region.size());
  return out;
}

namespace {

// The metadata region follows the data blocks; its size depends on the block
// count and mode, so the header is found by solving for n.
std::optional<std::uint64_t> candidate_blocks(std::uint64_t image_size, ProtectionMode mode) {
  std::uint64_t lo = 1, hi = image_size / kBlockSize;
  while (lo <= hi) {
    const auto mid = lo + (hi - lo) / 2;
    const auto size = image_bytes(mid, mode);
    if (size == image_size) return mid;
    if (size < image_size) {
      lo = mid + 1;
    } else {
      hi = mid - 1;
    }
  }
  return std::nullopt;
}

ImageMetadata read_metadata(HostInterface& host) {
  const auto size = host.image_size();
  for (auto mode : {ProtectionMode::plain, ProtectionMode::verity, ProtectionMode::crypt,
                    ProtectionMode::crypt_integrity}) {
    auto n = candidate_blocks(size, mode);
    if (!n) continue;
    auto first = host.disk_read(*n * kBlockSize);
    ImageHeader header;
    try {
      header = decode_header(first);
    } catch (const Error&) {
      continue;
    }
    if (header.n_blocks != *n || header.mode != mode) continue;
    const auto region_bytes = metadata_region_bytes(*n, mode);
    Bytes region(region_bytes);
    std::memcpy(region.data(), first.data(), kBlockSize);
    for (std::uint64_t off = kBlockSize; off < region_bytes; off += kBlockSize) {
      auto blk = host.disk_read(*n * kBlockSize + off);
      std::memcpy(region.data() + off, blk.data(), kBlockSize);
    }
    return decode_metadata(region);
  }
  throw Error(Errc::format, "no image metadata found");
}

}  // namespace

Volume::Volume(HostInterface& host, VolumeOptions options, Rng rng)
    : host_(host), options_(std::move(options)), rng_(std::move(rng)), payload_rng_(rng_.fork("dummy-payload")) {}

Volume::~Volume() = default;

std::unique_ptr<Volume> Volume::mount(HostInterface& host, VolumeOptions options, Rng rng) {
  std::unique_ptr<Volume> v(new Volume(host, std::move(options), std::move(rng)));
  auto meta = read_metadata(host);
  if (v->options_.expect_mode && *v->options_.expect_mode != meta.header.mode) {
    throw Error(Errc::mode, "image is " + std::string(mode_name(meta.header.mode)) + ", expected " +
                                std::string(mode_name(*v->options_.expect_mode)));
  }
  v->n_blocks_ = meta.header.n_blocks;
  v->protector_ = std::make_unique<BlockProtector>(
      BlockProtector::from_metadata(std::move(meta), v->options_.key, v->options_.verity_root));

  std::vector<Block> fs_meta;
  fs_meta.push_back(v->protector_->decode(0, host.disk_read(0)));
  const auto layout = FileSystem::read_layout(fs_meta[0]);
  if (layout.n_blocks != v->n_blocks_) throw Error(Errc::format, "file system size does not match image");
  for (PhysBlock b = 1; b < layout.data_start; ++b) {
    fs_meta.push_back(v->protector_->decode(b, host.disk_read(b * kBlockSize)));
  }
  v->fs_ = std::make_unique<FileSystem>(FileSystem::load(fs_meta, v->rng_.fork("alloc")));
  if (v->protector_->mode() == ProtectionMode::verity) v->fs_->set_read_only(true);
  v->index_pad_files();

  if (v->options_.path == IoPath::oblivious) {
    auto sched = std::make_unique<ObliviousScheduler>(host, v->options_.rounds, static_cast<DummyTargets&>(*v), v->rng_.fork("dummies"),
                                                      v->options_.clock);
    v->scheduler_ = sched.get();
    v->io_ = std::move(sched);
  } else {
    v->io_ = std::make_unique<DirectBlockIo>(host, v->options_.passthrough_latency_ns);
  }

  std::size_t k = v->options_.cache_pages;
  if (k == 0) k = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(v->n_blocks_))));
  FileSystem* fs = v->fs_.get();
  v->cache_ = std::make_unique<PageCache>(k, *v->io_, *v->protector_,
                                          [fs](FileId f, std::uint32_t l) { return fs->physical(f, l); });
  Volume* self = v.get();
  if (v->options_.path == IoPath::oblivious && !fs->read_only()) {
    fs->attach(v->cache_.get(), [self] { self->on_shuffle_required(); });
  } else {
    fs->attach(v->cache_.get());
  }
  return v;
}

void Volume::index_pad_files() {
  pad_files_.clear();
  pad_total_ = 0;
  for (auto fd : fs_->files_of_kind(FileKind::dummy_pad)) {
    auto n = fs_->num_blocks(fd);
    if (n == 0) continue;
    pad_files_.emplace_back(fd, n);
    pad_total_ += n;
  }
}

PhysBlock Volume::dummy_read_target(Rng& rng) {
  const auto& l = fs_->layout();
  if (options_.dummy_reads == DummyReadDomain::data_area || pad_total_ == 0) {
    return l.data_start + rng.uniform(l.n_blocks - l.data_start);
  }
  return dummy_write_target(rng);
}

PhysBlock Volume::dummy_write_target(Rng& rng) {
  if (pad_total_ == 0) throw Error(Errc::space, "no dummy-pad blocks to pad rounds with");
  auto i = rng.uniform(pad_total_);
  for (const auto& [fd, n] : pad_files_) {
    if (i < n) return fs_->physical(fd, static_cast<std::uint32_t>(i));
    i -= n;
  }
  throw std::logic_error("pad index out of range");
}

Block Volume::dummy_write_payload(PhysBlock phys) {
  if (protector_->mode() == ProtectionMode::verity) {
    // Padding blocks of a verity image are never verified.
    Block junk;
    payload_rng_.fill(junk);
    return junk;
  }
  return protector_->encode_random(phys);
}

FileId Volume::open(const std::string& name) const {
  auto fd = fs_->lookup(name);
  if (!fd || fs_->inode(*fd).kind != FileKind::regular) throw Error(Errc::descriptor, "no such file: " + name);
  return *fd;
}

Bytes Volume::read(FileId fd, std::uint64_t offset, std::size_t len) {
  maybe_eager_shuffle();
  return fs_->file_read(fd, offset, len);
}

std::size_t Volume::write(FileId fd, std::uint64_t offset, ByteSpan data) {
  maybe_eager_shuffle();
  return fs_->file_write(fd, offset, data);
}

void Volume::maybe_eager_shuffle() {
  if (options_.eager_shuffle_after && options_.path == IoPath::oblivious && !fs_->read_only() &&
      cache_->epoch_read_count() >= *options_.eager_shuffle_after) {
    shuffle();
  }
}

std::vector<FileId> Volume::shuffle_set() const {
  std::vector<FileId> files;
  if (options_.shuffle_only.empty()) {
    files = fs_->files_of_kind(FileKind::regular);
  } else {
    for (const auto& name : options_.shuffle_only) files.push_back(open(name));
  }
  if (options_.shuffle_dummy_pad) {
    for (const auto& [fd, n] : pad_files_) files.push_back(fd);
  }
  return files;
}

void Volume::on_shuffle_required() {
  if (shuffling_) throw std::logic_error("shuffle re-entered");
  shuffle();
}

ShuffleReport Volume::shuffle() {
  shuffling_ = true;
  try {
    auto files = shuffle_set();
    auto report = oblivious_shuffle(*fs_, files, *cache_, *io_, *protector_, rng_);
    ++shuffles_;
    shuffling_ = false;
    return report;
  } catch (...) {
    shuffling_ = false;
    throw;
  }
}

void Volume::idle(std::uint64_t rounds) {
  if (scheduler_ == nullptr) throw Error(Errc::mode, "idle rounds need the oblivious path");
  scheduler_->run_rounds(rounds);
}

void Volume::persist() {
  if (fs_->read_only()) return;
  cache_->flush(false);
  io_->drain();
  auto meta = fs_->serialize_metadata();
  for (PhysBlock b = 0; b < meta.size(); ++b) {
    io_->submit(IoRequest{IoKind::write, b, protector_->encode(b, meta[b])});
  }
  io_->drain();
  auto region = encode_metadata(protector_->metadata());
  for (std::uint64_t off = 0; off < region.size(); off += kBlockSize) {
    IoRequest req{IoKind::write, n_blocks_ + off / kBlockSize, {}};
    std::memcpy(req.payload.data(), region.data() + off, kBlockSize);
    io_->submit(std::move(req));
  }
  io_->drain();
}

VolumeStats Volume::stats() const {
  VolumeStats s;
  if (scheduler_) {
    const auto& st = scheduler_->stats();
    s.rounds = st.rounds;
    s.real_reads = st.real_reads;
    s.dummy_reads = st.dummy_reads;
    s.real_writes = st.real_writes;
    s.dummy_writes = st.dummy_writes;
  } else {
    const auto* direct = static_cast<const DirectBlockIo*>(io_.get());
    s.real_reads = direct->reads();
    s.real_writes = direct->writes();
  }
  s.shuffles = shuffles_;
  s.cache_hits = cache_->stats().hits;
  s.cache_misses = cache_->stats().misses;
  return s;
}

}  // namespace oblv
