#include "zipcache/csd_device.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <thread>
#include <vector>

#include <fmt/format.h>

#include "zipcache/errors.hpp"

namespace zipcache {
namespace {

constexpr char kFileMagic[8] = {'Z', 'C', 'S', 'D', 'E', 'M', 'U', '1'};
constexpr uint32_t kFileVersion = 1;
constexpr uint64_t kHeaderBytes = 4096;
constexpr uint64_t kIndexEntryBytes = 16;
constexpr uint32_t kSlotAlign = 64;

uint64_t round_up(uint64_t v, uint64_t a) { return (v + a - 1) / a * a; }

void spin_for(std::chrono::nanoseconds d) {
  if (d.count() <= 0) return;
  auto until = std::chrono::steady_clock::now() + d;
  while (std::chrono::steady_clock::now() < until) {
    std::this_thread::yield();
  }
}

class MemoryFrameStore final : public FrameStore {
 public:
  explicit MemoryFrameStore(uint64_t blocks) : frames_(blocks) {}

  Bytes read(uint64_t lba) override { return frames_[lba]; }
  void write(uint64_t lba, ByteSpan frame) override { frames_[lba].assign(frame.begin(), frame.end()); }
  void erase(uint64_t lba) override { Bytes().swap(frames_[lba]); }
  uint32_t frame_length(uint64_t lba) const override { return static_cast<uint32_t>(frames_[lba].size()); }

 private:
  std::vector<Bytes> frames_;
};

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  ~Fd() { reset(); }
  Fd(Fd&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = o.fd_;
      o.fd_ = -1;
    }
    return *this;
  }
  int get() const { return fd_; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

void pwrite_all(int fd, const void* buf, size_t n, uint64_t off) {
  const auto* p = static_cast<const uint8_t*>(buf);
  while (n > 0) {
    ssize_t w = ::pwrite(fd, p, n, static_cast<off_t>(off));
    if (w < 0) {
      if (errno == EINTR) continue;
      throw IoError(fmt::format("pwrite failed: {}", std::strerror(errno)));
    }
    p += w;
    n -= static_cast<size_t>(w);
    off += static_cast<uint64_t>(w);
  }
}

void pread_all(int fd, void* buf, size_t n, uint64_t off) {
  auto* p = static_cast<uint8_t*>(buf);
  while (n > 0) {
    ssize_t r = ::pread(fd, p, n, static_cast<off_t>(off));
    if (r < 0) {
      if (errno == EINTR) continue;
      throw IoError(fmt::format("pread failed: {}", std::strerror(errno)));
    }
    if (r == 0) throw IoError("unexpected end of backing file");
    p += r;
    n -= static_cast<size_t>(r);
    off += static_cast<uint64_t>(r);
  }
}

// Backing file: a 4KB header, a fixed index of 16-byte entries
// (offset u64, length u32, slot capacity u32) and an append-only frame log.
class FileFrameStore final : public FrameStore {
 public:
  FileFrameStore(const DeviceConfig& cfg) : path_(cfg.backing_path), cfg_(cfg) {
    blocks_ = cfg.block_count();
    log_offset_ = round_up(kHeaderBytes + blocks_ * kIndexEntryBytes, 4096);
    index_.assign(blocks_, Entry{});

    int raw = ::open(path_.c_str(), O_RDWR | O_CREAT, 0644);
    if (raw < 0) throw IoError(fmt::format("cannot open {}: {}", path_, std::strerror(errno)));
    fd_ = Fd(raw);

    struct stat st {};
    if (::fstat(fd_.get(), &st) != 0) throw IoError("fstat failed");
    if (st.st_size == 0) {
      log_end_ = log_offset_;
      write_header();
      std::vector<uint8_t> zeros(blocks_ * kIndexEntryBytes, 0);
      if (!zeros.empty()) pwrite_all(fd_.get(), zeros.data(), zeros.size(), kHeaderBytes);
    } else {
      load();
    }
  }

  Bytes read(uint64_t lba) override {
    const Entry& e = index_[lba];
    if (e.offset == 0) return {};
    Bytes out(e.length);
    pread_all(fd_.get(), out.data(), out.size(), e.offset);
    return out;
  }

  void write(uint64_t lba, ByteSpan frame) override {
    Entry& e = index_[lba];
    const auto len = static_cast<uint32_t>(frame.size());
    if (e.offset != 0 && e.capacity >= len) {
      pwrite_all(fd_.get(), frame.data(), len, e.offset);
      e.length = len;
    } else {
      dead_ += e.capacity;
      Entry fresh{log_end_, len, static_cast<uint32_t>(round_up(len, kSlotAlign))};
      pwrite_all(fd_.get(), frame.data(), len, fresh.offset);
      log_end_ += fresh.capacity;
      write_log_end();
      e = fresh;
    }
    write_entry(lba);
    maybe_compact();
  }

  void erase(uint64_t lba) override {
    Entry& e = index_[lba];
    if (e.offset == 0) return;
    dead_ += e.capacity;
    e = Entry{};
    write_entry(lba);
    maybe_compact();
  }

  uint32_t frame_length(uint64_t lba) const override { return index_[lba].length; }

  void sync() override { ::fsync(fd_.get()); }

  uint64_t dead_bytes() const { return dead_; }

  void compact() {
    const std::string tmp = path_ + ".compact";
    ::unlink(tmp.c_str());
    {
      FileFrameStore fresh(cfg_with_path(tmp));
      for (uint64_t lba = 0; lba < blocks_; ++lba) {
        if (index_[lba].offset == 0) continue;
        Bytes f = read(lba);
        fresh.write(lba, f);
      }
      fresh.sync();
    }
    if (::rename(tmp.c_str(), path_.c_str()) != 0) {
      throw IoError(fmt::format("rename failed: {}", std::strerror(errno)));
    }
    int raw = ::open(path_.c_str(), O_RDWR);
    if (raw < 0) throw IoError("cannot reopen compacted file");
    fd_ = Fd(raw);
    load();
  }

 private:
  struct Entry {
    uint64_t offset = 0;
    uint32_t length = 0;
    uint32_t capacity = 0;
  };

  // Online compaction once dead slots dominate a sizeable log.
  void maybe_compact() {
    const uint64_t used = log_end_ - log_offset_;
    if (dead_ > (64ULL << 20) && dead_ * 2 > used) compact();
  }

  DeviceConfig cfg_with_path(const std::string& p) const {
    DeviceConfig c = cfg_;
    c.backing_path = p;
    return c;
  }

  void write_header() {
    std::vector<uint8_t> h(kHeaderBytes, 0);
    std::memcpy(h.data(), kFileMagic, 8);
    put_u32(&h[8], kFileVersion);
    put_u64(&h[16], cfg_.logical_capacity);
    put_u64(&h[24], cfg_.physical_capacity);
    put_u32(&h[32], cfg_.expansion_factor);
    put_u32(&h[36], static_cast<uint32_t>(kFrameMetadataBytes));
    put_u64(&h[40], blocks_);
    put_u64(&h[48], kHeaderBytes);
    put_u64(&h[56], log_offset_);
    put_u64(&h[64], log_end_);
    pwrite_all(fd_.get(), h.data(), h.size(), 0);
  }

  void write_log_end() {
    uint8_t b[8];
    put_u64(b, log_end_);
    pwrite_all(fd_.get(), b, 8, 64);
  }

  void write_entry(uint64_t lba) {
    uint8_t b[kIndexEntryBytes];
    put_u64(b, index_[lba].offset);
    put_u32(b + 8, index_[lba].length);
    put_u32(b + 12, index_[lba].capacity);
    pwrite_all(fd_.get(), b, sizeof b, kHeaderBytes + lba * kIndexEntryBytes);
  }

  void load() {
    std::vector<uint8_t> h(kHeaderBytes);
    pread_all(fd_.get(), h.data(), h.size(), 0);
    if (std::memcmp(h.data(), kFileMagic, 8) != 0) throw IntegrityError("backing file has bad magic");
    if (get_u32(&h[8]) != kFileVersion) throw IntegrityError("unsupported backing file version");
    if (get_u64(&h[16]) != cfg_.logical_capacity || get_u64(&h[24]) != cfg_.physical_capacity) {
      throw ConfigError("backing file was created with a different geometry");
    }
    if (get_u64(&h[40]) != blocks_ || get_u64(&h[56]) != log_offset_) {
      throw IntegrityError("backing file header inconsistent");
    }
    log_end_ = get_u64(&h[64]);

    std::vector<uint8_t> raw(blocks_ * kIndexEntryBytes);
    if (!raw.empty()) pread_all(fd_.get(), raw.data(), raw.size(), kHeaderBytes);
    uint64_t live = 0;
    for (uint64_t i = 0; i < blocks_; ++i) {
      const uint8_t* p = &raw[i * kIndexEntryBytes];
      index_[i] = Entry{get_u64(p), get_u32(p + 8), get_u32(p + 12)};
      if (index_[i].offset != 0) {
        if (index_[i].offset < log_offset_ || index_[i].offset + index_[i].length > log_end_ ||
            index_[i].length > index_[i].capacity) {
          throw IntegrityError("backing file index entry out of bounds");
        }
        live += index_[i].capacity;
      }
    }
    dead_ = log_end_ - log_offset_ - live;
  }

  std::string path_;
  DeviceConfig cfg_;
  Fd fd_;
  uint64_t blocks_ = 0;
  uint64_t log_offset_ = 0;
  uint64_t log_end_ = 0;
  uint64_t dead_ = 0;
  std::vector<Entry> index_;
};

}  // namespace

DeviceConfig DeviceConfig::with_physical(uint64_t physical, uint32_t factor, std::string path) {
  DeviceConfig c;
  c.physical_capacity = physical;
  c.expansion_factor = factor;
  c.logical_capacity = physical * factor;
  c.backing_path = std::move(path);
  return c;
}

void DeviceConfig::validate() const {
  if (logical_capacity == 0 || physical_capacity == 0 || expansion_factor == 0) {
    throw ConfigError("device capacities must be positive");
  }
  if (logical_capacity % kBlockSize != 0) throw ConfigError("logical capacity must be a multiple of 4KB");
  if (logical_capacity != physical_capacity * expansion_factor) {
    throw ConfigError("logical capacity must equal physical capacity times the expansion factor");
  }
}

std::string DeviceStats::csv_header() { return "v_host,v_nand,reads,writes"; }

std::string DeviceStats::csv_row() const { return fmt::format("{},{},{},{}", v_host, v_nand, reads, writes); }

CsdDevice::CsdDevice(DeviceConfig config) : config_(std::move(config)) {
  config_.validate();
  codec_ = config_.codec != nullptr ? config_.codec : &lz77_codec();
  if (config_.backing_path.empty()) {
    store_ = std::make_unique<MemoryFrameStore>(config_.block_count());
  } else {
    store_ = std::make_unique<FileFrameStore>(config_);
    for (uint64_t lba = 0; lba < config_.block_count(); ++lba) {
      uint32_t len = store_->frame_length(lba);
      if (len != 0) physical_used_ += len + kFrameMetadataBytes;
    }
  }
}

CsdDevice::~CsdDevice() = default;

void CsdDevice::check_lba(uint64_t lba) const {
  if (lba >= config_.block_count()) {
    throw ContractViolation(fmt::format("lba {} out of range ({} blocks)", lba, config_.block_count()));
  }
}

void CsdDevice::write_block(uint64_t lba, ByteSpan data) {
  check_lba(lba);
  if (data.size() != kBlockSize) throw ContractViolation("write_block needs exactly 4096 bytes");
  CompressedPage frame = compress(data, kBlockSize, *codec_);
  const uint64_t charged = frame.size() + kFrameMetadataBytes;
  {
    std::lock_guard lock(mu_);
    const uint32_t old_len = store_->frame_length(lba);
    const uint64_t released = old_len == 0 ? 0 : old_len + kFrameMetadataBytes;
    if (physical_used_ - released + charged > config_.physical_capacity) {
      throw CapacityError(fmt::format("physical capacity exhausted writing lba {}", lba));
    }
    store_->write(lba, frame.frame());
    physical_used_ = physical_used_ - released + charged;
    stats_.v_host += kBlockSize;
    stats_.v_nand += charged;
    ++stats_.writes;
    if (observer_) observer_(lba, data);
  }
  spin_for(config_.write_delay);
}

void CsdDevice::read_block_into(uint64_t lba, MutableByteSpan out) {
  check_lba(lba);
  if (out.size() < kBlockSize) throw ContractViolation("read buffer smaller than a block");
  Bytes raw;
  {
    std::lock_guard lock(mu_);
    raw = store_->read(lba);
    ++stats_.reads;
  }
  if (raw.empty()) {
    std::memset(out.data(), 0, kBlockSize);
  } else {
    CompressedPage frame = CompressedPage::from_frame(std::move(raw));
    if (frame.orig_len() != kBlockSize) throw IntegrityError("stored frame is not a 4KB block");
    decompress_prefix_into(frame, frame.subpage_count(), out);
  }
  spin_for(config_.read_delay);
}

Bytes CsdDevice::read_block(uint64_t lba) {
  Bytes out(kBlockSize);
  read_block_into(lba, out);
  return out;
}

void CsdDevice::trim(uint64_t lba) {
  check_lba(lba);
  std::lock_guard lock(mu_);
  const uint32_t old_len = store_->frame_length(lba);
  if (old_len != 0) {
    store_->erase(lba);
    physical_used_ -= old_len + kFrameMetadataBytes;
  }
  ++stats_.trims;
}

DeviceStats CsdDevice::stats() const {
  std::lock_guard lock(mu_);
  return stats_;
}

uint64_t CsdDevice::physical_used() const {
  std::lock_guard lock(mu_);
  return physical_used_;
}

void CsdDevice::compact() {
  std::lock_guard lock(mu_);
  if (auto* f = dynamic_cast<FileFrameStore*>(store_.get())) f->compact();
}

void CsdDevice::sync() {
  std::lock_guard lock(mu_);
  store_->sync();
}

void CsdDevice::set_write_observer(WriteObserver observer) {
  std::lock_guard lock(mu_);
  observer_ = std::move(observer);
}

}  // namespace zipcache
