#pragma once

// BT_LO: in-memory index of objects larger than the medium threshold. Each
// object occupies a run of consecutive blocks in its own LBA region; the tail
// of the last block is zero so the device compresses it away.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "zipcache/btree_index.hpp"
#include "zipcache/bytes.hpp"
#include "zipcache/csd_device.hpp"

namespace zipcache {

struct LargeObjectRef {
  uint64_t lba_start = 0;
  uint32_t block_count = 0;
  uint32_t byte_length = 0;
  bool referenced = true;
};

struct LargeObjectConfig {
  uint64_t first_lba = 0;
  uint64_t block_count = 0;
  uint32_t min_size = 2049;  // smallest accepted value
  size_t index_fanout = 64;

  void validate() const;
};

struct LargeObjectStats {
  uint64_t v_obj = 0;  // key + value bytes stored
  uint64_t puts = 0;
  uint64_t gets = 0;
  uint64_t hits = 0;
  uint64_t deletes = 0;
  uint64_t device_reads = 0;
  uint64_t device_writes = 0;
  uint64_t device_trims = 0;
  uint64_t evictions = 0;
};

/// Free-run allocator over [0, blocks), first fit, coalescing on release.
class RunAllocator {
 public:
  explicit RunAllocator(uint64_t blocks);
  std::optional<uint64_t> allocate(uint64_t n);
  void release(uint64_t start, uint64_t n);
  uint64_t free_blocks() const { return free_blocks_; }
  size_t run_count() const { return runs_.size(); }
  uint64_t largest_run() const;

 private:
  std::map<uint64_t, uint64_t> runs_;  // start -> length
  uint64_t blocks_;
  uint64_t free_blocks_;
};

class LargeObjectStore {
 public:
  LargeObjectStore(CsdDevice& device, LargeObjectConfig config);

  const LargeObjectConfig& config() const { return config_; }

  /// Throws CapacityError when the object cannot be placed even after
  /// evicting every other large object.
  void put(std::string_view key, ByteSpan value);
  std::optional<Bytes> get(std::string_view key);
  /// Returns true when an object was removed.
  bool erase(std::string_view key);
  bool contains(std::string_view key) const;
  std::optional<LargeObjectRef> ref(std::string_view key) const;

  /// Objects with lo <= key < hi; empty `hi` is unbounded.
  std::vector<std::pair<std::string, Bytes>> scan(std::string_view lo, std::string_view hi);

  size_t size() const { return index_.size(); }
  uint64_t used_blocks() const { return config_.block_count - alloc_.free_blocks(); }
  const RunAllocator& allocator() const { return alloc_; }
  LargeObjectStats stats() const { return stats_; }

  /// Called with each key evicted to make room.
  using DisplacementObserver = std::function<void(const std::string& key)>;
  void set_displacement_observer(DisplacementObserver observer) { observer_ = std::move(observer); }

 private:
  bool evict_one(std::string_view keep);
  void release(const LargeObjectRef& r);

  CsdDevice& dev_;
  LargeObjectConfig config_;
  BTreeIndex<LargeObjectRef> index_;
  RunAllocator alloc_;
  std::string clock_hand_;
  bool clock_started_ = false;
  LargeObjectStats stats_;
  DisplacementObserver observer_;
};

}  // namespace zipcache
