#pragma once

// BT_DRAM: B+ tree whose 4KB leaves are kept compressed in memory.
//
// Each leaf is split into n = 16 sub-pages of 256B and a key lives in
// sub-page f(key) = mix_hash(key, kDramSubpageSeed) mod n + 1, so a lookup
// only has to decode the first f(key) sub-pages. Updates collect in a small
// per-leaf write buffer and are merged by a single decode/merge/encode pass.
// Leaves whose access counter stands out (> mean + r * stddev) are kept
// uncompressed.

#include <atomic>
#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "zipcache/btree_index.hpp"
#include "zipcache/bytes.hpp"
#include "zipcache/codec.hpp"
#include "zipcache/page_format.hpp"

namespace zipcache {

struct DramConfig {
  uint32_t page_size = 4096;
  uint32_t subpage_count = 16;
  uint32_t tiny_max = 128;
  uint32_t medium_max = 2048;
  /// Per-leaf buffer bytes that trigger a flush; 0 merges every put inline.
  uint32_t buffer_threshold = 256;
  /// Cap on bytes held by all write buffers together; 0 means no cap.
  uint64_t buffer_pool_bytes = 0;
  bool bypass_enabled = true;
  double bypass_r = 3.0;
  uint64_t age_period = uint64_t{1} << 16;
  uint64_t refresh_period = uint64_t{1} << 14;
  size_t index_fanout = 64;
  const PageCodec* codec = nullptr;

  uint32_t subpage_size() const { return page_size / subpage_count; }
  void validate() const;
};

enum class DramLookup { kValue, kTombstone, kAbsent };

struct DramGetResult {
  DramLookup status = DramLookup::kAbsent;
  Bytes value;
  uint32_t decoded_subpages = 0;
  bool buffer_hit = false;
};

/// An object handed to the SSD tier when its leaf leaves DRAM.
struct EvictedObject {
  std::string key;
  bool tombstone = false;
  Bytes value;
};

struct DramStats {
  uint64_t gets = 0;
  uint64_t puts = 0;
  uint64_t buffer_hits = 0;
  uint64_t decoded_subpages = 0;
  uint64_t page_decodes = 0;
  uint64_t recompressions = 0;  // leaf page encodes caused by flushes and splits
  uint64_t flushes = 0;
  uint64_t splits = 0;
  uint64_t agings = 0;
  uint64_t refreshes = 0;
  uint64_t bypass_encodes = 0;  // encodes when a leaf leaves the bypass set
  uint64_t evicted_leaves = 0;
};

struct HotSetDecision {
  double mean = 0;
  double stddev = 0;
  double threshold = 0;
  std::vector<bool> hot;
};

/// mean + r * stddev rule over a counter vector (population stddev).
HotSetDecision compute_hot_set(std::span<const uint32_t> counters, double r);

struct DramMemory {
  uint64_t pages = 0;     // compressed frames and bypassed raw pages
  uint64_t buffers = 0;   // write-buffer bytes
  uint64_t medium = 0;    // individually compressed medium objects
  uint64_t index = 0;     // tree and per-leaf bookkeeping
  uint64_t total() const { return pages + buffers + medium + index; }
};

class DramTier {
 public:
  explicit DramTier(DramConfig config = {});
  ~DramTier();

  DramTier(const DramTier&) = delete;
  DramTier& operator=(const DramTier&) = delete;

  const DramConfig& config() const { return config_; }

  /// Safe to call concurrently with other get() calls only.
  DramGetResult get(std::string_view key) const;

  /// Stores a value (tiny or medium) or, when `value` is empty, a tombstone.
  void put(std::string_view key, std::optional<ByteSpan> value);
  void put_tombstone(std::string_view key) { put(key, std::nullopt); }

  /// Runs pending flushes (at most `max_flushes`) and the aging/refresh
  /// cadences. Returns the number of leaves flushed.
  size_t background_work(size_t max_flushes);
  /// Flushes every non-empty buffer.
  void flush_all();

  void age_counters();
  void refresh_hot_set();

  /// Second-chance selection of up to `k` cold leaves, identified by fence key.
  std::vector<std::string> eviction_candidates(size_t k);
  /// Fences of unreferenced leaves overlapping [lo, hi), at most `limit`.
  /// An empty `hi` means no upper bound.
  std::vector<std::string> cold_leaves_in(std::string_view lo, std::string_view hi, size_t limit);
  /// Fence of the leaf that owns `key`; empty when the tier is empty.
  std::string fence_of(std::string_view key) const;
  /// Removes the leaf with this fence key and returns its objects (buffer
  /// merged, medium objects decompressed) in key order.
  std::vector<EvictedObject> evict_leaf(const std::string& fence);

  /// All objects (tombstones included) with lo <= key < hi, in key order.
  /// An empty `hi` means no upper bound.
  std::vector<EvictedObject> scan(std::string_view lo, std::string_view hi) const;

  DramMemory memory() const;
  DramStats stats() const;
  size_t leaf_count() const { return leaves_by_id_.size(); }
  size_t bypassed_count() const { return bypassed_; }
  size_t tree_height() const { return tree_.height(); }
  const HotSetDecision& last_hot_set() const { return last_hot_set_; }
  uint64_t pending_flushes() const { return flush_queue_.size(); }

  /// Fence keys in order with the leaf state, for tests and tooling.
  struct LeafInfo {
    std::string fence;
    bool bypassed;
    uint32_t counter;
    bool referenced;
    size_t buffered_entries;
    size_t page_bytes;
  };
  std::vector<LeafInfo> leaves() const;

  /// Sub-page index in [1, n] for `key`.
  uint32_t subpage_of(std::string_view key) const;

 private:
  struct Leaf;
  struct MediumSlot {
    CompressedPage frame;
  };

  Leaf* leaf_for(std::string_view key) const;
  Leaf* leaf_for_write(std::string_view key);
  Leaf* new_leaf(std::string fence);
  void flush_leaf(Leaf* leaf);
  void materialize(Leaf* leaf, std::vector<std::vector<DramEntry>>& slots);
  void merge_buffer(Leaf* leaf, std::vector<std::vector<DramEntry>>& slots);
  void store_slots(Leaf* leaf, std::vector<std::vector<DramEntry>>& slots);
  bool fits(const std::vector<std::vector<DramEntry>>& slots) const;
  void encode_leaf(Leaf* leaf, const std::vector<std::vector<DramEntry>>& slots);
  void set_page_bytes(Leaf* leaf, size_t bytes);
  void release_entry(const DramEntry& e);
  void enqueue_flush(Leaf* leaf);
  Bytes medium_value(ByteSpan locator) const;
  uint32_t store_medium(ByteSpan value, MediumRef& ref);
  void erase_leaf_from_index(Leaf* leaf);

  DramConfig config_;
  const PageCodec* codec_;
  BTreeIndex<std::unique_ptr<Leaf>> tree_;
  std::unordered_map<uint64_t, Leaf*> leaves_by_id_;
  uint64_t next_leaf_id_ = 1;

  std::deque<uint64_t> flush_queue_;
  std::deque<std::pair<uint64_t, uint64_t>> buffer_fifo_;  // (leaf id, stamp) by first buffered write
  uint64_t fifo_seq_ = 0;

  std::vector<MediumSlot> medium_;
  std::vector<uint32_t> medium_free_;

  std::string clock_hand_;
  bool clock_started_ = false;

  uint64_t page_bytes_ = 0;
  uint64_t fence_bytes_ = 0;
  uint64_t buffer_bytes_ = 0;
  uint64_t medium_bytes_ = 0;
  size_t bypassed_ = 0;
  uint64_t ops_since_age_ = 0;
  uint64_t ops_since_refresh_ = 0;
  HotSetDecision last_hot_set_;

  DramStats stats_;
  mutable std::atomic<uint64_t> gets_{0};
  mutable std::atomic<uint64_t> buffer_hits_{0};
  mutable std::atomic<uint64_t> decoded_subpages_{0};
  mutable std::atomic<uint64_t> page_decodes_{0};
  mutable std::atomic<uint64_t> pending_get_ops_{0};
};

}  // namespace zipcache
