#pragma once

// BT_SSD: B+ tree with memory-resident inner levels and super-leaves on the
// device. A super-leaf is m consecutive 4KB blocks (sub-pages); a key lives in
// sub-page g(key) = mix_hash(key, kSsdSubpageSeed) mod m + 1, so any lookup is
// a single block read. Sub-pages are kept at most T full; unused bytes stay
// zero so the device compresses them away.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "zipcache/btree_index.hpp"
#include "zipcache/bytes.hpp"
#include "zipcache/csd_device.hpp"
#include "zipcache/dram_tier.hpp"
#include "zipcache/page_format.hpp"

namespace zipcache {

struct SsdConfig {
  uint32_t superleaf_blocks = 16;  // m; leaf size is 4KB * m
  double fill_threshold = 0.75;    // T
  uint64_t first_lba = 0;
  uint64_t block_count = 0;  // size of the tier region in blocks
  size_t index_fanout = 64;
  size_t drop_batch = 4;  // cold leaves dropped per capacity retry

  uint32_t fill_limit() const;  // floor(T * 4096)
  void validate() const;
};

struct SsdGetResult {
  std::optional<Bytes> value;
  uint32_t device_reads = 0;
};

struct SsdStats {
  uint64_t v_obj = 0;  // key + value bytes of every absorbed object
  uint64_t gets = 0;
  uint64_t hits = 0;
  uint64_t device_reads = 0;
  uint64_t device_writes = 0;
  uint64_t device_trims = 0;
  uint64_t absorbed_objects = 0;
  uint64_t absorbed_tombstones = 0;
  uint64_t splits = 0;
  uint64_t dropped_leaves = 0;
  uint64_t dropped_objects = 0;
  uint64_t capacity_retries = 0;
};

class SsdTier {
 public:
  /// On-device record widths used for the inner-level size (see docs/formats.md).
  static constexpr size_t kIndexNodeHeader = 16;
  static constexpr size_t kIndexKeySlot = 256;
  static constexpr size_t kIndexChildRef = 8;

  SsdTier(CsdDevice& device, SsdConfig config);

  const SsdConfig& config() const { return config_; }

  /// Exactly one block read when the tree is non-empty.
  SsdGetResult get(std::string_view key);

  /// Merges a key-sorted batch (tombstones delete) into the owning
  /// super-leaves. Throws CapacityError if space cannot be made by dropping
  /// cold leaves; the index then still matches the device.
  void absorb(std::span<const EvictedObject> batch);

  /// Objects with lo <= key < hi in key order; empty `hi` is unbounded.
  std::vector<std::pair<std::string, Bytes>> scan(std::string_view lo, std::string_view hi);

  /// Serialized inner-level bytes over on-device leaf bytes.
  double memory_overhead() const;
  uint64_t nonleaf_bytes() const;
  uint64_t leaf_bytes() const;

  size_t leaf_count() const { return tree_.size(); }
  /// Key range [fence, next fence) of the leaf that holds `key`; the second
  /// element is empty for the last leaf.
  std::pair<std::string, std::string> leaf_range(std::string_view key);
  size_t tree_height() const { return tree_.height(); }
  size_t free_slots() const { return free_slots_.size(); }
  SsdStats stats() const { return stats_; }

  struct LeafInfo {
    std::string fence;
    uint64_t first_lba;
    std::vector<uint16_t> fill;
    uint32_t objects;
  };
  std::vector<LeafInfo> leaves() const;

  /// Sub-page index in [1, m] for `key`.
  uint32_t subpage_of(std::string_view key) const;

  /// Called with each object lost when a cold leaf is dropped for space.
  using DisplacementObserver = std::function<void(const std::string& key)>;
  void set_displacement_observer(DisplacementObserver observer) { observer_ = std::move(observer); }

 private:
  struct Desc {
    uint32_t slot = 0;
    std::vector<uint16_t> fill;    // bytes used per sub-page
    std::vector<uint16_t> counts;  // objects per sub-page
    bool referenced = true;

    uint32_t objects() const;
  };
  using Contents = std::vector<std::vector<SsdEntry>>;

  uint64_t lba_of(uint32_t slot, uint32_t sub) const;
  Desc& leaf_for(std::string_view key, std::string* fence);
  Desc blank_desc(uint32_t slot) const;
  void ensure_root();
  void load(const Desc& d, uint32_t sub, Contents& contents, std::vector<bool>& loaded);
  void apply_group(std::string_view first_key, std::span<const EvictedObject> objs);
  void split_leaf(const std::string& fence, Contents& contents, std::vector<bool>& loaded);
  bool run_fits(std::span<const SsdEntry> run) const;
  size_t drop_cold_leaves(std::string_view keep_key, size_t k);
  void drop_leaf(const std::string& fence);
  void write_sub(uint64_t lba, std::span<const SsdEntry> entries);

  CsdDevice& dev_;
  SsdConfig config_;
  BTreeIndex<Desc> tree_;
  std::vector<uint32_t> free_slots_;
  std::string clock_hand_;
  bool clock_started_ = false;
  SsdStats stats_;
  DisplacementObserver observer_;
  Bytes block_;
};

}  // namespace zipcache
