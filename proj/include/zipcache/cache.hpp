#pragma once

// The cache facade: routes objects by size class across the DRAM tier, the
// large-object store and the SSD tier, and moves cold DRAM leaves down.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "zipcache/bytes.hpp"
#include "zipcache/csd_device.hpp"
#include "zipcache/dram_tier.hpp"
#include "zipcache/large_objects.hpp"
#include "zipcache/ssd_tier.hpp"

namespace zipcache {

struct CacheConfig {
  /// DRAM tier settings; tiny_max and medium_max are the size-class thresholds.
  DramConfig dram;
  /// SSD tier settings; the region is assigned by the cache.
  SsdConfig ssd;
  uint64_t dram_budget = uint64_t{256} << 20;
  /// Logical device bytes used by the cache; 0 uses the whole device.
  uint64_t ssd_logical = 0;
  /// Share of the logical space reserved for large objects.
  double large_share = 0.25;
  double low_watermark = 0.95;
  /// Write-buffer pool cap as a share of the DRAM budget, used when
  /// dram.buffer_pool_bytes is 0; 0 leaves the pool uncapped.
  double buffer_pool_share = 0.01;
  size_t evict_batch = 4;
  /// Also evict the other unreferenced DRAM leaves whose keys fall in the
  /// SSD leaf of each candidate, so they share sub-page writes.
  bool group_eviction = true;
  std::chrono::nanoseconds backend_miss_latency = std::chrono::milliseconds(1);
  /// Charge the miss latency to the outcome without sleeping.
  bool virtual_miss_latency = false;
  size_t flushes_per_tick = 64;
  /// Run background work inline every this many writes; 0 leaves it to the caller.
  uint64_t auto_tick_ops = 64;

  void validate() const;
};

enum class OpStatus { kValue, kAbsent, kOk };
enum class TierHit { kDram, kLargeObject, kSsd, kMiss, kNone };

const char* tier_name(TierHit t);

struct OpOutcome {
  OpStatus status = OpStatus::kOk;
  TierHit tier = TierHit::kNone;
  Bytes value;
  uint32_t device_reads = 0;
  uint32_t decoded_subpages = 0;
  std::chrono::nanoseconds latency{0};
};

struct CacheStats {
  uint64_t gets = 0;
  uint64_t puts = 0;
  uint64_t deletes = 0;
  uint64_t scans = 0;
  uint64_t dram_hits = 0;
  uint64_t lo_hits = 0;
  uint64_t ssd_hits = 0;
  uint64_t misses = 0;
  uint64_t promotions = 0;
  uint64_t eviction_rounds = 0;
  uint64_t evicted_leaves = 0;
  uint64_t evicted_objects = 0;
  uint64_t displaced_objects = 0;
  uint64_t absorb_failures = 0;
  uint64_t ticks = 0;
};

struct WriteAmplification {
  uint64_t v_obj = 0;
  uint64_t v_host = 0;
  uint64_t v_nand = 0;

  double wa_host() const { return v_obj == 0 ? 0.0 : static_cast<double>(v_host) / static_cast<double>(v_obj); }
  double wr_nand() const { return v_nand == 0 ? 1.0 : static_cast<double>(v_host) / static_cast<double>(v_nand); }
  double wa() const { return wa_host() / wr_nand(); }
};

class Cache {
 public:
  Cache(CsdDevice& device, CacheConfig config);
  ~Cache();

  Cache(const Cache&) = delete;
  Cache& operator=(const Cache&) = delete;

  OpOutcome get(std::string_view key);
  OpOutcome put(std::string_view key, ByteSpan value);
  OpOutcome del(std::string_view key);
  /// Live objects with lo <= key < hi in key order; empty `hi` is unbounded.
  std::vector<std::pair<std::string, Bytes>> scan(std::string_view lo, std::string_view hi);

  /// Moves cold DRAM leaves to the SSD tier until `bytes` of DRAM are freed
  /// or DRAM is empty. Returns the bytes freed.
  uint64_t evict(uint64_t bytes);
  void evict_all();
  /// Drains pending flushes, runs the aging and refresh cadences and
  /// services eviction debt.
  void background_tick();

  /// Runs background_tick on a thread every `period` until stopped.
  void start_background(std::chrono::microseconds period);
  void stop_background();

  /// Called with keys lost to space pressure (SSD leaf drops, large-object
  /// eviction, failed eviction batches).
  using DisplacementObserver = std::function<void(const std::string& key)>;
  void set_displacement_observer(DisplacementObserver observer);

  CacheStats stats() const;
  WriteAmplification write_amplification() const;
  uint64_t dram_used() const;
  const CacheConfig& config() const { return config_; }

  /// Direct tier access for tests and tooling; not synchronized.
  DramTier& dram() { return dram_; }
  SsdTier& ssd() { return ssd_; }
  LargeObjectStore& large() { return lo_; }
  CsdDevice& device() { return dev_; }

  /// DRAM tier settings with the buffer pool cap resolved.
  static DramConfig dram_config(const CacheConfig& c);
  /// Device regions for the SSD tier and the large-object store.
  static SsdConfig ssd_region(const CacheConfig& c, uint64_t device_blocks);
  static LargeObjectConfig lo_region(const CacheConfig& c, uint64_t device_blocks);

 private:
  OpOutcome slow_get(std::string_view key);
  void after_write(std::string_view key);
  void maybe_evict(std::optional<std::string_view> keep);
  uint64_t evict_locked(uint64_t bytes, std::optional<std::string_view> keep);
  void absorb(std::vector<EvictedObject>& batch);
  void displaced(const std::string& key);
  void finish(OpOutcome& out, std::chrono::steady_clock::time_point start) const;


  CsdDevice& dev_;
  CacheConfig config_;
  DramTier dram_;
  SsdTier ssd_;
  LargeObjectStore lo_;

  mutable std::shared_mutex mu_;
  CacheStats stats_;
  std::atomic<uint64_t> fast_gets_{0};
  std::atomic<uint64_t> fast_hits_{0};
  uint64_t writes_since_tick_ = 0;
  DisplacementObserver observer_;

  std::thread bg_;
  std::mutex bg_mu_;
  std::condition_variable bg_cv_;
  bool bg_stop_ = false;
};

}  // namespace zipcache
