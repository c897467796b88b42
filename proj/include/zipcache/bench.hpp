#pragma once

// Benchmark harness: drives a workload against the cache (or the hash-direct
// baseline) on an emulated device and reports hit ratios, latency
// percentiles and write amplification.

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "zipcache/cache.hpp"
#include "zipcache/workload.hpp"

namespace zipcache {

/// Log-linear latency histogram: values below 16 get exact buckets, above
/// that each power of two is split into 16 equal buckets.
class LatencyHistogram {
 public:
  static constexpr size_t kSubBuckets = 16;
  static constexpr size_t kBucketCount = kSubBuckets + 60 * kSubBuckets;

  LatencyHistogram();

  void record(uint64_t ns);
  void merge(const LatencyHistogram& other);

  uint64_t count() const { return total_; }
  double mean() const;
  /// Upper bound (inclusive) of the bucket holding the ceil(p * count)-th
  /// smallest sample; 0 when empty.
  uint64_t percentile(double p) const;

  static size_t bucket_of(uint64_t ns);
  static uint64_t bucket_lower(size_t b);
  static uint64_t bucket_upper(size_t b);

 private:
  std::vector<uint64_t> counts_;
  uint64_t total_ = 0;
  long double sum_ = 0;
};

/// Hash-direct small-object store: each object lives in the 4KB block picked
/// by hashing its key, and every insert is a read-modify-write of that block.
/// A block holds at most floor(T * 4096) bytes; the oldest entries go first.
class HashDirectStore {
 public:
  HashDirectStore(CsdDevice& device, uint64_t first_lba, uint64_t block_count, double fill_threshold);

  void put(std::string_view key, ByteSpan value);
  std::optional<Bytes> get(std::string_view key);
  void erase(std::string_view key);

  uint64_t bucket_of(std::string_view key) const;
  uint64_t v_obj() const { return v_obj_; }
  uint64_t fifo_evictions() const { return fifo_evictions_; }

  struct Entry {
    std::string key;
    Bytes value;
  };
  /// Bucket block layout: u16 count, then (u8 key len, u16 value len, key,
  /// value) oldest first, zero padded.
  static void encode_bucket(const std::vector<Entry>& entries, MutableByteSpan out);
  static std::vector<Entry> decode_bucket(ByteSpan block);
  static size_t bucket_bytes(const std::vector<Entry>& entries);

 private:
  CsdDevice& dev_;
  uint64_t first_lba_;
  uint64_t blocks_;
  uint32_t limit_;
  uint64_t v_obj_ = 0;
  uint64_t fifo_evictions_ = 0;
  Bytes block_;
};

enum class Baseline { kNone, kHashDirect };

struct BenchConfig {
  BenchConfig() { cache.virtual_miss_latency = true; }

  WorkloadSpec workload;
  CacheConfig cache;
  uint64_t device_physical = uint64_t{512} << 20;
  uint32_t expansion = 4;
  Baseline baseline = Baseline::kNone;
  /// Put every object once (in id order) before the warmup.
  bool preload = true;
  uint64_t warmup_ops = 0;
  /// Operations between background ticks in single-threaded runs.
  uint64_t tick_interval = 64;
  /// Operations between timeline samples.
  uint64_t timeline_interval = 10000;
  /// Measured operation index at which the hot region moves; 0 disables.
  uint64_t shift_at_op = 0;
  /// Put the object after a GET miss.
  bool fill_on_miss = false;
  std::string backing_path;
  std::string csv_path;
  std::string label;

  /// Applies one key=value setting (workload keys included); false if unknown.
  bool apply(const std::string& key, const std::string& value);
  void validate() const;
};

/// Parses a byte count with an optional K/M/G suffix (powers of 1024).
uint64_t parse_bytes(std::string_view s);

struct MetricsReport {
  std::string label;
  std::string system;  // "zipcache" or "hash-direct"
  std::string locality;
  double eta = 0;
  double get_fraction = 0;
  uint64_t ops = 0;
  uint64_t gets = 0;
  uint64_t puts = 0;
  uint64_t deletes = 0;
  double hit_ratio = 0;
  double dram_hit_ratio = 0;
  double lo_hit_ratio = 0;
  double ssd_hit_ratio = 0;
  double throughput = 0;  // ops per second of engine time
  uint64_t get_p50 = 0;
  uint64_t get_p90 = 0;
  uint64_t get_p99 = 0;
  uint64_t put_p50 = 0;
  uint64_t put_p90 = 0;
  uint64_t put_p99 = 0;
  uint64_t v_obj = 0;
  uint64_t v_host = 0;
  uint64_t v_nand = 0;
  double wa_host = 0;
  double wr_nand = 0;
  double wa = 0;
  double zeta = 0;
  uint64_t recompressions = 0;
  uint64_t flushes = 0;
  uint64_t bypassed_final = 0;
  uint64_t bypassed_max = 0;
  double buffer_overhead = 0;  // peak buffer bytes over the DRAM budget
  uint64_t displaced = 0;
  uint64_t capacity_events = 0;
  uint64_t evicted_leaves = 0;
  uint64_t absorbed_objects = 0;
  uint64_t ssd_writes = 0;
  uint64_t ssd_splits = 0;
  double elapsed_s = 0;

  /// (measured op index, bypassed leaf count) samples.
  std::vector<std::pair<uint64_t, uint64_t>> bypass_timeline;
  /// Mean GET latency (ns) per timeline interval.
  std::vector<double> get_latency_timeline;
  LatencyHistogram get_hist;
  LatencyHistogram put_hist;

  static std::string csv_header();
  std::string csv_row() const;
};

MetricsReport run_zipcache(const BenchConfig& config);
MetricsReport run_baseline_hash_direct(const BenchConfig& config);

/// Appends one row to `path`, writing the header first if the file is new
/// or empty.
void emit_csv(const MetricsReport& report, const std::string& path);
/// Splits a CSV row produced by csv_row(); no quoting is ever needed.
std::map<std::string, std::string> parse_csv_row(const std::string& header, const std::string& row);

}  // namespace zipcache
