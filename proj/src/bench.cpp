#include "zipcache/bench.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <thread>

#include <fmt/format.h>

#include "zipcache/errors.hpp"
#include "zipcache/hash.hpp"

namespace zipcache {

using Clock = std::chrono::steady_clock;

LatencyHistogram::LatencyHistogram() : counts_(kBucketCount, 0) {}

size_t LatencyHistogram::bucket_of(uint64_t ns) {
  if (ns < kSubBuckets) return static_cast<size_t>(ns);
  const int e = std::bit_width(ns) - 1;  // >= 4
  const uint64_t sub = (ns >> (e - 4)) & (kSubBuckets - 1);
  return kSubBuckets + static_cast<size_t>(e - 4) * kSubBuckets + static_cast<size_t>(sub);
}

uint64_t LatencyHistogram::bucket_lower(size_t b) {
  if (b < kSubBuckets) return b;
  const size_t e = (b - kSubBuckets) / kSubBuckets + 4;
  const uint64_t sub = (b - kSubBuckets) % kSubBuckets;
  return (kSubBuckets + sub) << (e - 4);
}

uint64_t LatencyHistogram::bucket_upper(size_t b) {
  if (b + 1 >= kBucketCount) return UINT64_MAX;
  return bucket_lower(b + 1) - 1;
}

void LatencyHistogram::record(uint64_t ns) {
  ++counts_[bucket_of(ns)];
  ++total_;
  sum_ += static_cast<long double>(ns);
}

void LatencyHistogram::merge(const LatencyHistogram& other) {
  for (size_t i = 0; i < kBucketCount; ++i) counts_[i] += other.counts_[i];
  total_ += other.total_;
  sum_ += other.sum_;
}

double LatencyHistogram::mean() const {
  return total_ == 0 ? 0.0 : static_cast<double>(sum_ / static_cast<long double>(total_));
}

uint64_t LatencyHistogram::percentile(double p) const {
  if (total_ == 0) return 0;
  const auto rank = std::max<uint64_t>(1, static_cast<uint64_t>(std::ceil(p * static_cast<double>(total_))));
  uint64_t seen = 0;
  for (size_t b = 0; b < kBucketCount; ++b) {
    seen += counts_[b];
    if (seen >= rank) return bucket_upper(b);
  }
  return bucket_upper(kBucketCount - 1);
}

HashDirectStore::HashDirectStore(CsdDevice& device, uint64_t first_lba, uint64_t block_count, double fill_threshold)
    : dev_(device),
      first_lba_(first_lba),
      blocks_(block_count),
      limit_(static_cast<uint32_t>(std::floor(fill_threshold * kBlockSize))),
      block_(kBlockSize) {
  if (block_count == 0 || first_lba + block_count > device.block_count()) {
    throw ConfigError("hash-direct region does not fit the device");
  }
  if (!(fill_threshold > 0 && fill_threshold <= 1)) throw ConfigError("fill threshold must be in (0, 1]");
}

uint64_t HashDirectStore::bucket_of(std::string_view key) const {
  return first_lba_ + mix_hash(key, kBaselineBucketSeed) % blocks_;
}

size_t HashDirectStore::bucket_bytes(const std::vector<Entry>& entries) {
  size_t n = 2;
  for (const auto& e : entries) n += 3 + e.key.size() + e.value.size();
  return n;
}

void HashDirectStore::encode_bucket(const std::vector<Entry>& entries, MutableByteSpan out) {
  if (bucket_bytes(entries) > out.size()) throw ContractViolation("bucket overflow");
  std::fill(out.begin(), out.end(), 0);
  uint8_t* p = out.data();
  put_u16(p, static_cast<uint16_t>(entries.size()));
  p += 2;
  for (const auto& e : entries) {
    *p++ = static_cast<uint8_t>(e.key.size());
    put_u16(p, static_cast<uint16_t>(e.value.size()));
    p += 2;
    p = std::copy(e.key.begin(), e.key.end(), p);
    p = std::copy(e.value.begin(), e.value.end(), p);
  }
}

std::vector<HashDirectStore::Entry> HashDirectStore::decode_bucket(ByteSpan block) {
  std::vector<Entry> out;
  if (block.size() < 2) throw IntegrityError("bucket block too short");
  const uint16_t count = get_u16(block.data());
  size_t off = 2;
  for (uint16_t i = 0; i < count; ++i) {
    if (off + 3 > block.size()) throw IntegrityError("truncated bucket entry");
    const size_t kl = block[off];
    const size_t vl = get_u16(block.data() + off + 1);
    off += 3;
    if (off + kl + vl > block.size()) throw IntegrityError("truncated bucket entry");
    Entry e;
    e.key.assign(reinterpret_cast<const char*>(block.data() + off), kl);
    e.value.assign(block.begin() + static_cast<std::ptrdiff_t>(off + kl),
                   block.begin() + static_cast<std::ptrdiff_t>(off + kl + vl));
    off += kl + vl;
    out.push_back(std::move(e));
  }
  return out;
}

void HashDirectStore::put(std::string_view key, ByteSpan value) {
  if (key.size() > 255 || 2 + 3 + key.size() + value.size() > limit_) {
    throw ContractViolation("object does not fit a hash-direct bucket");
  }
  const uint64_t lba = bucket_of(key);
  dev_.read_block_into(lba, block_);
  auto entries = decode_bucket(block_);
  std::erase_if(entries, [&](const Entry& e) { return e.key == key; });
  entries.push_back(Entry{std::string(key), Bytes(value.begin(), value.end())});
  while (bucket_bytes(entries) > limit_) {
    entries.erase(entries.begin());
    ++fifo_evictions_;
  }
  encode_bucket(entries, block_);
  dev_.write_block(lba, block_);
  v_obj_ += key.size() + value.size();
}

std::optional<Bytes> HashDirectStore::get(std::string_view key) {
  dev_.read_block_into(bucket_of(key), block_);
  for (auto& e : decode_bucket(block_)) {
    if (e.key == key) return std::move(e.value);
  }
  return std::nullopt;
}

void HashDirectStore::erase(std::string_view key) {
  const uint64_t lba = bucket_of(key);
  dev_.read_block_into(lba, block_);
  auto entries = decode_bucket(block_);
  if (std::erase_if(entries, [&](const Entry& e) { return e.key == key; }) == 0) return;
  encode_bucket(entries, block_);
  dev_.write_block(lba, block_);
}

uint64_t parse_bytes(std::string_view s) {
  if (s.empty()) throw ConfigError("empty byte count");
  uint64_t mult = 1;
  const char last = static_cast<char>(std::toupper(static_cast<unsigned char>(s.back())));
  if (last == 'K' || last == 'M' || last == 'G') {
    mult = last == 'K' ? uint64_t{1} << 10 : last == 'M' ? uint64_t{1} << 20 : uint64_t{1} << 30;
    s.remove_suffix(1);
  }
  uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError(fmt::format("bad byte count '{}'", s));
  return v * mult;
}

namespace {

bool parse_switch(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw ConfigError(fmt::format("{} must be on or off, got '{}'", key, v));
}

template <typename T>
T number(const std::string& key, const std::string& v) {
  T out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(fmt::format("bad value '{}' for {}", v, key));
  return out;
}

}  // namespace

bool BenchConfig::apply(const std::string& key, const std::string& value) {
  if (workload.apply(key, value)) return true;
  if (key == "dram_budget") {
    cache.dram_budget = parse_bytes(value);
  } else if (key == "ssd_logical") {
    cache.ssd_logical = parse_bytes(value);
  } else if (key == "device_physical") {
    device_physical = parse_bytes(value);
  } else if (key == "expansion") {
    expansion = number<uint32_t>(key, value);
  } else if (key == "superleaf_kb") {
    const auto kb = number<uint32_t>(key, value);
    if (kb == 0 || kb % 4 != 0) throw ConfigError("superleaf_kb must be a multiple of 4");
    cache.ssd.superleaf_blocks = kb / 4;
  } else if (key == "fill_threshold") {
    cache.ssd.fill_threshold = number<double>(key, value);
  } else if (key == "buffer_bytes") {
    cache.dram.buffer_threshold = number<uint32_t>(key, value);
  } else if (key == "buffer_pool_share") {
    cache.buffer_pool_share = number<double>(key, value);
  } else if (key == "buffer_pool_bytes") {
    cache.dram.buffer_pool_bytes = parse_bytes(value);
  } else if (key == "bypass") {
    cache.dram.bypass_enabled = parse_switch(key, value);
  } else if (key == "bypass_r") {
    cache.dram.bypass_r = number<double>(key, value);
  } else if (key == "age_period") {
    cache.dram.age_period = number<uint64_t>(key, value);
  } else if (key == "refresh_period") {
    cache.dram.refresh_period = number<uint64_t>(key, value);
  } else if (key == "tiny_max") {
    cache.dram.tiny_max = number<uint32_t>(key, value);
  } else if (key == "medium_max") {
    cache.dram.medium_max = number<uint32_t>(key, value);
  } else if (key == "group_eviction") {
    cache.group_eviction = parse_switch(key, value);
  } else if (key == "evict_batch") {
    cache.evict_batch = number<size_t>(key, value);
  } else if (key == "low_watermark") {
    cache.low_watermark = number<double>(key, value);
  } else if (key == "lo_space_share") {
    cache.large_share = number<double>(key, value);
  } else if (key == "backend_miss_us") {
    cache.backend_miss_latency = std::chrono::microseconds(number<uint64_t>(key, value));
  } else if (key == "virtual_miss") {
    cache.virtual_miss_latency = parse_switch(key, value);
  } else if (key == "baseline") {
    if (value == "none") {
      baseline = Baseline::kNone;
    } else if (value == "hash-direct") {
      baseline = Baseline::kHashDirect;
    } else {
      throw ConfigError(fmt::format("unknown baseline '{}'", value));
    }
  } else if (key == "preload") {
    preload = parse_switch(key, value);
  } else if (key == "warmup_ops") {
    warmup_ops = number<uint64_t>(key, value);
  } else if (key == "tick_interval") {
    tick_interval = number<uint64_t>(key, value);
  } else if (key == "timeline_interval") {
    timeline_interval = number<uint64_t>(key, value);
  } else if (key == "shift_at_op") {
    shift_at_op = number<uint64_t>(key, value);
  } else if (key == "fill_on_miss") {
    fill_on_miss = parse_switch(key, value);
  } else if (key == "backing_path") {
    backing_path = value;
  } else if (key == "csv") {
    csv_path = value;
  } else if (key == "label") {
    label = value;
  } else {
    return false;
  }
  return true;
}

void BenchConfig::validate() const {
  workload.validate();
  cache.validate();
  if (expansion == 0) throw ConfigError("expansion must be positive");
  if (tick_interval == 0 || timeline_interval == 0) throw ConfigError("intervals must be positive");
}

namespace {

DeviceConfig device_config(const BenchConfig& c) {
  uint64_t physical = c.device_physical;
  if (c.cache.ssd_logical != 0) {
    const uint64_t unit = uint64_t{kBlockSize};
    physical = (c.cache.ssd_logical / c.expansion + unit - 1) / unit * unit;
  }
  return DeviceConfig::with_physical(physical, c.expansion, c.backing_path);
}

uint64_t preload_seed(uint64_t id) { return fmix64(id + 0x9E3779B97F4A7C15ULL); }

struct Snapshot {
  CacheStats cache;
  DramStats dram;
  SsdStats ssd;
  DeviceStats dev;
  uint64_t v_obj = 0;
};

Snapshot snapshot(Cache& c) {
  Snapshot s;
  s.cache = c.stats();
  s.dram = c.dram().stats();
  s.ssd = c.ssd().stats();
  s.dev = c.device().stats();
  s.v_obj = c.write_amplification().v_obj;
  return s;
}

void fill_common(MetricsReport& r, const BenchConfig& c) {
  r.label = c.label;
  r.locality = locality_name(c.workload.locality);
  r.eta = c.workload.eta;
  r.get_fraction = c.workload.get_fraction;
}

void fill_wa(MetricsReport& r, uint64_t v_obj, const DeviceStats& before, const DeviceStats& after) {
  r.v_obj = v_obj;
  r.v_host = after.v_host - before.v_host;
  r.v_nand = after.v_nand - before.v_nand;
  const WriteAmplification wa{r.v_obj, r.v_host, r.v_nand};
  r.wa_host = wa.wa_host();
  r.wr_nand = wa.wr_nand();
  r.wa = wa.wa();
}

void fill_latency(MetricsReport& r) {
  r.get_p50 = r.get_hist.percentile(0.50);
  r.get_p90 = r.get_hist.percentile(0.90);
  r.get_p99 = r.get_hist.percentile(0.99);
  r.put_p50 = r.put_hist.percentile(0.50);
  r.put_p90 = r.put_hist.percentile(0.90);
  r.put_p99 = r.put_hist.percentile(0.99);
}

Operation fill_op(const WorkloadGenerator& gen, const Operation& get) {
  Operation put;
  put.type = OpType::kPut;
  put.id = get.id;
  put.key = get.key;
  put.size = gen.size_of(get.id);
  put.value_seed = preload_seed(get.id);
  return put;
}

// One worker's share of the measured phase.
struct WorkerResult {
  LatencyHistogram get_hist;
  LatencyHistogram put_hist;
  uint64_t gets = 0;
  uint64_t puts = 0;
  uint64_t deletes = 0;
  uint64_t capacity_events = 0;
  std::chrono::nanoseconds busy{0};
};

OpOutcome execute(Cache& cache, const WorkloadGenerator& gen, const Operation& op, const Bytes& value, bool fill) {
  switch (op.type) {
    case OpType::kGet: {
      auto out = cache.get(op.key);
      if (fill && out.status == OpStatus::kAbsent) {
        const auto put = fill_op(gen, op);
        const Bytes v = gen.value(put);
        out.latency += cache.put(put.key, v).latency;
      }
      return out;
    }
    case OpType::kPut:
      return cache.put(op.key, value);
    case OpType::kDelete:
      break;
  }
  return cache.del(op.key);
}

void record(WorkerResult& w, const Operation& op, const OpOutcome& out) {
  const auto ns = static_cast<uint64_t>(out.latency.count());
  w.busy += out.latency;
  switch (op.type) {
    case OpType::kGet:
      ++w.gets;
      w.get_hist.record(ns);
      break;
    case OpType::kPut:
      ++w.puts;
      w.put_hist.record(ns);
      break;
    case OpType::kDelete:
      ++w.deletes;
      w.put_hist.record(ns);
      break;
  }
}

}  // namespace

MetricsReport run_zipcache(const BenchConfig& config) {
  config.validate();
  CsdDevice dev(device_config(config));
  CacheConfig cc = config.cache;
  cc.auto_tick_ops = 0;
  Cache cache(dev, cc);
  WorkloadGenerator gen(config.workload, 0);
  MetricsReport r;
  fill_common(r, config);
  r.system = "zipcache";

  uint64_t capacity_events = 0;
  auto guarded = [&](auto&& fn) {
    try {
      fn();
    } catch (const CapacityError&) {
      ++capacity_events;
    }
  };

  if (config.preload) {
    for (uint64_t id = 0; id < config.workload.object_count; ++id) {
      Operation op;
      op.type = OpType::kPut;
      op.id = id;
      op.key = gen.key(id);
      op.size = gen.size_of(id);
      op.value_seed = preload_seed(id);
      const Bytes v = gen.value(op);
      guarded([&] { cache.put(op.key, v); });
      if ((id + 1) % config.tick_interval == 0) cache.background_tick();
    }
  }
  for (uint64_t i = 0; i < config.warmup_ops; ++i) {
    const auto op = gen.next();
    const Bytes v = op.type == OpType::kPut ? gen.value(op) : Bytes();
    guarded([&] { execute(cache, gen, op, v, config.fill_on_miss); });
    if ((i + 1) % config.tick_interval == 0) cache.background_tick();
  }
  cache.background_tick();

  const Snapshot before = snapshot(cache);
  const uint64_t ops = config.workload.op_count;
  WorkerResult total;
  double peak_buffers = static_cast<double>(cache.dram().memory().buffers);
  std::chrono::nanoseconds tick_time{0};
  const auto wall0 = Clock::now();

  if (config.workload.threads <= 1) {
    double window_sum = 0;
    uint64_t window_n = 0;
    for (uint64_t i = 0; i < ops; ++i) {
      if (config.shift_at_op != 0 && i == config.shift_at_op) gen.shift_hot_region();
      const auto op = gen.next();
      const Bytes v = op.type == OpType::kPut ? gen.value(op) : Bytes();
      guarded([&] {
        const auto out = execute(cache, gen, op, v, config.fill_on_miss);
        record(total, op, out);
        if (op.type == OpType::kGet) {
          window_sum += static_cast<double>(out.latency.count());
          ++window_n;
        }
      });
      if ((i + 1) % config.tick_interval == 0) {
        const auto t0 = Clock::now();
        cache.background_tick();
        tick_time += Clock::now() - t0;
        peak_buffers = std::max(peak_buffers, static_cast<double>(cache.dram().memory().buffers));
      }
      if ((i + 1) % config.timeline_interval == 0) {
        const uint64_t b = cache.dram().bypassed_count();
        r.bypass_timeline.emplace_back(i + 1, b);
        r.bypassed_max = std::max(r.bypassed_max, b);
        r.get_latency_timeline.push_back(window_n == 0 ? 0.0 : window_sum / static_cast<double>(window_n));
        window_sum = 0;
        window_n = 0;
      }
    }
  } else {
    const uint32_t threads = config.workload.threads;
    std::vector<WorkerResult> results(threads);
    std::vector<uint64_t> events(threads, 0);
    cache.start_background(std::chrono::microseconds(100));
    std::vector<std::thread> pool;
    for (uint32_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        WorkloadGenerator g(config.workload, t + 1);
        const uint64_t mine = ops / threads + (t < ops % threads ? 1 : 0);
        for (uint64_t i = 0; i < mine; ++i) {
          const auto op = g.next();
          const Bytes v = op.type == OpType::kPut ? g.value(op) : Bytes();
          try {
            record(results[t], op, execute(cache, g, op, v, config.fill_on_miss));
          } catch (const CapacityError&) {
            ++events[t];
          }
        }
      });
    }
    for (auto& th : pool) th.join();
    cache.stop_background();
    for (uint32_t t = 0; t < threads; ++t) {
      total.get_hist.merge(results[t].get_hist);
      total.put_hist.merge(results[t].put_hist);
      total.gets += results[t].gets;
      total.puts += results[t].puts;
      total.deletes += results[t].deletes;
      total.busy += results[t].busy;
      capacity_events += events[t];
    }
    peak_buffers = std::max(peak_buffers, static_cast<double>(cache.dram().memory().buffers));
  }
  const auto wall = Clock::now() - wall0;
  const Snapshot after = snapshot(cache);

  r.ops = ops;
  r.gets = total.gets;
  r.puts = total.puts;
  r.deletes = total.deletes;
  const auto dg = static_cast<double>(std::max<uint64_t>(1, after.cache.gets - before.cache.gets));
  r.dram_hit_ratio = static_cast<double>(after.cache.dram_hits - before.cache.dram_hits) / dg;
  r.lo_hit_ratio = static_cast<double>(after.cache.lo_hits - before.cache.lo_hits) / dg;
  r.ssd_hit_ratio = static_cast<double>(after.cache.ssd_hits - before.cache.ssd_hits) / dg;
  r.hit_ratio = r.dram_hit_ratio + r.lo_hit_ratio + r.ssd_hit_ratio;
  r.elapsed_s = std::chrono::duration<double>(wall).count();
  const double engine_s = config.workload.threads <= 1
                              ? std::chrono::duration<double>(total.busy + tick_time).count()
                              : r.elapsed_s;
  r.throughput = engine_s > 0 ? static_cast<double>(ops) / engine_s : 0.0;
  r.get_hist = std::move(total.get_hist);
  r.put_hist = std::move(total.put_hist);
  fill_latency(r);
  fill_wa(r, after.v_obj - before.v_obj, before.dev, after.dev);
  r.zeta = cache.ssd().memory_overhead();
  r.recompressions = after.dram.recompressions - before.dram.recompressions;
  r.flushes = after.dram.flushes - before.dram.flushes;
  r.bypassed_final = cache.dram().bypassed_count();
  r.bypassed_max = std::max(r.bypassed_max, r.bypassed_final);
  r.buffer_overhead = peak_buffers / static_cast<double>(config.cache.dram_budget);
  r.displaced = after.cache.displaced_objects - before.cache.displaced_objects;
  r.capacity_events = capacity_events;
  r.evicted_leaves = after.cache.evicted_leaves - before.cache.evicted_leaves;
  r.absorbed_objects = after.ssd.absorbed_objects - before.ssd.absorbed_objects;
  r.ssd_writes = after.ssd.device_writes - before.ssd.device_writes;
  r.ssd_splits = after.ssd.splits - before.ssd.splits;
  return r;
}

MetricsReport run_baseline_hash_direct(const BenchConfig& config) {
  config.validate();
  CsdDevice dev(device_config(config));
  // Same logical space as the cache's SSD tier, so buckets fill the way they
  // would in a cache of that size.
  const uint64_t blocks = Cache::ssd_region(config.cache, dev.block_count()).block_count;
  HashDirectStore store(dev, 0, blocks, config.cache.ssd.fill_threshold);
  WorkloadGenerator gen(config.workload, 0);
  MetricsReport r;
  fill_common(r, config);
  r.system = "hash-direct";

  uint64_t capacity_events = 0;
  auto apply = [&](const Operation& op, const Bytes& v) -> OpOutcome {
    OpOutcome out;
    const auto t0 = Clock::now();
    try {
      switch (op.type) {
        case OpType::kGet:
          if (auto got = store.get(op.key)) {
            out.status = OpStatus::kValue;
            out.tier = TierHit::kSsd;
            out.value = std::move(*got);
          } else {
            out.status = OpStatus::kAbsent;
            out.tier = TierHit::kMiss;
          }
          out.device_reads = 1;
          break;
        case OpType::kPut:
          store.put(op.key, v);
          break;
        case OpType::kDelete:
          store.erase(op.key);
          break;
      }
    } catch (const CapacityError&) {
      ++capacity_events;
    }
    out.latency = Clock::now() - t0;
    if (out.tier == TierHit::kMiss && config.cache.virtual_miss_latency) out.latency += config.cache.backend_miss_latency;
    return out;
  };

  if (config.preload) {
    for (uint64_t id = 0; id < config.workload.object_count; ++id) {
      Operation op;
      op.type = OpType::kPut;
      op.id = id;
      op.key = gen.key(id);
      op.size = gen.size_of(id);
      op.value_seed = preload_seed(id);
      apply(op, gen.value(op));
    }
  }
  for (uint64_t i = 0; i < config.warmup_ops; ++i) {
    const auto op = gen.next();
    apply(op, op.type == OpType::kPut ? gen.value(op) : Bytes());
  }

  const DeviceStats before = dev.stats();
  const uint64_t v_obj0 = store.v_obj();
  WorkerResult total;
  uint64_t hits = 0;
  const auto wall0 = Clock::now();
  for (uint64_t i = 0; i < config.workload.op_count; ++i) {
    if (config.shift_at_op != 0 && i == config.shift_at_op) gen.shift_hot_region();
    const auto op = gen.next();
    const Bytes v = op.type == OpType::kPut ? gen.value(op) : Bytes();
    const auto out = apply(op, v);
    record(total, op, out);
    if (out.status == OpStatus::kValue) ++hits;
    if (op.type == OpType::kGet && out.status == OpStatus::kAbsent && config.fill_on_miss) {
      const auto put = fill_op(gen, op);
      apply(put, gen.value(put));
    }
  }
  const auto wall = Clock::now() - wall0;

  r.ops = config.workload.op_count;
  r.gets = total.gets;
  r.puts = total.puts;
  r.deletes = total.deletes;
  r.ssd_hit_ratio = total.gets == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total.gets);
  r.hit_ratio = r.ssd_hit_ratio;
  r.elapsed_s = std::chrono::duration<double>(wall).count();
  const double busy = std::chrono::duration<double>(total.busy).count();
  r.throughput = busy > 0 ? static_cast<double>(r.ops) / busy : 0.0;
  r.get_hist = std::move(total.get_hist);
  r.put_hist = std::move(total.put_hist);
  fill_latency(r);
  fill_wa(r, store.v_obj() - v_obj0, before, dev.stats());
  r.capacity_events = capacity_events;
  return r;
}

std::string MetricsReport::csv_header() {
  return "label,system,locality,eta,get_fraction,ops,gets,puts,deletes,hit_ratio,dram_hit_ratio,lo_hit_ratio,"
         "ssd_hit_ratio,throughput_ops,get_p50_ns,get_p90_ns,get_p99_ns,put_p50_ns,put_p90_ns,put_p99_ns,"
         "v_obj,v_host,v_nand,wa_host,wr_nand,wa,zeta,recompressions,flushes,bypassed_final,bypassed_max,"
         "buffer_overhead,displaced,capacity_events,evicted_leaves,absorbed_objects,ssd_writes,ssd_splits,elapsed_s,"
         "bypass_timeline";
}

std::string MetricsReport::csv_row() const {
  std::string timeline;
  for (const auto& [op, n] : bypass_timeline) {
    if (!timeline.empty()) timeline += ';';
    timeline += fmt::format("{}:{}", op, n);
  }
  return fmt::format(
      "{},{},{},{},{},{},{},{},{},{:.6f},{:.6f},{:.6f},{:.6f},{:.1f},{},{},{},{},{},{},{},{},{},{:.6f},{:.6f},{:.6f},"
      "{:.6f},{},{},{},{},{:.6f},{},{},{},{},{},{},{:.3f},{}",
      label, system, locality, eta, get_fraction, ops, gets, puts, deletes, hit_ratio, dram_hit_ratio, lo_hit_ratio,
      ssd_hit_ratio, throughput, get_p50, get_p90, get_p99, put_p50, put_p90, put_p99, v_obj, v_host, v_nand, wa_host,
      wr_nand, wa, zeta, recompressions, flushes, bypassed_final, bypassed_max, buffer_overhead, displaced,
      capacity_events, evicted_leaves, absorbed_objects, ssd_writes, ssd_splits, elapsed_s, timeline);
}

void emit_csv(const MetricsReport& report, const std::string& path) {
  if (report.label.find(',') != std::string::npos) throw ConfigError("CSV label must not contain commas");
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path));
  if (fresh) out << MetricsReport::csv_header() << '\n';
  out << report.csv_row() << '\n';
  if (!out) throw IoError(fmt::format("write to '{}' failed", path));
}

std::map<std::string, std::string> parse_csv_row(const std::string& header, const std::string& row) {
  auto split = [](const std::string& s) {
    std::vector<std::string> parts;
    size_t start = 0;
    for (;;) {
      const auto comma = s.find(',', start);
      parts.push_back(s.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    return parts;
  };
  const auto names = split(header);
  const auto values = split(row);
  if (names.size() != values.size()) throw ConfigError("CSV row does not match the header");
  std::map<std::string, std::string> out;
  for (size_t i = 0; i < names.size(); ++i) out[names[i]] = values[i];
  return out;
}

}  // namespace zipcache
