#include "zipcache/cache.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "zipcache/errors.hpp"

namespace zipcache {

void CacheConfig::validate() const {
  dram.validate();
  if (dram_budget == 0) throw ConfigError("DRAM budget must be positive");
  if (!(large_share > 0 && large_share < 1)) throw ConfigError("large-object share must be in (0, 1)");
  if (!(low_watermark > 0 && low_watermark <= 1)) throw ConfigError("low watermark must be in (0, 1]");
  if (!(buffer_pool_share >= 0 && buffer_pool_share < 1)) throw ConfigError("buffer pool share must be in [0, 1)");
  if (evict_batch == 0) throw ConfigError("eviction batch must be positive");
  if (flushes_per_tick == 0) throw ConfigError("flushes per tick must be positive");
}

const char* tier_name(TierHit t) {
  switch (t) {
    case TierHit::kDram:
      return "dram";
    case TierHit::kLargeObject:
      return "lo";
    case TierHit::kSsd:
      return "ssd";
    case TierHit::kMiss:
      return "miss";
    case TierHit::kNone:
      break;
  }
  return "none";
}

namespace {

constexpr size_t kMaxGroupLeaves = 64;

uint64_t used_blocks(const CacheConfig& c, uint64_t device_blocks) {
  uint64_t blocks = device_blocks;
  if (c.ssd_logical != 0) blocks = std::min(blocks, c.ssd_logical / kBlockSize);
  return blocks;
}

uint64_t large_blocks(const CacheConfig& c, uint64_t device_blocks) {
  return std::max<uint64_t>(1, static_cast<uint64_t>(static_cast<double>(used_blocks(c, device_blocks)) * c.large_share));
}

}  // namespace

DramConfig Cache::dram_config(const CacheConfig& c) {
  DramConfig d = c.dram;
  if (d.buffer_pool_bytes == 0) {
    d.buffer_pool_bytes = static_cast<uint64_t>(static_cast<double>(c.dram_budget) * c.buffer_pool_share);
  }
  return d;
}

SsdConfig Cache::ssd_region(const CacheConfig& c, uint64_t device_blocks) {
  c.validate();
  SsdConfig s = c.ssd;
  const uint64_t total = used_blocks(c, device_blocks);
  const uint64_t lo = large_blocks(c, device_blocks);
  if (lo >= total) throw ConfigError("device too small for the cache");
  s.first_lba = 0;
  s.block_count = (total - lo) / s.superleaf_blocks * s.superleaf_blocks;
  return s;
}

LargeObjectConfig Cache::lo_region(const CacheConfig& c, uint64_t device_blocks) {
  LargeObjectConfig l;
  const uint64_t total = used_blocks(c, device_blocks);
  l.block_count = large_blocks(c, device_blocks);
  l.first_lba = total - l.block_count;
  l.min_size = c.dram.medium_max + 1;
  return l;
}

Cache::Cache(CsdDevice& device, CacheConfig config)
    : dev_(device),
      config_(std::move(config)),
      dram_(dram_config(config_)),
      ssd_(device, ssd_region(config_, device.block_count())),
      lo_(device, lo_region(config_, device.block_count())) {
  ssd_.set_displacement_observer([this](const std::string& k) { displaced(k); });
  lo_.set_displacement_observer([this](const std::string& k) { displaced(k); });
}

Cache::~Cache() { stop_background(); }

void Cache::set_displacement_observer(DisplacementObserver observer) {
  std::unique_lock lock(mu_);
  observer_ = std::move(observer);
}

void Cache::displaced(const std::string& key) {
  ++stats_.displaced_objects;
  if (observer_) observer_(key);
}

void Cache::finish(OpOutcome& out, std::chrono::steady_clock::time_point start) const {
  out.latency += std::chrono::steady_clock::now() - start;
}

OpOutcome Cache::get(std::string_view key) {
  const auto start = std::chrono::steady_clock::now();
  {
    std::shared_lock lock(mu_);
    auto d = dram_.get(key);
    if (d.status == DramLookup::kValue) {
      fast_gets_.fetch_add(1, std::memory_order_relaxed);
      fast_hits_.fetch_add(1, std::memory_order_relaxed);
      OpOutcome out;
      out.status = OpStatus::kValue;
      out.tier = TierHit::kDram;
      out.value = std::move(d.value);
      out.decoded_subpages = d.decoded_subpages;
      finish(out, start);
      return out;
    }
  }
  OpOutcome out;
  {
    std::unique_lock lock(mu_);
    out = slow_get(key);
  }
  if (out.tier == TierHit::kMiss && config_.backend_miss_latency.count() > 0) {
    if (config_.virtual_miss_latency) {
      out.latency += config_.backend_miss_latency;
    } else {
      std::this_thread::sleep_for(config_.backend_miss_latency);
    }
  }
  finish(out, start);
  return out;
}

OpOutcome Cache::slow_get(std::string_view key) {
  OpOutcome out;
  ++stats_.gets;
  auto d = dram_.get(key);
  out.decoded_subpages = d.decoded_subpages;
  if (d.status == DramLookup::kValue) {
    ++stats_.dram_hits;
    out.status = OpStatus::kValue;
    out.tier = TierHit::kDram;
    out.value = std::move(d.value);
    return out;
  }
  // A large put leaves a DRAM tombstone, so the large-object store is
  // consulted before the tombstone is taken as a delete.
  const uint64_t lo_reads = lo_.stats().device_reads;
  if (auto v = lo_.get(key)) {
    ++stats_.lo_hits;
    out.status = OpStatus::kValue;
    out.tier = TierHit::kLargeObject;
    out.value = std::move(*v);
    out.device_reads = static_cast<uint32_t>(lo_.stats().device_reads - lo_reads);
    return out;
  }
  out.status = OpStatus::kAbsent;
  out.tier = TierHit::kMiss;
  if (d.status == DramLookup::kTombstone) {
    ++stats_.misses;
    return out;
  }
  auto s = ssd_.get(key);
  out.device_reads = s.device_reads;
  if (!s.value) {
    ++stats_.misses;
    return out;
  }
  ++stats_.ssd_hits;
  ++stats_.promotions;
  dram_.put(key, ByteSpan(*s.value));
  out.status = OpStatus::kValue;
  out.tier = TierHit::kSsd;
  out.value = std::move(*s.value);
  after_write(key);
  return out;
}

OpOutcome Cache::put(std::string_view key, ByteSpan value) {
  const auto start = std::chrono::steady_clock::now();
  OpOutcome out;
  {
    std::unique_lock lock(mu_);
    ++stats_.puts;
    if (value.size() > config_.dram.medium_max) {
      lo_.put(key, value);
      dram_.put_tombstone(key);
      out.tier = TierHit::kLargeObject;
    } else {
      dram_.put(key, value);
      lo_.erase(key);
      out.tier = TierHit::kDram;
    }
    after_write(key);
  }
  finish(out, start);
  return out;
}

OpOutcome Cache::del(std::string_view key) {
  const auto start = std::chrono::steady_clock::now();
  OpOutcome out;
  {
    std::unique_lock lock(mu_);
    ++stats_.deletes;
    dram_.put_tombstone(key);
    lo_.erase(key);
    out.tier = TierHit::kDram;
    after_write(key);
  }
  finish(out, start);
  return out;
}

void Cache::after_write(std::string_view key) {
  if (config_.auto_tick_ops != 0 && ++writes_since_tick_ >= config_.auto_tick_ops) {
    writes_since_tick_ = 0;
    dram_.background_work(config_.flushes_per_tick);
  }
  maybe_evict(key);
}

void Cache::maybe_evict(std::optional<std::string_view> keep) {
  const uint64_t used = dram_.memory().total();
  if (used <= config_.dram_budget) return;
  const auto low = static_cast<uint64_t>(static_cast<double>(config_.dram_budget) * config_.low_watermark);
  evict_locked(used - low, keep);
}

uint64_t Cache::evict(uint64_t bytes) {
  std::unique_lock lock(mu_);
  return evict_locked(bytes, std::nullopt);
}

void Cache::evict_all() {
  std::unique_lock lock(mu_);
  while (dram_.leaf_count() > 0) evict_locked(dram_.memory().total(), std::nullopt);
}

uint64_t Cache::evict_locked(uint64_t bytes, std::optional<std::string_view> keep) {
  const uint64_t before = dram_.memory().total();
  uint64_t freed = 0;
  while (freed < bytes && dram_.leaf_count() > 0) {
    auto fences = dram_.eviction_candidates(config_.evict_batch);
    if (config_.group_eviction) {
      std::set<std::string> grouped(fences.begin(), fences.end());
      for (const auto& f : fences) {
        const auto [lo, hi] = ssd_.leaf_range(f);
        for (auto& g : dram_.cold_leaves_in(lo, hi, kMaxGroupLeaves)) grouped.insert(std::move(g));
      }
      fences.assign(grouped.begin(), grouped.end());
    }
    // The leaf the current operation just wrote stays resident.
    if (keep && dram_.leaf_count() > 1) std::erase(fences, dram_.fence_of(*keep));
    if (fences.empty()) break;
    // Highest fence first: evicting the leftmost leaf re-keys its successor.
    std::sort(fences.rbegin(), fences.rend());
    std::vector<EvictedObject> batch;
    for (const auto& f : fences) {
      auto objs = dram_.evict_leaf(f);
      std::move(objs.begin(), objs.end(), std::back_inserter(batch));
      ++stats_.evicted_leaves;
    }
    std::sort(batch.begin(), batch.end(), [](const EvictedObject& a, const EvictedObject& b) { return a.key < b.key; });
    stats_.evicted_objects += batch.size();
    ++stats_.eviction_rounds;
    absorb(batch);
    const uint64_t now = dram_.memory().total();
    freed = before > now ? before - now : 0;
  }
  return freed;
}

void Cache::absorb(std::vector<EvictedObject>& batch) {
  if (batch.empty()) return;
  try {
    ssd_.absorb(batch);
    return;
  } catch (const CapacityError&) {
    ++stats_.absorb_failures;
  }
  // Part of the batch may be on the device already. Deleting every key keeps
  // older SSD copies from resurfacing; the values are reported as lost.
  std::vector<EvictedObject> tombs;
  tombs.reserve(batch.size());
  for (const auto& o : batch) {
    tombs.push_back(EvictedObject{o.key, true, {}});
    if (!o.tombstone) displaced(o.key);
  }
  ssd_.absorb(tombs);
}

void Cache::background_tick() {
  std::unique_lock lock(mu_);
  dram_.background_work(config_.flushes_per_tick);
  maybe_evict(std::nullopt);
  ++stats_.ticks;
}

void Cache::start_background(std::chrono::microseconds period) {
  stop_background();
  {
    std::lock_guard g(bg_mu_);
    bg_stop_ = false;
  }
  bg_ = std::thread([this, period] {
    std::unique_lock g(bg_mu_);
    while (!bg_stop_) {
      g.unlock();
      background_tick();
      g.lock();
      bg_cv_.wait_for(g, period, [this] { return bg_stop_; });
    }
  });
}

void Cache::stop_background() {
  {
    std::lock_guard g(bg_mu_);
    bg_stop_ = true;
  }
  bg_cv_.notify_all();
  if (bg_.joinable()) bg_.join();
}

std::vector<std::pair<std::string, Bytes>> Cache::scan(std::string_view lo, std::string_view hi) {
  std::unique_lock lock(mu_);
  ++stats_.scans;
  std::map<std::string, Bytes, std::less<>> merged;
  for (auto& [k, v] : ssd_.scan(lo, hi)) merged[k] = std::move(v);
  std::map<std::string, bool, std::less<>> dram_values;
  for (auto& o : dram_.scan(lo, hi)) {
    if (o.tombstone) {
      merged.erase(o.key);
    } else {
      merged[o.key] = std::move(o.value);
      dram_values[o.key] = true;
    }
  }
  for (auto& [k, v] : lo_.scan(lo, hi)) {
    if (!dram_values.contains(k)) merged[k] = std::move(v);
  }
  std::vector<std::pair<std::string, Bytes>> out;
  out.reserve(merged.size());
  for (auto& [k, v] : merged) out.emplace_back(k, std::move(v));
  return out;
}

CacheStats Cache::stats() const {
  std::shared_lock lock(mu_);
  CacheStats s = stats_;
  s.gets += fast_gets_.load(std::memory_order_relaxed);
  s.dram_hits += fast_hits_.load(std::memory_order_relaxed);
  return s;
}

WriteAmplification Cache::write_amplification() const {
  std::shared_lock lock(mu_);
  const auto d = dev_.stats();
  return WriteAmplification{ssd_.stats().v_obj + lo_.stats().v_obj, d.v_host, d.v_nand};
}

uint64_t Cache::dram_used() const {
  std::shared_lock lock(mu_);
  return dram_.memory().total();
}

}  // namespace zipcache
