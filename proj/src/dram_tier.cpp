#include "zipcache/dram_tier.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include <fmt/format.h>

#include "zipcache/errors.hpp"
#include "zipcache/hash.hpp"

namespace zipcache {

struct DramTier::Leaf {
  uint64_t id = 0;
  std::string fence;
  CompressedPage page;  // when !bypassed
  Bytes raw;            // when bypassed
  bool bypassed = false;
  std::vector<DramEntry> buffer;  // unique keys, insertion order
  uint32_t buffer_bytes = 0;
  bool flush_queued = false;
  uint64_t fifo_stamp = 0;  // 0 when not in the buffer FIFO
  size_t page_bytes = 0;
  mutable std::atomic<uint32_t> counter{0};
  mutable std::atomic<bool> referenced{true};
};

namespace {

// Per-leaf index cost: an inner-node child pointer plus a leaf descriptor
// (page pointer and length, buffer pointer and length, counter, flags, clock
// and FIFO stamps). The fence key bytes are added separately.
constexpr uint64_t kChildPointerBytes = 8;
constexpr uint64_t kLeafDescriptorBytes = 48;

using Slots = std::vector<std::vector<DramEntry>>;

bool entry_less(const DramEntry& a, const DramEntry& b) { return a.key < b.key; }

void upsert_sorted(std::vector<DramEntry>& v, DramEntry e, DramEntry* replaced) {
  auto it = std::lower_bound(v.begin(), v.end(), e, entry_less);
  if (it != v.end() && it->key == e.key) {
    if (replaced != nullptr) *replaced = std::move(*it);
    *it = std::move(e);
  } else {
    v.insert(it, std::move(e));
  }
}

}  // namespace

void DramConfig::validate() const {
  if (subpage_count == 0 || page_size % subpage_count != 0) {
    throw ConfigError("page size must be a multiple of the sub-page count");
  }
  if (subpage_size() < 64) throw ConfigError("DRAM sub-pages must be at least 64 bytes");
  if (tiny_max == 0 || tiny_max >= medium_max) throw ConfigError("size thresholds must be ordered");
  if (medium_max > 0xFFFF - kFrameHeaderSize) throw ConfigError("medium threshold too large");
  if (kDramSubpageHeader + kDramEntryHeader + kMaxKeyLength + std::max<size_t>(tiny_max, MediumRef::kEncodedSize) >
      subpage_size()) {
    throw ConfigError("a tiny object with a maximal key must fit one sub-page");
  }
  if (!(bypass_r > 0)) throw ConfigError("bypass r must be positive");
  if (age_period == 0 || refresh_period == 0) throw ConfigError("cadences must be positive");
}

HotSetDecision compute_hot_set(std::span<const uint32_t> counters, double r) {
  HotSetDecision d;
  d.hot.assign(counters.size(), false);
  if (counters.empty()) return d;
  double sum = 0;
  for (uint32_t c : counters) sum += c;
  d.mean = sum / static_cast<double>(counters.size());
  double sq = 0;
  for (uint32_t c : counters) sq += (c - d.mean) * (c - d.mean);
  d.stddev = std::sqrt(sq / static_cast<double>(counters.size()));
  d.threshold = d.mean + r * d.stddev;
  for (size_t i = 0; i < counters.size(); ++i) d.hot[i] = counters[i] > d.threshold;
  return d;
}

DramTier::DramTier(DramConfig config)
    : config_(config), codec_(config.codec != nullptr ? config.codec : &lz77_codec()), tree_(config.index_fanout) {
  config_.validate();
}

DramTier::~DramTier() = default;

uint32_t DramTier::subpage_of(std::string_view key) const {
  return subpage_slot(key, kDramSubpageSeed, config_.subpage_count) + 1;
}

DramTier::Leaf* DramTier::leaf_for(std::string_view key) const {
  auto& tree = const_cast<BTreeIndex<std::unique_ptr<Leaf>>&>(tree_);
  auto c = tree.floor(key);
  return c.valid() ? c.value().get() : nullptr;
}

DramTier::Leaf* DramTier::new_leaf(std::string fence) {
  auto leaf = std::make_unique<Leaf>();
  leaf->id = next_leaf_id_++;
  leaf->fence = fence;
  fence_bytes_ += fence.size();
  Leaf* raw = leaf.get();
  if (!tree_.insert(std::move(fence), std::move(leaf))) throw ContractViolation("duplicate DRAM leaf fence");
  leaves_by_id_.emplace(raw->id, raw);
  return raw;
}

DramTier::Leaf* DramTier::leaf_for_write(std::string_view key) {
  if (Leaf* l = leaf_for(key)) return l;
  Leaf* leaf = new_leaf("");
  Slots empty(config_.subpage_count);
  encode_leaf(leaf, empty);
  return leaf;
}

void DramTier::set_page_bytes(Leaf* leaf, size_t bytes) {
  page_bytes_ = page_bytes_ - leaf->page_bytes + bytes;
  leaf->page_bytes = bytes;
}

Bytes DramTier::medium_value(ByteSpan locator) const {
  MediumRef ref = MediumRef::decode(locator);
  if (ref.handle >= medium_.size() || medium_[ref.handle].frame.empty()) {
    throw IntegrityError("dangling medium object handle");
  }
  return decompress_full(medium_[ref.handle].frame);
}

uint32_t DramTier::store_medium(ByteSpan value, MediumRef& ref) {
  CompressedPage frame = compress(value, static_cast<uint32_t>(value.size()), *codec_);
  uint32_t handle;
  if (!medium_free_.empty()) {
    handle = medium_free_.back();
    medium_free_.pop_back();
  } else {
    handle = static_cast<uint32_t>(medium_.size());
    medium_.emplace_back();
  }
  ref = MediumRef{handle, static_cast<uint16_t>(frame.size()), static_cast<uint16_t>(value.size())};
  medium_bytes_ += frame.size();
  medium_[handle].frame = std::move(frame);
  return handle;
}

void DramTier::release_entry(const DramEntry& e) {
  if (e.kind != EntryKind::kMediumRef) return;
  MediumRef ref = MediumRef::decode(e.payload);
  medium_bytes_ -= medium_[ref.handle].frame.size();
  medium_[ref.handle].frame = CompressedPage();
  medium_free_.push_back(ref.handle);
}

DramGetResult DramTier::get(std::string_view key) const {
  DramGetResult r;
  gets_.fetch_add(1, std::memory_order_relaxed);
  pending_get_ops_.fetch_add(1, std::memory_order_relaxed);
  Leaf* leaf = leaf_for(key);
  if (leaf == nullptr) return r;
  leaf->counter.fetch_add(1, std::memory_order_relaxed);
  leaf->referenced.store(true, std::memory_order_relaxed);

  auto resolve = [&](EntryKind kind, ByteSpan payload) {
    switch (kind) {
      case EntryKind::kTombstone:
        r.status = DramLookup::kTombstone;
        break;
      case EntryKind::kMediumRef:
        r.status = DramLookup::kValue;
        r.value = medium_value(payload);
        break;
      case EntryKind::kInline:
        r.status = DramLookup::kValue;
        r.value.assign(payload.begin(), payload.end());
        break;
    }
  };

  for (const auto& e : leaf->buffer) {
    if (e.key == key) {
      buffer_hits_.fetch_add(1, std::memory_order_relaxed);
      r.buffer_hit = true;
      resolve(e.kind, e.payload);
      return r;
    }
  }

  const uint32_t sps = config_.subpage_size();
  const uint32_t slot = subpage_of(key) - 1;
  ByteSpan sub;
  thread_local Bytes scratch;
  if (leaf->bypassed) {
    sub = ByteSpan(leaf->raw).subspan(size_t{slot} * sps, sps);
  } else {
    if (scratch.size() < config_.page_size) scratch.resize(config_.page_size);
    decompress_prefix_into(leaf->page, slot + 1, scratch);
    r.decoded_subpages = slot + 1;
    decoded_subpages_.fetch_add(slot + 1, std::memory_order_relaxed);
    page_decodes_.fetch_add(1, std::memory_order_relaxed);
    sub = ByteSpan(scratch).subspan(size_t{slot} * sps, sps);
  }
  if (auto hit = find_in_dram_subpage(sub, key)) resolve(hit->kind, hit->payload);
  return r;
}

void DramTier::put(std::string_view key, std::optional<ByteSpan> value) {
  if (key.size() > kMaxKeyLength) throw ContractViolation(fmt::format("key longer than {} bytes", kMaxKeyLength));
  DramEntry e;
  e.key = std::string(key);
  if (!value) {
    e.kind = EntryKind::kTombstone;
  } else if (value->size() <= config_.tiny_max) {
    e.kind = EntryKind::kInline;
    e.payload.assign(value->begin(), value->end());
  } else if (value->size() <= config_.medium_max) {
    e.kind = EntryKind::kMediumRef;
    MediumRef ref;
    store_medium(*value, ref);
    e.payload = ref.encode();
  } else {
    throw ContractViolation("large objects do not belong in the DRAM tier");
  }

  ++stats_.puts;
  ++ops_since_age_;
  ++ops_since_refresh_;
  Leaf* leaf = leaf_for_write(key);
  leaf->counter.fetch_add(1, std::memory_order_relaxed);
  leaf->referenced.store(true, std::memory_order_relaxed);

  const auto add = static_cast<uint32_t>(e.encoded_size());
  auto it = std::find_if(leaf->buffer.begin(), leaf->buffer.end(), [&](const DramEntry& b) { return b.key == key; });
  if (it != leaf->buffer.end()) {
    const auto old = static_cast<uint32_t>(it->encoded_size());
    release_entry(*it);
    *it = std::move(e);
    leaf->buffer_bytes = leaf->buffer_bytes - old + add;
    buffer_bytes_ = buffer_bytes_ - old + add;
  } else {
    leaf->buffer.push_back(std::move(e));
    leaf->buffer_bytes += add;
    buffer_bytes_ += add;
  }
  if (leaf->fifo_stamp == 0) {
    leaf->fifo_stamp = ++fifo_seq_;
    buffer_fifo_.emplace_back(leaf->id, leaf->fifo_stamp);
  }

  if (config_.buffer_threshold == 0) {
    flush_leaf(leaf);
  } else if (leaf->buffer_bytes > config_.buffer_threshold) {
    enqueue_flush(leaf);
  }
}

void DramTier::enqueue_flush(Leaf* leaf) {
  if (leaf->flush_queued) return;
  leaf->flush_queued = true;
  flush_queue_.push_back(leaf->id);
}

void DramTier::materialize(Leaf* leaf, Slots& slots) {
  const uint32_t sps = config_.subpage_size();
  slots.assign(config_.subpage_count, {});
  ByteSpan page;
  Bytes decoded;
  if (leaf->bypassed) {
    page = leaf->raw;
  } else {
    decoded = decompress_full(leaf->page);
    page_decodes_.fetch_add(1, std::memory_order_relaxed);
    page = decoded;
  }
  for (uint32_t s = 0; s < config_.subpage_count; ++s) decode_dram_subpage(page.subspan(size_t{s} * sps, sps), slots[s]);
}

void DramTier::merge_buffer(Leaf* leaf, Slots& slots) {
  for (auto& e : leaf->buffer) {
    const uint32_t s = subpage_of(e.key) - 1;
    DramEntry replaced;
    replaced.kind = EntryKind::kInline;
    upsert_sorted(slots[s], std::move(e), &replaced);
    release_entry(replaced);
  }
  buffer_bytes_ -= leaf->buffer_bytes;
  leaf->buffer.clear();
  leaf->buffer.shrink_to_fit();
  leaf->buffer_bytes = 0;
  leaf->fifo_stamp = 0;
}

bool DramTier::fits(const Slots& slots) const {
  for (const auto& s : slots) {
    if (s.size() > 255 || dram_subpage_bytes(s) > config_.subpage_size()) return false;
  }
  return true;
}

void DramTier::encode_leaf(Leaf* leaf, const Slots& slots) {
  const uint32_t sps = config_.subpage_size();
  Bytes page(config_.page_size);
  for (uint32_t s = 0; s < config_.subpage_count; ++s) {
    encode_dram_subpage(slots[s], MutableByteSpan(page).subspan(size_t{s} * sps, sps));
  }
  if (leaf->bypassed) {
    leaf->raw = std::move(page);
    set_page_bytes(leaf, config_.page_size);
  } else {
    leaf->page = compress(page, sps, *codec_);
    ++stats_.recompressions;
    set_page_bytes(leaf, leaf->page.size());
  }
}

void DramTier::store_slots(Leaf* leaf, Slots& slots) {
  if (fits(slots)) {
    encode_leaf(leaf, slots);
    return;
  }

  std::vector<DramEntry> all;
  for (auto& s : slots) {
    for (auto& e : s) all.push_back(std::move(e));
  }
  std::sort(all.begin(), all.end(), entry_less);

  auto distribute = [&](std::span<DramEntry> run) {
    Slots out(config_.subpage_count);
    for (auto& e : run) out[subpage_of(e.key) - 1].push_back(std::move(e));
    return out;
  };
  auto run_fits = [&](std::span<const DramEntry> run) {
    std::vector<size_t> bytes(config_.subpage_count, kDramSubpageHeader);
    std::vector<size_t> counts(config_.subpage_count, 0);
    for (const auto& e : run) {
      const uint32_t s = subpage_of(e.key) - 1;
      bytes[s] += e.encoded_size();
      if (bytes[s] > config_.subpage_size() || ++counts[s] > 255) return false;
    }
    return true;
  };

  // Median splits until every piece fits.
  std::vector<std::pair<size_t, size_t>> pieces;
  std::vector<std::pair<size_t, size_t>> work{{0, all.size()}};
  while (!work.empty()) {
    auto [b, e] = work.back();
    work.pop_back();
    if (e - b <= 1 || run_fits(std::span<const DramEntry>(all).subspan(b, e - b))) {
      pieces.emplace_back(b, e);
    } else {
      const size_t mid = b + (e - b) / 2;
      work.emplace_back(mid, e);
      work.emplace_back(b, mid);
    }
  }

  // Each piece inherits the access count in proportion to its entries.
  const uint64_t count = leaf->counter.load(std::memory_order_relaxed);
  for (size_t i = 0; i < pieces.size(); ++i) {
    auto [b, e] = pieces[i];
    std::span<DramEntry> run(all.data() + b, e - b);
    Leaf* target = leaf;
    if (i > 0) {
      target = new_leaf(run.front().key);
      target->bypassed = leaf->bypassed;
      if (target->bypassed) ++bypassed_;
    }
    target->counter.store(static_cast<uint32_t>(count * (e - b) / all.size()), std::memory_order_relaxed);
    Slots s = distribute(run);
    encode_leaf(target, s);
  }
  stats_.splits += pieces.size() - 1;
}

void DramTier::flush_leaf(Leaf* leaf) {
  if (leaf->buffer.empty()) return;
  Slots slots;
  materialize(leaf, slots);
  merge_buffer(leaf, slots);
  store_slots(leaf, slots);
  ++stats_.flushes;
}

size_t DramTier::background_work(size_t max_flushes) {
  const uint64_t gets = pending_get_ops_.exchange(0, std::memory_order_relaxed);
  ops_since_age_ += gets;
  ops_since_refresh_ += gets;

  size_t flushed = 0;
  while (flushed < max_flushes && !flush_queue_.empty()) {
    const uint64_t id = flush_queue_.front();
    flush_queue_.pop_front();
    auto it = leaves_by_id_.find(id);
    if (it == leaves_by_id_.end() || !it->second->flush_queued) continue;
    it->second->flush_queued = false;
    if (!it->second->buffer.empty()) {
      flush_leaf(it->second);
      ++flushed;
    }
  }

  if (config_.buffer_pool_bytes != 0) {
    size_t pool_flushes = 0;
    while (buffer_bytes_ > config_.buffer_pool_bytes && pool_flushes < max_flushes && !buffer_fifo_.empty()) {
      const auto [id, stamp] = buffer_fifo_.front();
      buffer_fifo_.pop_front();
      auto it = leaves_by_id_.find(id);
      if (it == leaves_by_id_.end() || it->second->fifo_stamp != stamp) continue;
      flush_leaf(it->second);
      ++pool_flushes;
    }
    flushed += pool_flushes;
  }

  if (ops_since_age_ >= config_.age_period) {
    ops_since_age_ %= config_.age_period;
    age_counters();
  }
  if (ops_since_refresh_ >= config_.refresh_period) {
    ops_since_refresh_ %= config_.refresh_period;
    refresh_hot_set();
  }
  return flushed;
}

void DramTier::flush_all() {
  std::vector<Leaf*> pending;
  for (auto& [id, leaf] : leaves_by_id_) {
    if (!leaf->buffer.empty()) pending.push_back(leaf);
  }
  for (Leaf* l : pending) {
    // A split during an earlier flush never touches another leaf's buffer.
    l->flush_queued = false;
    flush_leaf(l);
  }
  flush_queue_.clear();
  buffer_fifo_.clear();
}

void DramTier::age_counters() {
  for (auto& [id, leaf] : leaves_by_id_) {
    leaf->counter.store(leaf->counter.load(std::memory_order_relaxed) >> 1, std::memory_order_relaxed);
  }
  ++stats_.agings;
}

void DramTier::refresh_hot_set() {
  std::vector<Leaf*> order;
  std::vector<uint32_t> counters;
  order.reserve(leaves_by_id_.size());
  for (auto c = tree_.begin(); c.valid(); c.next()) {
    order.push_back(c.value().get());
    counters.push_back(c.value()->counter.load(std::memory_order_relaxed));
  }
  last_hot_set_ = compute_hot_set(counters, config_.bypass_r);
  ++stats_.refreshes;
  for (size_t i = 0; i < order.size(); ++i) {
    Leaf* leaf = order[i];
    const bool want = config_.bypass_enabled && last_hot_set_.hot[i];
    if (want && !leaf->bypassed) {
      leaf->raw = decompress_full(leaf->page);
      page_decodes_.fetch_add(1, std::memory_order_relaxed);
      leaf->page = CompressedPage();
      leaf->bypassed = true;
      ++bypassed_;
      set_page_bytes(leaf, config_.page_size);
    } else if (!want && leaf->bypassed) {
      leaf->page = compress(leaf->raw, config_.subpage_size(), *codec_);
      leaf->raw = Bytes();
      leaf->bypassed = false;
      --bypassed_;
      ++stats_.bypass_encodes;
      set_page_bytes(leaf, leaf->page.size());
    }
  }
}

std::vector<std::string> DramTier::eviction_candidates(size_t k) {
  std::vector<std::string> out;
  if (tree_.empty() || k == 0) return out;
  std::unordered_set<const Leaf*> chosen;
  const size_t n = tree_.size();
  auto c = clock_started_ ? tree_.upper_bound(clock_hand_) : tree_.begin();
  if (!c.valid()) c = tree_.begin();
  clock_started_ = true;
  for (size_t visited = 0; out.size() < k && visited < 2 * n + 1; ++visited) {
    Leaf* leaf = c.value().get();
    if (leaf->referenced.load(std::memory_order_relaxed)) {
      leaf->referenced.store(false, std::memory_order_relaxed);
    } else if (chosen.insert(leaf).second) {
      out.push_back(c.key());
    }
    clock_hand_ = c.key();
    c.next();
    if (!c.valid()) c = tree_.begin();
  }
  return out;
}

std::string DramTier::fence_of(std::string_view key) const {
  const Leaf* leaf = leaf_for(key);
  return leaf == nullptr ? std::string() : leaf->fence;
}

std::vector<std::string> DramTier::cold_leaves_in(std::string_view lo, std::string_view hi, size_t limit) {
  std::vector<std::string> out;
  auto c = tree_.floor(lo);
  if (!c.valid()) c = tree_.begin();
  for (; c.valid() && out.size() < limit && (hi.empty() || c.key() < hi); c.next()) {
    if (!c.value()->referenced.load(std::memory_order_relaxed)) out.push_back(c.key());
  }
  return out;
}

void DramTier::erase_leaf_from_index(Leaf* leaf) {
  const std::string fence = leaf->fence;
  fence_bytes_ -= fence.size();
  auto owned = tree_.erase(fence);
  leaves_by_id_.erase(leaf->id);
  if (fence.empty() && !tree_.empty()) {
    // The leftmost leaf always owns the empty fence.
    auto first = tree_.begin();
    std::string old = first.key();
    auto moved = tree_.erase(old);
    fence_bytes_ -= (*moved)->fence.size();
    (*moved)->fence.clear();
    tree_.insert(std::string(), std::move(*moved));
  }
}

std::vector<EvictedObject> DramTier::evict_leaf(const std::string& fence) {
  auto* slot = tree_.find(fence);
  if (slot == nullptr) throw ContractViolation("no DRAM leaf with that fence");
  Leaf* leaf = slot->get();

  Slots slots;
  materialize(leaf, slots);
  merge_buffer(leaf, slots);
  std::vector<DramEntry> all;
  for (auto& s : slots) {
    for (auto& e : s) all.push_back(std::move(e));
  }
  std::sort(all.begin(), all.end(), entry_less);

  std::vector<EvictedObject> out;
  out.reserve(all.size());
  for (auto& e : all) {
    EvictedObject o;
    o.key = std::move(e.key);
    switch (e.kind) {
      case EntryKind::kTombstone:
        o.tombstone = true;
        break;
      case EntryKind::kMediumRef:
        o.value = medium_value(e.payload);
        release_entry(e);
        break;
      case EntryKind::kInline:
        o.value = std::move(e.payload);
        break;
    }
    out.push_back(std::move(o));
  }

  set_page_bytes(leaf, 0);
  if (leaf->bypassed) --bypassed_;
  ++stats_.evicted_leaves;
  erase_leaf_from_index(leaf);
  return out;
}

std::vector<EvictedObject> DramTier::scan(std::string_view lo, std::string_view hi) const {
  std::vector<EvictedObject> out;
  auto& tree = const_cast<BTreeIndex<std::unique_ptr<Leaf>>&>(tree_);
  auto c = tree.floor(lo);
  if (!c.valid()) c = tree.begin();
  const uint32_t sps = config_.subpage_size();
  for (; c.valid() && (hi.empty() || c.key() < hi); c.next()) {
    const Leaf* leaf = c.value().get();
    Bytes decoded;
    ByteSpan page;
    if (leaf->bypassed) {
      page = leaf->raw;
    } else {
      decoded = decompress_full(leaf->page);
      page = decoded;
    }
    std::vector<DramEntry> entries;
    for (uint32_t s = 0; s < config_.subpage_count; ++s) {
      decode_dram_subpage(page.subspan(size_t{s} * sps, sps), entries);
    }
    std::sort(entries.begin(), entries.end(), entry_less);
    for (const auto& b : leaf->buffer) upsert_sorted(entries, b, nullptr);
    for (auto& e : entries) {
      if (e.key < lo || (!hi.empty() && e.key >= hi)) continue;
      EvictedObject o;
      o.key = std::move(e.key);
      if (e.kind == EntryKind::kTombstone) {
        o.tombstone = true;
      } else if (e.kind == EntryKind::kMediumRef) {
        o.value = medium_value(e.payload);
      } else {
        o.value = std::move(e.payload);
      }
      out.push_back(std::move(o));
    }
  }
  return out;
}

DramMemory DramTier::memory() const {
  DramMemory m;
  m.pages = page_bytes_;
  m.buffers = buffer_bytes_;
  m.medium = medium_bytes_;
  m.index = leaves_by_id_.size() * (kChildPointerBytes + kLeafDescriptorBytes) + fence_bytes_;
  return m;
}

DramStats DramTier::stats() const {
  DramStats s = stats_;
  s.gets = gets_.load(std::memory_order_relaxed);
  s.buffer_hits = buffer_hits_.load(std::memory_order_relaxed);
  s.decoded_subpages = decoded_subpages_.load(std::memory_order_relaxed);
  s.page_decodes = page_decodes_.load(std::memory_order_relaxed);
  return s;
}

std::vector<DramTier::LeafInfo> DramTier::leaves() const {
  std::vector<LeafInfo> out;
  auto& tree = const_cast<BTreeIndex<std::unique_ptr<Leaf>>&>(tree_);
  for (auto c = tree.begin(); c.valid(); c.next()) {
    const Leaf* l = c.value().get();
    out.push_back(LeafInfo{l->fence, l->bypassed, l->counter.load(std::memory_order_relaxed),
                           l->referenced.load(std::memory_order_relaxed), l->buffer.size(), l->page_bytes});
  }
  return out;
}

}  // namespace zipcache
