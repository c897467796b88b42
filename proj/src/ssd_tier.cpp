#include "zipcache/ssd_tier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "zipcache/errors.hpp"
#include "zipcache/hash.hpp"

namespace zipcache {

namespace {

bool ssd_less(const SsdEntry& a, const SsdEntry& b) { return a.key < b.key; }

}  // namespace

uint32_t SsdConfig::fill_limit() const {
  return static_cast<uint32_t>(std::floor(fill_threshold * static_cast<double>(kBlockSize)));
}

void SsdConfig::validate() const {
  if (superleaf_blocks == 0 || superleaf_blocks > 255) throw ConfigError("super-leaf must have 1..255 sub-pages");
  if (!(fill_threshold >= 0.5 && fill_threshold <= 1.0)) throw ConfigError("fill threshold must be in [0.5, 1]");
  if (block_count < superleaf_blocks) throw ConfigError("SSD tier region smaller than one super-leaf");
  if (drop_batch == 0) throw ConfigError("drop batch must be positive");
}

uint32_t SsdTier::Desc::objects() const { return std::accumulate(counts.begin(), counts.end(), 0u); }

SsdTier::SsdTier(CsdDevice& device, SsdConfig config)
    : dev_(device), config_(config), tree_(config.index_fanout), block_(kBlockSize) {
  config_.validate();
  if (config_.first_lba + config_.block_count > dev_.block_count()) {
    throw ConfigError("SSD tier region exceeds the device");
  }
  const auto slots = static_cast<uint32_t>(config_.block_count / config_.superleaf_blocks);
  free_slots_.reserve(slots);
  for (uint32_t s = slots; s-- > 0;) free_slots_.push_back(s);
}

uint32_t SsdTier::subpage_of(std::string_view key) const {
  return subpage_slot(key, kSsdSubpageSeed, config_.superleaf_blocks) + 1;
}

uint64_t SsdTier::lba_of(uint32_t slot, uint32_t sub) const {
  return config_.first_lba + uint64_t{slot} * config_.superleaf_blocks + sub;
}

SsdTier::Desc SsdTier::blank_desc(uint32_t slot) const {
  Desc d;
  d.slot = slot;
  d.fill.assign(config_.superleaf_blocks, 0);
  d.counts.assign(config_.superleaf_blocks, 0);
  return d;
}

SsdTier::Desc& SsdTier::leaf_for(std::string_view key, std::string* fence) {
  auto c = tree_.floor(key);
  if (!c.valid()) throw ContractViolation("SSD tier index lost its leftmost leaf");
  if (fence != nullptr) *fence = c.key();
  return c.value();
}

void SsdTier::ensure_root() {
  if (!tree_.empty()) return;
  if (free_slots_.empty()) throw CapacityError("no free super-leaf slot");
  const uint32_t slot = free_slots_.back();
  free_slots_.pop_back();
  tree_.insert(std::string(), blank_desc(slot));
}

void SsdTier::write_sub(uint64_t lba, std::span<const SsdEntry> entries) {
  encode_ssd_subpage(entries, block_);
  dev_.write_block(lba, block_);
  ++stats_.device_writes;
}

void SsdTier::load(const Desc& d, uint32_t sub, Contents& contents, std::vector<bool>& loaded) {
  if (loaded[sub]) return;
  loaded[sub] = true;
  contents[sub].clear();
  if (d.fill[sub] == 0) return;
  dev_.read_block_into(lba_of(d.slot, sub), block_);
  ++stats_.device_reads;
  decode_ssd_subpage(block_, contents[sub]);
}

SsdGetResult SsdTier::get(std::string_view key) {
  SsdGetResult r;
  ++stats_.gets;
  if (tree_.empty()) return r;
  Desc& d = leaf_for(key, nullptr);
  d.referenced = true;
  dev_.read_block_into(lba_of(d.slot, subpage_of(key) - 1), block_);
  ++stats_.device_reads;
  r.device_reads = 1;
  if (auto v = find_in_ssd_subpage(block_, key)) {
    r.value = Bytes(v->begin(), v->end());
    ++stats_.hits;
  }
  return r;
}

void SsdTier::absorb(std::span<const EvictedObject> batch) {
  for (size_t i = 1; i < batch.size(); ++i) {
    if (!(batch[i - 1].key < batch[i].key)) throw ContractViolation("absorb batch must be strictly key-sorted");
  }
  size_t i = 0;
  while (i < batch.size()) {
    ensure_root();
    auto c = tree_.floor(batch[i].key);
    c.next();
    std::optional<std::string> hi;
    if (c.valid()) hi = c.key();
    size_t j = i + 1;
    while (j < batch.size() && (!hi || batch[j].key < *hi)) ++j;
    auto group = batch.subspan(i, j - i);

    // Re-applying a group is idempotent, so a retry after dropping cold
    // leaves simply finishes the sub-pages the failed attempt did not reach.
    for (;;) {
      try {
        apply_group(group.front().key, group);
        break;
      } catch (const CapacityError&) {
        ++stats_.capacity_retries;
        if (drop_cold_leaves(group.front().key, config_.drop_batch) == 0) throw;
      }
    }
    for (const auto& o : group) {
      if (o.tombstone) {
        ++stats_.absorbed_tombstones;
      } else {
        ++stats_.absorbed_objects;
      }
    }
    i = j;
  }
}

void SsdTier::apply_group(std::string_view first_key, std::span<const EvictedObject> objs) {
  const uint32_t m = config_.superleaf_blocks;
  std::string fence;
  Desc* d = &leaf_for(first_key, &fence);
  d->referenced = true;

  Contents contents(m);
  std::vector<bool> loaded(m, false);
  std::vector<bool> changed(m, false);
  uint64_t evicted = 0;
  for (const auto& o : objs) {
    const uint32_t s = subpage_of(o.key) - 1;
    load(*d, s, contents, loaded);
    auto& v = contents[s];
    auto it = std::lower_bound(v.begin(), v.end(), o.key,
                               [](const SsdEntry& e, const std::string& k) { return e.key < k; });
    const bool present = it != v.end() && it->key == o.key;
    if (o.tombstone) {
      if (present) {
        v.erase(it);
        changed[s] = true;
      }
    } else {
      evicted += o.key.size() + o.value.size();
      if (!present) {
        v.insert(it, SsdEntry{o.key, o.value});
        changed[s] = true;
      } else if (it->value != o.value) {
        it->value = o.value;
        changed[s] = true;
      }
    }
  }

  for (uint32_t s = 0; s < m; ++s) {
    if (changed[s] && contents[s].size() > 1 && ssd_subpage_bytes(contents[s]) > config_.fill_limit()) {
      split_leaf(fence, contents, loaded);
      stats_.v_obj += evicted;
      return;
    }
  }

  for (uint32_t s = 0; s < m; ++s) {
    if (!changed[s]) continue;
    if (contents[s].empty()) {
      if (d->fill[s] != 0) {
        dev_.trim(lba_of(d->slot, s));
        ++stats_.device_trims;
      }
      d->fill[s] = 0;
    } else {
      write_sub(lba_of(d->slot, s), contents[s]);
      d->fill[s] = static_cast<uint16_t>(ssd_subpage_bytes(contents[s]));
    }
    d->counts[s] = static_cast<uint16_t>(contents[s].size());
  }
  stats_.v_obj += evicted;
}

std::pair<std::string, std::string> SsdTier::leaf_range(std::string_view key) {
  auto c = tree_.floor(key);
  if (!c.valid()) return {std::string(), std::string()};
  std::string lo = c.key();
  c.next();
  return {std::move(lo), c.valid() ? c.key() : std::string()};
}

bool SsdTier::run_fits(std::span<const SsdEntry> run) const {
  std::vector<size_t> bytes(config_.superleaf_blocks, kSsdSubpageHeader);
  std::vector<size_t> counts(config_.superleaf_blocks, 0);
  for (const auto& e : run) {
    const uint32_t s = subpage_of(e.key) - 1;
    bytes[s] += e.encoded_size();
    if (++counts[s] > 1 && bytes[s] > config_.fill_limit()) return false;
  }
  return true;
}

void SsdTier::split_leaf(const std::string& fence, Contents& contents, std::vector<bool>& loaded) {
  const uint32_t m = config_.superleaf_blocks;
  const Desc old = *tree_.find(fence);
  for (uint32_t s = 0; s < m; ++s) load(old, s, contents, loaded);

  std::vector<SsdEntry> all;
  for (auto& v : contents) {
    for (auto& e : v) all.push_back(std::move(e));
  }
  std::sort(all.begin(), all.end(), ssd_less);
  const std::string anchor = all.front().key;

  std::vector<std::pair<size_t, size_t>> pieces;
  std::vector<std::pair<size_t, size_t>> work{{0, all.size()}};
  while (!work.empty()) {
    auto [b, e] = work.back();
    work.pop_back();
    if (e - b <= 1 || run_fits(std::span<const SsdEntry>(all).subspan(b, e - b))) {
      pieces.emplace_back(b, e);
    } else {
      const size_t mid = b + (e - b) / 2;
      work.emplace_back(mid, e);
      work.emplace_back(b, mid);
    }
  }
  std::vector<std::string> fences(pieces.size());
  for (size_t p = 1; p < pieces.size(); ++p) fences[p] = all[pieces[p].first].key;

  // Pieces go to fresh slots; the old leaf stays intact until the commit.
  while (free_slots_.size() < pieces.size()) {
    if (drop_cold_leaves(anchor, pieces.size() - free_slots_.size()) == 0) {
      throw CapacityError("no super-leaf slots left for a split");
    }
  }

  std::vector<Desc> fresh;
  std::vector<uint64_t> written;
  try {
    for (size_t p = 0; p < pieces.size(); ++p) {
      fresh.push_back(blank_desc(free_slots_.back()));
      free_slots_.pop_back();
      Desc& nd = fresh.back();
      auto [b, e] = pieces[p];
      Contents part(m);
      for (size_t i = b; i < e; ++i) part[subpage_of(all[i].key) - 1].push_back(std::move(all[i]));
      for (uint32_t s = 0; s < m; ++s) {
        if (part[s].empty()) continue;
        write_sub(lba_of(nd.slot, s), part[s]);
        written.push_back(lba_of(nd.slot, s));
        nd.fill[s] = static_cast<uint16_t>(ssd_subpage_bytes(part[s]));
        nd.counts[s] = static_cast<uint16_t>(part[s].size());
      }
    }
  } catch (const CapacityError&) {
    for (uint64_t lba : written) dev_.trim(lba);
    stats_.device_trims += written.size();
    for (const auto& f : fresh) free_slots_.push_back(f.slot);
    throw;
  }

  // Dropping the leftmost leaf above may have moved ours to the empty fence.
  std::string cur;
  leaf_for(anchor, &cur);
  tree_.erase(cur);
  fences[0] = cur;
  for (size_t p = 0; p < fresh.size(); ++p) tree_.insert(fences[p], std::move(fresh[p]));
  for (uint32_t s = 0; s < m; ++s) {
    if (old.fill[s] != 0) {
      dev_.trim(lba_of(old.slot, s));
      ++stats_.device_trims;
    }
  }
  free_slots_.push_back(old.slot);
  stats_.splits += pieces.size() - 1;
}

size_t SsdTier::drop_cold_leaves(std::string_view keep_key, size_t k) {
  if (tree_.size() <= 1) return 0;
  size_t dropped = 0;
  size_t budget = 2 * tree_.size() + 1;
  auto c = clock_started_ ? tree_.upper_bound(clock_hand_) : tree_.begin();
  clock_started_ = true;
  if (!c.valid()) c = tree_.begin();
  while (dropped < k && budget-- > 0 && tree_.size() > 1) {
    std::string keep;
    leaf_for(keep_key, &keep);
    const std::string here = c.key();
    if (here != keep) {
      Desc& d = c.value();
      if (d.referenced) {
        d.referenced = false;
      } else {
        clock_hand_ = here;
        drop_leaf(here);
        ++dropped;
        c = tree_.upper_bound(clock_hand_);
        if (!c.valid()) c = tree_.begin();
        continue;
      }
    }
    clock_hand_ = here;
    c.next();
    if (!c.valid()) c = tree_.begin();
  }
  return dropped;
}

void SsdTier::drop_leaf(const std::string& fence) {
  const Desc d = *tree_.find(fence);
  for (uint32_t s = 0; s < config_.superleaf_blocks; ++s) {
    if (d.fill[s] == 0) continue;
    if (observer_) {
      std::vector<SsdEntry> entries;
      dev_.read_block_into(lba_of(d.slot, s), block_);
      ++stats_.device_reads;
      decode_ssd_subpage(block_, entries);
      for (const auto& e : entries) observer_(e.key);
    }
    dev_.trim(lba_of(d.slot, s));
    ++stats_.device_trims;
  }
  free_slots_.push_back(d.slot);
  ++stats_.dropped_leaves;
  stats_.dropped_objects += d.objects();
  tree_.erase(fence);
  if (fence.empty() && !tree_.empty()) {
    // The leftmost leaf always owns the empty fence.
    auto first = tree_.begin();
    const std::string old = first.key();
    auto moved = tree_.erase(old);
    tree_.insert(std::string(), std::move(*moved));
  }
}

std::vector<std::pair<std::string, Bytes>> SsdTier::scan(std::string_view lo, std::string_view hi) {
  std::vector<std::pair<std::string, Bytes>> out;
  if (tree_.empty() || (!hi.empty() && hi <= lo)) return out;
  auto c = tree_.floor(lo);
  if (!c.valid()) c = tree_.begin();
  for (; c.valid() && (hi.empty() || c.key() < hi); c.next()) {
    const Desc& d = c.value();
    std::vector<SsdEntry> entries;
    for (uint32_t s = 0; s < config_.superleaf_blocks; ++s) {
      if (d.fill[s] == 0) continue;
      dev_.read_block_into(lba_of(d.slot, s), block_);
      ++stats_.device_reads;
      decode_ssd_subpage(block_, entries);
    }
    std::sort(entries.begin(), entries.end(), ssd_less);
    for (auto& e : entries) {
      if (e.key < lo || (!hi.empty() && e.key >= hi)) continue;
      out.emplace_back(std::move(e.key), std::move(e.value));
    }
  }
  return out;
}

uint64_t SsdTier::nonleaf_bytes() const {
  // Bottom records carry the leaf LBA, m and the per-sub-page fill bytes.
  const size_t leaf_record = kIndexKeySlot + 8 + 1 + 2 * size_t{config_.superleaf_blocks} + 1;
  const size_t inner_record = kIndexKeySlot + kIndexChildRef;
  uint64_t bytes = 0;
  tree_.for_each_node([&](const BTreeIndex<Desc>::NodeInfo& n) {
    bytes += kIndexNodeHeader + n.entries * (n.bottom ? leaf_record : inner_record);
  });
  return bytes;
}

uint64_t SsdTier::leaf_bytes() const { return uint64_t{tree_.size()} * config_.superleaf_blocks * kBlockSize; }

double SsdTier::memory_overhead() const {
  const uint64_t leaves = leaf_bytes();
  return leaves == 0 ? 0.0 : static_cast<double>(nonleaf_bytes()) / static_cast<double>(leaves);
}

std::vector<SsdTier::LeafInfo> SsdTier::leaves() const {
  std::vector<LeafInfo> out;
  auto& tree = const_cast<BTreeIndex<Desc>&>(tree_);
  for (auto c = tree.begin(); c.valid(); c.next()) {
    const Desc& d = c.value();
    out.push_back(LeafInfo{c.key(), lba_of(d.slot, 0), d.fill, d.objects()});
  }
  return out;
}

}  // namespace zipcache
