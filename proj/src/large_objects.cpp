#include "zipcache/large_objects.hpp"

#include <algorithm>

#include "zipcache/errors.hpp"

namespace zipcache {

void LargeObjectConfig::validate() const {
  if (block_count == 0) throw ConfigError("large-object region is empty");
  if (min_size == 0) throw ConfigError("large-object minimum size must be positive");
}

RunAllocator::RunAllocator(uint64_t blocks) : blocks_(blocks), free_blocks_(blocks) {
  if (blocks > 0) runs_.emplace(0, blocks);
}

std::optional<uint64_t> RunAllocator::allocate(uint64_t n) {
  if (n == 0) throw ContractViolation("allocation of zero blocks");
  for (auto it = runs_.begin(); it != runs_.end(); ++it) {
    if (it->second < n) continue;
    const uint64_t start = it->first;
    const uint64_t rest = it->second - n;
    runs_.erase(it);
    if (rest > 0) runs_.emplace(start + n, rest);
    free_blocks_ -= n;
    return start;
  }
  return std::nullopt;
}

void RunAllocator::release(uint64_t start, uint64_t n) {
  if (n == 0 || start + n > blocks_) throw ContractViolation("release outside the allocator range");
  const uint64_t released = n;
  auto next = runs_.lower_bound(start);
  if (next != runs_.end() && next->first < start + n) throw ContractViolation("double release");
  if (next != runs_.begin()) {
    auto prev = std::prev(next);
    if (prev->first + prev->second > start) throw ContractViolation("double release");
    if (prev->first + prev->second == start) {
      start = prev->first;
      n += prev->second;
      runs_.erase(prev);
    }
  }
  if (next != runs_.end() && next->first == start + n) {
    n += next->second;
    runs_.erase(next);
  }
  runs_.emplace(start, n);
  free_blocks_ += released;
}

uint64_t RunAllocator::largest_run() const {
  uint64_t best = 0;
  for (const auto& [s, n] : runs_) best = std::max(best, n);
  return best;
}

LargeObjectStore::LargeObjectStore(CsdDevice& device, LargeObjectConfig config)
    : dev_(device), config_(config), index_(config.index_fanout), alloc_(config.block_count) {
  config_.validate();
  if (config_.first_lba + config_.block_count > dev_.block_count()) {
    throw ConfigError("large-object region exceeds the device");
  }
}

void LargeObjectStore::put(std::string_view key, ByteSpan value) {
  if (value.size() < config_.min_size) throw ContractViolation("value too small for the large-object store");
  if (value.size() > UINT32_MAX) throw ContractViolation("value too large");
  const auto blocks = static_cast<uint32_t>((value.size() + kBlockSize - 1) / kBlockSize);
  if (blocks > config_.block_count) throw CapacityError("value larger than the large-object region");

  // The previous copy stays live until the new one is written.
  std::optional<uint64_t> start;
  while (!(start = alloc_.allocate(blocks))) {
    if (!evict_one(key)) throw CapacityError("no room for large object");
  }

  Bytes block(kBlockSize);
  uint32_t done = 0;
  while (done < blocks) {
    const size_t off = size_t{done} * kBlockSize;
    const size_t n = std::min<size_t>(kBlockSize, value.size() - off);
    std::fill(block.begin(), block.end(), 0);
    std::copy_n(value.begin() + static_cast<std::ptrdiff_t>(off), n, block.begin());
    try {
      dev_.write_block(config_.first_lba + *start + done, block);
      ++stats_.device_writes;
      ++done;
    } catch (const CapacityError&) {
      if (evict_one(key)) continue;
      for (uint32_t i = 0; i < done; ++i) dev_.trim(config_.first_lba + *start + i);
      stats_.device_trims += done;
      alloc_.release(*start, blocks);
      throw;
    }
  }

  if (auto* old = index_.find(key)) {
    const LargeObjectRef prev = *old;
    index_.erase(key);
    release(prev);
  }
  index_.insert(std::string(key), LargeObjectRef{*start, blocks, static_cast<uint32_t>(value.size()), true});
  stats_.v_obj += key.size() + value.size();
  ++stats_.puts;
}

std::optional<Bytes> LargeObjectStore::get(std::string_view key) {
  ++stats_.gets;
  auto* r = index_.find(key);
  if (r == nullptr) return std::nullopt;
  r->referenced = true;
  Bytes out(size_t{r->block_count} * kBlockSize);
  for (uint32_t i = 0; i < r->block_count; ++i) {
    dev_.read_block_into(config_.first_lba + r->lba_start + i,
                         MutableByteSpan(out).subspan(size_t{i} * kBlockSize, kBlockSize));
  }
  stats_.device_reads += r->block_count;
  out.resize(r->byte_length);
  ++stats_.hits;
  return out;
}

bool LargeObjectStore::erase(std::string_view key) {
  auto removed = index_.erase(key);
  if (!removed) return false;
  release(*removed);
  ++stats_.deletes;
  return true;
}

bool LargeObjectStore::contains(std::string_view key) const {
  return const_cast<BTreeIndex<LargeObjectRef>&>(index_).find(key) != nullptr;
}

std::optional<LargeObjectRef> LargeObjectStore::ref(std::string_view key) const {
  auto* r = const_cast<BTreeIndex<LargeObjectRef>&>(index_).find(key);
  if (r == nullptr) return std::nullopt;
  return *r;
}

void LargeObjectStore::release(const LargeObjectRef& r) {
  for (uint32_t i = 0; i < r.block_count; ++i) dev_.trim(config_.first_lba + r.lba_start + i);
  stats_.device_trims += r.block_count;
  alloc_.release(r.lba_start, r.block_count);
}

bool LargeObjectStore::evict_one(std::string_view keep) {
  if (index_.empty()) return false;
  size_t budget = 2 * index_.size() + 1;
  auto c = clock_started_ ? index_.upper_bound(clock_hand_) : index_.begin();
  clock_started_ = true;
  if (!c.valid()) c = index_.begin();
  while (budget-- > 0) {
    const std::string k = c.key();
    clock_hand_ = k;
    if (k != keep) {
      if (c.value().referenced) {
        c.value().referenced = false;
      } else {
        auto r = index_.erase(k);
        release(*r);
        ++stats_.evictions;
        if (observer_) observer_(k);
        return true;
      }
    }
    c.next();
    if (!c.valid()) c = index_.begin();
  }
  return false;
}

std::vector<std::pair<std::string, Bytes>> LargeObjectStore::scan(std::string_view lo, std::string_view hi) {
  std::vector<std::string> keys;
  for (auto c = index_.lower_bound(lo); c.valid() && (hi.empty() || c.key() < hi); c.next()) {
    keys.push_back(c.key());
  }
  std::vector<std::pair<std::string, Bytes>> out;
  out.reserve(keys.size());
  for (auto& k : keys) {
    auto v = get(k);
    out.emplace_back(std::move(k), std::move(*v));
  }
  return out;
}

}  // namespace zipcache
