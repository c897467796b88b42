#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>

#include "zipcache/dram_tier.hpp"
#include "zipcache/errors.hpp"
#include "zipcache/hash.hpp"

using namespace zipcache;

namespace {

std::string key_of(uint64_t id) {
  std::string k(16, '\0');
  for (int i = 0; i < 8; ++i) k[i] = static_cast<char>(id >> (56 - 8 * i));
  for (int i = 0; i < 8; ++i) k[8 + i] = static_cast<char>(0xA0 + i);
  return k;
}

Bytes value_of(uint64_t id, uint64_t version, size_t size) {
  std::mt19937_64 rng(id * 1000003 + version);
  Bytes v(size, 0);
  for (size_t i = 0; i < size / 2; ++i) v[i] = static_cast<uint8_t>(rng());
  return v;
}

// Expected sub-page index, computed from the documented hash definition.
uint32_t expected_subpage(std::string_view key) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : key) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  h ^= 0x9E3779B97F4A7C15ULL;
  h ^= h >> 33;
  h *= 0xff51afd7ed558ccdULL;
  h ^= h >> 33;
  h *= 0xc4ceb9fe1a85ec53ULL;
  h ^= h >> 33;
  return static_cast<uint32_t>(h % 16) + 1;
}

std::optional<Bytes> value_or_absent(const DramGetResult& r) {
  if (r.status == DramLookup::kValue) return r.value;
  return std::nullopt;
}

}  // namespace

TEST(DramTier, SubpageHashMatchesDefinition) {
  DramTier t;
  for (uint64_t i = 0; i < 1000; ++i) {
    EXPECT_EQ(t.subpage_of(key_of(i)), expected_subpage(key_of(i)));
  }
}

TEST(DramTier, BufferHitNeedsNoDecode) {
  DramTier t;
  Bytes v = value_of(1, 0, 64);
  t.put(key_of(1), v);
  auto r = t.get(key_of(1));
  EXPECT_EQ(r.status, DramLookup::kValue);
  EXPECT_TRUE(r.buffer_hit);
  EXPECT_EQ(r.decoded_subpages, 0u);
  EXPECT_EQ(r.value, v);
  EXPECT_EQ(t.get(key_of(2)).status, DramLookup::kAbsent);
}

TEST(DramTier, LastWriterWinsInBuffer) {
  DramTier t;
  t.put(key_of(1), value_of(1, 0, 64));
  t.put(key_of(1), value_of(1, 1, 64));
  EXPECT_EQ(t.leaves().front().buffered_entries, 1u);
  EXPECT_EQ(t.get(key_of(1)).value, value_of(1, 1, 64));
  t.put_tombstone(key_of(1));
  EXPECT_EQ(t.get(key_of(1)).status, DramLookup::kTombstone);
}

TEST(DramTier, FlushTriggerAtThreshold) {
  DramConfig c;
  c.buffer_threshold = 256;
  DramTier t(c);
  // 16B key + 64B value + 4B header = 84B per entry.
  for (int i = 0; i < 3; ++i) t.put(key_of(i), value_of(i, 0, 64));
  EXPECT_EQ(t.pending_flushes(), 0u);
  t.put(key_of(3), value_of(3, 0, 64));
  EXPECT_EQ(t.pending_flushes(), 1u);
  EXPECT_EQ(t.memory().buffers, 4u * 84u);
}

TEST(DramTier, OneFlushIsOneDecodeAndOneEncode) {
  DramTier t;
  for (int i = 0; i < 8; ++i) t.put(key_of(i), value_of(i, 0, 32));
  t.flush_all();
  auto before = t.stats();
  for (int i = 8; i < 12; ++i) t.put(key_of(i), value_of(i, 0, 32));
  t.flush_all();
  auto after = t.stats();
  EXPECT_EQ(after.page_decodes - before.page_decodes, 1u);
  EXPECT_EQ(after.recompressions - before.recompressions, 1u);
  EXPECT_EQ(after.flushes - before.flushes, 1u);
}

TEST(DramTier, EarlyTerminationDecodesExactlyFKeySubpages) {
  DramTier t;
  for (uint64_t i = 0; i < 20; ++i) t.put(key_of(i), value_of(i, 0, 40));
  t.flush_all();
  for (uint64_t i = 0; i < 20; ++i) {
    auto r = t.get(key_of(i));
    ASSERT_EQ(r.status, DramLookup::kValue);
    EXPECT_FALSE(r.buffer_hit);
    EXPECT_EQ(r.decoded_subpages, expected_subpage(key_of(i)));
    EXPECT_EQ(r.value, value_of(i, 0, 40));
  }
  // A key hashed to sub-page 1 decodes a single sub-page.
  uint64_t id = 1000;
  while (expected_subpage(key_of(id)) != 1) ++id;
  t.put(key_of(id), value_of(id, 0, 40));
  t.flush_all();
  EXPECT_EQ(t.get(key_of(id)).decoded_subpages, 1u);
}

TEST(DramTier, TombstoneDeletesOnFlush) {
  DramTier t;
  t.put(key_of(5), value_of(5, 0, 64));
  t.flush_all();
  t.put_tombstone(key_of(5));
  t.flush_all();
  EXPECT_EQ(t.get(key_of(5)).status, DramLookup::kTombstone);
}

TEST(DramTier, MediumObjectsAreCompressedIndividually) {
  DramTier t;
  Bytes v = value_of(9, 0, 1500);
  t.put(key_of(9), v);
  EXPECT_LT(t.memory().medium, 1500u);
  EXPECT_GT(t.memory().medium, 700u);
  t.flush_all();
  EXPECT_EQ(t.get(key_of(9)).value, v);
  t.put(key_of(9), value_of(9, 1, 64));
  t.flush_all();
  EXPECT_EQ(t.memory().medium, 0u);
  EXPECT_THROW(t.put(key_of(1), Bytes(3000, 1)), ContractViolation);
}

TEST(DramTier, SequentialInsertsSplitAndStayRetrievable) {
  DramTier t;
  for (uint64_t i = 0; i < 10000; ++i) {
    t.put(key_of(i), value_of(i, 0, 64));
    t.background_work(4);
  }
  t.flush_all();
  EXPECT_GT(t.leaf_count(), 100u);
  EXPECT_LE(t.tree_height(), 4u);
  EXPECT_GT(t.stats().splits, 0u);
  for (uint64_t i = 0; i < 10000; ++i) ASSERT_EQ(t.get(key_of(i)).value, value_of(i, 0, 64)) << i;
  // Leaves partition the key space in order.
  auto leaves = t.leaves();
  EXPECT_EQ(leaves.front().fence, "");
  for (size_t i = 1; i < leaves.size(); ++i) EXPECT_LT(leaves[i - 1].fence, leaves[i].fence);
}

TEST(DramTier, RandomOpsMatchOracle) {
  DramConfig c;
  c.refresh_period = 512;
  c.age_period = 2048;
  DramTier t(c);
  std::map<std::string, std::optional<Bytes>> oracle;
  std::mt19937_64 rng(77);
  for (int op = 0; op < 100000; ++op) {
    uint64_t id = rng() % 4000;
    if (rng() % 10 < 2) id = rng() % 40;  // a hot corner
    std::string k = key_of(id);
    const int what = static_cast<int>(rng() % 10);
    if (what < 4) {
      size_t size = (rng() % 8 == 0) ? 200 + rng() % 1800 : 1 + rng() % 128;
      Bytes v = value_of(id, op, size);
      t.put(k, v);
      oracle[k] = v;
    } else if (what < 5) {
      t.put_tombstone(k);
      oracle[k] = std::nullopt;
    } else {
      auto r = t.get(k);
      auto it = oracle.find(k);
      if (it == oracle.end()) {
        ASSERT_EQ(r.status, DramLookup::kAbsent);
      } else if (!it->second) {
        ASSERT_EQ(r.status, DramLookup::kTombstone);
      } else {
        ASSERT_EQ(r.status, DramLookup::kValue);
        ASSERT_EQ(r.value, *it->second);
      }
    }
    t.background_work(2);
    if (op % 20000 == 19999) t.flush_all();
  }
  EXPECT_GT(t.stats().refreshes, 0u);
  EXPECT_GT(t.stats().agings, 0u);

  // Scan agrees with the oracle, tombstones included.
  auto all = t.scan("", "");
  ASSERT_EQ(all.size(), oracle.size());
  auto it = oracle.begin();
  for (const auto& o : all) {
    ASSERT_EQ(o.key, it->first);
    ASSERT_EQ(o.tombstone, !it->second.has_value());
    if (it->second) ASSERT_EQ(o.value, *it->second);
    ++it;
  }
  auto part = t.scan(key_of(100), key_of(200));
  size_t expect = 0;
  for (auto& [k, v] : oracle) expect += (k >= key_of(100) && k < key_of(200));
  EXPECT_EQ(part.size(), expect);
}

TEST(DramTier, HotSetRuleOnSyntheticCounters) {
  std::vector<uint32_t> uniform(1000, 5);
  auto u = compute_hot_set(uniform, 3.0);
  EXPECT_EQ(std::count(u.hot.begin(), u.hot.end(), true), 0);

  std::vector<uint32_t> c(1000, 1);
  c[0] = 100;
  // Oracle: mean and population deviation computed directly.
  double mean = (100.0 + 999.0) / 1000.0;
  double var = ((100 - mean) * (100 - mean) + 999 * (1 - mean) * (1 - mean)) / 1000.0;
  auto d = compute_hot_set(c, 3.0);
  EXPECT_NEAR(d.mean, mean, 1e-12);
  EXPECT_NEAR(d.stddev, std::sqrt(var), 1e-12);
  EXPECT_TRUE(d.hot[0]);
  EXPECT_EQ(std::count(d.hot.begin(), d.hot.end(), true), 1);
}

TEST(DramTier, BypassDoesNotChangeResults) {
  DramConfig c;
  c.refresh_period = uint64_t{1} << 40;
  DramTier t(c);
  for (uint64_t i = 0; i < 3000; ++i) t.put(key_of(i), value_of(i, 0, 64));
  t.flush_all();
  // Hammer the first few leaves so they stand out.
  for (int rep = 0; rep < 200; ++rep) {
    for (uint64_t i = 0; i < 30; ++i) t.get(key_of(i));
  }
  t.refresh_hot_set();
  EXPECT_GT(t.bypassed_count(), 0u);
  EXPECT_LT(t.bypassed_count(), t.leaf_count() / 4);
  auto hit = t.get(key_of(3));
  EXPECT_EQ(hit.decoded_subpages, 0u);
  for (uint64_t i = 0; i < 3000; ++i) ASSERT_EQ(t.get(key_of(i)).value, value_of(i, 0, 64));
  // Updates to bypassed leaves work and need no page encode.
  auto before = t.stats().recompressions;
  t.put(key_of(3), value_of(3, 1, 64));
  t.flush_all();
  EXPECT_EQ(t.stats().recompressions, before);
  EXPECT_EQ(t.get(key_of(3)).value, value_of(3, 1, 64));

  // Cooling down: uniform access returns everything to compressed form.
  for (int a = 0; a < 20; ++a) t.age_counters();
  t.refresh_hot_set();
  EXPECT_EQ(t.bypassed_count(), 0u);
  for (uint64_t i = 0; i < 3000; ++i) ASSERT_EQ(t.get(key_of(i)).value, i == 3 ? value_of(3, 1, 64) : value_of(i, 0, 64));
}

TEST(DramTier, BypassDisabledKeepsEverythingCompressed) {
  DramConfig c;
  c.bypass_enabled = false;
  DramTier t(c);
  for (uint64_t i = 0; i < 2000; ++i) t.put(key_of(i), value_of(i, 0, 64));
  t.flush_all();
  for (int rep = 0; rep < 100; ++rep) t.get(key_of(1));
  t.refresh_hot_set();
  EXPECT_EQ(t.bypassed_count(), 0u);
}

TEST(DramTier, AgingHalvesCounters) {
  DramTier t;
  t.put(key_of(1), value_of(1, 0, 8));
  for (int i = 0; i < 6; ++i) t.get(key_of(1));
  EXPECT_EQ(t.leaves().front().counter, 7u);
  t.age_counters();
  EXPECT_EQ(t.leaves().front().counter, 3u);
  t.age_counters();
  t.age_counters();
  EXPECT_EQ(t.leaves().front().counter, 0u);
  t.age_counters();
  EXPECT_EQ(t.leaves().front().counter, 0u);
}

TEST(DramTier, SecondChanceClock) {
  DramTier t;
  for (uint64_t i = 0; i < 2000; ++i) t.put(key_of(i), value_of(i, 0, 64));
  t.flush_all();
  const size_t n = t.leaf_count();
  ASSERT_GT(n, 8u);
  // All reference bits are set: the first pass only clears them.
  auto first = t.eviction_candidates(3);
  ASSERT_EQ(first.size(), 3u);
  auto leaves = t.leaves();
  EXPECT_EQ(first[0], leaves[0].fence);
  EXPECT_EQ(first[1], leaves[1].fence);
  // A recently read leaf is skipped while colder ones exist.
  t.get(leaves[4].fence.empty() ? key_of(0) : leaves[4].fence);
  auto next = t.eviction_candidates(3);
  EXPECT_EQ(next[0], leaves[3].fence);
  EXPECT_EQ(next[1], leaves[5].fence);
  EXPECT_EQ(t.eviction_candidates(10 * n).size(), n);
}

TEST(DramTier, EvictLeafReturnsObjectsAndFreesMemory) {
  DramTier t;
  for (uint64_t i = 0; i < 2000; ++i) t.put(key_of(i), value_of(i, 0, i % 10 == 0 ? 600 : 64));
  t.put_tombstone(key_of(5));
  t.flush_all();
  for (uint64_t i = 2000; i < 2005; ++i) t.put(key_of(i), value_of(i, 0, 64));  // left buffered
  auto before = t.memory();
  std::map<std::string, EvictedObject> seen;
  size_t leaves = t.leaf_count();
  while (t.leaf_count() > 0) {
    auto cands = t.eviction_candidates(1);
    ASSERT_EQ(cands.size(), 1u);
    auto objs = t.evict_leaf(cands[0]);
    for (size_t i = 1; i < objs.size(); ++i) ASSERT_LT(objs[i - 1].key, objs[i].key);
    for (auto& o : objs) seen.emplace(o.key, o);
  }
  EXPECT_GT(before.total(), 0u);
  EXPECT_EQ(t.memory().total(), 0u);
  EXPECT_EQ(t.stats().evicted_leaves, leaves);
  ASSERT_EQ(seen.size(), 2005u);
  EXPECT_TRUE(seen[key_of(5)].tombstone);
  EXPECT_EQ(seen[key_of(10)].value, value_of(10, 0, 600));
  EXPECT_EQ(seen[key_of(2003)].value, value_of(2003, 0, 64));
  EXPECT_EQ(t.get(key_of(1)).status, DramLookup::kAbsent);
}

TEST(DramTier, EvictingTheFirstLeafKeepsRoutingTotal) {
  DramTier t;
  for (uint64_t i = 100; i < 1100; ++i) t.put(key_of(i), value_of(i, 0, 64));
  t.flush_all();
  auto first = t.leaves().front().fence;
  t.evict_leaf(first);
  EXPECT_EQ(t.leaves().front().fence, "");
  t.put(key_of(1), value_of(1, 0, 64));
  t.flush_all();
  EXPECT_EQ(t.get(key_of(1)).value, value_of(1, 0, 64));
}

TEST(DramTier, BufferPoolCapBoundsBufferedBytes) {
  DramConfig c;
  c.buffer_pool_bytes = 2000;
  DramTier t(c);
  for (uint64_t i = 0; i < 5000; ++i) t.put(key_of(i), value_of(i, 0, 64));
  t.flush_all();
  std::mt19937_64 rng(3);
  for (int i = 0; i < 5000; ++i) {
    t.put(key_of(rng() % 5000), value_of(i, 1, 64));
    t.background_work(4);
    ASSERT_LE(t.memory().buffers, 2000u + 84u);
  }
}

TEST(DramTier, RecompressionsDropWithBuffering) {
  auto run = [](uint32_t threshold) {
    DramConfig c;
    c.buffer_threshold = threshold;
    c.bypass_enabled = false;
    DramTier t(c);
    for (uint64_t i = 0; i < 4000; ++i) t.put(key_of(i), value_of(i, 0, 64));
    t.flush_all();
    auto before = t.stats().recompressions;
    std::mt19937_64 rng(5);
    for (int i = 0; i < 20000; ++i) {
      t.put(key_of(rng() % 4000), value_of(i, 2, 64));
      t.background_work(2);
    }
    t.flush_all();
    return t.stats().recompressions - before;
  };
  auto none = run(0);
  auto buffered = run(256);
  EXPECT_EQ(none, 20000u);
  EXPECT_LE(buffered * 4, none + none / 20);
}

TEST(DramTier, ColdLeavesInMatchesScanOfLeafList) {
  DramTier t;
  for (uint64_t i = 0; i < 6000; ++i) t.put(key_of(i), value_of(i, 0, 64));
  t.flush_all();
  t.eviction_candidates(t.leaf_count() / 2);
  std::mt19937_64 rng(8);
  for (int i = 0; i < 300; ++i) t.get(key_of(rng() % 6000));
  const auto info = t.leaves();
  ASSERT_GT(info.size(), 20u);
  for (int trial = 0; trial < 50; ++trial) {
    const std::string lo = key_of(rng() % 6000);
    const std::string hi = trial % 5 == 0 ? std::string() : key_of(rng() % 7000);
    const size_t limit = 1 + rng() % 40;
    std::vector<std::string> want;
    size_t first = 0;
    for (size_t i = 0; i < info.size(); ++i) {
      if (info[i].fence <= lo) first = i;
    }
    for (size_t i = first; i < info.size() && want.size() < limit; ++i) {
      if (!hi.empty() && info[i].fence >= hi) break;
      if (!info[i].referenced) want.push_back(info[i].fence);
    }
    EXPECT_EQ(t.cold_leaves_in(lo, hi, limit), want) << trial;
  }
}

TEST(DramTier, SplitPiecesShareTheAccessCount) {
  DramConfig c;
  c.buffer_threshold = 1 << 20;
  c.bypass_enabled = false;
  DramTier t(c);
  for (uint64_t i = 0; i < 8; ++i) t.put(key_of(i), value_of(i, 0, 64));
  t.flush_all();
  ASSERT_EQ(t.leaf_count(), 1u);
  for (int i = 0; i < 5000; ++i) t.get(key_of(i % 8));
  for (uint64_t i = 8; i < 120; ++i) t.put(key_of(i), value_of(i, 0, 64));
  const uint64_t before = t.leaves().front().counter;
  t.flush_all();
  const auto after = t.leaves();
  ASSERT_GT(after.size(), 1u);
  uint64_t sum = 0;
  for (const auto& l : after) {
    EXPECT_LT(l.counter, before);
    sum += l.counter;
  }
  EXPECT_LE(sum, before);
  EXPECT_GE(sum + after.size(), before);
}

TEST(DramTier, IndexMemoryIsPerLeafRecordPlusFences) {
  DramTier t;
  for (uint64_t i = 0; i < 5000; ++i) t.put(key_of(i), value_of(i, 0, 64));
  t.flush_all();
  uint64_t fences = 0;
  for (const auto& l : t.leaves()) fences += l.fence.size();
  EXPECT_EQ(t.memory().index, t.leaf_count() * (8 + 48) + fences);
  t.evict_leaf(t.leaves().front().fence);
  t.evict_leaf(t.leaves()[3].fence);
  fences = 0;
  for (const auto& l : t.leaves()) fences += l.fence.size();
  EXPECT_EQ(t.memory().index, t.leaf_count() * (8 + 48) + fences);
}
