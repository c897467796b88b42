#include <gtest/gtest.h>

#include <map>
#include <random>
#include <set>

#include "zipcache/errors.hpp"
#include "zipcache/ssd_tier.hpp"

using namespace zipcache;

namespace {

std::string key_of(uint64_t id) {
  std::string k(16, '\0');
  for (int i = 0; i < 8; ++i) k[i] = static_cast<char>(id >> (56 - 8 * i));
  for (int i = 0; i < 8; ++i) k[8 + i] = static_cast<char>(0x30 + i);
  return k;
}

Bytes value_of(uint64_t id, uint64_t version, size_t size, double random_share = 0.5) {
  std::mt19937_64 rng(id * 7919 + version);
  Bytes v(size, 0);
  const auto n = static_cast<size_t>(static_cast<double>(size) * random_share);
  for (size_t i = 0; i < n; ++i) v[i] = static_cast<uint8_t>(rng());
  return v;
}

struct Rig {
  explicit Rig(uint32_t m, double t = 0.75, uint64_t physical = uint64_t{64} << 20, uint32_t factor = 4)
      : dev(DeviceConfig::with_physical(physical, factor)),
        tier(dev, make_cfg(m, t, dev.block_count())) {}

  static SsdConfig make_cfg(uint32_t m, double t, uint64_t blocks) {
    SsdConfig c;
    c.superleaf_blocks = m;
    c.fill_threshold = t;
    c.block_count = blocks;
    return c;
  }

  CsdDevice dev;
  SsdTier tier;
};

void absorb_sorted(SsdTier& tier, std::map<std::string, EvictedObject>& batch) {
  std::vector<EvictedObject> v;
  for (auto& [k, o] : batch) v.push_back(o);
  tier.absorb(v);
  batch.clear();
}

size_t ssd_used_bytes(const std::vector<SsdEntry>& entries) {
  size_t n = 2;
  for (const auto& e : entries) n += 3 + e.key.size() + e.value.size();
  return n;
}

}  // namespace

TEST(SsdTier, ConfigValidation) {
  CsdDevice dev(DeviceConfig::with_physical(1 << 20, 2));
  SsdConfig c;
  c.block_count = dev.block_count();
  c.fill_threshold = 0.4;
  EXPECT_THROW(SsdTier(dev, c), ConfigError);
  c.fill_threshold = 0.9;
  c.superleaf_blocks = 0;
  EXPECT_THROW(SsdTier(dev, c), ConfigError);
  c.superleaf_blocks = 4;
  c.block_count = dev.block_count() + 4;
  EXPECT_THROW(SsdTier(dev, c), ConfigError);
  c.block_count = dev.block_count();
  EXPECT_EQ(c.fill_limit(), 3686u);
}

TEST(SsdTier, EveryGetIsOneBlockRead) {
  Rig r(4);
  std::map<std::string, EvictedObject> batch;
  for (uint64_t i = 0; i < 2000; i += 2) batch[key_of(i)] = {key_of(i), false, value_of(i, 0, 64)};
  absorb_sorted(r.tier, batch);
  for (uint64_t i = 0; i < 2000; ++i) {
    const uint64_t before = r.dev.stats().reads;
    auto g = r.tier.get(key_of(i));
    EXPECT_EQ(r.dev.stats().reads - before, 1u);
    EXPECT_EQ(g.device_reads, 1u);
    EXPECT_EQ(g.value.has_value(), i % 2 == 0);
    if (g.value) EXPECT_EQ(*g.value, value_of(i, 0, 64));
  }
}

TEST(SsdTier, BatchIntoOneSubpageCostsOneReadOneWrite) {
  Rig r(16);
  std::vector<uint64_t> same;
  const uint32_t target = r.tier.subpage_of(key_of(0));
  for (uint64_t i = 0; same.size() < 9; ++i) {
    if (r.tier.subpage_of(key_of(i)) == target) same.push_back(i);
  }
  std::vector<EvictedObject> first{{key_of(same[0]), false, value_of(same[0], 0, 64)}};
  r.tier.absorb(first);

  std::vector<EvictedObject> eight;
  for (size_t i = 1; i < same.size(); ++i) eight.push_back({key_of(same[i]), false, value_of(same[i], 0, 64)});
  const auto before = r.dev.stats();
  r.tier.absorb(eight);
  const auto after = r.dev.stats();
  EXPECT_EQ(after.reads - before.reads, 1u);
  EXPECT_EQ(after.writes - before.writes, 1u);
  EXPECT_EQ(after.v_host - before.v_host, kBlockSize);
  for (uint64_t id : same) EXPECT_EQ(*r.tier.get(key_of(id)).value, value_of(id, 0, 64));
}

TEST(SsdTier, RandomBatchesMatchOracle) {
  for (uint32_t m : {1u, 4u, 16u}) {
    Rig r(m, 0.8);
    std::map<std::string, Bytes> oracle;
    std::mt19937_64 rng(42 + m);
    for (int round = 0; round < 200; ++round) {
      std::map<std::string, EvictedObject> batch;
      const uint64_t base = rng() % 20000;
      for (int i = 0; i < 60; ++i) {
        const uint64_t id = base + rng() % 400;
        const std::string k = key_of(id);
        if (rng() % 5 == 0) {
          batch[k] = {k, true, {}};
        } else {
          batch[k] = {k, false, value_of(id, round, 16 + rng() % 200)};
        }
      }
      for (auto& [k, o] : batch) {
        if (o.tombstone) {
          oracle.erase(k);
        } else {
          oracle[k] = o.value;
        }
      }
      absorb_sorted(r.tier, batch);
    }
    EXPECT_GT(r.tier.stats().splits, 0u);
    for (uint64_t id = 0; id < 20400; id += 3) {
      auto it = oracle.find(key_of(id));
      auto g = r.tier.get(key_of(id));
      ASSERT_EQ(g.value.has_value(), it != oracle.end()) << "m=" << m << " id=" << id;
      if (g.value) EXPECT_EQ(*g.value, it->second);
    }

    auto all = r.tier.scan("", "");
    ASSERT_EQ(all.size(), oracle.size());
    size_t i = 0;
    for (const auto& [k, v] : oracle) {
      EXPECT_EQ(all[i].first, k);
      EXPECT_EQ(all[i].second, v);
      ++i;
    }
    auto part = r.tier.scan(key_of(5000), key_of(6000));
    auto lo = oracle.lower_bound(key_of(5000));
    auto hi = oracle.lower_bound(key_of(6000));
    ASSERT_EQ(part.size(), static_cast<size_t>(std::distance(lo, hi)));

    uint64_t objects = 0;
    for (const auto& leaf : r.tier.leaves()) objects += leaf.objects;
    EXPECT_EQ(objects, oracle.size());
  }
}

TEST(SsdTier, SubpagesRespectFillLimitAndStayZeroPadded) {
  Rig r(4, 0.6);
  std::mt19937_64 rng(9);
  std::map<std::string, EvictedObject> batch;
  for (uint64_t id = 0; id < 30000; ++id) {
    batch[key_of(id)] = {key_of(id), false, value_of(id, 1, 40 + rng() % 100)};
    if (batch.size() == 500) absorb_sorted(r.tier, batch);
  }
  absorb_sorted(r.tier, batch);

  const uint32_t limit = r.tier.config().fill_limit();
  Bytes block(kBlockSize);
  std::set<uint64_t> lbas;
  for (const auto& leaf : r.tier.leaves()) {
    EXPECT_TRUE(lbas.insert(leaf.first_lba).second);
    for (uint32_t s = 0; s < 4; ++s) {
      r.dev.read_block_into(leaf.first_lba + s, block);
      std::vector<SsdEntry> entries;
      decode_ssd_subpage(block, entries);
      const size_t used = ssd_used_bytes(entries);
      EXPECT_EQ(leaf.fill[s], entries.empty() ? 0 : used);
      if (entries.size() > 1) EXPECT_LE(used, limit);
      for (size_t b = used; b < kBlockSize; ++b) ASSERT_EQ(block[b], 0) << "lba " << leaf.first_lba + s;
      for (const auto& e : entries) {
        EXPECT_EQ(r.tier.subpage_of(e.key), s + 1);
        EXPECT_GE(e.key, leaf.fence);
      }
    }
  }
}

TEST(SsdTier, IndexOverheadTracksRecordWidths) {
  for (uint32_t m : {1u, 4u, 16u}) {
    Rig r(m, 0.9, uint64_t{256} << 20, 4);
    std::map<std::string, EvictedObject> batch;
    const uint64_t n = m == 16 ? 400000 : 100000;
    for (uint64_t id = 0; id < n; ++id) {
      batch[key_of(id)] = {key_of(id), false, value_of(id, 0, 64)};
      if (batch.size() == 2000) absorb_sorted(r.tier, batch);
    }
    absorb_sorted(r.tier, batch);
    const double leaf_record = 256 + 8 + 1 + 2.0 * m + 1;
    const double floor_ratio = leaf_record / (4096.0 * m);
    const double z = r.tier.memory_overhead();
    EXPECT_GE(z, floor_ratio) << "m=" << m;
    EXPECT_LE(z, floor_ratio * 1.1) << "m=" << m;
    EXPECT_EQ(r.tier.leaf_bytes(), r.tier.leaf_count() * 4096ull * m);
  }
}

TEST(SsdTier, DropsColdLeavesWhenDeviceIsFull) {
  // Incompressible values on a small device force capacity errors.
  Rig r(2, 0.9, uint64_t{1} << 20, 4);
  std::map<std::string, Bytes> oracle;
  std::vector<std::string> displaced;
  r.tier.set_displacement_observer([&](const std::string& k) { displaced.push_back(k); });
  std::map<std::string, EvictedObject> batch;
  for (uint64_t id = 0; id < 40000; ++id) {
    const std::string k = key_of(id * 7 % 40000);
    batch[k] = {k, false, value_of(id, 2, 100, 1.0)};
    if (batch.size() == 300) {
      for (auto& [bk, o] : batch) oracle[bk] = o.value;
      absorb_sorted(r.tier, batch);
      for (const auto& d : displaced) oracle.erase(d);
      displaced.clear();
    }
  }
  const auto st = r.tier.stats();
  EXPECT_GT(st.dropped_leaves, 0u);
  EXPECT_GT(st.capacity_retries, 0u);
  EXPECT_LE(r.dev.physical_used(), r.dev.config().physical_capacity);
  uint64_t objects = 0;
  for (const auto& leaf : r.tier.leaves()) objects += leaf.objects;
  EXPECT_EQ(objects, oracle.size());
  for (uint64_t id = 0; id < 40000; id += 5) {
    auto it = oracle.find(key_of(id));
    auto g = r.tier.get(key_of(id));
    ASSERT_EQ(g.value.has_value(), it != oracle.end()) << id;
    if (g.value) EXPECT_EQ(*g.value, it->second);
  }
}

TEST(SsdTier, FailedSplitLeavesIndexConsistent) {
  // One physical block: the first sub-page fits, a split cannot be placed.
  Rig r(1, 0.9, 2 * kBlockSize, 8);
  std::vector<EvictedObject> small;
  for (uint64_t id = 0; id < 10; ++id) small.push_back({key_of(id), false, value_of(id, 0, 100, 1.0)});
  r.tier.absorb(small);
  std::vector<EvictedObject> big;
  for (uint64_t id = 10; id < 80; ++id) big.push_back({key_of(id), false, value_of(id, 0, 100, 1.0)});
  EXPECT_THROW(r.tier.absorb(big), CapacityError);
  EXPECT_EQ(r.tier.leaf_count(), 1u);
  for (uint64_t id = 0; id < 10; ++id) EXPECT_EQ(*r.tier.get(key_of(id)).value, value_of(id, 0, 100, 1.0));
  EXPECT_EQ(r.tier.free_slots() + r.tier.leaf_count(), r.dev.block_count());
}

TEST(SsdTier, RejectsUnsortedBatch) {
  Rig r(1);
  std::vector<EvictedObject> b{{key_of(2), false, {}}, {key_of(1), false, {}}};
  EXPECT_THROW(r.tier.absorb(b), ContractViolation);
}

TEST(SsdTier, LeafRangeIsFenceToNextFence) {
  Rig r(1, 0.9);
  std::map<std::string, EvictedObject> batch;
  for (uint64_t id = 0; id < 3000; ++id) batch[key_of(id)] = {key_of(id), false, value_of(id, 0, 64)};
  absorb_sorted(r.tier, batch);
  const auto leaves = r.tier.leaves();
  ASSERT_GT(leaves.size(), 10u);
  for (size_t i = 0; i < leaves.size(); ++i) {
    const std::string hi = i + 1 < leaves.size() ? leaves[i + 1].fence : std::string();
    const std::string probe = leaves[i].fence;
    EXPECT_EQ(r.tier.leaf_range(probe), std::make_pair(leaves[i].fence, hi)) << i;
  }
}
