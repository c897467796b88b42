#include <gtest/gtest.h>

#include <map>
#include <random>
#include <set>

#include "zipcache/errors.hpp"
#include "zipcache/large_objects.hpp"

using namespace zipcache;

namespace {

Bytes blob(uint64_t seed, size_t n) {
  std::mt19937_64 rng(seed);
  Bytes v(n);
  for (auto& b : v) b = static_cast<uint8_t>(rng());
  return v;
}

std::string key_of(uint64_t id) { return "lo-" + std::to_string(1000000 + id); }

struct Rig {
  explicit Rig(uint64_t region_blocks, uint64_t physical = uint64_t{64} << 20, uint32_t factor = 2)
      : dev(DeviceConfig::with_physical(physical, factor)), lo(dev, cfg(region_blocks)) {}
  static LargeObjectConfig cfg(uint64_t blocks) {
    LargeObjectConfig c;
    c.first_lba = 100;
    c.block_count = blocks;
    return c;
  }
  CsdDevice dev;
  LargeObjectStore lo;
};

}  // namespace

TEST(RunAllocator, FirstFitAndCoalescing) {
  RunAllocator a(100);
  EXPECT_EQ(*a.allocate(10), 0u);
  EXPECT_EQ(*a.allocate(20), 10u);
  EXPECT_EQ(*a.allocate(5), 30u);
  a.release(10, 20);
  EXPECT_EQ(*a.allocate(15), 10u);  // first run that fits
  EXPECT_EQ(*a.allocate(5), 25u);
  EXPECT_EQ(a.free_blocks(), 100u - 10 - 15 - 5 - 5);
  a.release(0, 10);
  a.release(10, 15);
  a.release(25, 5);
  a.release(30, 5);
  EXPECT_EQ(a.run_count(), 1u);
  EXPECT_EQ(a.largest_run(), 100u);
  EXPECT_FALSE(a.allocate(101).has_value());
  EXPECT_THROW(a.release(0, 1), ContractViolation);
}

TEST(LargeObjects, PaddingAndBlockCount) {
  Rig r(64);
  const Bytes v = blob(1, 5000);
  r.lo.put("k", v);
  auto ref = r.lo.ref("k");
  ASSERT_TRUE(ref.has_value());
  EXPECT_EQ(ref->block_count, 2u);
  EXPECT_EQ(ref->byte_length, 5000u);
  Bytes second = r.dev.read_block(100 + ref->lba_start + 1);
  for (size_t i = 5000 - 4096; i < kBlockSize; ++i) ASSERT_EQ(second[i], 0);
  EXPECT_EQ(*r.lo.get("k"), v);
  EXPECT_FALSE(r.lo.get("missing").has_value());
  EXPECT_THROW(r.lo.put("small", blob(2, 2048)), ContractViolation);
}

TEST(LargeObjects, RePutAndDeleteReleaseBlocks) {
  Rig r(64);
  r.lo.put("k", blob(1, 9000));
  EXPECT_EQ(r.lo.used_blocks(), 3u);
  const uint64_t trims = r.dev.stats().trims;
  r.lo.put("k", blob(2, 4100));
  EXPECT_EQ(r.dev.stats().trims - trims, 3u);
  EXPECT_EQ(r.lo.used_blocks(), 2u);
  EXPECT_EQ(*r.lo.get("k"), blob(2, 4100));
  EXPECT_TRUE(r.lo.erase("k"));
  EXPECT_EQ(r.dev.stats().trims - trims, 5u);
  EXPECT_FALSE(r.lo.erase("k"));
  EXPECT_FALSE(r.lo.get("k").has_value());
  EXPECT_EQ(r.lo.used_blocks(), 0u);
}

TEST(LargeObjects, RandomTraceMatchesOracleWithoutSharedBlocks) {
  Rig r(4096);
  std::map<std::string, Bytes> oracle;
  std::mt19937_64 rng(5);
  for (int op = 0; op < 5000; ++op) {
    const std::string k = key_of(rng() % 300);
    const int kind = static_cast<int>(rng() % 10);
    if (kind < 5) {
      Bytes v = blob(rng(), 2049 + rng() % 20000);
      r.lo.put(k, v);
      oracle[k] = v;
    } else if (kind < 7) {
      EXPECT_EQ(r.lo.erase(k), oracle.erase(k) == 1);
    } else {
      auto g = r.lo.get(k);
      auto it = oracle.find(k);
      ASSERT_EQ(g.has_value(), it != oracle.end());
      if (g) EXPECT_EQ(*g, it->second);
    }
  }
  std::set<uint64_t> lbas;
  uint64_t blocks = 0;
  for (const auto& [k, v] : oracle) {
    auto ref = r.lo.ref(k);
    ASSERT_TRUE(ref.has_value());
    for (uint32_t i = 0; i < ref->block_count; ++i) EXPECT_TRUE(lbas.insert(ref->lba_start + i).second);
    blocks += ref->block_count;
  }
  EXPECT_EQ(blocks, r.lo.used_blocks());
  const auto st = r.lo.stats();
  EXPECT_EQ(st.device_writes - st.device_trims, blocks);

  auto all = r.lo.scan("", "");
  ASSERT_EQ(all.size(), oracle.size());
  size_t i = 0;
  for (const auto& [k, v] : oracle) {
    EXPECT_EQ(all[i].first, k);
    EXPECT_EQ(all[i++].second, v);
  }
}

TEST(LargeObjects, EvictsUnderRegionPressure) {
  Rig r(16);
  std::vector<std::string> evicted;
  r.lo.set_displacement_observer([&](const std::string& k) { evicted.push_back(k); });
  for (uint64_t i = 0; i < 20; ++i) r.lo.put(key_of(i), blob(i, 8000));  // 2 blocks each
  EXPECT_EQ(r.lo.size(), 8u);
  EXPECT_EQ(evicted.size(), 12u);
  EXPECT_EQ(r.lo.stats().evictions, 12u);
  for (const auto& k : evicted) {
    if (r.lo.contains(k)) continue;
    EXPECT_FALSE(r.lo.get(k).has_value());
  }
  EXPECT_EQ(*r.lo.get(key_of(19)), blob(19, 8000));
  EXPECT_THROW(r.lo.put("huge", blob(0, 17 * 4096)), CapacityError);
}

TEST(LargeObjects, DeviceFullEvictsThenFails) {
  // Physical space for a handful of incompressible blocks only.
  Rig r(1024, 12 * kBlockSize, 100);
  for (uint64_t i = 0; i < 10; ++i) r.lo.put(key_of(i), blob(i, 8000));
  EXPECT_GT(r.lo.stats().evictions, 0u);
  EXPECT_LE(r.dev.physical_used(), r.dev.config().physical_capacity);
  EXPECT_EQ(*r.lo.get(key_of(9)), blob(9, 8000));
  const auto used = r.lo.used_blocks();
  EXPECT_THROW(r.lo.put("huge", blob(1, 20 * 4096)), CapacityError);
  EXPECT_LE(r.lo.used_blocks(), used);
  EXPECT_LE(r.dev.physical_used(), r.dev.config().physical_capacity);
}
