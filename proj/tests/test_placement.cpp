#include <gtest/gtest.h>

#include <random>

#include "tierkv/placement.hpp"

namespace tierkv {
namespace {

PlacementScheme ThreeTierScheme() {
  PlacementScheme s;
  s.wal_tier = 0;
  s.level_tier = {0, 0, 0, 1, 1, 1, 2};
  s.cache_budget[0] = 1 << 20;
  return s;
}

std::vector<TierSpace> Roomy() { return {{1000, 900}, {1000, 900}, {1000, 900}}; }

int PlaceTier(const IoContext& ctx, const PlacementScheme& s, std::vector<TierSpace> tiers,
              bool* spilled = nullptr) {
  PlacementDecision d;
  Status st = Place(ctx, s, tiers, PlacementPolicy{}, &d);
  EXPECT_TRUE(st.ok()) << st;
  if (spilled) *spilled = d.spilled;
  return d.tier;
}

TEST(PlaceTest, TableLookups) {
  auto s = ThreeTierScheme();
  EXPECT_EQ(PlaceTier(IoContext::Flush(), s, Roomy()), 0);
  EXPECT_EQ(PlaceTier(IoContext::WalWrite(), s, Roomy()), 0);
  EXPECT_EQ(PlaceTier(IoContext::Compaction(2, 3), s, Roomy()), 1);
  EXPECT_EQ(PlaceTier(IoContext::Compaction(5, 6), s, Roomy()), 2);
  // Deeper than the table: last mapped tier.
  EXPECT_EQ(PlaceTier(IoContext::Compaction(8, 9), s, Roomy()), 2);
  EXPECT_EQ(PlaceTier(IoContext::Unknown(), s, Roomy()), 2);
  EXPECT_EQ(PlaceTier(IoContext::Foreground(), s, Roomy()), 2);
}

TEST(PlaceTest, FallsThroughBelowLowerBound) {
  auto s = ThreeTierScheme();
  auto tiers = Roomy();
  tiers[0].free_bytes = 15;  // 1.5% of capacity, under the 2% bound
  bool spilled = false;
  EXPECT_EQ(PlaceTier(IoContext::Compaction(1, 2), s, tiers, &spilled), 1);
  EXPECT_TRUE(spilled);
  tiers[0].free_bytes = 20;  // exactly at the bound is accepted
  EXPECT_EQ(PlaceTier(IoContext::Compaction(1, 2), s, tiers, &spilled), 0);
  EXPECT_FALSE(spilled);
}

TEST(PlaceTest, AllFullIsAllocationFailure) {
  auto s = ThreeTierScheme();
  std::vector<TierSpace> full = {{1000, 0}, {1000, 10}, {1000, 0}};
  PlacementDecision d;
  EXPECT_TRUE(Place(IoContext::Flush(), s, full, PlacementPolicy{}, &d).IsAllocationFailure());
}

TEST(PlaceTest, LastTierAcceptsAnyFreeSpace) {
  auto s = ThreeTierScheme();
  std::vector<TierSpace> tiers = {{1000, 0}, {1000, 0}, {1000, 1}};
  EXPECT_EQ(PlaceTier(IoContext::Flush(), s, tiers), 2);
}

TEST(PlaceTest, IsPureFunction) {
  std::mt19937 rng(7);
  auto s = ThreeTierScheme();
  for (int i = 0; i < 200; ++i) {
    std::vector<TierSpace> tiers;
    for (int t = 0; t < 3; ++t) tiers.push_back({1000, rng() % 60});
    IoContext ctx = IoContext::Compaction(rng() % 5, 5 + rng() % 2);
    PlacementDecision a, b;
    Status sa = Place(ctx, s, tiers, PlacementPolicy{}, &a);
    Status sb = Place(ctx, s, tiers, PlacementPolicy{}, &b);
    EXPECT_EQ(sa.code(), sb.code());
    if (sa.ok()) EXPECT_EQ(a.tier, b.tier);
  }
}

TEST(OverflowTierTest, Examples) {
  auto s = ThreeTierScheme();
  std::vector<TierSpace> tiers = {{1000, 900}, {1000, 0}, {1000, 500}};
  int t = -1;
  ASSERT_TRUE(OverflowTier(5, s, tiers, PlacementPolicy{}, &t).ok());
  EXPECT_EQ(t, 2);
  tiers[2].free_bytes = 0;
  EXPECT_TRUE(OverflowTier(5, s, tiers, PlacementPolicy{}, &t).IsAllocationFailure());
}

// Random monotone schemes and free-space snapshots: spilling never puts a
// shallower level on a slower tier than a deeper one.
TEST(OverflowTierTest, SpillPreservesMonotonicity) {
  std::mt19937 rng(11);
  for (int iter = 0; iter < 1000; ++iter) {
    int ntiers = 2 + rng() % 3;
    PlacementScheme s;
    int cur = 0;
    for (int l = 0; l < 7; ++l) {
      if (l >= 2 && rng() % 3 == 0 && cur < ntiers - 1) ++cur;
      s.level_tier.push_back(cur);
    }
    std::vector<TierSpace> tiers;
    for (int t = 0; t < ntiers; ++t) tiers.push_back({1000, rng() % 3 == 0 ? 0u : 500u});
    tiers.back().free_bytes = 500;
    ASSERT_TRUE(s.Validate(ntiers).ok());
    int prev = -1;
    for (int l = 0; l < 7; ++l) {
      int t;
      ASSERT_TRUE(OverflowTier(l, s, tiers, PlacementPolicy{}, &t).ok());
      EXPECT_GE(t, prev);
      EXPECT_GE(t, s.TierForLevel(l));
      prev = t;
    }
  }
}

TEST(PlacementSchemeTest, SerializeParseRoundTrip) {
  auto s = ThreeTierScheme();
  s.provenance["tier0.write_curve"] = "1:250000,4:500000";
  std::string text = s.Serialize();
  EXPECT_NE(text.find("wal=0\n"), std::string::npos);
  EXPECT_NE(text.find("L3=1\n"), std::string::npos);
  EXPECT_NE(text.find("cache0=1048576\n"), std::string::npos);
  PlacementScheme p;
  ASSERT_TRUE(PlacementScheme::Parse(text, &p).ok());
  EXPECT_EQ(p.level_tier, s.level_tier);
  EXPECT_EQ(p.cache_budget, s.cache_budget);
  EXPECT_EQ(p.provenance, s.provenance);
}

TEST(PlacementSchemeTest, ParseRejectsGapsAndJunk) {
  PlacementScheme p;
  EXPECT_FALSE(PlacementScheme::Parse("wal=0\nL0=0\nL2=1\n", &p).ok());
  EXPECT_FALSE(PlacementScheme::Parse("wal=0\nL0=0\nbogus=1\n", &p).ok());
  EXPECT_FALSE(PlacementScheme::Parse("L0=0\n", &p).ok());
}

TEST(PlacementSchemeTest, ValidateInvariants) {
  auto s = ThreeTierScheme();
  EXPECT_TRUE(s.Validate(3).ok());
  EXPECT_FALSE(s.Validate(2).ok());
  auto bad = s;
  bad.level_tier[4] = 0;  // L4 faster than L3
  EXPECT_FALSE(bad.Validate(3).ok());
  bad = s;
  bad.level_tier[1] = 1;
  EXPECT_FALSE(bad.Validate(3).ok());
  bad = s;
  bad.wal_tier = 1;
  EXPECT_FALSE(bad.Validate(3).ok());
  bad = s;
  bad.cache_budget[2] = 10;
  EXPECT_FALSE(bad.Validate(3).ok());
}

TEST(PlacementSchemeTest, PrefixSchemes) {
  auto h1 = PlacementScheme::Prefix(0, 5, 1);
  EXPECT_EQ(h1.level_tier, (std::vector<int>{1, 1, 1, 1, 1}));
  EXPECT_EQ(h1.wal_tier, 0);
  auto h3 = PlacementScheme::Prefix(2, 5, 1);
  EXPECT_EQ(h3.level_tier, (std::vector<int>{0, 0, 1, 1, 1}));
  EXPECT_TRUE(h3.Validate(2).ok());
  EXPECT_TRUE(h1.ValidateStructure(2).ok());
}

}  // namespace
}  // namespace tierkv
