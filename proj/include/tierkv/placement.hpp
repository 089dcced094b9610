#pragma once

// Which tier hosts a newly created file.
//
// The write-ahead log and the shallow levels live on tier 0; deeper levels
// go to slower tiers. A tier whose free space is below the lower-bound
// threshold is skipped in favour of the next slower one.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tierkv/io_context.hpp"
#include "tierkv/status.hpp"

namespace tierkv {

struct PlacementScheme {
  int wal_tier = 0;
  // level_tier[i] is the home tier of level i; deeper levels than listed use
  // the last entry.
  std::vector<int> level_tier;
  std::map<int, uint64_t> cache_budget;
  // Free-form provenance lines (device curves, demands) kept for humans.
  std::map<std::string, std::string> provenance;

  int TierForLevel(int level) const;
  uint64_t CacheBudget(int tier) const;

  // Tier ids below `tier_count` and level->tier monotone nondecreasing.
  Status ValidateStructure(int tier_count) const;
  // Structure plus the WAL, L0 and L1 on tier 0.
  Status Validate(int tier_count) const;

  // wal=0 / L0=0 ... / cache0=<bytes> / provenance.<key>=<value>
  std::string Serialize() const;
  static Status Parse(std::string_view text, PlacementScheme* out);
  static Status Load(const std::filesystem::path& file, PlacementScheme* out);
  Status Save(const std::filesystem::path& file) const;

  // WAL plus the first `fast_levels` levels on tier 0, the remaining levels
  // (out of `levels`) on `slow_tier`. Used for placement studies; the
  // result may break the L0/L1 rule that Validate() checks.
  static PlacementScheme Prefix(int fast_levels, int levels, int slow_tier);
};

// Free-space snapshot of one tier.
struct TierSpace {
  uint64_t capacity_bytes = 0;
  uint64_t free_bytes = 0;
};

struct PlacementPolicy {
  // Fraction of capacity below which a tier refuses new files.
  double lower_bound_fraction = 0.02;
};

struct PlacementDecision {
  int tier = 0;
  int preferred_tier = 0;
  // The preferred tier was below the lower bound; migration should run.
  bool spilled = false;
};

// True when `tier` may take a new file: free space at or above the lower
// bound, or, for the last tier, any free space at all.
bool TierAccepts(std::span<const TierSpace> tiers, int tier, const PlacementPolicy& policy);

// Pure function of (context, scheme, free-space snapshot).
// WAL_WRITE -> wal_tier, FLUSH -> level 0's tier, COMPACTION(i->j) -> level
// j's tier, anything else -> last tier.
Status Place(const IoContext& context, const PlacementScheme& scheme,
             std::span<const TierSpace> tiers, const PlacementPolicy& policy,
             PlacementDecision* decision);

// Next tier at or after level's home tier with room for a new file.
Status OverflowTier(int level, const PlacementScheme& scheme, std::span<const TierSpace> tiers,
                    const PlacementPolicy& policy, int* tier);

}  // namespace tierkv
