#include "tierkv/placement.hpp"

#include <algorithm>
#include <sstream>

#include "tierkv/kv_text.hpp"

namespace tierkv {

int PlacementScheme::TierForLevel(int level) const {
  if (level_tier.empty()) return wal_tier;
  if (level < 0) level = 0;
  if (level >= static_cast<int>(level_tier.size())) return level_tier.back();
  return level_tier[level];
}

uint64_t PlacementScheme::CacheBudget(int tier) const {
  auto it = cache_budget.find(tier);
  return it == cache_budget.end() ? 0 : it->second;
}

Status PlacementScheme::ValidateStructure(int tier_count) const {
  auto in_range = [&](int t) { return t >= 0 && t < tier_count; };
  if (!in_range(wal_tier)) return Status::InvalidArgument("wal tier out of range");
  if (level_tier.empty()) return Status::InvalidArgument("scheme maps no levels");
  for (size_t i = 0; i < level_tier.size(); ++i) {
    if (!in_range(level_tier[i])) {
      return Status::InvalidArgument("L" + std::to_string(i) + " tier out of range");
    }
    if (i > 0 && level_tier[i] < level_tier[i - 1]) {
      return Status::InvalidArgument("L" + std::to_string(i) +
                                     " is on a faster tier than a shallower level");
    }
  }
  for (const auto& [tier, bytes] : cache_budget) {
    if (!in_range(tier)) return Status::InvalidArgument("cache budget for unknown tier");
    if (bytes > 0 && tier == tier_count - 1) {
      return Status::InvalidArgument("the last tier cannot host a cache");
    }
  }
  return Status::OK();
}

Status PlacementScheme::Validate(int tier_count) const {
  TIERKV_RETURN_IF_ERROR(ValidateStructure(tier_count));
  if (wal_tier != 0) return Status::InvalidArgument("the WAL must live on tier 0");
  if (TierForLevel(0) != 0 || TierForLevel(1) != 0) {
    return Status::InvalidArgument("L0 and L1 must live on tier 0");
  }
  return Status::OK();
}

std::string PlacementScheme::Serialize() const {
  std::ostringstream os;
  os << "wal=" << wal_tier << '\n';
  for (size_t i = 0; i < level_tier.size(); ++i) os << 'L' << i << '=' << level_tier[i] << '\n';
  for (const auto& [tier, bytes] : cache_budget) os << "cache" << tier << '=' << bytes << '\n';
  if (!provenance.empty()) {
    os << "# provenance\n";
    for (const auto& [k, v] : provenance) os << "provenance." << k << '=' << v << '\n';
  }
  return os.str();
}

Status PlacementScheme::Parse(std::string_view text, PlacementScheme* out) {
  KvText doc;
  TIERKV_RETURN_IF_ERROR(KvText::Parse(text, &doc));
  PlacementScheme s;
  int64_t v = 0;
  TIERKV_RETURN_IF_ERROR(doc.GetInt("wal", &v));
  s.wal_tier = static_cast<int>(v);
  std::map<int, int> levels;
  for (const auto& [key, value] : doc.values()) {
    if (key == "wal") continue;
    if (key.rfind("provenance.", 0) == 0) {
      s.provenance[key.substr(11)] = value;
      continue;
    }
    try {
      if (key.size() > 1 && key[0] == 'L') {
        levels[std::stoi(key.substr(1))] = std::stoi(value);
      } else if (key.rfind("cache", 0) == 0) {
        s.cache_budget[std::stoi(key.substr(5))] = std::stoull(value);
      } else {
        return Status::InvalidArgument("unknown scheme key '" + key + "'");
      }
    } catch (const std::exception&) {
      return Status::InvalidArgument("bad scheme entry " + key + "=" + value);
    }
  }
  for (const auto& [level, tier] : levels) {
    if (level != static_cast<int>(s.level_tier.size())) {
      return Status::InvalidArgument("scheme levels must be contiguous from L0");
    }
    s.level_tier.push_back(tier);
  }
  *out = std::move(s);
  return Status::OK();
}

Status PlacementScheme::Load(const std::filesystem::path& file, PlacementScheme* out) {
  std::string text;
  TIERKV_RETURN_IF_ERROR(ReadWholeFile(file, &text));
  return Parse(text, out).WithContext(file.string());
}

Status PlacementScheme::Save(const std::filesystem::path& file) const {
  return WriteWholeFile(file, Serialize());
}

PlacementScheme PlacementScheme::Prefix(int fast_levels, int levels, int slow_tier) {
  PlacementScheme s;
  s.wal_tier = 0;
  for (int i = 0; i < levels; ++i) s.level_tier.push_back(i < fast_levels ? 0 : slow_tier);
  s.provenance["kind"] = "H" + std::to_string(fast_levels + 1);
  return s;
}

bool TierAccepts(std::span<const TierSpace> tiers, int tier, const PlacementPolicy& policy) {
  const TierSpace& t = tiers[tier];
  if (tier == static_cast<int>(tiers.size()) - 1) return t.free_bytes > 0;
  double floor = policy.lower_bound_fraction * static_cast<double>(t.capacity_bytes);
  return static_cast<double>(t.free_bytes) >= floor && t.free_bytes > 0;
}

Status Place(const IoContext& context, const PlacementScheme& scheme,
             std::span<const TierSpace> tiers, const PlacementPolicy& policy,
             PlacementDecision* decision) {
  if (tiers.empty()) return Status::InvalidArgument("no tiers");
  int last = static_cast<int>(tiers.size()) - 1;
  int preferred = last;
  switch (context.kind) {
    case IoContext::Kind::kWalWrite:
      preferred = scheme.wal_tier;
      break;
    case IoContext::Kind::kFlush:
      preferred = scheme.TierForLevel(0);
      break;
    case IoContext::Kind::kCompaction:
      if (!context.to_level) return Status::InvalidArgument("compaction without target level");
      preferred = scheme.TierForLevel(*context.to_level);
      break;
    default:
      preferred = last;
      break;
  }
  preferred = std::clamp(preferred, 0, last);
  for (int t = preferred; t <= last; ++t) {
    if (TierAccepts(tiers, t, policy)) {
      decision->tier = t;
      decision->preferred_tier = preferred;
      decision->spilled = t != preferred;
      return Status::OK();
    }
  }
  return Status::AllocationFailure("no tier at or below " + std::to_string(preferred) +
                                   " has free space for " + context.ToString());
}

Status OverflowTier(int level, const PlacementScheme& scheme, std::span<const TierSpace> tiers,
                    const PlacementPolicy& policy, int* tier) {
  int last = static_cast<int>(tiers.size()) - 1;
  for (int t = std::clamp(scheme.TierForLevel(level), 0, last); t <= last; ++t) {
    if (TierAccepts(tiers, t, policy)) {
      *tier = t;
      return Status::OK();
    }
  }
  return Status::AllocationFailure("all tiers full for L" + std::to_string(level));
}

}  // namespace tierkv
