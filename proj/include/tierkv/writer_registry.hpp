#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <memory>
#include <mutex>
#include <string_view>
#include <vector>

namespace tierkv {

enum class WriterSource { kWal = 0, kFlush, kCompaction, kCacheCopy, kMigration };
inline constexpr int kWriterSourceCount = 5;

std::string_view WriterSourceName(WriterSource source);

// Per-tier counts of active writers by source.
//
// WAL, flush and compaction writers are never refused. Cache-copy and
// migration writers are admitted one chunk at a time and only while
//   cache_copy + migration <= max(0, P - (wal + flush + compaction)).
// A priority writer that would break that bound waits for in-flight
// throttled chunks to finish, so the bound holds at every instant except
// while a forced migration is running on the tier.
class WriterRegistry {
 public:
  struct Sample {
    std::array<int, kWriterSourceCount> counts{};
    int forced = 0;
    int max_parallelism = 0;

    int Of(WriterSource s) const { return counts[static_cast<int>(s)]; }
    int Total() const;
    int Priority() const;   // wal + flush + compaction
    int Throttled() const;  // cache_copy + migration
    // True when the throttled writers exceed their allowance.
    bool Violates() const;
  };

  explicit WriterRegistry(std::vector<int> max_write_parallelism);

  int tier_count() const { return static_cast<int>(tiers_.size()); }
  int max_parallelism(int tier) const { return tiers_[tier]->max_parallelism; }

  // WAL, flush or compaction writer.
  void Acquire(int tier, WriterSource source);
  void Release(int tier, WriterSource source);

  // Cache-copy or migration chunk. Returns false without waiting when the
  // tier has no spare parallelism.
  bool TryAcquireThrottled(int tier, WriterSource source);
  // Waits up to `timeout` for a slot.
  bool AcquireThrottled(int tier, WriterSource source, std::chrono::milliseconds timeout);
  void ReleaseThrottled(int tier, WriterSource source);

  // Forced migration ignores the cap; the tier is flagged while it runs.
  void AcquireForced(int tier);
  void ReleaseForced(int tier);

  int Count(int tier, WriterSource source) const;
  int Total(int tier) const;
  // max(0, P - (wal + flush + compaction + migration)).
  int CacheWorkerBudget(int tier) const;
  // max(0, P - (wal + flush + compaction + cache_copy)).
  int MigrationWorkerBudget(int tier) const;
  Sample SampleTier(int tier) const;

 private:
  struct TierState {
    int max_parallelism = 1;
    mutable std::mutex mu;
    std::condition_variable cv;
    std::array<int, kWriterSourceCount> counts{};
    int forced = 0;
    int priority_waiters = 0;
  };

  static bool IsPriority(WriterSource s) {
    return s == WriterSource::kWal || s == WriterSource::kFlush ||
           s == WriterSource::kCompaction;
  }
  static int PriorityOf(const TierState& t);
  static int ThrottledOf(const TierState& t);
  bool CanAdmitThrottled(const TierState& t) const;

  std::vector<std::unique_ptr<TierState>> tiers_;
};

// Holds a priority writer slot for a scope.
class WriterSlot {
 public:
  WriterSlot() = default;
  WriterSlot(WriterRegistry* registry, int tier, WriterSource source)
      : registry_(registry), tier_(tier), source_(source) {
    if (registry_) registry_->Acquire(tier_, source_);
  }
  WriterSlot(WriterSlot&& o) noexcept { *this = std::move(o); }
  WriterSlot& operator=(WriterSlot&& o) noexcept {
    if (this != &o) {
      Reset();
      registry_ = o.registry_;
      tier_ = o.tier_;
      source_ = o.source_;
      o.registry_ = nullptr;
    }
    return *this;
  }
  ~WriterSlot() { Reset(); }
  void Reset() {
    if (registry_) registry_->Release(tier_, source_);
    registry_ = nullptr;
  }

 private:
  WriterRegistry* registry_ = nullptr;
  int tier_ = 0;
  WriterSource source_ = WriterSource::kWal;
};

}  // namespace tierkv
