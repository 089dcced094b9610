#include "tierkv/writer_registry.hpp"

#include <algorithm>
#include <cassert>

namespace tierkv {

std::string_view WriterSourceName(WriterSource source) {
  switch (source) {
    case WriterSource::kWal: return "wal";
    case WriterSource::kFlush: return "flush";
    case WriterSource::kCompaction: return "compaction";
    case WriterSource::kCacheCopy: return "cache_copy";
    case WriterSource::kMigration: return "migration";
  }
  return "?";
}

int WriterRegistry::Sample::Total() const {
  int t = 0;
  for (int c : counts) t += c;
  return t;
}

int WriterRegistry::Sample::Priority() const {
  return Of(WriterSource::kWal) + Of(WriterSource::kFlush) + Of(WriterSource::kCompaction);
}

int WriterRegistry::Sample::Throttled() const {
  return Of(WriterSource::kCacheCopy) + Of(WriterSource::kMigration);
}

bool WriterRegistry::Sample::Violates() const {
  return Throttled() > std::max(0, max_parallelism - Priority());
}

WriterRegistry::WriterRegistry(std::vector<int> max_write_parallelism) {
  for (int p : max_write_parallelism) {
    auto t = std::make_unique<TierState>();
    t->max_parallelism = std::max(p, 1);
    tiers_.push_back(std::move(t));
  }
}

int WriterRegistry::PriorityOf(const TierState& t) {
  return t.counts[static_cast<int>(WriterSource::kWal)] +
         t.counts[static_cast<int>(WriterSource::kFlush)] +
         t.counts[static_cast<int>(WriterSource::kCompaction)];
}

int WriterRegistry::ThrottledOf(const TierState& t) {
  return t.counts[static_cast<int>(WriterSource::kCacheCopy)] +
         t.counts[static_cast<int>(WriterSource::kMigration)];
}

bool WriterRegistry::CanAdmitThrottled(const TierState& t) const {
  if (t.priority_waiters > 0) return false;
  return ThrottledOf(t) + 1 <= std::max(0, t.max_parallelism - PriorityOf(t));
}

void WriterRegistry::Acquire(int tier, WriterSource source) {
  assert(IsPriority(source));
  TierState& t = *tiers_[tier];
  std::unique_lock lock(t.mu);
  // Throttled writers beyond the forced ones must fit under the new bound.
  auto fits = [&] {
    int throttled = ThrottledOf(t) - t.forced;
    return throttled <= std::max(0, t.max_parallelism - (PriorityOf(t) + 1));
  };
  if (!fits()) {
    ++t.priority_waiters;
    t.cv.wait(lock, fits);
    --t.priority_waiters;
  }
  ++t.counts[static_cast<int>(source)];
  if (t.priority_waiters == 0) t.cv.notify_all();
}

void WriterRegistry::Release(int tier, WriterSource source) {
  TierState& t = *tiers_[tier];
  {
    std::lock_guard lock(t.mu);
    assert(t.counts[static_cast<int>(source)] > 0);
    --t.counts[static_cast<int>(source)];
  }
  t.cv.notify_all();
}

bool WriterRegistry::TryAcquireThrottled(int tier, WriterSource source) {
  assert(!IsPriority(source));
  TierState& t = *tiers_[tier];
  std::lock_guard lock(t.mu);
  if (!CanAdmitThrottled(t)) return false;
  ++t.counts[static_cast<int>(source)];
  return true;
}

bool WriterRegistry::AcquireThrottled(int tier, WriterSource source,
                                      std::chrono::milliseconds timeout) {
  assert(!IsPriority(source));
  TierState& t = *tiers_[tier];
  std::unique_lock lock(t.mu);
  if (!t.cv.wait_for(lock, timeout, [&] { return CanAdmitThrottled(t); })) return false;
  ++t.counts[static_cast<int>(source)];
  return true;
}

void WriterRegistry::ReleaseThrottled(int tier, WriterSource source) {
  TierState& t = *tiers_[tier];
  {
    std::lock_guard lock(t.mu);
    assert(t.counts[static_cast<int>(source)] > 0);
    --t.counts[static_cast<int>(source)];
  }
  t.cv.notify_all();
}

void WriterRegistry::AcquireForced(int tier) {
  TierState& t = *tiers_[tier];
  std::lock_guard lock(t.mu);
  ++t.forced;
  ++t.counts[static_cast<int>(WriterSource::kMigration)];
}

void WriterRegistry::ReleaseForced(int tier) {
  TierState& t = *tiers_[tier];
  {
    std::lock_guard lock(t.mu);
    assert(t.forced > 0);
    --t.forced;
    --t.counts[static_cast<int>(WriterSource::kMigration)];
  }
  t.cv.notify_all();
}

int WriterRegistry::Count(int tier, WriterSource source) const {
  const TierState& t = *tiers_[tier];
  std::lock_guard lock(t.mu);
  return t.counts[static_cast<int>(source)];
}

int WriterRegistry::Total(int tier) const {
  const TierState& t = *tiers_[tier];
  std::lock_guard lock(t.mu);
  int total = 0;
  for (int c : t.counts) total += c;
  return total;
}

int WriterRegistry::CacheWorkerBudget(int tier) const {
  const TierState& t = *tiers_[tier];
  std::lock_guard lock(t.mu);
  int others = PriorityOf(t) + t.counts[static_cast<int>(WriterSource::kMigration)];
  return std::max(0, t.max_parallelism - others);
}

int WriterRegistry::MigrationWorkerBudget(int tier) const {
  const TierState& t = *tiers_[tier];
  std::lock_guard lock(t.mu);
  int others = PriorityOf(t) + t.counts[static_cast<int>(WriterSource::kCacheCopy)];
  return std::max(0, t.max_parallelism - others);
}

WriterRegistry::Sample WriterRegistry::SampleTier(int tier) const {
  const TierState& t = *tiers_[tier];
  std::lock_guard lock(t.mu);
  Sample s;
  s.counts = t.counts;
  s.forced = t.forced;
  s.max_parallelism = t.max_parallelism;
  return s;
}

}  // namespace tierkv
