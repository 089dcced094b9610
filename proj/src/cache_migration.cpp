#include "tierkv/cache_migration.hpp"

#include <algorithm>
#include <climits>

#include "tierkv/tier_fs.hpp"

namespace tierkv {

namespace {

constexpr uint8_t kEmpty = 2;

int LevelKey(const FileRecord& r) {
  // Files without a level were placed as cold data.
  return r.level.value_or(INT_MAX);
}

}  // namespace

HitRatioWindow::HitRatioWindow(uint32_t length)
    : length_(std::max<uint32_t>(length, 1)),
      slots_(std::make_unique<std::atomic<uint8_t>[]>(length_)) {
  Reset();
}

void HitRatioWindow::Reset() {
  for (uint32_t i = 0; i < length_; ++i) slots_[i].store(kEmpty, std::memory_order_relaxed);
  pos_.store(0, std::memory_order_relaxed);
  hits_.store(0, std::memory_order_relaxed);
}

void HitRatioWindow::Record(bool hit) {
  uint64_t p = pos_.fetch_add(1, std::memory_order_relaxed) % length_;
  uint8_t old = slots_[p].exchange(hit ? 1 : 0, std::memory_order_relaxed);
  int64_t delta = (hit ? 1 : 0) - (old == 1 ? 1 : 0);
  if (delta != 0) hits_.fetch_add(delta, std::memory_order_relaxed);
}

uint64_t HitRatioWindow::samples() const {
  return std::min<uint64_t>(pos_.load(std::memory_order_relaxed), length_);
}

uint64_t HitRatioWindow::hits() const {
  return static_cast<uint64_t>(std::max<int64_t>(hits_.load(std::memory_order_relaxed), 0));
}

std::optional<double> HitRatioWindow::Ratio() const {
  uint64_t n = samples();
  if (n == 0) return std::nullopt;
  return std::min(1.0, static_cast<double>(hits()) / static_cast<double>(n));
}

std::string_view TaskReasonName(TaskReason reason) {
  switch (reason) {
    case TaskReason::kHitRatio: return "hit_ratio";
    case TaskReason::kCapacity: return "capacity";
    case TaskReason::kForced: return "forced";
    case TaskReason::kTrivialMove: return "trivial_move";
  }
  return "?";
}

CacheMigrationManager::CacheMigrationManager(TierFs* fs, CacheMigrationOptions options)
    : fs_(fs), options_(options) {
  int n = fs_->tier_count();
  for (int t = 0; t < n; ++t) {
    windows_.push_back(std::make_unique<HitRatioWindow>(options_.window));
    forced_mu_.push_back(std::make_unique<std::mutex>());
  }
  cache_pending_ = std::make_unique<std::atomic<uint64_t>[]>(n);
  migr_pending_ = std::make_unique<std::atomic<uint64_t>[]>(n);
}

CacheMigrationManager::~CacheMigrationManager() { Stop(); }

int CacheMigrationManager::last_tier() const { return fs_->tier_count() - 1; }
uint64_t CacheMigrationManager::FreeBytes(int tier) const {
  return fs_->device(tier).free_bytes();
}
uint64_t CacheMigrationManager::Capacity(int tier) const {
  return fs_->device(tier).capacity_bytes();
}

void CacheMigrationManager::Start() {
  if (started_) return;
  started_ = true;
  stop_.store(false);
  if (last_tier() == 0) return;
  for (int t = 0; t < last_tier(); ++t) threads_.emplace_back([this, t] { MonitorLoop(t); });
  if (options_.cache_enabled) {
    for (int i = 0; i < options_.cache_pool; ++i) {
      threads_.emplace_back([this] { WorkerLoop(cache_q_, true); });
    }
  }
  if (options_.migration_enabled) {
    for (int i = 0; i < options_.migrate_pool; ++i) {
      threads_.emplace_back([this] { WorkerLoop(migr_q_, false); });
    }
  }
}

void CacheMigrationManager::Stop() {
  if (!started_) return;
  stop_.store(true);
  {
    std::lock_guard lock(stop_mu_);
    stop_cv_.notify_all();
  }
  for (Queue* q : {&cache_q_, &migr_q_}) {
    std::lock_guard lock(q->mu);
    q->cv.notify_all();
  }
  for (auto& th : threads_) th.join();
  threads_.clear();
  for (Queue* q : {&cache_q_, &migr_q_}) {
    std::lock_guard lock(q->mu);
    for (const auto& task : q->tasks) {
      RecordPtr r;
      if (fs_->ns().Lookup(task.logical_path, &r).ok()) Unpin(*r);
    }
    q->tasks.clear();
  }
  started_ = false;
}

void CacheMigrationManager::RecordAccess(FileRecord& record, int served_tier) {
  fs_->ns().Touch(record);
  int top = std::min(served_tier, last_tier() - 1);
  for (int t = 0; t <= top; ++t) windows_[t]->Record(served_tier == t);
}

void CacheMigrationManager::AgeOnCopy(FileRecord& record) {
  double cur = record.access_count.load(std::memory_order_relaxed);
  while (!record.access_count.compare_exchange_weak(cur, cur / 2.0,
                                                    std::memory_order_relaxed)) {
  }
}

bool CacheMigrationManager::Pin(FileRecord& record, int expected_home) {
  std::lock_guard lock(record.mu);
  if (record.deleted || record.pinned || record.open_writers > 0 || !record.home ||
      record.home->tier_id() != expected_home) {
    return false;
  }
  record.pinned = true;
  return true;
}

void CacheMigrationManager::Unpin(FileRecord& record) {
  std::lock_guard lock(record.mu);
  record.pinned = false;
}

void CacheMigrationManager::Enqueue(Queue& q, CopyTask task) {
  task.enqueue_tick = fs_->ns().Tick();
  std::lock_guard lock(q.mu);
  q.tasks.push_back(std::move(task));
  q.cv.notify_one();
}

void CacheMigrationManager::WorkerLoop(Queue& q, bool cache) {
  for (;;) {
    CopyTask task;
    {
      std::unique_lock lock(q.mu);
      q.cv.wait(lock, [&] { return stop_.load() || !q.tasks.empty(); });
      if (stop_.load()) return;
      task = std::move(q.tasks.front());
      q.tasks.pop_front();
      ++q.running;
    }
    if (cache) {
      ExecuteCacheCopy(task);
    } else {
      ExecuteMigration(task);
    }
    {
      std::lock_guard lock(q.mu);
      --q.running;
      q.cv.notify_all();
    }
  }
}

void CacheMigrationManager::WaitIdle() {
  for (Queue* q : {&cache_q_, &migr_q_}) {
    std::unique_lock lock(q->mu);
    q->cv.wait(lock, [&] { return (q->tasks.empty() || !started_) && q->running == 0; });
  }
}

size_t CacheMigrationManager::DrainQueues() {
  size_t ran = 0;
  for (bool cache : {true, false}) {
    Queue& q = cache ? cache_q_ : migr_q_;
    for (;;) {
      CopyTask task;
      {
        std::lock_guard lock(q.mu);
        if (q.tasks.empty()) break;
        task = std::move(q.tasks.front());
        q.tasks.pop_front();
      }
      if (cache) {
        ExecuteCacheCopy(task);
      } else {
        ExecuteMigration(task);
      }
      ++ran;
    }
  }
  return ran;
}

size_t CacheMigrationManager::queued_cache_tasks() {
  std::lock_guard lock(cache_q_.mu);
  return cache_q_.tasks.size();
}

size_t CacheMigrationManager::queued_migration_tasks() {
  std::lock_guard lock(migr_q_.mu);
  return migr_q_.tasks.size();
}

void CacheMigrationManager::MonitorLoop(int tier) {
  std::unique_lock lock(stop_mu_);
  while (!stop_.load()) {
    stop_cv_.wait_for(lock, options_.monitor_period);
    if (stop_.load()) break;
    lock.unlock();
    if (options_.migration_enabled) MigrationTick(tier);
    if (options_.cache_enabled) MonitorTick(tier);
    lock.lock();
  }
}

int CacheMigrationManager::CacheWorkerBudget(int tier) const {
  return std::min(options_.cache_pool, fs_->registry().CacheWorkerBudget(tier));
}

int CacheMigrationManager::MigrationWorkerBudget(int dst_tier) const {
  return std::min(options_.migrate_pool, fs_->registry().MigrationWorkerBudget(dst_tier));
}

uint64_t CacheMigrationManager::CacheUsage(int tier) const {
  uint64_t total = 0;
  for (const auto& r : fs_->ns().Records()) {
    std::lock_guard lock(r->mu);
    if (r->cached && r->cached->tier_id() == tier) total += r->cached->size();
  }
  return total;
}

namespace {

struct CachedEntry {
  std::string path;
  double count;
  uint64_t size;
};

std::vector<CachedEntry> CachedOn(const FileNamespace& ns, int tier) {
  std::vector<CachedEntry> out;
  for (const auto& r : ns.Records()) {
    std::lock_guard lock(r->mu);
    if (r->cached && r->cached->tier_id() == tier) {
      out.push_back({r->logical_path, r->access_count.load(std::memory_order_relaxed),
                     r->cached->size()});
    }
  }
  std::sort(out.begin(), out.end(), [](const CachedEntry& a, const CachedEntry& b) {
    if (a.count != b.count) return a.count < b.count;
    return a.path < b.path;
  });
  return out;
}

}  // namespace

void CacheMigrationManager::EvictForBudget(int tier) {
  uint64_t budget = fs_->scheme()->CacheBudget(tier);
  auto entries = CachedOn(fs_->ns(), tier);
  uint64_t usage = 0;
  for (const auto& e : entries) usage += e.size;
  for (const auto& e : entries) {
    if (usage <= budget) break;
    uint64_t freed = 0;
    if (fs_->ns().InvalidateCachedCopy(e.path, &freed).ok() && freed > 0) {
      usage -= std::min(usage, freed);
      evictions_.fetch_add(1, std::memory_order_relaxed);
    }
  }
}

uint64_t CacheMigrationManager::EvictForSpace(int tier, uint64_t free_target) {
  uint64_t released = 0;
  if (FreeBytes(tier) >= free_target) return 0;
  for (const auto& e : CachedOn(fs_->ns(), tier)) {
    if (FreeBytes(tier) + released >= free_target) break;
    uint64_t freed = 0;
    if (fs_->ns().InvalidateCachedCopy(e.path, &freed).ok() && freed > 0) {
      released += freed;
      evictions_.fetch_add(1, std::memory_order_relaxed);
    }
  }
  return released;
}

std::vector<CopyTask> CacheMigrationManager::MonitorTick(int tier, bool enqueue) {
  std::vector<CopyTask> out;
  if (tier < 0 || tier >= last_tier()) return out;
  auto scheme = fs_->scheme();
  uint64_t budget = scheme->CacheBudget(tier);
  if (enqueue) EvictForBudget(tier);
  if (budget == 0) return out;
  auto ratio = windows_[tier]->Ratio();
  if (!ratio || *ratio >= options_.hit_threshold) return out;

  struct Candidate {
    RecordPtr record;
    double count;
    uint64_t last;
    uint64_t size;
  };
  std::vector<Candidate> candidates;
  for (const auto& r : fs_->ns().Records()) {
    if (r->file_class != FileClass::kSst) continue;
    std::lock_guard lock(r->mu);
    if (r->deleted || !r->sealed || r->pinned || r->cached || r->open_writers > 0) continue;
    if (!r->home || r->home->tier_id() != tier + 1) continue;
    double count = r->access_count.load(std::memory_order_relaxed);
    if (count <= 0) continue;
    candidates.push_back({r, count, r->last_access.load(std::memory_order_relaxed),
                          r->home->size()});
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.count != b.count) return a.count > b.count;
    if (a.last != b.last) return a.last > b.last;
    return a.record->logical_path < b.record->logical_path;
  });

  uint64_t upper = static_cast<uint64_t>(Capacity(tier) * options_.upper_pct / 100.0);
  for (const auto& c : candidates) {
    if (static_cast<int>(out.size()) >= options_.copies_per_tick) break;
    uint64_t pending = cache_pending_[tier].load();
    auto cached = CachedOn(fs_->ns(), tier);
    uint64_t usage = pending;
    for (const auto& e : cached) usage += e.size;
    if (usage + c.size > budget) {
      // Room only by dropping copies colder than the candidate.
      uint64_t reclaimable = 0;
      for (const auto& e : cached) {
        if (e.count < c.count) reclaimable += e.size;
      }
      if (usage + c.size - std::min(usage, reclaimable) > budget) continue;
      if (enqueue) {
        for (const auto& e : cached) {
          if (usage + c.size <= budget || e.count >= c.count) break;
          uint64_t freed = 0;
          if (fs_->ns().InvalidateCachedCopy(e.path, &freed).ok() && freed > 0) {
            usage -= std::min(usage, freed);
            evictions_.fetch_add(1, std::memory_order_relaxed);
          }
        }
        if (usage + c.size > budget) continue;
      }
    }
    // Never let a cached copy push the tier into migration territory.
    uint64_t free = FreeBytes(tier);
    if (free < c.size + pending || free - c.size - pending < upper) continue;

    CopyTask task{c.record->logical_path, tier + 1, tier, TaskReason::kHitRatio, 0};
    if (enqueue) {
      if (!Pin(*c.record, tier + 1)) continue;
      cache_pending_[tier].fetch_add(c.size);
      Enqueue(cache_q_, task);
    }
    out.push_back(std::move(task));
  }
  return out;
}

std::vector<RecordPtr> CacheMigrationManager::MigrationCandidates(int tier) const {
  struct Candidate {
    RecordPtr record;
    int level;
    uint64_t last;
  };
  std::vector<Candidate> cands;
  for (const auto& r : fs_->ns().Records()) {
    if (r->file_class != FileClass::kSst) continue;
    std::lock_guard lock(r->mu);
    if (r->deleted || !r->sealed || r->pinned || r->open_writers > 0) continue;
    if (!r->home || r->home->tier_id() != tier) continue;
    cands.push_back({r, LevelKey(*r), r->last_access.load(std::memory_order_relaxed)});
  }
  std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    if (a.level != b.level) return a.level > b.level;
    if (a.last != b.last) return a.last < b.last;
    return a.record->logical_path < b.record->logical_path;
  });
  std::vector<RecordPtr> out;
  for (auto& c : cands) out.push_back(std::move(c.record));
  return out;
}

std::vector<CopyTask> CacheMigrationManager::MigrationTick(int tier, bool enqueue) {
  std::vector<CopyTask> out;
  if (tier < 0 || tier >= last_tier()) return out;
  uint64_t upper = static_cast<uint64_t>(Capacity(tier) * options_.upper_pct / 100.0);
  if (FreeBytes(tier) >= upper) return out;
  if (enqueue) EvictForSpace(tier, upper);
  uint64_t projected = FreeBytes(tier) + migr_pending_[tier].load();
  for (const auto& r : MigrationCandidates(tier)) {
    if (projected >= upper) break;
    uint64_t size;
    {
      std::lock_guard lock(r->mu);
      if (!r->home) continue;
      size = r->home->size();
    }
    CopyTask task{r->logical_path, tier, tier + 1, TaskReason::kCapacity, 0};
    if (enqueue) {
      if (!Pin(*r, tier)) continue;
      migr_pending_[tier].fetch_add(size);
      Enqueue(migr_q_, task);
    }
    projected += size;
    out.push_back(std::move(task));
  }
  return out;
}

Status CacheMigrationManager::CopyReplica(const ReplicaPtr& src, TierDevice& dst,
                                          const std::string& locator, WriterSource source,
                                          bool forced, const FileRecord& record,
                                          std::shared_ptr<DeviceFile>* out) {
  std::shared_ptr<DeviceFile> file;
  TIERKV_RETURN_IF_ERROR(dst.Create(locator, &file));
  // Retired on failure so the partial file is removed.
  auto partial = std::make_shared<Replica>(&dst, locator, file);

  auto changed = [&] {
    std::lock_guard lock(record.mu);
    return record.deleted || record.home != src;
  };
  WriterRegistry& reg = fs_->registry();
  int tier = dst.tier_id();
  if (forced) reg.AcquireForced(tier);
  uint64_t size = src->size();
  Status result = Status::OK();
  std::string chunk;
  for (uint64_t off = 0; off < size; off += options_.chunk_bytes) {
    if (changed()) {
      result = Status::Aborted("source changed during copy: " + record.logical_path);
      break;
    }
    size_t len = static_cast<size_t>(std::min<uint64_t>(options_.chunk_bytes, size - off));
    result = src->device().Read(src->file(), off, len, &chunk);
    if (!result.ok()) break;
    if (!forced) {
      bool admitted = false;
      while (!admitted) {
        if (stop_.load()) break;
        admitted = reg.AcquireThrottled(tier, source, std::chrono::milliseconds(20));
      }
      if (!admitted) {
        result = Status::Aborted("shutting down");
        break;
      }
    }
    result = dst.Write(*file, off, chunk);
    if (!forced) reg.ReleaseThrottled(tier, source);
    if (!result.ok()) break;
  }
  if (forced) reg.ReleaseForced(tier);
  if (result.ok() && changed()) {
    result = Status::Aborted("source changed during copy: " + record.logical_path);
  }
  if (!result.ok()) {
    partial->Retire();
    return result;
  }
  *out = file;
  return Status::OK();
}

Status CacheMigrationManager::ExecuteCacheCopy(const CopyTask& task) {
  RecordPtr record;
  Status s = fs_->ns().Lookup(task.logical_path, &record);
  ReplicaPtr src;
  uint64_t size = 0;
  if (s.ok()) {
    std::lock_guard lock(record->mu);
    if (record->deleted || !record->home || record->home->tier_id() != task.src_tier ||
        record->cached) {
      s = Status::Aborted("file changed before copy: " + task.logical_path);
    } else {
      src = record->home;
      size = src->size();
    }
  }
  auto finish = [&](Status st) {
    if (record) Unpin(*record);
    uint64_t pend = cache_pending_[task.dst_tier].load();
    while (!cache_pending_[task.dst_tier].compare_exchange_weak(
        pend, pend - std::min(pend, size))) {
    }
    if (st.ok()) {
      cache_done_.fetch_add(1, std::memory_order_relaxed);
    } else {
      cache_aborts_.fetch_add(1, std::memory_order_relaxed);
    }
    return st;
  };
  if (!s.ok()) return finish(s);

  TierDevice& dst = fs_->device(task.dst_tier);
  std::string locator = "cache/" + task.logical_path;
  std::shared_ptr<DeviceFile> file;
  s = CopyReplica(src, dst, locator, WriterSource::kCacheCopy, false, *record, &file);
  if (!s.ok()) return finish(s);
  auto copy = std::make_shared<Replica>(&dst, locator, file);
  s = fs_->ns().SetCachedCopy(task.logical_path, src, copy);
  if (!s.ok()) return finish(s);
  AgeOnCopy(*record);
  finish(Status::OK());
  EvictForBudget(task.dst_tier);
  return Status::OK();
}

Status CacheMigrationManager::ExecuteMigration(const CopyTask& task) {
  RecordPtr record;
  Status s = fs_->ns().Lookup(task.logical_path, &record);
  ReplicaPtr src;
  uint64_t size = 0;
  if (s.ok()) {
    std::lock_guard lock(record->mu);
    if (record->deleted || !record->home || record->home->tier_id() != task.src_tier) {
      s = Status::Aborted("file changed before migration: " + task.logical_path);
    } else {
      src = record->home;
      size = src->size();
    }
  }
  bool forced = task.reason == TaskReason::kForced;
  auto finish = [&](Status st) {
    if (record) Unpin(*record);
    if (!forced) {
      uint64_t pend = migr_pending_[task.src_tier].load();
      while (!migr_pending_[task.src_tier].compare_exchange_weak(
          pend, pend - std::min(pend, size))) {
      }
    }
    if (st.ok()) {
      migr_done_.fetch_add(1, std::memory_order_relaxed);
      if (forced) forced_done_.fetch_add(1, std::memory_order_relaxed);
    } else {
      migr_aborts_.fetch_add(1, std::memory_order_relaxed);
    }
    return st;
  };
  if (!s.ok()) return finish(s);

  int dst_tier = task.dst_tier;
  TierDevice& dst = fs_->device(dst_tier);
  if (dst_tier < last_tier()) {
    uint64_t lower = static_cast<uint64_t>(Capacity(dst_tier) * options_.lower_pct / 100.0);
    if (FreeBytes(dst_tier) < size + lower) ForceMigration(dst_tier, size);
  }
  std::string name = "data/" + task.logical_path;
  std::string tmp = name + ".tmp";
  std::shared_ptr<DeviceFile> file;
  s = CopyReplica(src, dst, tmp, WriterSource::kMigration, forced, *record, &file);
  if (!s.ok()) return finish(s);
  s = dst.Fsync(*file);
  if (s.ok()) s = dst.Rename(tmp, name);
  if (!s.ok()) {
    // Leave the temporary for recovery when the device is frozen.
    if (!dst.crashed()) dst.Remove(tmp);
    return finish(s);
  }
  auto moved = std::make_shared<Replica>(&dst, name, file);
  bool skipped = false;
  s = fs_->ns().Relocate(task.logical_path, moved, &skipped);
  if (!s.ok()) {
    moved->Retire();
    return finish(s);
  }
  if (skipped) return finish(Status::Aborted("file unlinked during migration"));
  return finish(Status::OK());
}

Status CacheMigrationManager::ForceMigration(int tier, uint64_t extra_bytes) {
  if (tier < 0 || tier >= last_tier()) return Status::OK();
  std::lock_guard guard(*forced_mu_[tier]);
  uint64_t upper =
      static_cast<uint64_t>(Capacity(tier) * options_.upper_pct / 100.0) + extra_bytes;
  EvictForSpace(tier, upper);
  auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(5);
  while (FreeBytes(tier) < upper) {
    RecordPtr victim;
    for (const auto& r : MigrationCandidates(tier)) {
      if (Pin(*r, tier)) {
        victim = r;
        break;
      }
    }
    if (!victim) {
      // Background migrations may be about to free the space.
      if (migr_pending_[tier].load() == 0 || std::chrono::steady_clock::now() > deadline) {
        break;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(1));
      continue;
    }
    CopyTask task{victim->logical_path, tier, tier + 1, TaskReason::kForced, fs_->ns().Tick()};
    Status s = ExecuteMigration(task);
    if (!s.ok() && !s.IsAborted()) return s;
  }
  return Status::OK();
}

void CacheMigrationManager::NotifyLevelChange(const std::string& logical_path, int new_level) {
  if (!options_.migration_enabled) return;
  RecordPtr record;
  if (!fs_->ns().Lookup(logical_path, &record).ok()) return;
  int target = std::min(fs_->scheme()->TierForLevel(new_level), last_tier());
  int home;
  uint64_t size;
  {
    std::lock_guard lock(record->mu);
    if (!record->home) return;
    home = record->home->tier_id();
    size = record->home->size();
  }
  if (target <= home || !Pin(*record, home)) return;
  migr_pending_[home].fetch_add(size);
  Enqueue(migr_q_, {logical_path, home, target, TaskReason::kTrivialMove, 0});
}

CacheMigrationStats CacheMigrationManager::stats() const {
  CacheMigrationStats s;
  s.cache_copies = cache_done_.load();
  s.cache_aborts = cache_aborts_.load();
  s.evictions = evictions_.load();
  s.migrations = migr_done_.load();
  s.forced_migrations = forced_done_.load();
  s.migration_aborts = migr_aborts_.load();
  return s;
}

}  // namespace tierkv
