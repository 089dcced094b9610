#pragma once

// Read-only caching of hot files on faster tiers and capacity-driven
// migration of cold files to slower tiers.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "tierkv/namespace.hpp"
#include "tierkv/status.hpp"
#include "tierkv/writer_registry.hpp"

namespace tierkv {

class TierFs;

struct CacheMigrationOptions {
  bool cache_enabled = true;
  bool migration_enabled = true;
  double hit_threshold = 0.8;
  uint32_t window = 10000;       // foreground reads per hit-ratio window
  double upper_pct = 5.0;        // background migration below this free %
  double lower_pct = 2.0;        // forced migration below this free %
  int cache_pool = 16;
  int migrate_pool = 16;
  // Copy tasks enqueued per monitor tick per tier.
  int copies_per_tick = 1;
  // Model time: stretched by the delay model's time_scale.
  std::chrono::milliseconds monitor_period{10};
  uint64_t chunk_bytes = 256 * 1024;
};

// Sliding window over the last `length` foreground reads: one byte per
// slot, 1 for a hit. Record() is lock-free.
class HitRatioWindow {
 public:
  explicit HitRatioWindow(uint32_t length);

  void Record(bool hit);
  // hits / samples over the window; empty while nothing was recorded.
  std::optional<double> Ratio() const;
  uint64_t hits() const;
  uint64_t samples() const;
  uint32_t length() const { return length_; }
  void Reset();

 private:
  uint32_t length_;
  std::unique_ptr<std::atomic<uint8_t>[]> slots_;
  std::atomic<uint64_t> pos_{0};
  std::atomic<int64_t> hits_{0};
};

enum class TaskReason { kHitRatio, kCapacity, kForced, kTrivialMove };

std::string_view TaskReasonName(TaskReason reason);

struct CopyTask {
  std::string logical_path;
  int src_tier = 0;
  int dst_tier = 0;
  TaskReason reason = TaskReason::kHitRatio;
  uint64_t enqueue_tick = 0;
};

struct CacheMigrationStats {
  uint64_t cache_copies = 0;
  uint64_t cache_aborts = 0;
  uint64_t evictions = 0;
  uint64_t migrations = 0;
  uint64_t forced_migrations = 0;
  uint64_t migration_aborts = 0;
};

class CacheMigrationManager {
 public:
  CacheMigrationManager(TierFs* fs, CacheMigrationOptions options);
  ~CacheMigrationManager();

  // Starts the monitors and worker pools.
  void Start();
  void Stop();

  const CacheMigrationOptions& options() const { return options_; }

  // Foreground read that reached storage, served by `served_tier`.
  void RecordAccess(FileRecord& record, int served_tier);
  HitRatioWindow& window(int tier) { return *windows_.at(tier); }

  // Halves the file's access count.
  static void AgeOnCopy(FileRecord& record);

  // One monitor step for a cache tier. Returns the tasks it enqueued (or
  // would have, when `enqueue` is false).
  std::vector<CopyTask> MonitorTick(int tier, bool enqueue = true);
  // Background migration candidates when free space is under the upper
  // bound, in order, until projected free space reaches it.
  std::vector<CopyTask> MigrationTick(int tier, bool enqueue = true);

  int CacheWorkerBudget(int tier) const;
  int MigrationWorkerBudget(int dst_tier) const;

  // Bytes held by cached copies on `tier`.
  uint64_t CacheUsage(int tier) const;
  // Drops cached copies on `tier`, coldest first, until usage fits the budget.
  void EvictForBudget(int tier);

  // Runs a task on the calling thread.
  Status ExecuteCacheCopy(const CopyTask& task);
  Status ExecuteMigration(const CopyTask& task);

  // Synchronous migration out of `tier` until free space reaches the upper
  // bound plus `extra_bytes`, or nothing is left to move. Ignores the writer
  // cap.
  Status ForceMigration(int tier, uint64_t extra_bytes = 0);

  // A file moved one level down without rewriting; relocate it when the
  // new level lives on another tier.
  void NotifyLevelChange(const std::string& logical_path, int new_level);

  // Blocks until queues are empty and no task runs.
  void WaitIdle();
  // Runs queued tasks on the calling thread. Returns how many ran.
  size_t DrainQueues();
  size_t queued_cache_tasks();
  size_t queued_migration_tasks();

  CacheMigrationStats stats() const;
  uint64_t cache_tasks_done() const { return cache_done_.load(std::memory_order_relaxed); }
  uint64_t migration_tasks_done() const {
    return migr_done_.load(std::memory_order_relaxed);
  }

 private:
  struct Queue {
    std::mutex mu;
    std::condition_variable cv;
    std::deque<CopyTask> tasks;
    int running = 0;
  };

  bool Pin(FileRecord& record, int expected_home);
  static void Unpin(FileRecord& record);
  void Enqueue(Queue& q, CopyTask task);
  void WorkerLoop(Queue& q, bool cache);
  void MonitorLoop(int tier);
  Status CopyReplica(const ReplicaPtr& src, TierDevice& dst, const std::string& locator,
                     WriterSource source, bool forced, const FileRecord& record,
                     std::shared_ptr<DeviceFile>* out);
  std::vector<RecordPtr> MigrationCandidates(int tier) const;
  // Drops cached copies on `tier`, coldest first, until `free_target` bytes
  // are free. Returns bytes released.
  uint64_t EvictForSpace(int tier, uint64_t free_target);
  uint64_t FreeBytes(int tier) const;
  uint64_t Capacity(int tier) const;
  int last_tier() const;

  TierFs* fs_;
  CacheMigrationOptions options_;
  std::vector<std::unique_ptr<HitRatioWindow>> windows_;
  Queue cache_q_;
  Queue migr_q_;
  // Bytes promised to queued copies (per destination tier) and to queued
  // migrations (per source tier).
  std::unique_ptr<std::atomic<uint64_t>[]> cache_pending_;
  std::unique_ptr<std::atomic<uint64_t>[]> migr_pending_;
  std::vector<std::unique_ptr<std::mutex>> forced_mu_;
  std::vector<std::thread> threads_;
  std::atomic<bool> stop_{false};
  std::mutex stop_mu_;
  std::condition_variable stop_cv_;
  bool started_ = false;

  std::atomic<uint64_t> cache_done_{0};
  std::atomic<uint64_t> cache_aborts_{0};
  std::atomic<uint64_t> evictions_{0};
  std::atomic<uint64_t> migr_done_{0};
  std::atomic<uint64_t> forced_done_{0};
  std::atomic<uint64_t> migr_aborts_{0};
};

}  // namespace tierkv
