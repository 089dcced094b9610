#pragma once

// Leveled LSM key-value store running on top of TierFs. Every file it
// touches is opened through the facade with the operation that produced it.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "tierkv/kv_text.hpp"
#include "tierkv/lsm/memtable.hpp"
#include "tierkv/lsm/table.hpp"
#include "tierkv/lsm/version.hpp"
#include "tierkv/lsm/wal.hpp"
#include "tierkv/status.hpp"
#include "tierkv/tier_fs.hpp"

namespace tierkv::lsm {

struct LsmConfig {
  size_t memtable_bytes = 4 << 20;
  int l0_compaction_trigger = 4;
  int l0_slowdown_trigger = 8;
  int l0_stop_trigger = 12;
  int fanout = 10;
  int compaction_threads = 4;
  size_t block_cache_bytes = 32 << 20;
  size_t value_bytes = 1024;
  // Sync the WAL before acknowledging each write group.
  bool strict_durability = false;
  int levels = 7;
  // Zero means memtable_bytes * l0_compaction_trigger.
  uint64_t base_level_bytes = 0;
  // Zero means memtable_bytes.
  uint64_t target_file_bytes = 0;
  std::chrono::microseconds slowdown_delay{1000};
  // Roll the manifest to a fresh snapshot past this size.
  uint64_t manifest_roll_bytes = 4 << 20;
  bool auto_compaction = true;

  Status Validate() const;
  uint64_t BaseLevelBytes() const;
  uint64_t TargetFileBytes() const;
  // Size target of level >= 1.
  uint64_t LevelTarget(int level) const;

  // Reads `lsm.*` keys, leaving absent ones at their current values.
  Status Apply(const KvText& kv);
};

struct LsmStats {
  uint64_t flushes = 0;
  uint64_t compactions = 0;
  uint64_t trivial_moves = 0;
  uint64_t flush_bytes = 0;
  uint64_t compaction_bytes = 0;
  uint64_t stall_micros = 0;
  uint64_t write_groups = 0;
  std::vector<uint64_t> compactions_into;  // by output level
};

struct LiveFile {
  std::string name;
  int level = 0;
  uint64_t size = 0;
};

class LsmStore {
 public:
  // Creates the store on `fs` or recovers the one already there.
  static Status Open(TierFs* fs, const LsmConfig& config, std::unique_ptr<LsmStore>* out);
  ~LsmStore();
  LsmStore(const LsmStore&) = delete;
  LsmStore& operator=(const LsmStore&) = delete;

  // Stops background work. The memtable stays in the WAL.
  Status Close();

  Status Put(std::string_view key, std::string_view value);
  Status Delete(std::string_view key);
  Status Write(const WriteBatch& batch);
  // NotFound when absent or deleted.
  Status Get(std::string_view key, std::string* value);
  Status Scan(std::string_view start, size_t count,
              std::vector<std::pair<std::string, std::string>>* out);

  // Seals the active memtable and waits for it to reach L0.
  Status Flush();
  // Waits until no flush or compaction is pending or running.
  Status WaitForIdle(std::chrono::milliseconds timeout = std::chrono::minutes(10));
  // Compacts level by level until every file sits in the deepest level.
  Status CompactAll();

  std::vector<uint64_t> LevelBytes() const;
  std::vector<int> LevelFiles() const;
  std::vector<LiveFile> LiveFiles() const;
  Status CheckInvariants() const;
  LsmStats stats() const;
  uint64_t stall_micros() const { return stall_micros_.load(std::memory_order_relaxed); }
  SequenceNumber last_sequence() const;
  Status background_error() const;
  const LsmConfig& config() const { return config_; }
  BlockCache& block_cache() { return *block_cache_; }
  TierFs& fs() { return *fs_; }

 private:
  struct Writer;
  struct Compaction;
  class FileDeleter;
  class LevelIterator;

  LsmStore(TierFs* fs, const LsmConfig& config);

  Status Recover();
  Status NewDb();
  Status WriteSnapshotManifest(const Version& v, uint64_t log_number);
  Status SetCurrent(const std::string& manifest);
  Status LogAndApply(VersionEdit* edit);

  Status WriteImpl(const WriteBatch* batch, bool force_flush);
  Status MakeRoom(std::unique_lock<std::mutex>& lock, bool force);
  Status SwitchMemtable(std::unique_lock<std::mutex>& lock);
  Status WriteLevel0(const Memtable& mem, FileMetaPtr* meta);

  void FlushLoop();
  void CompactionLoop();
  std::unique_ptr<Compaction> PickCompaction();
  std::unique_ptr<Compaction> PickLevel(int level);
  bool NeedsCompaction() const;
  Status RunCompaction(Compaction& c);
  Status RunTrivialMove(Compaction& c);
  void ReleaseCompaction(const Compaction& c);

  FileMetaPtr NewMeta(uint64_t number);
  Status GetTable(const FileMeta& f, TablePtr* out);
  void EvictTable(uint64_t number);
  std::shared_ptr<const Version> current() const;
  void SetBackgroundError(const Status& s);

  TierFs* fs_;
  LsmConfig config_;
  std::unique_ptr<BlockCache> block_cache_;
  std::shared_ptr<FileDeleter> deleter_;

  mutable std::mutex tables_mu_;
  std::map<uint64_t, TablePtr> tables_;

  mutable std::mutex mu_;
  std::condition_variable bg_cv_;    // wakes background threads
  std::condition_variable done_cv_;  // background progress
  std::deque<Writer*> writers_;
  MemtablePtr mem_;
  MemtablePtr imm_;
  uint64_t log_number_ = 0;
  uint64_t imm_log_number_ = 0;
  std::unique_ptr<WalWriter> wal_;
  std::shared_ptr<const Version> current_;
  SequenceNumber last_seq_ = 0;
  Status bg_error_;
  bool shutting_down_ = false;
  bool closed_ = false;
  int running_compactions_ = 0;
  std::set<uint64_t> busy_;  // files claimed by running compactions
  std::vector<std::string> compact_pointer_;
  std::atomic<uint64_t> next_file_{2};

  std::atomic<bool> stopping_{false};

  std::mutex manifest_mu_;
  uint64_t manifest_number_ = 0;
  uint64_t manifest_log_number_ = 0;
  std::unique_ptr<WalWriter> manifest_;

  std::atomic<uint64_t> stall_micros_{0};
  mutable std::mutex stats_mu_;
  LsmStats stats_;

  std::thread flush_thread_;
  std::vector<std::thread> compaction_threads_;
};

}  // namespace tierkv::lsm
