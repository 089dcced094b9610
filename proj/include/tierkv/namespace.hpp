#pragma once

// Logical-to-physical map of every KVS file across the tier hierarchy.

#include <array>
#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tierkv/device.hpp"
#include "tierkv/status.hpp"

namespace tierkv {

enum class FileClass { kWal, kSst, kManifest, kOther };

std::string_view FileClassName(FileClass c);
// By naming convention: *.sst, *.log, MANIFEST*, anything else.
FileClass ClassifyFileName(std::string_view name);

// One physical copy of a file on one tier. Holders keep it readable; once
// retired, the physical file is removed when the last holder lets go.
class Replica {
 public:
  Replica(TierDevice* device, std::string locator, std::shared_ptr<DeviceFile> file)
      : device_(device), locator_(std::move(locator)), file_(std::move(file)) {}
  ~Replica();
  Replica(const Replica&) = delete;
  Replica& operator=(const Replica&) = delete;

  TierDevice& device() const { return *device_; }
  int tier_id() const { return device_->tier_id(); }
  const std::string& locator() const { return locator_; }
  DeviceFile& file() const { return *file_; }
  const std::shared_ptr<DeviceFile>& file_ptr() const { return file_; }
  uint64_t size() const { return file_->size(); }

  void Retire() { retired_.store(true, std::memory_order_release); }
  bool retired() const { return retired_.load(std::memory_order_acquire); }

 private:
  TierDevice* device_;
  std::string locator_;
  std::shared_ptr<DeviceFile> file_;
  std::atomic<bool> retired_{false};
};

using ReplicaPtr = std::shared_ptr<Replica>;

struct FileRecord {
  FileRecord(std::string path, FileClass cls, uint64_t fd)
      : logical_path(std::move(path)), file_class(cls), logical_fd(fd) {}

  const std::string logical_path;
  const FileClass file_class;
  const uint64_t logical_fd;  // issued at registration

  std::atomic<double> access_count{0};
  std::atomic<uint64_t> last_access{0};

  mutable std::mutex mu;
  // Guarded by mu.
  std::optional<int> level;
  ReplicaPtr home;
  ReplicaPtr cached;     // read-only copy on a strictly faster tier
  bool deleted = false;
  bool sealed = false;   // fully written; immutable from now on
  bool pinned = false;   // cache copy or migration in flight
  int open_writers = 0;
};

using RecordPtr = std::shared_ptr<FileRecord>;

// Point-in-time copy of a record's fields.
struct FileInfo {
  std::string logical_path;
  FileClass file_class = FileClass::kOther;
  uint64_t logical_fd = 0;
  std::optional<int> level;
  int tier_id = -1;
  std::string physical_locator;
  uint64_t size_bytes = 0;
  double access_count = 0;
  uint64_t last_access = 0;
  std::optional<int> cached_copy_tier;
  bool pinned = false;
  bool sealed = false;
};

FileInfo Describe(const FileRecord& record);

// `<backing_path>/levels.manifest`: one "<filename> <level> <size_bytes>"
// line per event, fsynced on append, last line for a name wins. Level "-"
// means none.
class LevelSidecar {
 public:
  struct Entry {
    std::optional<int> level;
    uint64_t size_bytes = 0;
  };

  static constexpr std::string_view kFileName = "levels.manifest";

  static Status Append(const TierDevice& device, std::string_view name,
                       std::optional<int> level, uint64_t size_bytes);
  static Status Load(const TierDevice& device, std::map<std::string, Entry>* out);
  static Status Rewrite(const TierDevice& device, const std::map<std::string, Entry>& entries);
};

struct RecoveryReport {
  size_t registered = 0;
  size_t cache_residues_deleted = 0;
  size_t temporaries_deleted = 0;
  size_t duplicates_deleted = 0;
  std::vector<std::string> log;
};

class FileNamespace {
 public:
  // `tiers` indexed by tier_id, fastest first.
  explicit FileNamespace(std::vector<TierDevice*> tiers);

  TierDevice& tier(int id) const { return *tiers_.at(id); }
  int tier_count() const { return static_cast<int>(tiers_.size()); }

  // Inserts a record for a file that already exists at `home`.
  Status Register(const std::string& logical_path, FileClass file_class,
                  std::optional<int> level, ReplicaPtr home, uint64_t* fd);
  // Same, opening `physical_locator` on `tier_id`.
  Status Register(const std::string& logical_path, FileClass file_class,
                  std::optional<int> level, int tier_id, const std::string& physical_locator,
                  uint64_t* fd);
  // Issues an additional descriptor for a live file.
  Status Open(const std::string& logical_path, uint64_t* fd);
  Status Close(uint64_t fd);

  // Replica that should serve reads: the cached copy when present, else home.
  // A foreground access also bumps the file's hotness.
  Status Resolve(uint64_t fd, bool foreground, ReplicaPtr* replica);
  Status ResolvePath(const std::string& logical_path, ReplicaPtr* replica) const;

  Status Lookup(const std::string& logical_path, RecordPtr* record) const;
  Status LookupFd(uint64_t fd, RecordPtr* record) const;

  // Switches the home replica. The old one is retired and physically removed
  // once its readers drain. A cached copy is invalidated first. When the file
  // was unlinked concurrently, `*skipped` is set and `new_home` is retired.
  Status Relocate(const std::string& logical_path, ReplicaPtr new_home, bool* skipped);
  Status Unlink(const std::string& logical_path);
  Status Rename(const std::string& from, const std::string& to);

  // Installs a read-only copy. Fails with Aborted if the file was unlinked or
  // relocated since `expected_home` was observed.
  Status SetCachedCopy(const std::string& logical_path, const ReplicaPtr& expected_home,
                       ReplicaPtr copy);
  // Drops the cached copy, if any. Returns its size in *freed.
  Status InvalidateCachedCopy(const std::string& logical_path, uint64_t* freed = nullptr);
  Status SetLevel(const std::string& logical_path, std::optional<int> level);

  void Touch(FileRecord& record);
  uint64_t Tick() const { return tick_.load(std::memory_order_relaxed); }

  std::vector<RecordPtr> Records() const;
  std::vector<FileInfo> Snapshot() const;
  size_t size() const;
  size_t open_fds() const;

  // Rebuilds an empty namespace from the tiers' data/ directories and deletes
  // everything under cache/.
  Status Recover(RecoveryReport* report);

 private:
  static constexpr size_t kShards = 16;

  struct PathShard {
    mutable std::mutex mu;
    std::unordered_map<std::string, RecordPtr> records;
  };
  struct FdShard {
    mutable std::mutex mu;
    std::unordered_map<uint64_t, RecordPtr> fds;
  };

  PathShard& ShardFor(std::string_view path) const;
  FdShard& FdShardFor(uint64_t fd) const;
  uint64_t NextFd() { return next_fd_.fetch_add(1, std::memory_order_relaxed); }
  Status InsertFd(uint64_t fd, RecordPtr record);

  std::vector<TierDevice*> tiers_;
  mutable std::array<PathShard, kShards> paths_;
  mutable std::array<FdShard, kShards> fds_;
  std::atomic<uint64_t> next_fd_{3};
  std::atomic<uint64_t> tick_{0};
};

}  // namespace tierkv
