#pragma once

// File interface the key-value store sees: open/read/write/fsync/close over
// logical descriptors, with the originating operation attached at open so
// files land on the tier the placement scheme picks.

#include <array>
#include <atomic>
#include <chrono>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tierkv/cache_migration.hpp"
#include "tierkv/device.hpp"
#include "tierkv/io_context.hpp"
#include "tierkv/namespace.hpp"
#include "tierkv/placement.hpp"
#include "tierkv/status.hpp"
#include "tierkv/writer_registry.hpp"

namespace tierkv {

struct OpenFlags {
  bool create = false;
  bool read_only = false;
  bool append = false;

  static OpenFlags Create() { return {true, false, false}; }
  static OpenFlags ReadOnly() { return {false, true, false}; }
  static OpenFlags Append() { return {false, false, true}; }
};

struct TierFsOptions {
  std::vector<DeviceProfile> tiers;  // fastest first; tier_id = index
  DelayModelOptions delay;
  PlacementScheme scheme;
  CacheMigrationOptions cache;
  std::shared_ptr<FaultInjector> faults;
  // Keep a log of writer open/close events for demand profiling.
  bool log_writer_events = false;
  // Run monitors and copy workers. Tests drive ticks by hand when false.
  bool background = true;
};

// One writer appearing (+1) or going away (-1).
struct WriterEvent {
  std::chrono::steady_clock::time_point at;
  IoContext context;
  int delta = 0;
};

class TierFs {
 public:
  static constexpr int kMaxLevels = 16;

  // Opens the tiers, rebuilds the namespace from disk and starts the
  // background workers.
  static Status Open(TierFsOptions options, std::unique_ptr<TierFs>* out,
                     RecoveryReport* report = nullptr);
  ~TierFs();
  TierFs(const TierFs&) = delete;
  TierFs& operator=(const TierFs&) = delete;

  // Stops background work. Open descriptors stay usable.
  void Shutdown();

  // `context` overrides the calling thread's ambient context.
  Status OpenFile(const std::string& path, OpenFlags flags, std::optional<IoContext> context,
                  uint64_t* fd);
  Status Read(uint64_t fd, uint64_t offset, size_t length, std::string* out);
  Status Write(uint64_t fd, uint64_t offset, std::span<const char> data);
  Status Append(uint64_t fd, std::span<const char> data);
  Status Fsync(uint64_t fd);
  Status Close(uint64_t fd);
  Status Unlink(const std::string& path);
  Status Rename(const std::string& from, const std::string& to);
  Status List(std::vector<std::string>* names) const;
  Status FileSize(const std::string& path, uint64_t* size) const;
  bool Exists(const std::string& path) const;

  // Records the file's LSM level; moves it when the level lives elsewhere.
  Status SetLevel(const std::string& path, int level);

  int tier_count() const { return static_cast<int>(devices_.size()); }
  TierDevice& device(int tier) const { return *devices_.at(tier); }
  FileNamespace& ns() { return *ns_; }
  const FileNamespace& ns() const { return *ns_; }
  WriterRegistry& registry() { return *registry_; }
  CacheMigrationManager& cache() { return *cache_; }
  std::shared_ptr<const PlacementScheme> scheme() const;
  void SetScheme(PlacementScheme scheme);
  const PlacementPolicy& policy() const { return policy_; }
  std::vector<TierSpace> Space() const;

  uint64_t reads(int tier) const { return reads_[tier].load(std::memory_order_relaxed); }
  uint64_t writes(int tier) const { return writes_[tier].load(std::memory_order_relaxed); }
  // Files created under each context kind, for attribution checks.
  uint64_t creates(IoContext::Kind kind) const {
    return creates_[static_cast<int>(kind)].load(std::memory_order_relaxed);
  }
  // Open writers by context kind and target level (WAL and flush use level 0).
  int ActiveWriters(IoContext::Kind kind, int level) const;
  std::vector<WriterEvent> TakeWriterEvents();
  size_t open_fds() const;

 private:
  struct FdState {
    RecordPtr record;
    bool writable = false;
    IoContext context;
    int writer_tier = -1;  // registry slot held on this tier, if any
    std::optional<WriterSource> source;
  };

  TierFs(TierFsOptions options, std::vector<std::unique_ptr<TierDevice>> devices);

  Status Create(const std::string& path, const IoContext& ctx, uint64_t* fd);
  Status WriteAt(FdState& st, uint64_t fd, std::optional<uint64_t> offset,
                 std::span<const char> data);
  void TrackWriter(const FdState& st, int delta);
  bool GetFd(uint64_t fd, FdState* st) const;

  TierFsOptions options_;
  PlacementPolicy policy_;
  std::vector<std::unique_ptr<TierDevice>> devices_;
  std::unique_ptr<FileNamespace> ns_;
  std::unique_ptr<WriterRegistry> registry_;
  std::unique_ptr<CacheMigrationManager> cache_;

  mutable std::mutex scheme_mu_;
  std::shared_ptr<const PlacementScheme> scheme_;

  mutable std::mutex fd_mu_;
  std::unordered_map<uint64_t, FdState> fds_;

  std::unique_ptr<std::atomic<uint64_t>[]> reads_;
  std::unique_ptr<std::atomic<uint64_t>[]> writes_;
  std::array<std::atomic<uint64_t>, 7> creates_{};
  std::array<std::array<std::atomic<int>, kMaxLevels>, 7> active_{};

  std::mutex events_mu_;
  std::vector<WriterEvent> events_;
  bool shut_down_ = false;
};

}  // namespace tierkv
