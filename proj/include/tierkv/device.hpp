#pragma once

// Tier-backed storage drivers. Each tier is a directory holding `data/`
// (placed files) and `cache/` (read-only copies). Every read and write is
// paced by a delay model driven by the tier's throughput-vs-concurrency
// curves, so a directory on any local filesystem behaves like the device
// the curves describe.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tierkv/status.hpp"

namespace tierkv {

inline constexpr uint64_t kBlockSize = 4096;

// Blocks charged for an I/O of `len` bytes (at least one).
inline uint64_t BlocksFor(uint64_t len) {
  return len == 0 ? 1 : (len + kBlockSize - 1) / kBlockSize;
}

enum class Interpolation { kStep, kLinear };

struct CurvePoint {
  int concurrency = 1;
  double ops_per_sec = 0;  // aggregate 4 KiB operations per second
};

// Aggregate throughput as a function of the number of concurrent workers.
// Keys strictly increasing, values strictly positive; +inf values mean the
// device is not modelled (no delay).
class ThroughputCurve {
 public:
  ThroughputCurve() = default;

  static Status Make(std::vector<CurvePoint> points, ThroughputCurve* out);
  // "1:250000,2:400000,..." ; "inf" accepted as a value.
  static Status Parse(std::string_view text, ThroughputCurve* out);
  std::string Format() const;

  double At(double concurrency, Interpolation mode) const;
  // Concurrency level with the highest throughput; ties go to the smaller
  // level. An unlimited curve reports its largest level.
  int Knee() const;
  bool Unlimited() const;
  bool empty() const { return points_.empty(); }
  const std::vector<CurvePoint>& points() const { return points_; }

 private:
  std::vector<CurvePoint> points_;
};

struct DeviceProfile {
  int tier_id = 0;
  uint64_t capacity_bytes = 0;
  ThroughputCurve write_curve;
  ThroughputCurve read_curve;
  int max_write_parallelism = 1;
  int max_read_parallelism = 1;
  std::filesystem::path backing_path;

  // Sets max_*_parallelism from the curve knees.
  void DeriveParallelism();
  Status Validate() const;

  std::string Serialize() const;
  static Status Parse(std::string_view text, DeviceProfile* out);
  static Status Load(const std::filesystem::path& file, DeviceProfile* out);
  Status Save(const std::filesystem::path& file) const;
};

enum class DevicePreset { kNvmm, kNvme, kSata, kZeroDelay };

Status ParsePreset(std::string_view name, DevicePreset* out);
std::string_view PresetName(DevicePreset preset);
DeviceProfile MakePresetProfile(DevicePreset preset, int tier_id,
                                uint64_t capacity_bytes,
                                std::filesystem::path backing_path);

struct DelayModelOptions {
  bool enabled = true;
  Interpolation interpolation = Interpolation::kLinear;
  // Wall-clock seconds per modelled second. Values > 1 slow the whole model
  // down uniformly, which keeps CPU overhead small relative to modelled I/O.
  double time_scale = 1.0;
  // Longest idle gap a worker may bank as credit against later operations.
  std::chrono::microseconds credit_window{2000};
};

// Modelled service time (in model seconds) of one I/O of `blocks` 4 KiB
// blocks when `concurrency` workers are active: blocks / (curve(n) / n).
double ServiceSeconds(const ThroughputCurve& curve, int concurrency,
                      uint64_t blocks, Interpolation mode);

// Shared crash switch for a set of tiers. Once tripped, every device
// operation fails, which freezes on-disk state the way a process crash would.
class FaultInjector {
 public:
  void Crash() { crashed_.store(true, std::memory_order_release); }
  bool crashed() const { return crashed_.load(std::memory_order_acquire); }
  // Trip the crash after `n` more mutating operations (0 disarms).
  void CrashAfterMutations(int64_t n) {
    countdown_.store(n, std::memory_order_release);
  }
  // Called by devices before each mutating operation.
  bool OnMutation() {
    if (crashed()) return false;
    int64_t left = countdown_.load(std::memory_order_acquire);
    if (left > 0 && countdown_.fetch_sub(1, std::memory_order_acq_rel) == 1) {
      Crash();
      return false;
    }
    return true;
  }

 private:
  std::atomic<bool> crashed_{false};
  std::atomic<int64_t> countdown_{0};
};

class TierDevice;

// Open file on a tier. Holds the OS descriptor; closes on destruction.
class DeviceFile {
 public:
  ~DeviceFile();
  DeviceFile(const DeviceFile&) = delete;
  DeviceFile& operator=(const DeviceFile&) = delete;

  const std::string& locator() const { return locator_; }
  uint64_t size() const { return size_.load(std::memory_order_acquire); }
  TierDevice& device() const { return *device_; }

 private:
  friend class TierDevice;
  DeviceFile(TierDevice* device, std::string locator, int fd, uint64_t size)
      : device_(device), locator_(std::move(locator)), fd_(fd), size_(size) {}

  TierDevice* device_;
  std::string locator_;  // relative to the backing path, e.g. "data/000012.sst"
  int fd_;
  std::atomic<uint64_t> size_;
};

class TierDevice {
 public:
  TierDevice(DeviceProfile profile, DelayModelOptions options,
             std::shared_ptr<FaultInjector> faults = nullptr);
  TierDevice(const TierDevice&) = delete;
  TierDevice& operator=(const TierDevice&) = delete;

  // Creates data/ and cache/ and accounts for files already present.
  Status Open();

  // `locator` is relative to the backing path: "data/<name>" or "cache/<name>".
  Status Create(const std::string& locator, std::shared_ptr<DeviceFile>* out);
  Status OpenFile(const std::string& locator, std::shared_ptr<DeviceFile>* out);
  Status Write(DeviceFile& file, uint64_t offset, std::span<const char> payload);
  Status Read(DeviceFile& file, uint64_t offset, size_t length, std::string* out);
  Status Fsync(DeviceFile& file);
  Status Remove(const std::string& locator);
  Status Rename(const std::string& from, const std::string& to);
  Status List(std::string_view area, std::vector<std::string>* names) const;
  bool Exists(const std::string& locator) const;

  // Small metadata files at the root of the backing path. Not paced and not
  // counted against capacity.
  Status AppendMetadata(std::string_view name, std::string_view line);
  Status ReplaceMetadata(std::string_view name, std::string_view content);
  Status ReadMetadata(std::string_view name, std::string* content) const;

  bool crashed() const { return faults_ && faults_->crashed(); }

  // Sum of sizes of every file under data/ and cache/, read from disk.
  Status RescanUsage(uint64_t* bytes) const;

  const DeviceProfile& profile() const { return profile_; }
  int tier_id() const { return profile_.tier_id; }
  uint64_t capacity_bytes() const { return profile_.capacity_bytes; }
  uint64_t used_bytes() const { return used_.load(std::memory_order_acquire); }
  uint64_t free_bytes() const {
    uint64_t used = used_bytes();
    return used >= profile_.capacity_bytes ? 0 : profile_.capacity_bytes - used;
  }
  int active_writers() const { return active_writers_.load(std::memory_order_acquire); }
  int active_readers() const { return active_readers_.load(std::memory_order_acquire); }
  uint64_t write_ops() const { return write_ops_.load(std::memory_order_relaxed); }
  uint64_t read_ops() const { return read_ops_.load(std::memory_order_relaxed); }
  const DelayModelOptions& delay_options() const { return options_; }
  std::filesystem::path PathOf(const std::string& locator) const {
    return profile_.backing_path / locator;
  }

 private:
  Status CheckAlive(const std::string& what) const;
  Status Reserve(uint64_t bytes);
  void Release(uint64_t bytes);
  void Pace(const ThroughputCurve& curve, int concurrency, uint64_t blocks,
            std::chrono::steady_clock::time_point start);
  Status Fail(std::string_view what, const std::string& locator, int err) const;

  DeviceProfile profile_;
  DelayModelOptions options_;
  std::shared_ptr<FaultInjector> faults_;
  std::atomic<uint64_t> used_{0};
  std::atomic<int> active_writers_{0};
  std::atomic<int> active_readers_{0};
  std::atomic<uint64_t> write_ops_{0};
  std::atomic<uint64_t> read_ops_{0};
};

}  // namespace tierkv
