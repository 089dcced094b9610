#pragma once

// Benchmark harness: builds a tiered store from a flat config, loads it,
// drives closed-loop clients and records a per-interval metrics series.

#include <array>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "tierkv/device.hpp"
#include "tierkv/kv_text.hpp"
#include "tierkv/lsm/store.hpp"
#include "tierkv/placement.hpp"
#include "tierkv/profiler.hpp"
#include "tierkv/tier_fs.hpp"
#include "tierkv/workload.hpp"

namespace tierkv {

struct BenchConfig {
  std::filesystem::path dir = "tierkv-data";
  std::vector<DevicePreset> presets = {DevicePreset::kNvmm, DevicePreset::kNvme};
  std::vector<uint64_t> capacities = {1ull << 30, 16ull << 30};
  // Optional per-tier profile files; they replace the preset curves.
  std::vector<std::filesystem::path> profile_files;
  DelayModelOptions delay{.time_scale = 20};
  CacheMigrationOptions cache;
  lsm::LsmConfig lsm;
  WorkloadSpec workload;
  // Model seconds; zero runs the operation budget to completion.
  double duration_s = 0;
  double sample_s = 1.0;

  // Keys: dir, tiers (comma-separated presets), tier<N>.capacity,
  // tier<N>.profile, time_scale, delay.*, cache.*, migrate.*, pool.*,
  // lsm.*, workload.*, run.duration_s, run.sample_s.
  Status Apply(const KvText& kv);
  Status Validate() const;
  Status Profiles(std::vector<DeviceProfile>* out) const;
  int tier_count() const { return static_cast<int>(presets.size()); }
};

// Facade plus store opened from a config and a scheme.
class BenchEnv {
 public:
  static Status Open(const BenchConfig& config, const PlacementScheme& scheme,
                     std::unique_ptr<BenchEnv>* out,
                     std::shared_ptr<FaultInjector> faults = nullptr,
                     RecoveryReport* recovery = nullptr);
  ~BenchEnv();

  TierFs& fs() { return *fs_; }
  lsm::LsmStore& store() { return *store_; }
  const BenchConfig& config() const { return config_; }
  Status Close();

 private:
  BenchEnv() = default;
  BenchConfig config_;
  std::unique_ptr<TierFs> fs_;
  std::unique_ptr<lsm::LsmStore> store_;
};

// Samples the writer registry and counts moments where cache and migration
// writers on a tier exceed max(0, P - other writers) outside forced
// migration.
class WriterCapMonitor {
 public:
  explicit WriterCapMonitor(TierFs* fs, std::chrono::milliseconds period = std::chrono::milliseconds(100));
  ~WriterCapMonitor();
  void Start();
  void Stop();
  void SampleNow();

  uint64_t samples() const { return samples_.load(); }
  uint64_t violations() const { return violations_.load(); }
  uint64_t forced_samples() const { return forced_.load(); }

 private:
  TierFs* fs_;
  std::chrono::milliseconds period_;
  std::atomic<bool> stop_{false};
  std::thread thread_;
  std::atomic<uint64_t> samples_{0}, violations_{0}, forced_{0};
};

inline constexpr int kCsvTiers = 3;
inline constexpr const char* kCsvHeader =
    "ts_s,ops,reads_t0,reads_t1,reads_t2,writes_t0,writes_t1,writes_t2,hit_ratio_t0,"
    "stall_ms,writers_t0,cache_tasks,migr_tasks";

// One sampling interval. Counters are deltas over the interval ending at
// ts_s (model seconds since the run started); hit ratio and writers are
// instantaneous.
struct SeriesRow {
  double ts_s = 0;
  uint64_t ops = 0;
  std::array<uint64_t, kCsvTiers> reads{};
  std::array<uint64_t, kCsvTiers> writes{};
  double hit_ratio_t0 = 0;
  double stall_ms = 0;
  int writers_t0 = 0;
  uint64_t cache_tasks = 0;
  uint64_t migr_tasks = 0;
};

struct RunReport {
  std::string workload;
  std::vector<SeriesRow> series;
  uint64_t total_ops = 0;
  double duration_s = 0;  // model seconds
  double throughput_kops = 0;
  double p50_us = 0;  // model microseconds
  double p99_us = 0;
  // False when rebuilt from a CSV, which carries no per-op latencies.
  bool has_latency = true;
  // Facade read counters over the run, per tier.
  std::vector<uint64_t> tier_reads;
  bool partial = false;
  std::string error;

  // ops / duration from the series alone.
  double SeriesThroughputKops() const;
  // Mean of hit_ratio_t0 over rows whose ts_s >= from_s.
  double MeanHitRatio(double from_s) const;
};

struct RunOptions {
  double duration_s = 0;  // model seconds; zero runs the operation budget
  double sample_s = 1.0;  // model seconds between rows
  double time_scale = 1.0;
};

// Inserts record_count records from one thread in key-hash order, then
// waits for flushes and compactions to settle.
Status LoadPhase(const WorkloadSpec& spec, lsm::LsmStore& store);

Status RunExperiment(const WorkloadSpec& spec, lsm::LsmStore& store, TierFs& fs,
                     const RunOptions& options, RunReport* report);

Status WriteCsv(const RunReport& report, const std::filesystem::path& file);
Status ReadCsv(const std::filesystem::path& file, RunReport* report);
// Static line charts of throughput, per-tier reads and the tier-0 hit ratio.
Status WriteSvg(const RunReport& report, const std::filesystem::path& file);
std::string FormatSummary(const RunReport& report);

// Runs a write-heavy workload against the store while sampling writer
// demand. `no_compactions` is set when none ran.
Status ProfileLsm(const WorkloadSpec& spec, lsm::LsmStore& store, TierFs& fs,
                  std::chrono::milliseconds sample_period, ConcurrencyDemand* out);

struct RecoverCheckReport {
  RecoveryReport recovery;
  // Namespace right after the facade rebuilt it, before the store opened.
  std::vector<std::string> rebuilt;
  size_t cache_files_left = 0;
  uint64_t keys_scanned = 0;
  uint64_t records_checked = 0;
  std::vector<std::string> problems;

  bool ok() const { return problems.empty(); }
};

// Reopens the data directory with background work off and checks that the
// namespace holds only durable files, no cache copies survived, the store's
// tables match the namespace, and every key reads back a well-formed value.
// `expected` (optional) is the durable file set the rebuilt namespace must
// equal. Records [0, expect_records) must all be readable.
Status RecoverCheck(const BenchConfig& config, const PlacementScheme& scheme,
                    const std::vector<std::string>* expected, uint64_t expect_records,
                    RecoverCheckReport* out);
std::string FormatRecoverCheck(const RecoverCheckReport& report);

}  // namespace tierkv
