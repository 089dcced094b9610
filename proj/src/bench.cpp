#include "tierkv/bench.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>
#include <sstream>

namespace tierkv {

using Clock = std::chrono::steady_clock;

// Config.

Status BenchConfig::Apply(const KvText& kv) {
  if (auto d = kv.Get("dir")) dir = *d;
  if (auto t = kv.Get("tiers")) {
    presets.clear();
    std::string_view rest = *t;
    while (!rest.empty()) {
      size_t comma = rest.find(',');
      std::string_view name = rest.substr(0, comma);
      DevicePreset p;
      TIERKV_RETURN_IF_ERROR(ParsePreset(name, &p));
      presets.push_back(p);
      rest = comma == std::string_view::npos ? std::string_view() : rest.substr(comma + 1);
    }
  }
  const uint64_t default_caps[] = {1ull << 30, 16ull << 30, 256ull << 30};
  while (capacities.size() < presets.size()) {
    capacities.push_back(default_caps[std::min<size_t>(capacities.size(), 2)]);
  }
  capacities.resize(presets.size());
  profile_files.resize(presets.size());
  for (size_t i = 0; i < presets.size(); ++i) {
    std::string prefix = "tier" + std::to_string(i);
    if (auto c = kv.Get(prefix + ".capacity")) {
      TIERKV_RETURN_IF_ERROR(ParseByteSize(*c, &capacities[i]).WithContext(prefix + ".capacity"));
    }
    if (auto p = kv.Get(prefix + ".profile")) profile_files[i] = *p;
  }

  TIERKV_RETURN_IF_ERROR(kv.MaybeDouble("time_scale", &delay.time_scale));
  TIERKV_RETURN_IF_ERROR(kv.MaybeBool("delay.enabled", &delay.enabled));
  if (auto m = kv.Get("delay.interpolation")) {
    if (*m == "linear") {
      delay.interpolation = Interpolation::kLinear;
    } else if (*m == "step") {
      delay.interpolation = Interpolation::kStep;
    } else {
      return Status::InvalidArgument("delay.interpolation must be linear or step");
    }
  }

  TIERKV_RETURN_IF_ERROR(kv.MaybeBool("cache.enabled", &cache.cache_enabled));
  TIERKV_RETURN_IF_ERROR(kv.MaybeDouble("cache.threshold", &cache.hit_threshold));
  uint64_t window = cache.window;
  TIERKV_RETURN_IF_ERROR(kv.MaybeUint("cache.window", &window));
  cache.window = static_cast<uint32_t>(window);
  int64_t monitor_ms = cache.monitor_period.count(), per_tick = cache.copies_per_tick;
  TIERKV_RETURN_IF_ERROR(kv.MaybeInt("cache.monitor_ms", &monitor_ms));
  TIERKV_RETURN_IF_ERROR(kv.MaybeInt("cache.copies_per_tick", &per_tick));
  cache.monitor_period = std::chrono::milliseconds(monitor_ms);
  cache.copies_per_tick = static_cast<int>(per_tick);
  TIERKV_RETURN_IF_ERROR(kv.MaybeBool("migrate.enabled", &cache.migration_enabled));
  TIERKV_RETURN_IF_ERROR(kv.MaybeDouble("migrate.upper_pct", &cache.upper_pct));
  TIERKV_RETURN_IF_ERROR(kv.MaybeDouble("migrate.lower_pct", &cache.lower_pct));
  int64_t pc = cache.cache_pool, pm = cache.migrate_pool;
  TIERKV_RETURN_IF_ERROR(kv.MaybeInt("pool.cache", &pc));
  TIERKV_RETURN_IF_ERROR(kv.MaybeInt("pool.migrate", &pm));
  cache.cache_pool = static_cast<int>(pc);
  cache.migrate_pool = static_cast<int>(pm);

  TIERKV_RETURN_IF_ERROR(lsm.Apply(kv));
  TIERKV_RETURN_IF_ERROR(workload.Apply(kv));
  lsm.value_bytes = workload.value_bytes;
  TIERKV_RETURN_IF_ERROR(kv.MaybeDouble("run.duration_s", &duration_s));
  TIERKV_RETURN_IF_ERROR(kv.MaybeDouble("run.sample_s", &sample_s));
  return Validate();
}

Status BenchConfig::Validate() const {
  if (presets.empty()) return Status::InvalidArgument("at least one tier is required");
  if (capacities.size() != presets.size()) {
    return Status::InvalidArgument("one capacity per tier is required");
  }
  if (!(delay.time_scale > 0)) return Status::InvalidArgument("time_scale must be > 0");
  if (!(sample_s > 0)) return Status::InvalidArgument("run.sample_s must be > 0");
  if (duration_s < 0) return Status::InvalidArgument("run.duration_s must be >= 0");
  if (!(cache.lower_pct >= 0 && cache.lower_pct <= cache.upper_pct && cache.upper_pct < 100)) {
    return Status::InvalidArgument("need 0 <= migrate.lower_pct <= migrate.upper_pct < 100");
  }
  if (!(cache.hit_threshold >= 0 && cache.hit_threshold <= 1)) {
    return Status::InvalidArgument("cache.threshold must be in [0, 1]");
  }
  if (cache.window == 0) return Status::InvalidArgument("cache.window must be > 0");
  if (cache.cache_pool < 1 || cache.migrate_pool < 1) {
    return Status::InvalidArgument("pool sizes must be >= 1");
  }
  TIERKV_RETURN_IF_ERROR(lsm.Validate());
  return workload.Validate();
}

Status BenchConfig::Profiles(std::vector<DeviceProfile>* out) const {
  out->clear();
  for (size_t i = 0; i < presets.size(); ++i) {
    auto path = dir / ("tier" + std::to_string(i));
    DeviceProfile p = MakePresetProfile(presets[i], static_cast<int>(i), capacities[i], path);
    if (i < profile_files.size() && !profile_files[i].empty()) {
      TIERKV_RETURN_IF_ERROR(DeviceProfile::Load(profile_files[i], &p));
      p.tier_id = static_cast<int>(i);
      p.capacity_bytes = capacities[i];
      p.backing_path = path;
      p.DeriveParallelism();
    }
    out->push_back(std::move(p));
  }
  return Status::OK();
}

// Environment.

Status BenchEnv::Open(const BenchConfig& config, const PlacementScheme& scheme,
                      std::unique_ptr<BenchEnv>* out, std::shared_ptr<FaultInjector> faults,
                      RecoveryReport* recovery) {
  TIERKV_RETURN_IF_ERROR(config.Validate());
  TIERKV_RETURN_IF_ERROR(scheme.ValidateStructure(config.tier_count()));
  std::unique_ptr<BenchEnv> env(new BenchEnv());
  env->config_ = config;
  TierFsOptions o;
  TIERKV_RETURN_IF_ERROR(config.Profiles(&o.tiers));
  o.delay = config.delay;
  o.scheme = scheme;
  o.cache = config.cache;
  o.faults = std::move(faults);
  TIERKV_RETURN_IF_ERROR(TierFs::Open(std::move(o), &env->fs_, recovery));
  TIERKV_RETURN_IF_ERROR(lsm::LsmStore::Open(env->fs_.get(), config.lsm, &env->store_));
  *out = std::move(env);
  return Status::OK();
}

BenchEnv::~BenchEnv() { Close(); }

Status BenchEnv::Close() {
  Status s;
  if (store_) s = store_->Close();
  store_.reset();
  if (fs_) fs_->Shutdown();
  fs_.reset();
  return s;
}

// Writer cap.

WriterCapMonitor::WriterCapMonitor(TierFs* fs, std::chrono::milliseconds period)
    : fs_(fs), period_(period) {}

WriterCapMonitor::~WriterCapMonitor() { Stop(); }

void WriterCapMonitor::Start() {
  stop_ = false;
  thread_ = std::thread([this] {
    auto next = Clock::now();
    while (!stop_.load()) {
      SampleNow();
      next += period_;
      std::this_thread::sleep_until(next);
    }
  });
}

void WriterCapMonitor::Stop() {
  stop_ = true;
  if (thread_.joinable()) thread_.join();
}

void WriterCapMonitor::SampleNow() {
  WriterRegistry& reg = fs_->registry();
  for (int t = 0; t < reg.tier_count(); ++t) {
    WriterRegistry::Sample s = reg.SampleTier(t);
    samples_.fetch_add(1);
    if (s.forced > 0) {
      forced_.fetch_add(1);
    } else if (s.Violates()) {
      violations_.fetch_add(1);
    }
  }
}

// Reports.

double RunReport::SeriesThroughputKops() const {
  if (series.empty() || series.back().ts_s <= 0) return 0;
  uint64_t ops = 0;
  for (const auto& r : series) ops += r.ops;
  return double(ops) / series.back().ts_s / 1000.0;
}

double RunReport::MeanHitRatio(double from_s) const {
  double sum = 0;
  int n = 0;
  for (const auto& r : series) {
    if (r.ts_s >= from_s) {
      sum += r.hit_ratio_t0;
      ++n;
    }
  }
  return n ? sum / n : 0;
}

namespace {

// Log-linear latency histogram: 8 buckets per power of two of nanoseconds.
class LatencyHistogram {
 public:
  static constexpr int kBuckets = 8 * 48;

  void Add(double ns) {
    int b = ns < 1 ? 0 : std::min(kBuckets - 1, static_cast<int>(std::log2(ns) * 8) + 1);
    ++counts_[b];
    ++total_;
  }
  void Merge(const LatencyHistogram& o) {
    for (int i = 0; i < kBuckets; ++i) counts_[i] += o.counts_[i];
    total_ += o.total_;
  }
  // Geometric middle of the bucket holding quantile q, in nanoseconds.
  double Quantile(double q) const {
    if (total_ == 0) return 0;
    uint64_t rank = static_cast<uint64_t>(std::ceil(q * double(total_)));
    uint64_t seen = 0;
    for (int i = 0; i < kBuckets; ++i) {
      seen += counts_[i];
      if (seen >= std::max<uint64_t>(rank, 1)) {
        if (i == 0) return 0.5;
        return std::exp2((double(i) - 0.5) / 8);
      }
    }
    return std::exp2(double(kBuckets) / 8);
  }

 private:
  std::array<uint64_t, kBuckets> counts_{};
  uint64_t total_ = 0;
};

struct Baseline {
  std::vector<uint64_t> reads, writes;
  uint64_t stall_us = 0;
  uint64_t cache_tasks = 0, migr_tasks = 0;

  static Baseline Take(TierFs& fs, lsm::LsmStore& store) {
    Baseline b;
    for (int t = 0; t < fs.tier_count(); ++t) {
      b.reads.push_back(fs.reads(t));
      b.writes.push_back(fs.writes(t));
    }
    b.stall_us = store.stall_micros();
    b.cache_tasks = fs.cache().cache_tasks_done();
    b.migr_tasks = fs.cache().migration_tasks_done();
    return b;
  }
};

Status ExecuteOp(const Operation& op, const WorkloadSpec& spec, lsm::LsmStore& store,
                 KeySpace& keys, uint64_t version,
                 std::vector<std::pair<std::string, std::string>>* scratch) {
  std::string key = RecordKey(op.key);
  std::string value;
  Status s;
  switch (op.type) {
    case OpType::kRead:
      s = store.Get(key, &value);
      if (s.IsNotFound()) s = Status::OK();
      break;
    case OpType::kUpdate:
      s = store.Put(key, RecordValue(op.key, version, spec.value_bytes));
      break;
    case OpType::kInsert:
      s = store.Put(key, RecordValue(op.key, 0, spec.value_bytes));
      if (s.ok()) keys.AckInsert(op.key);
      break;
    case OpType::kScan:
      s = store.Scan(key, static_cast<size_t>(op.scan_length), scratch);
      break;
    case OpType::kReadModifyWrite:
      s = store.Get(key, &value);
      if (s.ok() || s.IsNotFound()) {
        s = store.Put(key, RecordValue(op.key, version, spec.value_bytes));
      }
      break;
  }
  return s;
}

}  // namespace

Status LoadPhase(const WorkloadSpec& spec, lsm::LsmStore& store) {
  for (uint64_t i = 0; i < spec.record_count; ++i) {
    TIERKV_RETURN_IF_ERROR(store.Put(RecordKey(i), RecordValue(i, 0, spec.value_bytes)));
  }
  return store.WaitForIdle();
}

Status RunExperiment(const WorkloadSpec& spec, lsm::LsmStore& store, TierFs& fs,
                     const RunOptions& options, RunReport* report) {
  TIERKV_RETURN_IF_ERROR(spec.Validate());
  if (!(options.time_scale > 0) || !(options.sample_s > 0)) {
    return Status::InvalidArgument("time_scale and sample_s must be > 0");
  }
  *report = RunReport{};
  report->workload = spec.name;
  report->tier_reads.assign(fs.tier_count(), 0);
  if (spec.operation_count == 0 && options.duration_s <= 0) return Status::OK();

  KeySpace keys(spec.record_count);
  const int threads = spec.client_threads;
  const bool budgeted = options.duration_s <= 0;
  std::atomic<uint64_t> ops{0};
  std::atomic<bool> stop{false};
  std::atomic<int> running{threads};
  std::mutex mu;
  std::condition_variable cv;
  Status first_error;
  std::vector<LatencyHistogram> hist(threads);

  const Baseline base = Baseline::Take(fs, store);
  const auto start = Clock::now();
  std::vector<std::thread> clients;
  for (int t = 0; t < threads; ++t) {
    clients.emplace_back([&, t] {
      OpGenerator gen(spec, &keys, static_cast<uint64_t>(t));
      uint64_t budget = spec.operation_count / threads +
                        (static_cast<uint64_t>(t) < spec.operation_count % threads ? 1 : 0);
      std::vector<std::pair<std::string, std::string>> scratch;
      for (uint64_t i = 0; !stop.load(std::memory_order_relaxed); ++i) {
        if (budgeted && i >= budget) break;
        Operation op = gen.Next();
        auto t0 = Clock::now();
        uint64_t version = (i + 1) * static_cast<uint64_t>(threads) + static_cast<uint64_t>(t);
        Status s = ExecuteOp(op, spec, store, keys, version, &scratch);
        double wall_ns = std::chrono::duration<double, std::nano>(Clock::now() - t0).count();
        if (!s.ok()) {
          std::lock_guard lock(mu);
          if (first_error.ok()) first_error = s;
          stop = true;
          break;
        }
        hist[t].Add(wall_ns / options.time_scale);
        ops.fetch_add(1, std::memory_order_relaxed);
      }
      if (running.fetch_sub(1) == 1) {
        std::lock_guard lock(mu);
        cv.notify_all();
      }
    });
  }

  // Reporter: one row per sample period until the clients finish.
  const double scale = options.time_scale;
  auto model_now = [&] {
    return std::chrono::duration<double>(Clock::now() - start).count() / scale;
  };
  uint64_t prev_ops = 0, prev_stall = base.stall_us;
  uint64_t prev_cache = base.cache_tasks, prev_migr = base.migr_tasks;
  std::vector<uint64_t> prev_reads = base.reads, prev_writes = base.writes;
  auto take_row = [&](double ts) {
    SeriesRow r;
    r.ts_s = ts;
    uint64_t o = ops.load(std::memory_order_relaxed);
    r.ops = o - prev_ops;
    prev_ops = o;
    for (int t = 0; t < fs.tier_count(); ++t) {
      uint64_t rd = fs.reads(t), wr = fs.writes(t);
      if (t < kCsvTiers) {
        r.reads[t] = rd - prev_reads[t];
        r.writes[t] = wr - prev_writes[t];
      }
      prev_reads[t] = rd;
      prev_writes[t] = wr;
    }
    r.hit_ratio_t0 = fs.cache().window(0).Ratio().value_or(0.0);
    uint64_t stall = store.stall_micros();
    r.stall_ms = double(stall - prev_stall) / 1000.0 / scale;
    prev_stall = stall;
    r.writers_t0 = fs.registry().Total(0);
    uint64_t c = fs.cache().cache_tasks_done(), m = fs.cache().migration_tasks_done();
    r.cache_tasks = c - prev_cache;
    r.migr_tasks = m - prev_migr;
    prev_cache = c;
    prev_migr = m;
    report->series.push_back(r);
  };

  {
    std::unique_lock lock(mu);
    for (int k = 1;; ++k) {
      double due = k * options.sample_s;
      if (!budgeted) due = std::min(due, options.duration_s);
      auto wake = start + std::chrono::duration_cast<Clock::duration>(
                              std::chrono::duration<double>(due * scale));
      bool finished = cv.wait_until(lock, wake, [&] { return running.load() == 0; });
      if (finished) break;
      lock.unlock();
      take_row(due);
      lock.lock();
      if (!budgeted && due >= options.duration_s) {
        stop = true;
        cv.wait(lock, [&] { return running.load() == 0; });
        break;
      }
    }
  }
  for (auto& c : clients) c.join();
  double end = model_now();
  if (report->series.empty() || end > report->series.back().ts_s) {
    take_row(end);
  } else {
    // Stragglers finished after the last row: fold them into it.
    SeriesRow& last = report->series.back();
    uint64_t o = ops.load();
    last.ops += o - prev_ops;
    prev_ops = o;
    for (int t = 0; t < std::min(fs.tier_count(), kCsvTiers); ++t) {
      last.reads[t] += fs.reads(t) - prev_reads[t];
      last.writes[t] += fs.writes(t) - prev_writes[t];
      prev_reads[t] = fs.reads(t);
      prev_writes[t] = fs.writes(t);
    }
  }

  LatencyHistogram all;
  for (const auto& h : hist) all.Merge(h);
  report->total_ops = ops.load();
  report->duration_s = report->series.back().ts_s;
  report->throughput_kops = report->SeriesThroughputKops();
  report->p50_us = all.Quantile(0.50) / 1000.0;
  report->p99_us = all.Quantile(0.99) / 1000.0;
  for (int t = 0; t < fs.tier_count(); ++t) report->tier_reads[t] = prev_reads[t] - base.reads[t];
  if (!first_error.ok()) {
    report->partial = true;
    report->error = first_error.ToString();
  }
  return Status::OK();
}

// CSV.

Status WriteCsv(const RunReport& report, const std::filesystem::path& file) {
  std::ostringstream os;
  os << kCsvHeader << '\n';
  char buf[512];
  for (const auto& r : report.series) {
    std::snprintf(buf, sizeof(buf),
                  "%.6f,%llu,%llu,%llu,%llu,%llu,%llu,%llu,%.4f,%.3f,%d,%llu,%llu\n", r.ts_s,
                  static_cast<unsigned long long>(r.ops),
                  static_cast<unsigned long long>(r.reads[0]),
                  static_cast<unsigned long long>(r.reads[1]),
                  static_cast<unsigned long long>(r.reads[2]),
                  static_cast<unsigned long long>(r.writes[0]),
                  static_cast<unsigned long long>(r.writes[1]),
                  static_cast<unsigned long long>(r.writes[2]), r.hit_ratio_t0, r.stall_ms,
                  r.writers_t0, static_cast<unsigned long long>(r.cache_tasks),
                  static_cast<unsigned long long>(r.migr_tasks));
    os << buf;
  }
  return WriteWholeFile(file, os.str());
}

Status ReadCsv(const std::filesystem::path& file, RunReport* report) {
  std::string text;
  TIERKV_RETURN_IF_ERROR(ReadWholeFile(file, &text));
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) {
    return Status::InvalidArgument(file.string() + ": unexpected CSV header");
  }
  RunReport r;
  r.workload = file.stem().string();
  r.has_latency = false;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    SeriesRow row;
    unsigned long long v[11];
    int n = std::sscanf(line.c_str(), "%lf,%llu,%llu,%llu,%llu,%llu,%llu,%llu,%lf,%lf,%llu,%llu,%llu",
                        &row.ts_s, &v[0], &v[1], &v[2], &v[3], &v[4], &v[5], &v[6],
                        &row.hit_ratio_t0, &row.stall_ms, &v[7], &v[8], &v[9]);
    if (n != 13) {
      return Status::InvalidArgument(file.string() + ": bad row at line " + std::to_string(line_no));
    }
    row.ops = v[0];
    for (int t = 0; t < kCsvTiers; ++t) {
      row.reads[t] = v[1 + t];
      row.writes[t] = v[4 + t];
    }
    row.writers_t0 = static_cast<int>(v[7]);
    row.cache_tasks = v[8];
    row.migr_tasks = v[9];
    if (!r.series.empty() && row.ts_s <= r.series.back().ts_s) {
      return Status::InvalidArgument(file.string() + ": timestamps not increasing at line " +
                                     std::to_string(line_no));
    }
    r.total_ops += row.ops;
    r.series.push_back(row);
  }
  r.duration_s = r.series.empty() ? 0 : r.series.back().ts_s;
  r.throughput_kops = r.SeriesThroughputKops();
  r.tier_reads.assign(kCsvTiers, 0);
  for (const auto& row : r.series) {
    for (int t = 0; t < kCsvTiers; ++t) r.tier_reads[t] += row.reads[t];
  }
  *report = std::move(r);
  return Status::OK();
}

std::string FormatSummary(const RunReport& report) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "workload=%s\nops=%llu\nduration_s=%.4f\nthroughput_kops=%.3f\n",
                report.workload.c_str(), static_cast<unsigned long long>(report.total_ops),
                report.duration_s, report.throughput_kops);
  std::string out = buf;
  if (report.has_latency) {
    std::snprintf(buf, sizeof(buf), "p50_us=%.2f\np99_us=%.2f\n", report.p50_us, report.p99_us);
    out += buf;
  }
  out += report.partial ? "partial=true\n" : "partial=false\n";
  for (size_t t = 0; t < report.tier_reads.size(); ++t) {
    out += "reads_t" + std::to_string(t) + "=" + std::to_string(report.tier_reads[t]) + "\n";
  }
  if (!report.error.empty()) out += "error=" + report.error + "\n";
  return out;
}

// SVG.

namespace {

struct Line {
  std::string label;
  std::string color;
  std::vector<double> y;
};

void Panel(std::ostringstream& os, double top, const std::string& title,
           const std::vector<double>& x, const std::vector<Line>& lines) {
  const double left = 70, width = 700, height = 180;
  double xmax = x.empty() ? 1 : std::max(x.back(), 1e-9);
  double ymax = 0;
  for (const auto& l : lines) {
    for (double v : l.y) ymax = std::max(ymax, v);
  }
  if (ymax <= 0) ymax = 1;
  os << "<text x=\"" << left << "\" y=\"" << top - 8 << "\" font-size=\"14\">" << title
     << "</text>\n";
  os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << width << "\" height=\""
     << height << "\" fill=\"none\" stroke=\"#888\"/>\n";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4g", ymax);
  os << "<text x=\"" << left - 6 << "\" y=\"" << top + 10
     << "\" font-size=\"11\" text-anchor=\"end\">" << buf << "</text>\n";
  os << "<text x=\"" << left - 6 << "\" y=\"" << top + height
     << "\" font-size=\"11\" text-anchor=\"end\">0</text>\n";
  std::snprintf(buf, sizeof(buf), "%.3g s", xmax);
  os << "<text x=\"" << left + width << "\" y=\"" << top + height + 14
     << "\" font-size=\"11\" text-anchor=\"end\">" << buf << "</text>\n";
  double legend_x = left + 10;
  for (const auto& l : lines) {
    os << "<polyline fill=\"none\" stroke=\"" << l.color << "\" stroke-width=\"1.5\" points=\"";
    for (size_t i = 0; i < x.size() && i < l.y.size(); ++i) {
      os << left + width * x[i] / xmax << ',' << top + height - height * l.y[i] / ymax << ' ';
    }
    os << "\"/>\n";
    os << "<text x=\"" << legend_x << "\" y=\"" << top + 14 << "\" font-size=\"11\" fill=\""
       << l.color << "\">" << l.label << "</text>\n";
    legend_x += 90;
  }
}

}  // namespace

Status WriteSvg(const RunReport& report, const std::filesystem::path& file) {
  std::vector<double> x;
  Line tput{"kops/s", "#1f77b4", {}};
  Line reads[kCsvTiers] = {{"reads t0", "#d62728", {}},
                           {"reads t1", "#2ca02c", {}},
                           {"reads t2", "#9467bd", {}}};
  Line hit{"hit ratio t0", "#ff7f0e", {}};
  double prev = 0;
  for (const auto& r : report.series) {
    double dt = std::max(r.ts_s - prev, 1e-9);
    prev = r.ts_s;
    x.push_back(r.ts_s);
    tput.y.push_back(double(r.ops) / dt / 1000.0);
    for (int t = 0; t < kCsvTiers; ++t) reads[t].y.push_back(double(r.reads[t]) / dt);
    hit.y.push_back(r.hit_ratio_t0);
  }
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"760\" "
        "font-family=\"sans-serif\">\n";
  os << "<rect width=\"800\" height=\"760\" fill=\"white\"/>\n";
  Panel(os, 40, "Throughput (" + report.workload + ")", x, {tput});
  Panel(os, 290, "Device reads per second", x, {reads[0], reads[1], reads[2]});
  Panel(os, 540, "Tier-0 hit ratio", x, {hit});
  os << "</svg>\n";
  return WriteWholeFile(file, os.str());
}

// LSM demand profiling.

Status ProfileLsm(const WorkloadSpec& spec, lsm::LsmStore& store, TierFs& fs,
                  std::chrono::milliseconds sample_period, ConcurrencyDemand* out) {
  auto probe = [&store] {
    std::map<int, uint64_t> sizes;
    auto bytes = store.LevelBytes();
    for (size_t l = 0; l < bytes.size(); ++l) sizes[static_cast<int>(l)] = bytes[l];
    return sizes;
  };
  lsm::LsmStats before = store.stats();
  DemandSampler sampler(&fs, sample_period, store.config().levels, probe);
  sampler.Start();
  RunReport report;
  RunOptions options;
  options.sample_s = 1e9;
  Status s = RunExperiment(spec, store, fs, options, &report);
  if (s.ok()) s = store.WaitForIdle();
  ConcurrencyDemand d = sampler.Stop();
  TIERKV_RETURN_IF_ERROR(s);
  if (report.partial) return Status::IOError("profiling run failed: " + report.error);
  lsm::LsmStats after = store.stats();
  if (after.compactions + after.trivial_moves == before.compactions + before.trivial_moves) {
    d.no_compactions = true;
  }
  // Resident sizes at the end of the run, for the capacity bound.
  for (const auto& [level, bytes] : probe()) d.level_size[level] = std::max(d.Size(level), bytes);
  // The live log plus one sealed log awaiting flush.
  if (d.wal_bytes == 0) d.wal_bytes = 2 * static_cast<uint64_t>(store.config().memtable_bytes);
  *out = std::move(d);
  return Status::OK();
}

// Recovery check.

namespace {

// Values are "<index>.<version>:<filler>", so each one can be regenerated.
bool WellFormed(const std::string& key, const std::string& value) {
  unsigned long long index = 0, version = 0;
  if (std::sscanf(value.c_str(), "%llu.%llu:", &index, &version) != 2) return false;
  return key == RecordKey(index) && value == RecordValue(index, version, value.size());
}

bool EndsWith(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

Status RecoverCheck(const BenchConfig& config, const PlacementScheme& scheme,
                    const std::vector<std::string>* expected, uint64_t expect_records,
                    RecoverCheckReport* out) {
  *out = RecoverCheckReport{};
  auto& problems = out->problems;
  TIERKV_RETURN_IF_ERROR(config.Validate());
  TIERKV_RETURN_IF_ERROR(scheme.ValidateStructure(config.tier_count()));
  TierFsOptions o;
  TIERKV_RETURN_IF_ERROR(config.Profiles(&o.tiers));
  o.delay = config.delay;
  o.scheme = scheme;
  o.cache = config.cache;
  o.background = false;
  std::unique_ptr<TierFs> fs;
  TIERKV_RETURN_IF_ERROR(TierFs::Open(std::move(o), &fs, &out->recovery));

  TIERKV_RETURN_IF_ERROR(fs->List(&out->rebuilt));
  std::sort(out->rebuilt.begin(), out->rebuilt.end());
  if (expected) {
    std::vector<std::string> want = *expected;
    std::sort(want.begin(), want.end());
    if (want != out->rebuilt) {
      std::vector<std::string> missing, extra;
      std::set_difference(want.begin(), want.end(), out->rebuilt.begin(), out->rebuilt.end(),
                          std::back_inserter(missing));
      std::set_difference(out->rebuilt.begin(), out->rebuilt.end(), want.begin(), want.end(),
                          std::back_inserter(extra));
      problems.push_back("namespace differs from the durable set: " +
                         std::to_string(missing.size()) + " missing, " +
                         std::to_string(extra.size()) + " unexpected");
    }
  }
  for (int t = 0; t < fs->tier_count(); ++t) {
    std::vector<std::string> left;
    TIERKV_RETURN_IF_ERROR(fs->device(t).List("cache", &left));
    out->cache_files_left += left.size();
  }
  if (out->cache_files_left > 0) {
    problems.push_back(std::to_string(out->cache_files_left) + " cache copies survived recovery");
  }

  std::unique_ptr<lsm::LsmStore> store;
  lsm::LsmConfig lc = config.lsm;
  lc.auto_compaction = false;
  Status s = lsm::LsmStore::Open(fs.get(), lc, &store);
  if (!s.ok()) {
    problems.push_back("store failed to open: " + s.ToString());
    fs->Shutdown();
    return Status::OK();
  }
  if (Status inv = store->CheckInvariants(); !inv.ok()) {
    problems.push_back("store invariants: " + inv.ToString());
  }
  std::vector<std::string> names;
  TIERKV_RETURN_IF_ERROR(fs->List(&names));
  std::set<std::string> tables;
  for (const auto& f : store->LiveFiles()) {
    tables.insert(f.name);
    if (!fs->Exists(f.name)) problems.push_back("live table " + f.name + " is missing");
  }
  for (const auto& n : names) {
    if (EndsWith(n, ".sst") && !tables.count(n)) problems.push_back("orphan table " + n);
    if (EndsWith(n, ".tmp")) problems.push_back("temporary file " + n + " left behind");
  }

  std::vector<std::pair<std::string, std::string>> rows;
  s = store->Scan("", std::numeric_limits<size_t>::max(), &rows);
  if (!s.ok()) problems.push_back("scan failed: " + s.ToString());
  size_t bad = 0;
  for (const auto& [k, v] : rows) {
    if (!WellFormed(k, v)) ++bad;
  }
  out->keys_scanned = rows.size();
  // Point reads agree with the scan.
  const size_t step = std::max<size_t>(1, rows.size() / 20000);
  for (size_t i = 0; i < rows.size(); i += step) {
    std::string v;
    if (!store->Get(rows[i].first, &v).ok() || v != rows[i].second) ++bad;
  }
  if (bad > 0) problems.push_back(std::to_string(bad) + " keys read back wrong values");
  if (expect_records > 0) {
    std::set<std::string> present;
    for (const auto& r : rows) present.insert(r.first);
    uint64_t missing = 0;
    for (uint64_t i = 0; i < expect_records; ++i) missing += !present.count(RecordKey(i));
    out->records_checked = expect_records;
    if (missing > 0) problems.push_back(std::to_string(missing) + " loaded records are missing");
  }
  s = store->Close();
  fs->Shutdown();
  if (!s.ok()) problems.push_back("close failed: " + s.ToString());
  return Status::OK();
}

std::string FormatRecoverCheck(const RecoverCheckReport& r) {
  std::ostringstream os;
  os << "status=" << (r.ok() ? "ok" : "failed") << "\n"
     << "files=" << r.rebuilt.size() << "\n"
     << "registered=" << r.recovery.registered << "\n"
     << "cache_residues_deleted=" << r.recovery.cache_residues_deleted << "\n"
     << "temporaries_deleted=" << r.recovery.temporaries_deleted << "\n"
     << "duplicates_deleted=" << r.recovery.duplicates_deleted << "\n"
     << "cache_files_left=" << r.cache_files_left << "\n"
     << "keys_scanned=" << r.keys_scanned << "\n"
     << "records_checked=" << r.records_checked << "\n";
  for (const auto& p : r.problems) os << "problem=" << p << "\n";
  return os.str();
}

}  // namespace tierkv
