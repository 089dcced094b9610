#include "tierkv/profiler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "tierkv/kv_text.hpp"

namespace tierkv {

namespace {

using Clock = std::chrono::steady_clock;

// Wall-clock operations per second one core sustains comfortably while
// pacing; the dilation keeps the modelled peak under this.
constexpr double kWallOpsBudget = 6000;

double PickTimeScale(const ThroughputCurve& curve) {
  double peak = 0;
  for (const auto& p : curve.points()) peak = std::max(peak, p.ops_per_sec);
  return std::max(1.0, std::ceil(peak / kWallOpsBudget));
}

std::string LocatorFor(int worker) { return "data/.profile-" + std::to_string(worker); }

Status MeasurePoint(TierDevice& dev, int n, const DeviceProfileOptions& opt,
                    MeasuredPoint* point) {
  std::vector<std::shared_ptr<DeviceFile>> files(n);
  std::string block(kBlockSize, 'p');
  // Regions are prepared outside the device so setup is neither paced nor
  // charged to the measurement.
  std::string region(opt.mode == ProfileMode::kRead ? opt.region_blocks * kBlockSize : 0, 'p');
  for (int i = 0; i < n; ++i) {
    TIERKV_RETURN_IF_ERROR(WriteWholeFile(dev.PathOf(LocatorFor(i)), region));
  }
  for (int i = 0; i < n; ++i) TIERKV_RETURN_IF_ERROR(dev.OpenFile(LocatorFor(i), &files[i]));

  std::atomic<bool> go{false};
  std::atomic<uint64_t> ops{0};
  std::atomic<bool> failed{false};
  Clock::time_point deadline;
  std::vector<std::thread> workers;
  workers.reserve(n);
  for (int i = 0; i < n; ++i) {
    workers.emplace_back([&, i] {
      while (!go.load(std::memory_order_acquire)) std::this_thread::yield();
      uint64_t local = 0;
      std::string buf;
      while (Clock::now() < deadline) {
        uint64_t off = (local % opt.region_blocks) * kBlockSize;
        Status s = opt.mode == ProfileMode::kWrite ? dev.Write(*files[i], off, block)
                                                   : dev.Read(*files[i], off, kBlockSize, &buf);
        if (!s.ok()) {
          failed.store(true);
          break;
        }
        ++local;
      }
      ops.fetch_add(local);
    });
  }
  Clock::time_point start = Clock::now();
  deadline = start + opt.duration;
  go.store(true, std::memory_order_release);
  for (auto& t : workers) t.join();
  double secs = std::chrono::duration<double>(Clock::now() - start).count();
  files.clear();
  std::error_code ec;
  for (int i = 0; i < n; ++i) std::filesystem::remove(dev.PathOf(LocatorFor(i)), ec);
  if (failed.load()) return Status::IOError("profiling I/O failed on tier " +
                                            std::to_string(dev.tier_id()));

  point->concurrency = n;
  point->ops = ops.load();
  point->ops_per_sec = point->ops / secs * dev.delay_options().time_scale;
  point->low_confidence = point->ops < opt.min_ops;
  return Status::OK();
}

}  // namespace

ThroughputCurve DeviceMeasurement::Curve() const {
  std::vector<CurvePoint> pts;
  for (const auto& p : points) pts.push_back({p.concurrency, p.ops_per_sec});
  ThroughputCurve c;
  ThroughputCurve::Make(std::move(pts), &c);
  return c;
}

Status ProfileDevice(const DeviceProfile& tier, const DeviceProfileOptions& options,
                     DeviceMeasurement* out) {
  if (options.thread_counts.empty()) return Status::InvalidArgument("no thread counts given");
  for (size_t i = 0; i < options.thread_counts.size(); ++i) {
    if (options.thread_counts[i] < 1 ||
        (i > 0 && options.thread_counts[i] <= options.thread_counts[i - 1])) {
      return Status::InvalidArgument("thread counts must be positive and increasing");
    }
  }
  if (options.region_blocks == 0) return Status::InvalidArgument("region_blocks must be > 0");
  *out = DeviceMeasurement{};
  const ThroughputCurve& curve =
      options.mode == ProfileMode::kWrite ? tier.write_curve : tier.read_curve;

  if (curve.Unlimited()) {
    for (int n : options.thread_counts) {
      out->points.push_back({n, std::numeric_limits<double>::infinity(), 0, false});
    }
    out->knee = options.thread_counts.back();
    return Status::OK();
  }

  DelayModelOptions delay;
  delay.interpolation = options.interpolation;
  delay.time_scale = options.time_scale > 0 ? options.time_scale : PickTimeScale(curve);
  out->time_scale = delay.time_scale;
  TierDevice dev(tier, delay);
  TIERKV_RETURN_IF_ERROR(dev.Open());

  double best = 0;
  int below = 0;
  for (int n : options.thread_counts) {
    MeasuredPoint p;
    TIERKV_RETURN_IF_ERROR(MeasurePoint(dev, n, options, &p));
    out->points.push_back(p);
    out->low_confidence |= p.low_confidence;
    if (p.ops_per_sec > best) {
      best = p.ops_per_sec;
      below = 0;
    } else if (p.ops_per_sec < best * (1 - options.tolerance)) {
      if (++below >= options.stop_after) {
        out->stopped_early = n != options.thread_counts.back();
        break;
      }
    } else {
      below = 0;
    }
  }
  const MeasuredPoint* knee = &out->points.front();
  for (const auto& p : out->points) {
    if (p.ops_per_sec > knee->ops_per_sec) knee = &p;
  }
  out->knee = knee->concurrency;
  return Status::OK();
}

Status ProfileDeviceBoth(const DeviceProfile& tier, DeviceProfileOptions options,
                         DeviceProfile* out) {
  DeviceMeasurement w, r;
  options.mode = ProfileMode::kWrite;
  TIERKV_RETURN_IF_ERROR(ProfileDevice(tier, options, &w));
  options.mode = ProfileMode::kRead;
  TIERKV_RETURN_IF_ERROR(ProfileDevice(tier, options, &r));
  DeviceProfile p;
  p.tier_id = tier.tier_id;
  p.capacity_bytes = tier.capacity_bytes;
  p.backing_path = tier.backing_path;
  p.write_curve = w.Curve();
  p.read_curve = r.Curve();
  p.DeriveParallelism();
  *out = std::move(p);
  return Status::OK();
}

double ConcurrencyDemand::Level(int level) const {
  auto it = per_level.find(level);
  return it == per_level.end() ? 0 : it->second;
}

uint64_t ConcurrencyDemand::Size(int level) const {
  auto it = level_size.find(level);
  return it == level_size.end() ? 0 : it->second;
}

int ConcurrencyDemand::max_level() const {
  int m = -1;
  if (!per_level.empty()) m = std::max(m, per_level.rbegin()->first);
  if (!level_size.empty()) m = std::max(m, level_size.rbegin()->first);
  return m;
}

std::string ConcurrencyDemand::Serialize() const {
  std::ostringstream os;
  os.precision(17);
  os << "wal=" << wal << '\n' << "flush=" << flush << '\n';
  for (const auto& [l, d] : per_level) os << 'L' << l << '=' << d << '\n';
  for (const auto& [l, s] : level_size) os << "size.L" << l << '=' << s << '\n';
  os << "wal_bytes=" << wal_bytes << '\n'
     << "no_compactions=" << (no_compactions ? 1 : 0) << '\n'
     << "samples=" << samples << '\n';
  return os.str();
}

Status ConcurrencyDemand::Parse(std::string_view text, ConcurrencyDemand* out) {
  KvText kv;
  TIERKV_RETURN_IF_ERROR(KvText::Parse(text, &kv));
  ConcurrencyDemand d;
  TIERKV_RETURN_IF_ERROR(kv.MaybeDouble("wal", &d.wal));
  TIERKV_RETURN_IF_ERROR(kv.MaybeDouble("flush", &d.flush));
  TIERKV_RETURN_IF_ERROR(kv.MaybeUint("wal_bytes", &d.wal_bytes));
  TIERKV_RETURN_IF_ERROR(kv.MaybeBool("no_compactions", &d.no_compactions));
  TIERKV_RETURN_IF_ERROR(kv.MaybeUint("samples", &d.samples));
  auto level_of = [](std::string_view s, int* level) {
    if (s.empty()) return false;
    int v = 0;
    for (char c : s) {
      if (c < '0' || c > '9') return false;
      v = v * 10 + (c - '0');
      if (v >= TierFs::kMaxLevels) return false;
    }
    *level = v;
    return true;
  };
  for (const auto& [key, value] : kv.values()) {
    int level = 0;
    if (key.size() > 1 && key[0] == 'L' && level_of(std::string_view(key).substr(1), &level)) {
      TIERKV_RETURN_IF_ERROR(kv.GetDouble(key, &d.per_level[level]));
      if (d.per_level[level] < 0) return Status::InvalidArgument(key + " must be >= 0");
    } else if (key.rfind("size.L", 0) == 0 &&
               level_of(std::string_view(key).substr(6), &level)) {
      TIERKV_RETURN_IF_ERROR(kv.GetUint(key, &d.level_size[level]));
    } else if (key != "wal" && key != "flush" && key != "wal_bytes" &&
               key != "no_compactions" && key != "samples") {
      return Status::InvalidArgument("unknown demand key '" + key + "'");
    }
  }
  if (d.wal < 0 || d.flush < 0) return Status::InvalidArgument("demands must be >= 0");
  *out = std::move(d);
  return Status::OK();
}

Status ConcurrencyDemand::Load(const std::filesystem::path& file, ConcurrencyDemand* out) {
  std::string text;
  TIERKV_RETURN_IF_ERROR(ReadWholeFile(file, &text));
  return Parse(text, out);
}

Status ConcurrencyDemand::Save(const std::filesystem::path& file) const {
  return WriteWholeFile(file, Serialize());
}

DemandSampler::DemandSampler(TierFs* fs, std::chrono::milliseconds period, int levels,
                             SizeProbe sizes)
    : fs_(fs),
      period_(period),
      levels_(std::clamp(levels, 1, TierFs::kMaxLevels)),
      sizes_(std::move(sizes)),
      level_sum_(levels_, 0) {}

DemandSampler::~DemandSampler() {
  stop_.store(true);
  if (thread_.joinable()) thread_.join();
}

void DemandSampler::Start() {
  stop_.store(false);
  thread_ = std::thread([this] { Loop(); });
}

void DemandSampler::Loop() {
  auto next = Clock::now();
  while (!stop_.load(std::memory_order_acquire)) {
    SampleNow();
    next += period_;
    while (!stop_.load(std::memory_order_acquire) && Clock::now() < next) {
      std::this_thread::sleep_for(std::min<Clock::duration>(next - Clock::now(),
                                                            std::chrono::milliseconds(5)));
    }
  }
}

void DemandSampler::SampleNow() {
  using K = IoContext::Kind;
  std::map<int, uint64_t> sizes;
  if (sizes_) sizes = sizes_();
  std::lock_guard lock(mu_);
  ++samples_;
  wal_sum_ += fs_->ActiveWriters(K::kWalWrite, 0);
  flush_sum_ += fs_->ActiveWriters(K::kFlush, 0);
  for (int l = 0; l < levels_; ++l) {
    int w = fs_->ActiveWriters(K::kCompaction, l);
    level_sum_[l] += w;
    compaction_seen_ += w;
  }
  if (sizes_) {
    ++size_samples_;
    for (const auto& [l, s] : sizes) size_sum_[l] += double(s);
  }
}

ConcurrencyDemand DemandSampler::Stop() {
  stop_.store(true);
  if (thread_.joinable()) thread_.join();
  std::lock_guard lock(mu_);
  ConcurrencyDemand d;
  d.samples = samples_;
  if (samples_ == 0) {
    d.no_compactions = true;
    return d;
  }
  double n = double(samples_);
  d.wal = wal_sum_ / n;
  d.flush = flush_sum_ / n;
  for (int l = 0; l < levels_; ++l) d.per_level[l] = level_sum_[l] / n;
  for (const auto& [l, s] : size_sum_) {
    d.level_size[l] = static_cast<uint64_t>(s / double(size_samples_));
  }
  d.no_compactions = compaction_seen_ == 0;
  return d;
}

ConcurrencyDemand DemandFromEvents(const std::vector<WriterEvent>& events,
                                   Clock::time_point begin, Clock::time_point end) {
  using K = IoContext::Kind;
  ConcurrencyDemand d;
  double span = std::chrono::duration<double>(end - begin).count();
  if (span <= 0) {
    d.no_compactions = true;
    return d;
  }
  std::vector<WriterEvent> sorted(events);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const WriterEvent& a, const WriterEvent& b) { return a.at < b.at; });
  // Integrate each counter over time: sum of count * dt.
  std::map<std::pair<int, int>, int> count;
  std::map<std::pair<int, int>, double> area;
  Clock::time_point prev = begin;
  auto advance = [&](Clock::time_point t) {
    t = std::clamp(t, begin, end);
    double dt = std::chrono::duration<double>(t - prev).count();
    if (dt > 0) {
      for (const auto& [key, c] : count) area[key] += c * dt;
      prev = t;
    }
  };
  for (const auto& e : sorted) {
    advance(e.at);
    int level = e.context.kind == K::kCompaction ? e.context.to_level.value_or(0) : 0;
    count[{static_cast<int>(e.context.kind), level}] += e.delta;
  }
  advance(end);
  bool compacted = false;
  for (const auto& [key, a] : area) {
    double mean = a / span;
    auto kind = static_cast<K>(key.first);
    if (kind == K::kWalWrite) d.wal += mean;
    if (kind == K::kFlush) d.flush += mean;
    if (kind == K::kCompaction) {
      d.per_level[key.second] += mean;
      compacted |= a > 0;
    }
  }
  d.no_compactions = !compacted;
  return d;
}

Status GenerateScheme(const ConcurrencyDemand& demand, const std::vector<DeviceProfile>& tiers,
                      const SchemeOptions& options, PlacementScheme* out) {
  if (tiers.empty()) return Status::InvalidArgument("no tiers");
  if (options.levels < 2) return Status::InvalidArgument("need at least two levels");
  if (options.reserve_fraction < 0 || options.reserve_fraction >= 1) {
    return Status::InvalidArgument("reserve_fraction must be in [0, 1)");
  }
  const int last = static_cast<int>(tiers.size()) - 1;
  const DeviceProfile& fast = tiers.front();

  PlacementScheme s;
  s.wal_tier = 0;
  s.level_tier.assign(options.levels, last);
  std::vector<uint64_t> assigned(tiers.size(), 0);

  uint64_t base = demand.wal_bytes + demand.Size(0) + demand.Size(1);
  if (base > fast.capacity_bytes) {
    return Status::Configuration(
        "tier 0 (" + std::to_string(fast.capacity_bytes) +
        " bytes) cannot hold the WAL, L0 and L1 (" + std::to_string(base) + " bytes)");
  }
  s.level_tier[0] = s.level_tier[1] = 0;
  assigned[0] = base;

  const double parallelism = fast.max_write_parallelism;
  double cumulative = demand.wal + demand.flush + demand.Level(0) + demand.Level(1);
  if (cumulative > parallelism) {
    s.provenance["warning.demand"] =
        "WAL+L0+L1 demand exceeds tier 0 write parallelism";
  }
  if (demand.no_compactions) s.provenance["warning.profile"] = "no compactions observed";

  // Tier 0: greedy prefix bounded by parallelism and reserved capacity.
  int level = 2;
  if (last > 0) {
    const double room0 = double(fast.capacity_bytes) * (1 - options.reserve_fraction);
    uint64_t size_sum = base;
    for (; level < options.levels; ++level) {
      double d = cumulative + demand.Level(level);
      uint64_t sz = size_sum + demand.Size(level);
      if (d > parallelism || double(sz) > room0) break;
      cumulative = d;
      size_sum = sz;
      s.level_tier[level] = 0;
      assigned[0] += demand.Size(level);
    }
  } else {
    for (; level < options.levels; ++level) s.level_tier[level] = 0;
  }

  // Middle tiers: by capacity only.
  for (int t = 1; t < last && level < options.levels; ++t) {
    const double room = double(tiers[t].capacity_bytes) * (1 - options.reserve_fraction);
    while (level < options.levels && double(assigned[t] + demand.Size(level)) <= room) {
      s.level_tier[level] = t;
      assigned[t] += demand.Size(level);
      ++level;
    }
  }
  for (; level < options.levels; ++level) s.level_tier[level] = last;

  for (int t = 0; t < last; ++t) {
    uint64_t cap = tiers[t].capacity_bytes;
    s.cache_budget[t] = cap > assigned[t] ? cap - assigned[t] : 0;
  }

  for (size_t t = 0; t < tiers.size(); ++t) {
    std::string p = "tier" + std::to_string(t) + ".";
    s.provenance[p + "write_curve"] = tiers[t].write_curve.Format();
    s.provenance[p + "max_write_parallelism"] = std::to_string(tiers[t].max_write_parallelism);
    s.provenance[p + "capacity_bytes"] = std::to_string(tiers[t].capacity_bytes);
  }
  std::ostringstream dem;
  dem << "wal:" << demand.wal << " flush:" << demand.flush;
  for (const auto& [l, d] : demand.per_level) dem << " L" << l << ':' << d;
  s.provenance["demand"] = dem.str();
  s.provenance["reserve_fraction"] = std::to_string(options.reserve_fraction);
  s.provenance["kind"] = "profiled";

  TIERKV_RETURN_IF_ERROR(s.Validate(static_cast<int>(tiers.size())));
  *out = std::move(s);
  return Status::OK();
}

}  // namespace tierkv
