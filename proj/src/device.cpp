#include "tierkv/device.hpp"

#include <fcntl.h>
#include <sys/prctl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>
#include <thread>

#include "tierkv/kv_text.hpp"

namespace tierkv {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

// ---------------------------------------------------------------------------
// ThroughputCurve

Status ThroughputCurve::Make(std::vector<CurvePoint> points, ThroughputCurve* out) {
  if (points.empty()) return Status::InvalidArgument("curve has no points");
  for (size_t i = 0; i < points.size(); ++i) {
    if (points[i].concurrency < 1) {
      return Status::InvalidArgument("curve concurrency levels must be >= 1");
    }
    if (!(points[i].ops_per_sec > 0)) {
      return Status::InvalidArgument("curve values must be strictly positive");
    }
    if (i > 0 && points[i].concurrency <= points[i - 1].concurrency) {
      return Status::InvalidArgument("curve keys must be strictly increasing");
    }
  }
  out->points_ = std::move(points);
  return Status::OK();
}

Status ThroughputCurve::Parse(std::string_view text, ThroughputCurve* out) {
  std::vector<CurvePoint> points;
  while (!text.empty()) {
    size_t comma = text.find(',');
    std::string item(text.substr(0, comma));
    text = comma == std::string_view::npos ? std::string_view() : text.substr(comma + 1);
    size_t colon = item.find(':');
    if (colon == std::string::npos) {
      return Status::InvalidArgument("curve point '" + item + "' is not n:ops");
    }
    CurvePoint p;
    try {
      p.concurrency = std::stoi(item.substr(0, colon));
      std::string v = item.substr(colon + 1);
      p.ops_per_sec = (v == "inf") ? std::numeric_limits<double>::infinity() : std::stod(v);
    } catch (const std::exception&) {
      return Status::InvalidArgument("curve point '" + item + "' is not numeric");
    }
    points.push_back(p);
  }
  return Make(std::move(points), out);
}

std::string ThroughputCurve::Format() const {
  std::ostringstream os;
  for (size_t i = 0; i < points_.size(); ++i) {
    if (i) os << ',';
    os << points_[i].concurrency << ':';
    if (std::isinf(points_[i].ops_per_sec)) {
      os << "inf";
    } else {
      os << static_cast<uint64_t>(std::llround(points_[i].ops_per_sec));
    }
  }
  return os.str();
}

double ThroughputCurve::At(double n, Interpolation mode) const {
  if (points_.empty()) return std::numeric_limits<double>::infinity();
  if (n <= points_.front().concurrency) return points_.front().ops_per_sec;
  if (n >= points_.back().concurrency) return points_.back().ops_per_sec;
  auto hi = std::upper_bound(points_.begin(), points_.end(), n,
                             [](double v, const CurvePoint& p) { return v < p.concurrency; });
  auto lo = hi - 1;
  if (mode == Interpolation::kStep || std::isinf(lo->ops_per_sec) ||
      std::isinf(hi->ops_per_sec)) {
    return lo->ops_per_sec;
  }
  double t = (n - lo->concurrency) / double(hi->concurrency - lo->concurrency);
  return lo->ops_per_sec + t * (hi->ops_per_sec - lo->ops_per_sec);
}

int ThroughputCurve::Knee() const {
  if (points_.empty()) return 1;
  // No contention modelled: every level is as good as the largest.
  if (Unlimited()) return points_.back().concurrency;
  const CurvePoint* best = &points_.front();
  for (const auto& p : points_) {
    if (p.ops_per_sec > best->ops_per_sec) best = &p;
  }
  return best->concurrency;
}

bool ThroughputCurve::Unlimited() const {
  return std::all_of(points_.begin(), points_.end(),
                     [](const CurvePoint& p) { return std::isinf(p.ops_per_sec); });
}

double ServiceSeconds(const ThroughputCurve& curve, int concurrency, uint64_t blocks,
                      Interpolation mode) {
  int n = std::max(concurrency, 1);
  double aggregate = curve.At(n, mode);
  if (std::isinf(aggregate)) return 0.0;
  return double(blocks) * n / aggregate;
}

// ---------------------------------------------------------------------------
// DeviceProfile

void DeviceProfile::DeriveParallelism() {
  max_write_parallelism = write_curve.Knee();
  max_read_parallelism = read_curve.Knee();
}

Status DeviceProfile::Validate() const {
  if (capacity_bytes == 0) return Status::InvalidArgument("capacity_bytes must be > 0");
  if (tier_id < 0) return Status::InvalidArgument("tier_id must be >= 0");
  if (write_curve.empty() || read_curve.empty()) {
    return Status::InvalidArgument("profile needs both read and write curves");
  }
  if (max_write_parallelism != write_curve.Knee()) {
    return Status::InvalidArgument("max_write_parallelism " +
                                   std::to_string(max_write_parallelism) +
                                   " does not match write curve knee " +
                                   std::to_string(write_curve.Knee()));
  }
  if (max_read_parallelism != read_curve.Knee()) {
    return Status::InvalidArgument("max_read_parallelism does not match read curve knee");
  }
  return Status::OK();
}

std::string DeviceProfile::Serialize() const {
  std::ostringstream os;
  os << "tier_id=" << tier_id << '\n'
     << "capacity_bytes=" << capacity_bytes << '\n'
     << "write_curve=" << write_curve.Format() << '\n'
     << "read_curve=" << read_curve.Format() << '\n'
     << "max_write_parallelism=" << max_write_parallelism << '\n'
     << "max_read_parallelism=" << max_read_parallelism << '\n'
     << "backing_path=" << backing_path.string() << '\n';
  return os.str();
}

Status DeviceProfile::Parse(std::string_view text, DeviceProfile* out) {
  KvText doc;
  TIERKV_RETURN_IF_ERROR(KvText::Parse(text, &doc));
  DeviceProfile p;
  int64_t tier = 0;
  TIERKV_RETURN_IF_ERROR(doc.GetInt("tier_id", &tier));
  p.tier_id = static_cast<int>(tier);
  TIERKV_RETURN_IF_ERROR(doc.GetUint("capacity_bytes", &p.capacity_bytes));
  std::string curve;
  TIERKV_RETURN_IF_ERROR(doc.GetString("write_curve", &curve));
  TIERKV_RETURN_IF_ERROR(ThroughputCurve::Parse(curve, &p.write_curve));
  TIERKV_RETURN_IF_ERROR(doc.GetString("read_curve", &curve));
  TIERKV_RETURN_IF_ERROR(ThroughputCurve::Parse(curve, &p.read_curve));
  p.DeriveParallelism();
  int64_t par = 0;
  if (doc.Has("max_write_parallelism")) {
    TIERKV_RETURN_IF_ERROR(doc.GetInt("max_write_parallelism", &par));
    p.max_write_parallelism = static_cast<int>(par);
  }
  if (doc.Has("max_read_parallelism")) {
    TIERKV_RETURN_IF_ERROR(doc.GetInt("max_read_parallelism", &par));
    p.max_read_parallelism = static_cast<int>(par);
  }
  std::string path;
  TIERKV_RETURN_IF_ERROR(doc.MaybeString("backing_path", &path));
  p.backing_path = path;
  TIERKV_RETURN_IF_ERROR(p.Validate());
  *out = std::move(p);
  return Status::OK();
}

Status DeviceProfile::Load(const fs::path& file, DeviceProfile* out) {
  std::string text;
  TIERKV_RETURN_IF_ERROR(ReadWholeFile(file, &text));
  return Parse(text, out).WithContext(file.string());
}

Status DeviceProfile::Save(const fs::path& file) const {
  return WriteWholeFile(file, Serialize());
}

// ---------------------------------------------------------------------------
// Presets. Shapes follow published fio sweeps of Optane DCPMM, datacenter
// NVMe and SATA SSDs (4 KiB, sync engine); absolute values are calibration
// inputs.

Status ParsePreset(std::string_view name, DevicePreset* out) {
  if (name == "nvmm") {
    *out = DevicePreset::kNvmm;
  } else if (name == "nvme") {
    *out = DevicePreset::kNvme;
  } else if (name == "sata") {
    *out = DevicePreset::kSata;
  } else if (name == "zero" || name == "none") {
    *out = DevicePreset::kZeroDelay;
  } else {
    return Status::InvalidArgument("unknown device preset '" + std::string(name) + "'");
  }
  return Status::OK();
}

std::string_view PresetName(DevicePreset preset) {
  switch (preset) {
    case DevicePreset::kNvmm: return "nvmm";
    case DevicePreset::kNvme: return "nvme";
    case DevicePreset::kSata: return "sata";
    case DevicePreset::kZeroDelay: return "zero";
  }
  return "zero";
}

DeviceProfile MakePresetProfile(DevicePreset preset, int tier_id, uint64_t capacity_bytes,
                                fs::path backing_path) {
  std::vector<CurvePoint> write, read;
  switch (preset) {
    case DevicePreset::kNvmm:
      write = {{1, 250e3}, {2, 400e3}, {4, 500e3}, {8, 300e3},
               {16, 226e3}, {32, 194e3}, {64, 188e3}};
      read = {{1, 300e3}, {2, 580e3}, {4, 1100e3}, {8, 2000e3},
              {16, 3200e3}, {32, 4000e3}, {64, 3600e3}};
      break;
    case DevicePreset::kNvme:
      write = {{1, 60e3}, {2, 110e3}, {4, 200e3}, {8, 300e3},
               {16, 384e3}, {32, 383e3}, {64, 360e3}};
      read = {{1, 40e3}, {2, 80e3}, {4, 150e3}, {8, 280e3},
              {16, 480e3}, {32, 700e3}, {64, 800e3}};
      break;
    case DevicePreset::kSata:
      write = {{1, 20e3}, {2, 35e3}, {4, 60e3}, {8, 80e3},
               {16, 95e3}, {32, 105e3}, {64, 110e3}};
      read = {{1, 10e3}, {2, 20e3}, {4, 35e3}, {8, 55e3},
              {16, 70e3}, {32, 80e3}, {64, 85e3}};
      break;
    case DevicePreset::kZeroDelay: {
      const double inf = std::numeric_limits<double>::infinity();
      write = {{1, inf}, {64, inf}};
      read = {{1, inf}, {64, inf}};
      break;
    }
  }
  DeviceProfile p;
  p.tier_id = tier_id;
  p.capacity_bytes = capacity_bytes;
  ThroughputCurve::Make(std::move(write), &p.write_curve);
  ThroughputCurve::Make(std::move(read), &p.read_curve);
  p.DeriveParallelism();
  p.backing_path = std::move(backing_path);
  return p;
}

// ---------------------------------------------------------------------------
// TierDevice

namespace {

// Per-worker virtual clock used for deadline pacing. Sleep overshoot on one
// operation is paid back by the next one, so long-run per-worker throughput
// matches the model even when individual sleeps are imprecise.
thread_local Clock::time_point tls_next_free{};
thread_local bool tls_slack_set = false;

class CountGuard {
 public:
  explicit CountGuard(std::atomic<int>& c) : c_(c) {
    n_ = c_.fetch_add(1, std::memory_order_acq_rel) + 1;
  }
  ~CountGuard() { c_.fetch_sub(1, std::memory_order_acq_rel); }
  int value() const { return n_; }

 private:
  std::atomic<int>& c_;
  int n_;
};

}  // namespace

DeviceFile::~DeviceFile() {
  if (fd_ >= 0) ::close(fd_);
}

TierDevice::TierDevice(DeviceProfile profile, DelayModelOptions options,
                       std::shared_ptr<FaultInjector> faults)
    : profile_(std::move(profile)), options_(options), faults_(std::move(faults)) {}

Status TierDevice::Open() {
  std::error_code ec;
  fs::create_directories(profile_.backing_path / "data", ec);
  if (ec) return Fail("mkdir", "data", ec.value());
  fs::create_directories(profile_.backing_path / "cache", ec);
  if (ec) return Fail("mkdir", "cache", ec.value());
  uint64_t bytes = 0;
  TIERKV_RETURN_IF_ERROR(RescanUsage(&bytes));
  used_.store(bytes, std::memory_order_release);
  return Status::OK();
}

Status TierDevice::Fail(std::string_view what, const std::string& locator, int err) const {
  std::string msg = "tier " + std::to_string(profile_.tier_id) + " " + std::string(what) +
                    " " + locator + ": " + std::strerror(err);
  if (err == ENOENT) return Status::NotFound(msg);
  if (err == EEXIST) return Status::Conflict(msg);
  return Status::IOError(msg);
}

Status TierDevice::CheckAlive(const std::string& what) const {
  if (faults_ && faults_->crashed()) {
    return Status::IOError("tier " + std::to_string(profile_.tier_id) + " " + what +
                           ": simulated crash");
  }
  return Status::OK();
}

Status TierDevice::Reserve(uint64_t bytes) {
  uint64_t cur = used_.load(std::memory_order_acquire);
  do {
    if (cur + bytes > profile_.capacity_bytes) {
      return Status::TierFull("tier " + std::to_string(profile_.tier_id) + " full: used " +
                              std::to_string(cur) + " + " + std::to_string(bytes) + " > " +
                              std::to_string(profile_.capacity_bytes));
    }
  } while (!used_.compare_exchange_weak(cur, cur + bytes, std::memory_order_acq_rel));
  return Status::OK();
}

void TierDevice::Release(uint64_t bytes) {
  uint64_t cur = used_.load(std::memory_order_acquire);
  uint64_t next;
  do {
    next = cur >= bytes ? cur - bytes : 0;
  } while (!used_.compare_exchange_weak(cur, next, std::memory_order_acq_rel));
}

void TierDevice::Pace(const ThroughputCurve& curve, int concurrency, uint64_t blocks,
                      Clock::time_point start) {
  if (!options_.enabled || curve.Unlimited()) return;
  if (!tls_slack_set) {
    ::prctl(PR_SET_TIMERSLACK, 1000UL, 0, 0, 0);
    tls_slack_set = true;
  }
  double secs = ServiceSeconds(curve, concurrency, blocks, options_.interpolation) *
                options_.time_scale;
  auto cost = std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(secs));
  Clock::time_point base = std::max(tls_next_free, start - options_.credit_window);
  Clock::time_point deadline = base + cost;
  tls_next_free = deadline;
  if (deadline > Clock::now()) std::this_thread::sleep_until(deadline);
}

Status TierDevice::Create(const std::string& locator, std::shared_ptr<DeviceFile>* out) {
  TIERKV_RETURN_IF_ERROR(CheckAlive("create " + locator));
  if (faults_ && !faults_->OnMutation()) return CheckAlive("create " + locator);
  fs::path path = PathOf(locator);
  int fd = ::open(path.c_str(), O_RDWR | O_CREAT | O_EXCL | O_CLOEXEC, 0644);
  if (fd < 0) return Fail("create", locator, errno);
  out->reset(new DeviceFile(this, locator, fd, 0));
  return Status::OK();
}

Status TierDevice::OpenFile(const std::string& locator, std::shared_ptr<DeviceFile>* out) {
  TIERKV_RETURN_IF_ERROR(CheckAlive("open " + locator));
  fs::path path = PathOf(locator);
  int fd = ::open(path.c_str(), O_RDWR | O_CLOEXEC);
  if (fd < 0) return Fail("open", locator, errno);
  struct stat st;
  if (::fstat(fd, &st) != 0) {
    int err = errno;
    ::close(fd);
    return Fail("stat", locator, err);
  }
  out->reset(new DeviceFile(this, locator, fd, static_cast<uint64_t>(st.st_size)));
  return Status::OK();
}

Status TierDevice::Write(DeviceFile& file, uint64_t offset, std::span<const char> payload) {
  if (payload.empty()) return Status::InvalidArgument("empty write payload");
  TIERKV_RETURN_IF_ERROR(CheckAlive("write " + file.locator()));
  if (faults_ && !faults_->OnMutation()) return CheckAlive("write " + file.locator());

  CountGuard active(active_writers_);
  auto start = Clock::now();
  uint64_t end = offset + payload.size();
  uint64_t old_size = file.size();
  uint64_t grow = end > old_size ? end - old_size : 0;
  if (grow > 0) {
    Status s = Reserve(grow);
    if (!s.ok()) return s.WithContext(file.locator());
  }
  size_t done = 0;
  while (done < payload.size()) {
    ssize_t n = ::pwrite(file.fd_, payload.data() + done, payload.size() - done,
                         static_cast<off_t>(offset + done));
    if (n < 0) {
      if (errno == EINTR) continue;
      int err = errno;
      if (grow > 0) Release(grow);
      return Fail("write", file.locator(), err);
    }
    done += static_cast<size_t>(n);
  }
  // Files have a single writer, so growth accounted above is exact.
  if (grow > 0) file.size_.store(end, std::memory_order_release);
  write_ops_.fetch_add(1, std::memory_order_relaxed);
  Pace(profile_.write_curve, active.value(), BlocksFor(payload.size()), start);
  return Status::OK();
}

Status TierDevice::Read(DeviceFile& file, uint64_t offset, size_t length, std::string* out) {
  TIERKV_RETURN_IF_ERROR(CheckAlive("read " + file.locator()));
  CountGuard active(active_readers_);
  auto start = Clock::now();
  out->resize(length);
  size_t done = 0;
  while (done < length) {
    ssize_t n = ::pread(file.fd_, out->data() + done, length - done,
                        static_cast<off_t>(offset + done));
    if (n < 0) {
      if (errno == EINTR) continue;
      return Fail("read", file.locator(), errno);
    }
    if (n == 0) break;
    done += static_cast<size_t>(n);
  }
  out->resize(done);
  read_ops_.fetch_add(1, std::memory_order_relaxed);
  Pace(profile_.read_curve, active.value(), BlocksFor(length), start);
  return Status::OK();
}

Status TierDevice::Fsync(DeviceFile& file) {
  TIERKV_RETURN_IF_ERROR(CheckAlive("fsync " + file.locator()));
  if (::fdatasync(file.fd_) != 0) return Fail("fsync", file.locator(), errno);
  return Status::OK();
}

Status TierDevice::Remove(const std::string& locator) {
  TIERKV_RETURN_IF_ERROR(CheckAlive("remove " + locator));
  if (faults_ && !faults_->OnMutation()) return CheckAlive("remove " + locator);
  fs::path path = PathOf(locator);
  struct stat st;
  if (::stat(path.c_str(), &st) != 0) return Fail("remove", locator, errno);
  if (::unlink(path.c_str()) != 0) return Fail("remove", locator, errno);
  Release(static_cast<uint64_t>(st.st_size));
  return Status::OK();
}

Status TierDevice::Rename(const std::string& from, const std::string& to) {
  TIERKV_RETURN_IF_ERROR(CheckAlive("rename " + from));
  if (faults_ && !faults_->OnMutation()) return CheckAlive("rename " + from);
  fs::path dst = PathOf(to);
  struct stat st;
  uint64_t replaced = 0;
  if (::stat(dst.c_str(), &st) == 0) replaced = static_cast<uint64_t>(st.st_size);
  if (::rename(PathOf(from).c_str(), dst.c_str()) != 0) return Fail("rename", from, errno);
  if (replaced) Release(replaced);
  return Status::OK();
}

Status TierDevice::List(std::string_view area, std::vector<std::string>* names) const {
  names->clear();
  std::error_code ec;
  fs::path dir = profile_.backing_path / area;
  for (fs::directory_iterator it(dir, ec), end; !ec && it != end; it.increment(ec)) {
    if (it->is_regular_file()) names->push_back(it->path().filename().string());
  }
  if (ec) return Fail("list", std::string(area), ec.value());
  std::sort(names->begin(), names->end());
  return Status::OK();
}

bool TierDevice::Exists(const std::string& locator) const {
  std::error_code ec;
  return fs::exists(PathOf(locator), ec);
}

Status TierDevice::AppendMetadata(std::string_view name, std::string_view line) {
  std::string loc(name);
  TIERKV_RETURN_IF_ERROR(CheckAlive("append " + loc));
  if (faults_ && !faults_->OnMutation()) return CheckAlive("append " + loc);
  fs::path path = profile_.backing_path / name;
  int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) return Fail("open", loc, errno);
  std::string buf(line);
  buf.push_back('\n');
  ssize_t n = ::write(fd, buf.data(), buf.size());
  int err = errno;
  bool ok = n == static_cast<ssize_t>(buf.size()) && ::fdatasync(fd) == 0;
  if (!ok && n >= 0) err = errno ? errno : EIO;
  ::close(fd);
  if (!ok) return Fail("append", loc, err);
  return Status::OK();
}

Status TierDevice::ReplaceMetadata(std::string_view name, std::string_view content) {
  std::string loc(name);
  TIERKV_RETURN_IF_ERROR(CheckAlive("replace " + loc));
  if (faults_ && !faults_->OnMutation()) return CheckAlive("replace " + loc);
  fs::path path = profile_.backing_path / name;
  fs::path tmp = path;
  tmp += ".tmp";
  int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) return Fail("open", loc, errno);
  size_t done = 0;
  while (done < content.size()) {
    ssize_t n = ::write(fd, content.data() + done, content.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      int err = errno;
      ::close(fd);
      return Fail("write", loc, err);
    }
    done += static_cast<size_t>(n);
  }
  if (::fdatasync(fd) != 0) {
    int err = errno;
    ::close(fd);
    return Fail("fsync", loc, err);
  }
  ::close(fd);
  if (::rename(tmp.c_str(), path.c_str()) != 0) return Fail("rename", loc, errno);
  return Status::OK();
}

Status TierDevice::ReadMetadata(std::string_view name, std::string* content) const {
  Status s = ReadWholeFile(profile_.backing_path / name, content);
  if (s.IsNotFound()) content->clear();
  return s;
}

Status TierDevice::RescanUsage(uint64_t* bytes) const {
  uint64_t total = 0;
  for (const char* area : {"data", "cache"}) {
    std::error_code ec;
    fs::path dir = profile_.backing_path / area;
    if (!fs::exists(dir, ec)) continue;
    for (fs::directory_iterator it(dir, ec), end; !ec && it != end; it.increment(ec)) {
      if (it->is_regular_file()) total += it->file_size();
    }
    if (ec) return Fail("rescan", area, ec.value());
  }
  *bytes = total;
  return Status::OK();
}

}  // namespace tierkv
