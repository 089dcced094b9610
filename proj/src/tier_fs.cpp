#include "tierkv/tier_fs.hpp"

#include <algorithm>
#include <cmath>

namespace tierkv {

namespace {

std::optional<WriterSource> SourceFor(const IoContext& ctx, FileClass cls) {
  if (cls != FileClass::kWal && cls != FileClass::kSst) return std::nullopt;
  switch (ctx.kind) {
    case IoContext::Kind::kWalWrite: return WriterSource::kWal;
    case IoContext::Kind::kFlush: return WriterSource::kFlush;
    case IoContext::Kind::kCompaction: return WriterSource::kCompaction;
    default: return std::nullopt;
  }
}

int LevelSlot(const IoContext& ctx) {
  int level = ctx.to_level.value_or(0);
  return std::clamp(level, 0, TierFs::kMaxLevels - 1);
}

}  // namespace

Status TierFs::Open(TierFsOptions options, std::unique_ptr<TierFs>* out,
                    RecoveryReport* report) {
  if (options.tiers.empty()) return Status::InvalidArgument("no tiers configured");
  std::vector<std::unique_ptr<TierDevice>> devices;
  for (size_t i = 0; i < options.tiers.size(); ++i) {
    DeviceProfile p = options.tiers[i];
    p.tier_id = static_cast<int>(i);
    auto dev = std::make_unique<TierDevice>(p, options.delay, options.faults);
    TIERKV_RETURN_IF_ERROR(dev->Open());
    devices.push_back(std::move(dev));
  }
  TIERKV_RETURN_IF_ERROR(options.scheme.ValidateStructure(static_cast<int>(devices.size())));
  std::unique_ptr<TierFs> fs(new TierFs(std::move(options), std::move(devices)));
  TIERKV_RETURN_IF_ERROR(fs->ns_->Recover(report));
  if (fs->options_.background) fs->cache_->Start();
  *out = std::move(fs);
  return Status::OK();
}

TierFs::TierFs(TierFsOptions options, std::vector<std::unique_ptr<TierDevice>> devices)
    : options_(std::move(options)), devices_(std::move(devices)) {
  policy_.lower_bound_fraction = options_.cache.lower_pct / 100.0;
  std::vector<TierDevice*> raw;
  std::vector<int> parallelism;
  for (auto& d : devices_) {
    raw.push_back(d.get());
    parallelism.push_back(d->profile().max_write_parallelism);
  }
  ns_ = std::make_unique<FileNamespace>(raw);
  registry_ = std::make_unique<WriterRegistry>(parallelism);
  scheme_ = std::make_shared<const PlacementScheme>(options_.scheme);
  reads_ = std::make_unique<std::atomic<uint64_t>[]>(devices_.size());
  writes_ = std::make_unique<std::atomic<uint64_t>[]>(devices_.size());
  CacheMigrationOptions cache = options_.cache;
  if (options_.delay.enabled && options_.delay.time_scale > 1) {
    // The period is model time, like every other delay.
    cache.monitor_period = std::chrono::milliseconds(static_cast<int64_t>(
        std::llround(double(cache.monitor_period.count()) * options_.delay.time_scale)));
  }
  cache_ = std::make_unique<CacheMigrationManager>(this, cache);
}

TierFs::~TierFs() { Shutdown(); }

void TierFs::Shutdown() {
  if (shut_down_) return;
  shut_down_ = true;
  cache_->Stop();
}

std::shared_ptr<const PlacementScheme> TierFs::scheme() const {
  std::lock_guard lock(scheme_mu_);
  return scheme_;
}

void TierFs::SetScheme(PlacementScheme scheme) {
  auto next = std::make_shared<const PlacementScheme>(std::move(scheme));
  std::lock_guard lock(scheme_mu_);
  scheme_ = std::move(next);
}

std::vector<TierSpace> TierFs::Space() const {
  std::vector<TierSpace> out;
  for (const auto& d : devices_) out.push_back({d->capacity_bytes(), d->free_bytes()});
  return out;
}

bool TierFs::GetFd(uint64_t fd, FdState* st) const {
  std::lock_guard lock(fd_mu_);
  auto it = fds_.find(fd);
  if (it == fds_.end()) return false;
  *st = it->second;
  return true;
}

size_t TierFs::open_fds() const {
  std::lock_guard lock(fd_mu_);
  return fds_.size();
}

void TierFs::TrackWriter(const FdState& st, int delta) {
  auto kind = st.context.kind;
  if (kind != IoContext::Kind::kWalWrite && kind != IoContext::Kind::kFlush &&
      kind != IoContext::Kind::kCompaction) {
    return;
  }
  if (!st.source) return;
  active_[static_cast<int>(kind)][LevelSlot(st.context)].fetch_add(delta,
                                                                    std::memory_order_relaxed);
  if (options_.log_writer_events) {
    std::lock_guard lock(events_mu_);
    events_.push_back({std::chrono::steady_clock::now(), st.context, delta});
  }
}

int TierFs::ActiveWriters(IoContext::Kind kind, int level) const {
  if (level < 0 || level >= kMaxLevels) return 0;
  return active_[static_cast<int>(kind)][level].load(std::memory_order_relaxed);
}

std::vector<WriterEvent> TierFs::TakeWriterEvents() {
  std::lock_guard lock(events_mu_);
  return std::exchange(events_, {});
}

Status TierFs::OpenFile(const std::string& path, OpenFlags flags,
                        std::optional<IoContext> context, uint64_t* fd) {
  IoContext ctx = context ? *context : GetContext();
  TIERKV_RETURN_IF_ERROR(ctx.Validate());
  if (ctx.IsInternal()) {
    return Status::InvalidArgument(ctx.ToString() + " is reserved for internal workers");
  }
  if (path.empty() || path.find('/') != std::string::npos) {
    return Status::InvalidArgument("bad file name '" + path + "'");
  }
  if (flags.create) return Create(path, ctx, fd);

  RecordPtr record;
  TIERKV_RETURN_IF_ERROR(ns_->Lookup(path, &record));
  FdState st;
  st.record = record;
  st.context = ctx;
  if (!flags.read_only) {
    std::lock_guard lock(record->mu);
    if (record->deleted) return Status::NotFound(path);
    if (record->cached || (record->sealed && record->file_class == FileClass::kSst)) {
      return Status::Immutable("file is read-only: " + path);
    }
    ++record->open_writers;
    st.writable = true;
    st.writer_tier = record->home->tier_id();
  }
  st.source = st.writable ? SourceFor(ctx, record->file_class) : std::nullopt;
  uint64_t new_fd = 0;
  Status s = ns_->Open(path, &new_fd);
  if (!s.ok()) {
    if (st.writable) {
      std::lock_guard lock(record->mu);
      --record->open_writers;
    }
    return s;
  }
  if (st.source) registry_->Acquire(st.writer_tier, *st.source);
  TrackWriter(st, +1);
  {
    std::lock_guard lock(fd_mu_);
    fds_[new_fd] = st;
  }
  *fd = new_fd;
  return Status::OK();
}

Status TierFs::Create(const std::string& path, const IoContext& ctx, uint64_t* fd) {
  if (Exists(path)) return Status::Conflict("file exists: " + path);
  auto sch = scheme();
  int last = tier_count() - 1;

  PlacementDecision decision;
  TIERKV_RETURN_IF_ERROR(Place(ctx, *sch, Space(), policy_, &decision));
  if (decision.spilled && decision.preferred_tier < last &&
      options_.cache.migration_enabled) {
    // The preferred tier is under the lower bound: make room before
    // admitting the new file.
    cache_->ForceMigration(decision.preferred_tier);
    TIERKV_RETURN_IF_ERROR(Place(ctx, *sch, Space(), policy_, &decision));
  }

  TierDevice& dev = *devices_[decision.tier];
  std::string locator = "data/" + path;
  std::shared_ptr<DeviceFile> file;
  TIERKV_RETURN_IF_ERROR(dev.Create(locator, &file));
  auto replica = std::make_shared<Replica>(&dev, locator, std::move(file));

  std::optional<int> level;
  if (ctx.kind == IoContext::Kind::kFlush || ctx.kind == IoContext::Kind::kCompaction) {
    level = ctx.to_level;
  }
  FileClass cls = ClassifyFileName(path);
  uint64_t new_fd = 0;
  Status s = ns_->Register(path, cls, level, replica, &new_fd);
  if (!s.ok()) {
    replica->Retire();
    return s;
  }
  RecordPtr record;
  TIERKV_RETURN_IF_ERROR(ns_->LookupFd(new_fd, &record));
  {
    std::lock_guard lock(record->mu);
    ++record->open_writers;
  }
  FdState st;
  st.record = record;
  st.writable = true;
  st.context = ctx;
  st.writer_tier = decision.tier;
  st.source = SourceFor(ctx, cls);
  if (st.source) registry_->Acquire(st.writer_tier, *st.source);
  TrackWriter(st, +1);
  creates_[static_cast<int>(ctx.kind)].fetch_add(1, std::memory_order_relaxed);
  {
    std::lock_guard lock(fd_mu_);
    fds_[new_fd] = st;
  }
  *fd = new_fd;
  return Status::OK();
}

Status TierFs::Read(uint64_t fd, uint64_t offset, size_t length, std::string* out) {
  FdState st;
  if (!GetFd(fd, &st)) return Status::NotFound("fd " + std::to_string(fd));
  ReplicaPtr replica;
  TIERKV_RETURN_IF_ERROR(ns_->Resolve(fd, false, &replica));
  int tier = replica->tier_id();
  TIERKV_RETURN_IF_ERROR(replica->device().Read(replica->file(), offset, length, out));
  reads_[tier].fetch_add(1, std::memory_order_relaxed);
  if (GetContext().kind == IoContext::Kind::kForeground) {
    cache_->RecordAccess(*st.record, tier);
  }
  return Status::OK();
}

Status TierFs::WriteAt(FdState& st, uint64_t fd, std::optional<uint64_t> offset,
                       std::span<const char> data) {
  if (!st.writable) return Status::Immutable("fd " + std::to_string(fd) + " is read-only");
  for (int attempt = 0;; ++attempt) {
    ReplicaPtr home;
    {
      std::lock_guard lock(st.record->mu);
      if (st.record->deleted) return Status::NotFound(st.record->logical_path);
      if (st.record->cached) {
        return Status::Immutable("file has a cached copy: " + st.record->logical_path);
      }
      home = st.record->home;
    }
    uint64_t at = offset ? *offset : home->size();
    Status s = home->device().Write(home->file(), at, data);
    int tier = home->tier_id();
    if (s.ok()) {
      writes_[tier].fetch_add(1, std::memory_order_relaxed);
      return s;
    }
    if (!s.IsTierFull() || attempt > 0 || tier == tier_count() - 1 ||
        !options_.cache.migration_enabled) {
      return s;
    }
    cache_->ForceMigration(tier, data.size());
  }
}

Status TierFs::Write(uint64_t fd, uint64_t offset, std::span<const char> data) {
  FdState st;
  if (!GetFd(fd, &st)) return Status::NotFound("fd " + std::to_string(fd));
  return WriteAt(st, fd, offset, data);
}

Status TierFs::Append(uint64_t fd, std::span<const char> data) {
  FdState st;
  if (!GetFd(fd, &st)) return Status::NotFound("fd " + std::to_string(fd));
  return WriteAt(st, fd, std::nullopt, data);
}

Status TierFs::Fsync(uint64_t fd) {
  FdState st;
  if (!GetFd(fd, &st)) return Status::NotFound("fd " + std::to_string(fd));
  ReplicaPtr home;
  {
    std::lock_guard lock(st.record->mu);
    if (st.record->deleted) return Status::NotFound(st.record->logical_path);
    home = st.record->home;
  }
  return home->device().Fsync(home->file());
}

Status TierFs::Close(uint64_t fd) {
  FdState st;
  {
    std::lock_guard lock(fd_mu_);
    auto it = fds_.find(fd);
    if (it == fds_.end()) return Status::NotFound("fd " + std::to_string(fd));
    st = std::move(it->second);
    fds_.erase(it);
  }
  if (st.writable) {
    std::lock_guard lock(st.record->mu);
    if (--st.record->open_writers == 0) st.record->sealed = true;
  }
  if (st.source) registry_->Release(st.writer_tier, *st.source);
  TrackWriter(st, -1);
  return ns_->Close(fd);
}

Status TierFs::Unlink(const std::string& path) { return ns_->Unlink(path); }

Status TierFs::Rename(const std::string& from, const std::string& to) {
  return ns_->Rename(from, to);
}

Status TierFs::List(std::vector<std::string>* names) const {
  names->clear();
  for (const auto& r : ns_->Records()) names->push_back(r->logical_path);
  return Status::OK();
}

Status TierFs::FileSize(const std::string& path, uint64_t* size) const {
  RecordPtr record;
  TIERKV_RETURN_IF_ERROR(ns_->Lookup(path, &record));
  std::lock_guard lock(record->mu);
  if (record->deleted || !record->home) return Status::NotFound(path);
  *size = record->home->size();
  return Status::OK();
}

bool TierFs::Exists(const std::string& path) const {
  RecordPtr record;
  return ns_->Lookup(path, &record).ok();
}

Status TierFs::SetLevel(const std::string& path, int level) {
  TIERKV_RETURN_IF_ERROR(ns_->SetLevel(path, level));
  cache_->NotifyLevelChange(path, level);
  return Status::OK();
}

}  // namespace tierkv
