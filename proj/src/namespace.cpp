#include "tierkv/namespace.hpp"

#include <algorithm>
#include <functional>
#include <sstream>

namespace tierkv {

namespace {

std::string DataLocator(std::string_view name) { return "data/" + std::string(name); }

std::string_view BaseName(std::string_view locator) {
  size_t slash = locator.rfind('/');
  return slash == std::string_view::npos ? locator : locator.substr(slash + 1);
}

bool IsTemporary(std::string_view name) {
  return name.size() > 4 && name.substr(name.size() - 4) == ".tmp";
}

}  // namespace

std::string_view FileClassName(FileClass c) {
  switch (c) {
    case FileClass::kWal: return "WAL";
    case FileClass::kSst: return "SST";
    case FileClass::kManifest: return "MANIFEST";
    case FileClass::kOther: return "OTHER";
  }
  return "OTHER";
}

FileClass ClassifyFileName(std::string_view name) {
  auto ends_with = [&](std::string_view suffix) {
    return name.size() >= suffix.size() && name.substr(name.size() - suffix.size()) == suffix;
  };
  if (ends_with(".sst")) return FileClass::kSst;
  if (ends_with(".log")) return FileClass::kWal;
  if (name.substr(0, 8) == "MANIFEST") return FileClass::kManifest;
  return FileClass::kOther;
}

Replica::~Replica() {
  if (!retired()) return;
  file_.reset();
  // The tier may be frozen by a simulated crash; the file then stays behind
  // exactly as it would after a real crash.
  Status s = device_->Remove(locator_);
  (void)s;
}

FileInfo Describe(const FileRecord& r) {
  FileInfo info;
  info.logical_path = r.logical_path;
  info.file_class = r.file_class;
  info.logical_fd = r.logical_fd;
  info.access_count = r.access_count.load(std::memory_order_relaxed);
  info.last_access = r.last_access.load(std::memory_order_relaxed);
  std::lock_guard lock(r.mu);
  info.level = r.level;
  if (r.home) {
    info.tier_id = r.home->tier_id();
    info.physical_locator = r.home->locator();
    info.size_bytes = r.home->size();
  }
  if (r.cached) info.cached_copy_tier = r.cached->tier_id();
  info.pinned = r.pinned;
  info.sealed = r.sealed;
  return info;
}

// ---------------------------------------------------------------------------
// LevelSidecar

Status LevelSidecar::Append(const TierDevice& device, std::string_view name,
                            std::optional<int> level, uint64_t size_bytes) {
  std::ostringstream line;
  line << name << ' ' << (level ? std::to_string(*level) : std::string("-")) << ' '
       << size_bytes;
  return const_cast<TierDevice&>(device).AppendMetadata(kFileName, line.str());
}

Status LevelSidecar::Load(const TierDevice& device, std::map<std::string, Entry>* out) {
  out->clear();
  std::string text;
  Status s = device.ReadMetadata(kFileName, &text);
  if (s.IsNotFound()) return Status::OK();
  TIERKV_RETURN_IF_ERROR(s);
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::string name, level;
    uint64_t size = 0;
    // A torn final line from a crash is ignored.
    if (!(fields >> name >> level >> size)) continue;
    Entry e;
    if (level != "-") {
      try {
        e.level = std::stoi(level);
      } catch (const std::exception&) {
        continue;
      }
    }
    e.size_bytes = size;
    (*out)[name] = e;
  }
  return Status::OK();
}

Status LevelSidecar::Rewrite(const TierDevice& device,
                             const std::map<std::string, Entry>& entries) {
  std::ostringstream text;
  for (const auto& [name, e] : entries) {
    text << name << ' ' << (e.level ? std::to_string(*e.level) : std::string("-")) << ' '
         << e.size_bytes << '\n';
  }
  return const_cast<TierDevice&>(device).ReplaceMetadata(kFileName, text.str());
}

// ---------------------------------------------------------------------------
// FileNamespace

FileNamespace::FileNamespace(std::vector<TierDevice*> tiers) : tiers_(std::move(tiers)) {}

FileNamespace::PathShard& FileNamespace::ShardFor(std::string_view path) const {
  return paths_[std::hash<std::string_view>{}(path) % kShards];
}

FileNamespace::FdShard& FileNamespace::FdShardFor(uint64_t fd) const {
  return fds_[fd % kShards];
}

Status FileNamespace::InsertFd(uint64_t fd, RecordPtr record) {
  FdShard& shard = FdShardFor(fd);
  std::lock_guard lock(shard.mu);
  shard.fds.emplace(fd, std::move(record));
  return Status::OK();
}

Status FileNamespace::Register(const std::string& logical_path, FileClass file_class,
                               std::optional<int> level, ReplicaPtr home, uint64_t* fd) {
  if (!home) return Status::InvalidArgument("register without a home replica");
  uint64_t new_fd = NextFd();
  auto record = std::make_shared<FileRecord>(logical_path, file_class, new_fd);
  record->level = level;
  record->home = home;
  {
    PathShard& shard = ShardFor(logical_path);
    std::lock_guard lock(shard.mu);
    if (shard.records.count(logical_path)) {
      return Status::Conflict("file already registered: " + logical_path);
    }
    shard.records.emplace(logical_path, record);
  }
  InsertFd(new_fd, record);
  Status s = LevelSidecar::Append(home->device(), BaseName(home->locator()), level,
                                  home->size());
  if (!s.ok() && !home->device().crashed()) return s;
  *fd = new_fd;
  return Status::OK();
}

Status FileNamespace::Register(const std::string& logical_path, FileClass file_class,
                               std::optional<int> level, int tier_id,
                               const std::string& physical_locator, uint64_t* fd) {
  if (tier_id < 0 || tier_id >= tier_count()) {
    return Status::InvalidArgument("no tier " + std::to_string(tier_id));
  }
  std::shared_ptr<DeviceFile> file;
  TIERKV_RETURN_IF_ERROR(tiers_[tier_id]->OpenFile(physical_locator, &file));
  auto replica = std::make_shared<Replica>(tiers_[tier_id], physical_locator, std::move(file));
  return Register(logical_path, file_class, level, std::move(replica), fd);
}

Status FileNamespace::Open(const std::string& logical_path, uint64_t* fd) {
  RecordPtr record;
  TIERKV_RETURN_IF_ERROR(Lookup(logical_path, &record));
  uint64_t new_fd = NextFd();
  InsertFd(new_fd, record);
  *fd = new_fd;
  return Status::OK();
}

Status FileNamespace::Close(uint64_t fd) {
  FdShard& shard = FdShardFor(fd);
  std::lock_guard lock(shard.mu);
  if (shard.fds.erase(fd) == 0) return Status::NotFound("fd " + std::to_string(fd));
  return Status::OK();
}

Status FileNamespace::Lookup(const std::string& logical_path, RecordPtr* record) const {
  PathShard& shard = ShardFor(logical_path);
  std::lock_guard lock(shard.mu);
  auto it = shard.records.find(logical_path);
  if (it == shard.records.end()) return Status::NotFound(logical_path);
  *record = it->second;
  return Status::OK();
}

Status FileNamespace::LookupFd(uint64_t fd, RecordPtr* record) const {
  FdShard& shard = FdShardFor(fd);
  std::lock_guard lock(shard.mu);
  auto it = shard.fds.find(fd);
  if (it == shard.fds.end()) return Status::NotFound("fd " + std::to_string(fd));
  *record = it->second;
  return Status::OK();
}

void FileNamespace::Touch(FileRecord& record) {
  // fetch_add on atomic<double> is a CAS loop; no lock taken.
  record.access_count.fetch_add(1.0, std::memory_order_relaxed);
  record.last_access.store(tick_.fetch_add(1, std::memory_order_relaxed) + 1,
                           std::memory_order_relaxed);
}

Status FileNamespace::Resolve(uint64_t fd, bool foreground, ReplicaPtr* replica) {
  RecordPtr record;
  TIERKV_RETURN_IF_ERROR(LookupFd(fd, &record));
  {
    std::lock_guard lock(record->mu);
    if (record->deleted) return Status::NotFound("stale fd " + std::to_string(fd));
    *replica = record->cached ? record->cached : record->home;
  }
  if (foreground) Touch(*record);
  return Status::OK();
}

Status FileNamespace::ResolvePath(const std::string& logical_path, ReplicaPtr* replica) const {
  RecordPtr record;
  TIERKV_RETURN_IF_ERROR(Lookup(logical_path, &record));
  std::lock_guard lock(record->mu);
  if (record->deleted) return Status::NotFound(logical_path);
  *replica = record->cached ? record->cached : record->home;
  return Status::OK();
}

Status FileNamespace::Relocate(const std::string& logical_path, ReplicaPtr new_home,
                               bool* skipped) {
  *skipped = false;
  RecordPtr record;
  Status s = Lookup(logical_path, &record);
  if (s.IsNotFound()) {
    new_home->Retire();
    *skipped = true;
    return Status::OK();
  }
  TIERKV_RETURN_IF_ERROR(s);
  std::optional<int> level;
  {
    std::lock_guard lock(record->mu);
    if (record->deleted) {
      new_home->Retire();
      *skipped = true;
      return Status::OK();
    }
    if (record->open_writers > 0) {
      return Status::Busy("relocate of a file open for writing: " + logical_path);
    }
    if (record->cached) {
      record->cached->Retire();
      record->cached.reset();
    }
    record->home->Retire();
    record->home = new_home;
    level = record->level;
  }
  Status side = LevelSidecar::Append(new_home->device(), BaseName(new_home->locator()), level,
                                     new_home->size());
  if (!side.ok() && !new_home->device().crashed()) return side;
  return Status::OK();
}

Status FileNamespace::Unlink(const std::string& logical_path) {
  RecordPtr record;
  {
    PathShard& shard = ShardFor(logical_path);
    std::lock_guard lock(shard.mu);
    auto it = shard.records.find(logical_path);
    if (it == shard.records.end()) return Status::NotFound(logical_path);
    record = std::move(it->second);
    shard.records.erase(it);
  }
  std::lock_guard lock(record->mu);
  record->deleted = true;
  if (record->cached) record->cached->Retire();
  if (record->home) record->home->Retire();
  record->cached.reset();
  record->home.reset();
  record->access_count.store(0, std::memory_order_relaxed);
  return Status::OK();
}

Status FileNamespace::Rename(const std::string& from, const std::string& to) {
  if (from == to) return Status::OK();
  RecordPtr src;
  TIERKV_RETURN_IF_ERROR(Lookup(from, &src));
  RecordPtr replaced;
  Lookup(to, &replaced);

  ReplicaPtr home;
  std::optional<int> level;
  {
    std::lock_guard lock(src->mu);
    if (src->deleted) return Status::NotFound(from);
    if (src->cached) return Status::Busy("rename of a cached file: " + from);
    home = src->home;
    level = src->level;
  }
  if (replaced) {
    std::lock_guard lock(replaced->mu);
    if (replaced->home && replaced->home->tier_id() != home->tier_id()) {
      return Status::InvalidArgument("rename across tiers: " + from + " -> " + to);
    }
  }

  std::string new_locator = DataLocator(to);
  TIERKV_RETURN_IF_ERROR(home->device().Rename(home->locator(), new_locator));

  auto moved = std::make_shared<Replica>(&home->device(), new_locator, home->file_ptr());
  uint64_t new_fd = NextFd();
  auto record = std::make_shared<FileRecord>(to, ClassifyFileName(to), new_fd);
  record->level = level;
  record->home = moved;
  {
    std::lock_guard lock(src->mu);
    record->sealed = src->sealed;
    src->deleted = true;
    src->home.reset();
  }
  {
    // The replaced file's bytes are gone with the rename; drop its record
    // without retiring (retiring would remove the renamed file).
    PathShard& shard = ShardFor(to);
    std::lock_guard lock(shard.mu);
    auto it = shard.records.find(to);
    if (it != shard.records.end()) {
      std::lock_guard rlock(it->second->mu);
      it->second->deleted = true;
      if (it->second->cached) it->second->cached->Retire();
      it->second->cached.reset();
      it->second->home.reset();
      shard.records.erase(it);
    }
    shard.records.emplace(to, record);
  }
  {
    PathShard& shard = ShardFor(from);
    std::lock_guard lock(shard.mu);
    auto it = shard.records.find(from);
    if (it != shard.records.end() && it->second == src) shard.records.erase(it);
  }
  InsertFd(new_fd, record);
  Status s = LevelSidecar::Append(moved->device(), to, level, moved->size());
  if (!s.ok() && !moved->device().crashed()) return s;
  return Status::OK();
}

Status FileNamespace::SetCachedCopy(const std::string& logical_path,
                                    const ReplicaPtr& expected_home, ReplicaPtr copy) {
  RecordPtr record;
  Status s = Lookup(logical_path, &record);
  if (!s.ok()) {
    copy->Retire();
    return Status::Aborted("file unlinked during copy: " + logical_path);
  }
  std::lock_guard lock(record->mu);
  if (record->deleted || record->home != expected_home) {
    copy->Retire();
    return Status::Aborted("file changed during copy: " + logical_path);
  }
  if (copy->tier_id() >= record->home->tier_id()) {
    copy->Retire();
    return Status::InvalidArgument("cached copy must live on a faster tier");
  }
  if (record->cached) record->cached->Retire();
  record->cached = std::move(copy);
  return Status::OK();
}

Status FileNamespace::InvalidateCachedCopy(const std::string& logical_path, uint64_t* freed) {
  if (freed) *freed = 0;
  RecordPtr record;
  TIERKV_RETURN_IF_ERROR(Lookup(logical_path, &record));
  std::lock_guard lock(record->mu);
  if (!record->cached) return Status::OK();
  if (freed) *freed = record->cached->size();
  record->cached->Retire();
  record->cached.reset();
  return Status::OK();
}

Status FileNamespace::SetLevel(const std::string& logical_path, std::optional<int> level) {
  RecordPtr record;
  TIERKV_RETURN_IF_ERROR(Lookup(logical_path, &record));
  ReplicaPtr home;
  {
    std::lock_guard lock(record->mu);
    if (record->deleted) return Status::NotFound(logical_path);
    record->level = level;
    home = record->home;
  }
  Status s = LevelSidecar::Append(home->device(), BaseName(home->locator()), level,
                                  home->size());
  if (!s.ok() && !home->device().crashed()) return s;
  return Status::OK();
}

std::vector<RecordPtr> FileNamespace::Records() const {
  std::vector<RecordPtr> out;
  for (auto& shard : paths_) {
    std::lock_guard lock(shard.mu);
    for (const auto& [path, rec] : shard.records) out.push_back(rec);
  }
  std::sort(out.begin(), out.end(),
            [](const RecordPtr& a, const RecordPtr& b) { return a->logical_path < b->logical_path; });
  return out;
}

std::vector<FileInfo> FileNamespace::Snapshot() const {
  std::vector<FileInfo> out;
  for (const auto& rec : Records()) out.push_back(Describe(*rec));
  return out;
}

size_t FileNamespace::size() const {
  size_t n = 0;
  for (auto& shard : paths_) {
    std::lock_guard lock(shard.mu);
    n += shard.records.size();
  }
  return n;
}

size_t FileNamespace::open_fds() const {
  size_t n = 0;
  for (auto& shard : fds_) {
    std::lock_guard lock(shard.mu);
    n += shard.fds.size();
  }
  return n;
}

Status FileNamespace::Recover(RecoveryReport* report) {
  if (size() != 0) return Status::InvalidArgument("recover needs an empty namespace");
  RecoveryReport local;
  RecoveryReport& rep = report ? *report : local;

  for (TierDevice* tier : tiers_) {
    std::vector<std::string> residues;
    TIERKV_RETURN_IF_ERROR(tier->List("cache", &residues));
    for (const auto& name : residues) {
      TIERKV_RETURN_IF_ERROR(tier->Remove("cache/" + name));
      ++rep.cache_residues_deleted;
      rep.log.push_back("tier " + std::to_string(tier->tier_id()) +
                        ": removed cache residue " + name);
    }
  }

  for (TierDevice* tier : tiers_) {
    std::map<std::string, LevelSidecar::Entry> sidecar;
    TIERKV_RETURN_IF_ERROR(LevelSidecar::Load(*tier, &sidecar));
    std::vector<std::string> names;
    TIERKV_RETURN_IF_ERROR(tier->List("data", &names));
    std::map<std::string, LevelSidecar::Entry> live;
    for (const auto& name : names) {
      std::string locator = DataLocator(name);
      if (IsTemporary(name)) {
        TIERKV_RETURN_IF_ERROR(tier->Remove(locator));
        ++rep.temporaries_deleted;
        rep.log.push_back("tier " + std::to_string(tier->tier_id()) +
                          ": removed partial file " + name);
        continue;
      }
      RecordPtr existing;
      if (Lookup(name, &existing).ok()) {
        // A migration finished its copy but not the source removal. Tiers are
        // scanned fastest first, so the faster replica is kept.
        TIERKV_RETURN_IF_ERROR(tier->Remove(locator));
        ++rep.duplicates_deleted;
        rep.log.push_back("tier " + std::to_string(tier->tier_id()) +
                          ": removed duplicate " + name);
        continue;
      }
      std::shared_ptr<DeviceFile> file;
      TIERKV_RETURN_IF_ERROR(tier->OpenFile(locator, &file));
      auto replica = std::make_shared<Replica>(tier, locator, std::move(file));
      std::optional<int> level;
      auto it = sidecar.find(name);
      if (it != sidecar.end()) level = it->second.level;
      uint64_t new_fd = NextFd();
      auto record = std::make_shared<FileRecord>(name, ClassifyFileName(name), new_fd);
      record->level = level;
      record->home = replica;
      record->sealed = record->file_class != FileClass::kWal;
      {
        PathShard& shard = ShardFor(name);
        std::lock_guard lock(shard.mu);
        shard.records.emplace(name, record);
      }
      live[name] = {level, replica->size()};
      ++rep.registered;
    }
    TIERKV_RETURN_IF_ERROR(LevelSidecar::Rewrite(*tier, live));
  }
  return Status::OK();
}

}  // namespace tierkv
