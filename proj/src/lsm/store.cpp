#include "tierkv/lsm/store.hpp"

#include <algorithm>
#include <cmath>

namespace tierkv::lsm {

using Clock = std::chrono::steady_clock;

// Config.

Status LsmConfig::Validate() const {
  if (memtable_bytes == 0) return Status::InvalidArgument("memtable_bytes must be > 0");
  if (fanout < 2) return Status::InvalidArgument("fanout must be >= 2");
  if (compaction_threads < 1) return Status::InvalidArgument("compaction_threads must be >= 1");
  if (levels < 2 || levels > TierFs::kMaxLevels) {
    return Status::InvalidArgument("levels must be in [2, " +
                                   std::to_string(TierFs::kMaxLevels) + "]");
  }
  if (l0_compaction_trigger < 1 || l0_slowdown_trigger < l0_compaction_trigger ||
      l0_stop_trigger < l0_slowdown_trigger) {
    return Status::InvalidArgument("need 1 <= l0 trigger <= slowdown <= stop");
  }
  return Status::OK();
}

uint64_t LsmConfig::BaseLevelBytes() const {
  return base_level_bytes ? base_level_bytes : uint64_t(memtable_bytes) * l0_compaction_trigger;
}

uint64_t LsmConfig::TargetFileBytes() const {
  return target_file_bytes ? target_file_bytes : memtable_bytes;
}

uint64_t LsmConfig::LevelTarget(int level) const {
  double t = double(BaseLevelBytes()) * std::pow(double(fanout), std::max(level - 1, 0));
  return t > 1.8e19 ? UINT64_MAX : static_cast<uint64_t>(t);
}

Status LsmConfig::Apply(const KvText& kv) {
  auto sz = [&](const char* key, size_t* field) {
    uint64_t v = *field;
    Status s = kv.MaybeBytes(key, &v);
    *field = static_cast<size_t>(v);
    return s;
  };
  auto num = [&](const char* key, int* field) {
    int64_t v = *field;
    Status s = kv.MaybeInt(key, &v);
    *field = static_cast<int>(v);
    return s;
  };
  TIERKV_RETURN_IF_ERROR(sz("lsm.memtable_bytes", &memtable_bytes));
  TIERKV_RETURN_IF_ERROR(num("lsm.l0_trigger", &l0_compaction_trigger));
  TIERKV_RETURN_IF_ERROR(num("lsm.l0_slowdown", &l0_slowdown_trigger));
  TIERKV_RETURN_IF_ERROR(num("lsm.l0_stop", &l0_stop_trigger));
  TIERKV_RETURN_IF_ERROR(num("lsm.fanout", &fanout));
  TIERKV_RETURN_IF_ERROR(num("lsm.threads", &compaction_threads));
  TIERKV_RETURN_IF_ERROR(sz("lsm.block_cache_bytes", &block_cache_bytes));
  TIERKV_RETURN_IF_ERROR(sz("lsm.value_bytes", &value_bytes));
  TIERKV_RETURN_IF_ERROR(kv.MaybeBool("lsm.strict_durability", &strict_durability));
  TIERKV_RETURN_IF_ERROR(num("lsm.levels", &levels));
  TIERKV_RETURN_IF_ERROR(kv.MaybeBytes("lsm.base_level_bytes", &base_level_bytes));
  TIERKV_RETURN_IF_ERROR(kv.MaybeBytes("lsm.target_file_bytes", &target_file_bytes));
  int64_t delay = slowdown_delay.count();
  TIERKV_RETURN_IF_ERROR(kv.MaybeInt("lsm.slowdown_us", &delay));
  slowdown_delay = std::chrono::microseconds(delay);
  TIERKV_RETURN_IF_ERROR(kv.MaybeBool("lsm.auto_compaction", &auto_compaction));
  return Validate();
}

// Internal types.

struct LsmStore::Writer {
  const WriteBatch* batch = nullptr;
  bool force_flush = false;
  bool done = false;
  Status status;
  std::condition_variable cv;
};

struct LsmStore::Compaction {
  int level = 0;
  std::vector<FileMetaPtr> inputs[2];
  bool trivial = false;
  bool bottommost = false;
};

class LsmStore::FileDeleter {
 public:
  explicit FileDeleter(LsmStore* store) : store_(store) {}
  void Delete(uint64_t number) {
    std::lock_guard lock(mu_);
    if (store_ == nullptr) return;  // left for recovery to collect
    store_->EvictTable(number);
    store_->fs_->Unlink(TableFileName(number));
  }
  void Detach() {
    std::lock_guard lock(mu_);
    store_ = nullptr;
  }

 private:
  std::mutex mu_;
  LsmStore* store_;
};

// Concatenates the disjoint, sorted files of one level, opening tables as
// the cursor reaches them.
class LsmStore::LevelIterator : public InternalIterator {
 public:
  LevelIterator(LsmStore* store, std::vector<FileMetaPtr> files, bool fill_cache)
      : store_(store), files_(std::move(files)), fill_cache_(fill_cache) {}

  void SeekToFirst() override {
    OpenFile(0);
    if (cur_) cur_->SeekToFirst();
    SkipExhausted();
  }
  void Seek(std::string_view target) override {
    auto it = std::lower_bound(files_.begin(), files_.end(), target,
                               [](const FileMetaPtr& f, std::string_view t) { return f->largest < t; });
    OpenFile(static_cast<size_t>(it - files_.begin()));
    if (cur_) cur_->Seek(target);
    SkipExhausted();
  }
  bool Valid() const override { return cur_ && cur_->Valid(); }
  void Next() override {
    cur_->Next();
    SkipExhausted();
  }
  std::string_view key() const override { return cur_->key(); }
  std::string_view value() const override { return cur_->value(); }
  SequenceNumber seq() const override { return cur_->seq(); }
  ValueType type() const override { return cur_->type(); }
  Status status() const override { return status_; }

 private:
  void OpenFile(size_t i) {
    cur_.reset();
    idx_ = i;
    if (i >= files_.size() || !status_.ok()) return;
    TablePtr t;
    status_ = store_->GetTable(*files_[i], &t);
    if (status_.ok()) cur_ = t->NewIterator(fill_cache_);
  }
  void SkipExhausted() {
    while (cur_ && !cur_->Valid()) {
      Status s = cur_->status();
      if (!s.ok()) {
        status_ = s;
        cur_.reset();
        return;
      }
      OpenFile(idx_ + 1);
      if (cur_) cur_->SeekToFirst();
    }
  }

  LsmStore* store_;
  std::vector<FileMetaPtr> files_;
  bool fill_cache_;
  size_t idx_ = 0;
  std::unique_ptr<InternalIterator> cur_;
  Status status_;
};

namespace {

Status ReadSmallFile(TierFs* fs, const std::string& name, std::string* out) {
  uint64_t size = 0;
  TIERKV_RETURN_IF_ERROR(fs->FileSize(name, &size));
  uint64_t fd = 0;
  TIERKV_RETURN_IF_ERROR(fs->OpenFile(name, OpenFlags::ReadOnly(), IoContext::Unknown(), &fd));
  Status s = fs->Read(fd, 0, size, out);
  fs->Close(fd);
  return s;
}

}  // namespace

// Lifecycle.

LsmStore::LsmStore(TierFs* fs, const LsmConfig& config)
    : fs_(fs),
      config_(config),
      block_cache_(std::make_unique<BlockCache>(config.block_cache_bytes)),
      deleter_(std::make_shared<FileDeleter>(this)),
      mem_(std::make_shared<Memtable>()),
      current_(std::make_shared<Version>(config.levels)),
      compact_pointer_(config.levels) {
  stats_.compactions_into.assign(config.levels, 0);
}

Status LsmStore::Open(TierFs* fs, const LsmConfig& config, std::unique_ptr<LsmStore>* out) {
  TIERKV_RETURN_IF_ERROR(config.Validate());
  std::unique_ptr<LsmStore> s(new LsmStore(fs, config));
  if (fs->Exists(kCurrentFile)) {
    TIERKV_RETURN_IF_ERROR(s->Recover());
  } else {
    TIERKV_RETURN_IF_ERROR(s->NewDb());
  }
  s->flush_thread_ = std::thread([p = s.get()] { p->FlushLoop(); });
  for (int i = 0; i < config.compaction_threads; ++i) {
    s->compaction_threads_.emplace_back([p = s.get()] { p->CompactionLoop(); });
  }
  *out = std::move(s);
  return Status::OK();
}

LsmStore::~LsmStore() { Close(); }

Status LsmStore::Close() {
  {
    std::lock_guard lock(mu_);
    if (closed_) return Status::OK();
    closed_ = true;
    shutting_down_ = true;
    stopping_.store(true);
    bg_cv_.notify_all();
    done_cv_.notify_all();
  }
  if (flush_thread_.joinable()) flush_thread_.join();
  for (auto& t : compaction_threads_) {
    if (t.joinable()) t.join();
  }
  Status s;
  {
    std::lock_guard lock(mu_);
    if (wal_) s = wal_->Close();
    wal_.reset();
  }
  {
    std::lock_guard lock(manifest_mu_);
    if (manifest_) manifest_->Close();
    manifest_.reset();
  }
  deleter_->Detach();
  std::map<uint64_t, TablePtr> tables;
  {
    std::lock_guard lock(tables_mu_);
    tables.swap(tables_);
  }
  return s;
}

FileMetaPtr LsmStore::NewMeta(uint64_t number) {
  auto m = std::make_shared<FileMeta>();
  m->number = number;
  m->on_obsolete = [d = deleter_](uint64_t n) { d->Delete(n); };
  return m;
}

std::shared_ptr<const Version> LsmStore::current() const {
  std::lock_guard lock(mu_);
  return current_;
}

void LsmStore::SetBackgroundError(const Status& s) {
  if (bg_error_.ok() && !s.ok()) bg_error_ = s;
  done_cv_.notify_all();
}

Status LsmStore::background_error() const {
  std::lock_guard lock(mu_);
  return bg_error_;
}

SequenceNumber LsmStore::last_sequence() const {
  std::lock_guard lock(mu_);
  return last_seq_;
}

// Manifest.

Status LsmStore::SetCurrent(const std::string& manifest) {
  const std::string tmp = std::string(kCurrentFile) + ".tmp";
  if (fs_->Exists(tmp)) fs_->Unlink(tmp);
  uint64_t fd = 0;
  TIERKV_RETURN_IF_ERROR(fs_->OpenFile(tmp, OpenFlags::Create(), IoContext::WalWrite(), &fd));
  std::string body = manifest + "\n";
  Status s = fs_->Append(fd, body);
  if (s.ok()) s = fs_->Fsync(fd);
  Status c = fs_->Close(fd);
  TIERKV_RETURN_IF_ERROR(s);
  TIERKV_RETURN_IF_ERROR(c);
  return fs_->Rename(tmp, kCurrentFile);
}

Status LsmStore::WriteSnapshotManifest(const Version& v, uint64_t log_number) {
  uint64_t number = next_file_.fetch_add(1);
  std::string name = ManifestFileName(number);
  uint64_t fd = 0;
  TIERKV_RETURN_IF_ERROR(fs_->OpenFile(name, OpenFlags::Create(), IoContext::WalWrite(), &fd));
  auto w = std::make_unique<WalWriter>(fs_, fd);
  VersionEdit snap;
  snap.log_number = log_number;
  snap.next_file = next_file_.load();
  {
    std::lock_guard lock(mu_);
    snap.last_sequence = last_seq_;
  }
  for (int l = 0; l < v.levels(); ++l) {
    for (const auto& f : v.files[l]) snap.added.push_back({l, f});
  }
  Status s = w->AddRecord(snap.Encode());
  if (s.ok()) s = w->Sync();
  if (s.ok()) s = SetCurrent(name);
  if (!s.ok()) {
    w->Close();
    fs_->Unlink(name);
    return s;
  }
  uint64_t old = manifest_number_;
  manifest_ = std::move(w);
  manifest_number_ = number;
  manifest_log_number_ = log_number;
  if (old != 0) fs_->Unlink(ManifestFileName(old));
  return Status::OK();
}

Status LsmStore::LogAndApply(VersionEdit* edit) {
  std::lock_guard mlock(manifest_mu_);
  std::shared_ptr<const Version> base = current();
  if (!edit->log_number) edit->log_number = manifest_log_number_;
  edit->next_file = next_file_.load();
  {
    std::lock_guard lock(mu_);
    edit->last_sequence = last_seq_;
  }
  auto v = std::make_shared<Version>(config_.levels);
  TIERKV_RETURN_IF_ERROR(ApplyEdit(*base, *edit, v.get()));
  TIERKV_RETURN_IF_ERROR(manifest_->AddRecord(edit->Encode()));
  TIERKV_RETURN_IF_ERROR(manifest_->Sync());
  manifest_log_number_ = *edit->log_number;
  if (manifest_->bytes() > config_.manifest_roll_bytes) {
    // A failed roll leaves the current manifest in charge.
    WriteSnapshotManifest(*v, manifest_log_number_);
  }
  {
    std::lock_guard lock(mu_);
    current_ = v;
    bg_cv_.notify_all();
    done_cv_.notify_all();
  }
  std::set<uint64_t> live;
  for (const auto& level : v->files) {
    for (const auto& f : level) live.insert(f->number);
  }
  for (const auto& [level, number] : edit->deleted) {
    if (live.count(number)) continue;
    for (const auto& f : base->files[level]) {
      if (f->number == number) f->obsolete = true;
    }
  }
  return Status::OK();
}

Status LsmStore::NewDb() {
  log_number_ = next_file_.fetch_add(1);
  uint64_t fd = 0;
  TIERKV_RETURN_IF_ERROR(
      fs_->OpenFile(LogFileName(log_number_), OpenFlags::Create(), IoContext::WalWrite(), &fd));
  wal_ = std::make_unique<WalWriter>(fs_, fd);
  std::lock_guard mlock(manifest_mu_);
  return WriteSnapshotManifest(*current_, log_number_);
}

Status LsmStore::Recover() {
  std::string cur;
  TIERKV_RETURN_IF_ERROR(ReadSmallFile(fs_, kCurrentFile, &cur));
  while (!cur.empty() && (cur.back() == '\n' || cur.back() == '\r')) cur.pop_back();
  uint64_t manifest_number = 0;
  if (ParseStoreFileName(cur, &manifest_number) != StoreFile::kManifest) {
    return Status::Corruption("CURRENT names '" + cur + "'");
  }
  WalReadResult manifest;
  TIERKV_RETURN_IF_ERROR(ReadWal(fs_, cur, &manifest));

  Version v(config_.levels);
  uint64_t log_number = 0;
  uint64_t next_file = 2;
  SequenceNumber last_seq = 0;
  for (const auto& rec : manifest.records) {
    VersionEdit e;
    TIERKV_RETURN_IF_ERROR(VersionEdit::Decode(rec, &e));
    Version next(config_.levels);
    TIERKV_RETURN_IF_ERROR(ApplyEdit(v, e, &next));
    v = std::move(next);
    if (e.log_number) log_number = *e.log_number;
    if (e.next_file) next_file = std::max(next_file, *e.next_file);
    if (e.last_sequence) last_seq = std::max(last_seq, *e.last_sequence);
  }
  // Re-home every file record under this store's deleter.
  std::set<uint64_t> live;
  for (auto& level : v.files) {
    for (auto& f : level) {
      auto m = NewMeta(f->number);
      m->size = f->size;
      m->entries = f->entries;
      m->smallest = f->smallest;
      m->largest = f->largest;
      f = m;
      live.insert(f->number);
      if (!fs_->Exists(TableFileName(f->number))) {
        return Status::Corruption("live table " + TableFileName(f->number) + " is missing");
      }
      next_file = std::max(next_file, f->number + 1);
    }
  }

  std::vector<std::string> names;
  TIERKV_RETURN_IF_ERROR(fs_->List(&names));
  std::vector<uint64_t> logs;
  for (const auto& name : names) {
    uint64_t n = 0;
    StoreFile kind = ParseStoreFileName(name, &n);
    if (kind == StoreFile::kTable || kind == StoreFile::kLog || kind == StoreFile::kManifest) {
      next_file = std::max(next_file, n + 1);
    }
    switch (kind) {
      case StoreFile::kTable:
        if (!live.count(n)) fs_->Unlink(name);  // output of an unfinished flush or compaction
        break;
      case StoreFile::kLog:
        if (n >= log_number) {
          logs.push_back(n);
        } else {
          fs_->Unlink(name);
        }
        break;
      case StoreFile::kManifest:
        if (n != manifest_number) fs_->Unlink(name);
        break;
      case StoreFile::kTemp:
        fs_->Unlink(name);
        break;
      default:
        break;
    }
  }
  next_file_.store(next_file);
  manifest_number_ = manifest_number;

  std::sort(logs.begin(), logs.end());
  auto mem = std::make_shared<Memtable>();
  for (uint64_t n : logs) {
    WalReadResult wal;
    TIERKV_RETURN_IF_ERROR(ReadWal(fs_, LogFileName(n), &wal));
    for (const auto& rec : wal.records) {
      TIERKV_RETURN_IF_ERROR(WriteBatch::Iterate(
          rec, [&](SequenceNumber seq, ValueType type, std::string_view k, std::string_view val) {
            mem->Add(seq, type, k, val);
            last_seq = std::max(last_seq, seq);
          }));
    }
  }
  last_seq_ = last_seq;
  current_ = std::make_shared<Version>(v);

  if (!mem->empty()) {
    FileMetaPtr meta;
    TIERKV_RETURN_IF_ERROR(WriteLevel0(*mem, &meta));
    VersionEdit e;
    e.added.push_back({0, meta});
    Version next(config_.levels);
    TIERKV_RETURN_IF_ERROR(ApplyEdit(*current_, e, &next));
    current_ = std::make_shared<Version>(std::move(next));
  }

  log_number_ = next_file_.fetch_add(1);
  uint64_t fd = 0;
  TIERKV_RETURN_IF_ERROR(
      fs_->OpenFile(LogFileName(log_number_), OpenFlags::Create(), IoContext::WalWrite(), &fd));
  wal_ = std::make_unique<WalWriter>(fs_, fd);
  {
    std::lock_guard mlock(manifest_mu_);
    TIERKV_RETURN_IF_ERROR(WriteSnapshotManifest(*current_, log_number_));
  }
  for (uint64_t n : logs) fs_->Unlink(LogFileName(n));
  return current_->CheckInvariants();
}

// Writes.

Status LsmStore::Put(std::string_view key, std::string_view value) {
  WriteBatch b;
  b.Put(key, value);
  return Write(b);
}

Status LsmStore::Delete(std::string_view key) {
  WriteBatch b;
  b.Delete(key);
  return Write(b);
}

Status LsmStore::Write(const WriteBatch& batch) { return WriteImpl(&batch, false); }

Status LsmStore::WriteImpl(const WriteBatch* batch, bool force_flush) {
  Writer w;
  w.batch = batch;
  w.force_flush = force_flush;
  std::unique_lock lock(mu_);
  if (closed_) return Status::Aborted("store is closed");
  writers_.push_back(&w);
  while (!w.done && &w != writers_.front()) w.cv.wait(lock);
  if (w.done) return w.status;

  Status s = MakeRoom(lock, force_flush);
  Writer* last = &w;
  if (s.ok() && batch != nullptr) {
    WriteBatch group;
    const WriteBatch* to_write = batch;
    size_t size = batch->ApproximateSize();
    constexpr size_t kMaxGroup = 1 << 20;
    for (size_t i = 1; i < writers_.size(); ++i) {
      Writer* x = writers_[i];
      if (x->batch == nullptr || x->force_flush) break;
      if (size + x->batch->ApproximateSize() > kMaxGroup) break;
      if (to_write == batch) {
        group.Append(*batch);
        to_write = &group;
      }
      group.Append(*x->batch);
      size += x->batch->ApproximateSize();
      last = x;
    }
    SequenceNumber first = last_seq_ + 1;
    MemtablePtr mem = mem_;
    WalWriter* wal = wal_.get();
    lock.unlock();
    s = wal->AddRecord(to_write->Encode(first));
    if (s.ok() && config_.strict_durability) s = wal->Sync();
    if (s.ok()) {
      s = to_write->ForEach(first, [&](SequenceNumber seq, ValueType type, std::string_view k,
                                       std::string_view v) { mem->Add(seq, type, k, v); });
    }
    lock.lock();
    if (s.ok()) {
      last_seq_ = first + to_write->count() - 1;
    } else {
      SetBackgroundError(s);
    }
    std::lock_guard sl(stats_mu_);
    ++stats_.write_groups;
  }
  while (true) {
    Writer* r = writers_.front();
    writers_.pop_front();
    if (r != &w) {
      r->status = s;
      r->done = true;
      r->cv.notify_one();
    }
    if (r == last) break;
  }
  if (!writers_.empty()) writers_.front()->cv.notify_one();
  return s;
}

Status LsmStore::MakeRoom(std::unique_lock<std::mutex>& lock, bool force) {
  bool allow_delay = !force;
  while (true) {
    if (!bg_error_.ok()) return bg_error_;
    if (shutting_down_) return Status::Aborted("store is closing");
    int l0 = current_->NumFiles(0);
    if (allow_delay && l0 >= config_.l0_slowdown_trigger) {
      // Slow each write group down once instead of stopping outright.
      lock.unlock();
      auto t0 = Clock::now();
      std::this_thread::sleep_for(config_.slowdown_delay);
      stall_micros_.fetch_add(std::chrono::duration_cast<std::chrono::microseconds>(
                                  Clock::now() - t0).count());
      lock.lock();
      allow_delay = false;
      continue;
    }
    if (force ? mem_->empty() : mem_->bytes() < config_.memtable_bytes) return Status::OK();
    if (imm_ || l0 >= config_.l0_stop_trigger) {
      auto t0 = Clock::now();
      done_cv_.wait_for(lock, std::chrono::milliseconds(100));
      stall_micros_.fetch_add(std::chrono::duration_cast<std::chrono::microseconds>(
                                  Clock::now() - t0).count());
      continue;
    }
    return SwitchMemtable(lock);
  }
}

Status LsmStore::SwitchMemtable(std::unique_lock<std::mutex>&) {
  uint64_t number = next_file_.fetch_add(1);
  uint64_t fd = 0;
  Status s = fs_->OpenFile(LogFileName(number), OpenFlags::Create(), IoContext::WalWrite(), &fd);
  if (!s.ok()) {
    SetBackgroundError(s);
    return s;
  }
  if (wal_) wal_->Close();
  wal_ = std::make_unique<WalWriter>(fs_, fd);
  imm_ = mem_;
  imm_log_number_ = log_number_;
  log_number_ = number;
  mem_ = std::make_shared<Memtable>();
  bg_cv_.notify_all();
  return Status::OK();
}

Status LsmStore::Flush() {
  TIERKV_RETURN_IF_ERROR(WriteImpl(nullptr, true));
  std::unique_lock lock(mu_);
  while (imm_ && bg_error_.ok() && !shutting_down_) done_cv_.wait(lock);
  return bg_error_;
}

// Flush.

Status LsmStore::WriteLevel0(const Memtable& mem, FileMetaPtr* meta) {
  meta->reset();
  if (mem.empty()) return Status::OK();
  uint64_t number = next_file_.fetch_add(1);
  std::unique_ptr<TableBuilder> b;
  TIERKV_RETURN_IF_ERROR(TableBuilder::Create(fs_, TableFileName(number), IoContext::Flush(), &b));
  auto it = mem.NewIterator();
  for (it->SeekToFirst(); it->Valid(); it->Next()) {
    TIERKV_RETURN_IF_ERROR(b->Add(it->key(), it->seq(), it->type(), it->value()));
  }
  TableProperties props;
  TIERKV_RETURN_IF_ERROR(b->Finish(&props));
  auto m = NewMeta(number);
  m->size = props.file_size;
  m->entries = props.entries;
  m->smallest = props.smallest;
  m->largest = props.largest;
  *meta = std::move(m);
  std::lock_guard sl(stats_mu_);
  ++stats_.flushes;
  stats_.flush_bytes += props.file_size;
  return Status::OK();
}

void LsmStore::FlushLoop() {
  std::unique_lock lock(mu_);
  while (true) {
    bg_cv_.wait(lock, [&] { return shutting_down_ || (imm_ && bg_error_.ok()); });
    if (shutting_down_) break;
    MemtablePtr imm = imm_;
    uint64_t old_log = imm_log_number_;
    uint64_t live_log = log_number_;
    lock.unlock();

    FileMetaPtr meta;
    Status s = WriteLevel0(*imm, &meta);
    if (s.ok()) {
      VersionEdit edit;
      if (meta) edit.added.push_back({0, meta});
      edit.log_number = live_log;
      s = LogAndApply(&edit);
      if (!s.ok() && meta) fs_->Unlink(TableFileName(meta->number));
    }
    if (s.ok()) fs_->Unlink(LogFileName(old_log));

    lock.lock();
    if (s.ok()) {
      imm_.reset();
    } else {
      SetBackgroundError(s);
    }
    done_cv_.notify_all();
    bg_cv_.notify_all();
  }
}

// Compaction.

bool LsmStore::NeedsCompaction() const {
  const Version& v = *current_;
  if (v.NumFiles(0) >= config_.l0_compaction_trigger) return true;
  for (int l = 1; l + 1 < v.levels(); ++l) {
    if (v.LevelBytes(l) > config_.LevelTarget(l)) return true;
  }
  return false;
}

std::unique_ptr<LsmStore::Compaction> LsmStore::PickCompaction() {
  if (!bg_error_.ok() || !config_.auto_compaction) return nullptr;
  const Version& v = *current_;
  std::vector<std::pair<double, int>> scored;
  scored.emplace_back(double(v.NumFiles(0)) / config_.l0_compaction_trigger, 0);
  for (int l = 1; l + 1 < v.levels(); ++l) {
    scored.emplace_back(double(v.LevelBytes(l)) / double(config_.LevelTarget(l)), l);
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (const auto& [score, level] : scored) {
    if (score < 1.0 || (level > 0 && score <= 1.0)) break;
    if (auto c = PickLevel(level)) return c;
  }
  return nullptr;
}

std::unique_ptr<LsmStore::Compaction> LsmStore::PickLevel(int level) {
  const Version& v = *current_;
  const auto& files = v.files[level];
  if (files.empty() || level + 1 >= v.levels()) return nullptr;
  auto c = std::make_unique<Compaction>();
  c->level = level;
  auto any_busy = [&](const std::vector<FileMetaPtr>& fs) {
    return std::any_of(fs.begin(), fs.end(),
                       [&](const FileMetaPtr& f) { return busy_.count(f->number) > 0; });
  };
  std::string lo, hi;
  if (level == 0) {
    if (any_busy(files)) return nullptr;
    c->inputs[0] = files;
    lo = files[0]->smallest;
    hi = files[0]->largest;
    for (const auto& f : files) {
      lo = std::min(lo, f->smallest);
      hi = std::max(hi, f->largest);
    }
    c->inputs[1] = v.Overlapping(1, lo, hi);
    if (any_busy(c->inputs[1])) return nullptr;
  } else {
    // Round-robin over the key space, starting after the last victim.
    const std::string& ptr = compact_pointer_[level];
    size_t start = 0;
    while (start < files.size() && !ptr.empty() && files[start]->smallest <= ptr) ++start;
    bool found = false;
    for (size_t k = 0; k < files.size() && !found; ++k) {
      const FileMetaPtr& f = files[(start + k) % files.size()];
      if (busy_.count(f->number)) continue;
      auto next = v.Overlapping(level + 1, f->smallest, f->largest);
      if (any_busy(next)) continue;
      c->inputs[0] = {f};
      c->inputs[1] = std::move(next);
      lo = f->smallest;
      hi = f->largest;
      found = true;
    }
    if (!found) return nullptr;
    compact_pointer_[level] = hi;
  }
  for (const auto& f : c->inputs[1]) {
    lo = std::min(lo, f->smallest);
    hi = std::max(hi, f->largest);
  }
  c->trivial = c->inputs[1].empty() && c->inputs[0].size() == 1;
  c->bottommost = true;
  for (int l = level + 2; l < v.levels() && c->bottommost; ++l) {
    if (!v.Overlapping(l, lo, hi).empty()) c->bottommost = false;
  }
  for (const auto& in : c->inputs) {
    for (const auto& f : in) busy_.insert(f->number);
  }
  return c;
}

void LsmStore::ReleaseCompaction(const Compaction& c) {
  for (const auto& in : c.inputs) {
    for (const auto& f : in) busy_.erase(f->number);
  }
}

Status LsmStore::RunTrivialMove(Compaction& c) {
  const FileMetaPtr& f = c.inputs[0][0];
  VersionEdit edit;
  edit.deleted.emplace_back(c.level, f->number);
  edit.added.push_back({c.level + 1, f});
  TIERKV_RETURN_IF_ERROR(LogAndApply(&edit));
  // Moves the file when the new level lives on another tier.
  Status s = fs_->SetLevel(TableFileName(f->number), c.level + 1);
  if (!s.ok() && !s.IsNotFound()) return s;
  std::lock_guard sl(stats_mu_);
  ++stats_.trivial_moves;
  ++stats_.compactions_into[c.level + 1];
  return Status::OK();
}

Status LsmStore::RunCompaction(Compaction& c) {
  if (c.trivial) return RunTrivialMove(c);
  const int out_level = c.level + 1;
  const IoContext ctx = IoContext::Compaction(c.level, out_level);
  ContextScope scope(ctx);

  std::vector<std::unique_ptr<InternalIterator>> children;
  for (const auto& f : c.inputs[0]) {
    TablePtr t;
    TIERKV_RETURN_IF_ERROR(GetTable(*f, &t));
    children.push_back(t->NewIterator(false));
  }
  if (!c.inputs[1].empty()) {
    children.push_back(std::make_unique<LevelIterator>(this, c.inputs[1], false));
  }
  auto merged = NewMergingIterator(std::move(children));

  std::vector<FileMetaPtr> outputs;
  std::unique_ptr<TableBuilder> builder;
  uint64_t number = 0;
  uint64_t written = 0;
  Status s;
  auto finish = [&] {
    TableProperties p;
    s = builder->Finish(&p);
    if (s.ok()) {
      auto m = NewMeta(number);
      m->size = p.file_size;
      m->entries = p.entries;
      m->smallest = p.smallest;
      m->largest = p.largest;
      written += p.file_size;
      outputs.push_back(std::move(m));
    }
    builder.reset();
  };
  for (merged->SeekToFirst(); merged->Valid(); merged->Next()) {
    if (stopping_.load(std::memory_order_relaxed)) {
      s = Status::Aborted("store is closing");
      break;
    }
    if (merged->type() == ValueType::kDeletion && c.bottommost) continue;
    if (!builder) {
      number = next_file_.fetch_add(1);
      s = TableBuilder::Create(fs_, TableFileName(number), ctx, &builder);
      if (!s.ok()) break;
    }
    s = builder->Add(merged->key(), merged->seq(), merged->type(), merged->value());
    if (!s.ok()) break;
    if (builder->EstimatedSize() >= config_.TargetFileBytes()) {
      finish();
      if (!s.ok()) break;
    }
  }
  if (s.ok()) s = merged->status();
  if (s.ok() && builder) finish();
  if (!s.ok()) {
    if (builder) builder->Abandon();
    for (const auto& o : outputs) fs_->Unlink(TableFileName(o->number));
    return s;
  }

  VersionEdit edit;
  for (int w = 0; w < 2; ++w) {
    for (const auto& f : c.inputs[w]) edit.deleted.emplace_back(c.level + w, f->number);
  }
  for (const auto& o : outputs) edit.added.push_back({out_level, o});
  s = LogAndApply(&edit);
  if (!s.ok()) {
    for (const auto& o : outputs) fs_->Unlink(TableFileName(o->number));
    return s;
  }
  std::lock_guard sl(stats_mu_);
  ++stats_.compactions;
  ++stats_.compactions_into[out_level];
  stats_.compaction_bytes += written;
  return Status::OK();
}

void LsmStore::CompactionLoop() {
  std::unique_lock lock(mu_);
  while (true) {
    std::unique_ptr<Compaction> c;
    bg_cv_.wait(lock, [&] {
      if (shutting_down_) return true;
      c = PickCompaction();
      return c != nullptr;
    });
    if (shutting_down_) {
      if (c) ReleaseCompaction(*c);
      break;
    }
    ++running_compactions_;
    lock.unlock();
    Status s = RunCompaction(*c);
    lock.lock();
    --running_compactions_;
    ReleaseCompaction(*c);
    if (!s.ok() && !s.IsAborted()) SetBackgroundError(s);
    done_cv_.notify_all();
    bg_cv_.notify_all();
  }
}

Status LsmStore::WaitForIdle(std::chrono::milliseconds timeout) {
  auto deadline = Clock::now() + timeout;
  std::unique_lock lock(mu_);
  while (true) {
    if (!bg_error_.ok()) return bg_error_;
    if (shutting_down_) return Status::Aborted("store is closing");
    if (!imm_ && running_compactions_ == 0 &&
        (!config_.auto_compaction || !NeedsCompaction())) {
      return Status::OK();
    }
    if (Clock::now() >= deadline) return Status::Busy("background work still pending");
    done_cv_.wait_for(lock, std::chrono::milliseconds(20));
  }
}

Status LsmStore::CompactAll() {
  TIERKV_RETURN_IF_ERROR(Flush());
  for (int level = 0; level + 1 < config_.levels; ++level) {
    while (true) {
      std::unique_ptr<Compaction> c;
      {
        std::unique_lock lock(mu_);
        if (!bg_error_.ok()) return bg_error_;
        if (current_->NumFiles(level) == 0) break;
        c = PickLevel(level);
        if (!c) {
          done_cv_.wait_for(lock, std::chrono::milliseconds(20));
          continue;
        }
        ++running_compactions_;
      }
      Status s = RunCompaction(*c);
      std::lock_guard lock(mu_);
      --running_compactions_;
      ReleaseCompaction(*c);
      done_cv_.notify_all();
      bg_cv_.notify_all();
      if (!s.ok()) return s;
    }
  }
  return Status::OK();
}

// Reads.

Status LsmStore::GetTable(const FileMeta& f, TablePtr* out) {
  {
    std::lock_guard lock(tables_mu_);
    auto it = tables_.find(f.number);
    if (it != tables_.end()) {
      *out = it->second;
      return Status::OK();
    }
  }
  TablePtr t;
  TIERKV_RETURN_IF_ERROR(Table::Open(fs_, TableFileName(f.number), f.number, block_cache_.get(), &t));
  std::lock_guard lock(tables_mu_);
  auto [it, inserted] = tables_.emplace(f.number, t);
  *out = it->second;
  return Status::OK();
}

void LsmStore::EvictTable(uint64_t number) {
  TablePtr victim;
  std::lock_guard lock(tables_mu_);
  auto it = tables_.find(number);
  if (it == tables_.end()) return;
  victim = std::move(it->second);
  tables_.erase(it);
}

Status LsmStore::Get(std::string_view key, std::string* value) {
  MemtablePtr mem, imm;
  std::shared_ptr<const Version> v;
  {
    std::lock_guard lock(mu_);
    mem = mem_;
    imm = imm_;
    v = current_;
  }
  bool deleted = false;
  auto result = [&] { return deleted ? Status::NotFound(key) : Status::OK(); };
  if (mem->Get(key, value, &deleted)) return result();
  if (imm && imm->Get(key, value, &deleted)) return result();

  ContextScope scope(IoContext::Foreground());
  auto probe = [&](const FileMeta& f, bool* found) {
    TablePtr t;
    TIERKV_RETURN_IF_ERROR(GetTable(f, &t));
    return t->Get(key, found, value, &deleted);
  };
  for (const auto& f : v->files[0]) {
    if (!f->Overlaps(key, key)) continue;
    bool found = false;
    TIERKV_RETURN_IF_ERROR(probe(*f, &found));
    if (found) return result();
  }
  for (int l = 1; l < v->levels(); ++l) {
    FileMetaPtr f = v->FileFor(l, key);
    if (!f) continue;
    bool found = false;
    TIERKV_RETURN_IF_ERROR(probe(*f, &found));
    if (found) return result();
  }
  return Status::NotFound(key);
}

Status LsmStore::Scan(std::string_view start, size_t count,
                      std::vector<std::pair<std::string, std::string>>* out) {
  out->clear();
  if (count == 0) return Status::OK();
  MemtablePtr mem, imm;
  std::shared_ptr<const Version> v;
  {
    std::lock_guard lock(mu_);
    mem = mem_;
    imm = imm_;
    v = current_;
  }
  ContextScope scope(IoContext::Foreground());
  std::vector<std::unique_ptr<InternalIterator>> children;
  children.push_back(std::make_unique<VectorIterator>(mem->CopyFrom(start, count)));
  if (imm) children.push_back(std::make_unique<VectorIterator>(imm->CopyFrom(start, count)));
  for (const auto& f : v->files[0]) {
    TablePtr t;
    TIERKV_RETURN_IF_ERROR(GetTable(*f, &t));
    children.push_back(t->NewIterator(true));
  }
  for (int l = 1; l < v->levels(); ++l) {
    if (v->files[l].empty()) continue;
    children.push_back(std::make_unique<LevelIterator>(this, v->files[l], true));
  }
  auto it = NewMergingIterator(std::move(children));
  for (it->Seek(start); it->Valid() && out->size() < count; it->Next()) {
    if (it->type() == ValueType::kValue) out->emplace_back(it->key(), it->value());
  }
  return it->status();
}

// Introspection.

std::vector<uint64_t> LsmStore::LevelBytes() const {
  auto v = current();
  std::vector<uint64_t> out;
  for (int l = 0; l < v->levels(); ++l) out.push_back(v->LevelBytes(l));
  return out;
}

std::vector<int> LsmStore::LevelFiles() const {
  auto v = current();
  std::vector<int> out;
  for (int l = 0; l < v->levels(); ++l) out.push_back(v->NumFiles(l));
  return out;
}

std::vector<LiveFile> LsmStore::LiveFiles() const {
  auto v = current();
  std::vector<LiveFile> out;
  for (int l = 0; l < v->levels(); ++l) {
    for (const auto& f : v->files[l]) out.push_back({TableFileName(f->number), l, f->size});
  }
  return out;
}

Status LsmStore::CheckInvariants() const { return current()->CheckInvariants(); }

LsmStats LsmStore::stats() const {
  std::lock_guard lock(stats_mu_);
  LsmStats s = stats_;
  s.stall_micros = stall_micros();
  return s;
}

}  // namespace tierkv::lsm
