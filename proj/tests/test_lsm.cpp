#include <gtest/gtest.h>

#include <atomic>
#include <fstream>
#include <map>
#include <random>
#include <thread>

#include "test_util.hpp"
#include "tierkv/lsm/store.hpp"
#include "tierkv/profiler.hpp"

namespace tierkv::lsm {
namespace {

using tierkv::testing::TempDir;
using tierkv::testing::ZeroDelayOptions;

std::string Key(uint64_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "key%012llu", static_cast<unsigned long long>(i));
  return buf;
}

std::string Value(uint64_t i, uint64_t version, size_t n = 100) {
  std::string v = std::to_string(i) + ":" + std::to_string(version) + ":";
  v.resize(n, static_cast<char>('a' + (i + version) % 26));
  return v;
}

// Facade plus store over scratch tiers; reopening keeps the directory.
class Harness {
 public:
  explicit Harness(std::vector<uint64_t> caps = {256ull << 20, 256ull << 20})
      : caps_(std::move(caps)) {}
  ~Harness() { CloseAll(); }

  TierFsOptions Options() {
    TierFsOptions o = ZeroDelayOptions(dir_, caps_);
    o.background = false;
    o.faults = faults;
    if (scheme) o.scheme = *scheme;
    o.log_writer_events = log_events;
    return o;
  }

  Status OpenFs() {
    store.reset();
    fs.reset();
    return TierFs::Open(Options(), &fs);
  }

  Status OpenStore() { return LsmStore::Open(fs.get(), config, &store); }

  Status OpenAll() {
    TIERKV_RETURN_IF_ERROR(OpenFs());
    return OpenStore();
  }

  // Drops the store and facade without a clean shutdown of the store files.
  void CloseAll() {
    if (store) store->Close();
    store.reset();
    fs.reset();
  }

  Status Reopen(std::shared_ptr<FaultInjector> fresh = nullptr) {
    CloseAll();
    faults = std::move(fresh);
    return OpenAll();
  }

  const TempDir& dir() const { return dir_; }

  LsmConfig config = SmallConfig();
  std::optional<PlacementScheme> scheme;
  std::shared_ptr<FaultInjector> faults;
  bool log_events = false;
  std::unique_ptr<TierFs> fs;
  std::unique_ptr<LsmStore> store;

  static LsmConfig SmallConfig() {
    LsmConfig c;
    c.memtable_bytes = 64 << 10;
    c.block_cache_bytes = 1 << 20;
    c.compaction_threads = 2;
    c.levels = 5;
    c.slowdown_delay = std::chrono::microseconds(200);
    return c;
  }

 private:
  TempDir dir_;
  std::vector<uint64_t> caps_;
};

FileInfo InfoOf(TierFs& fs, const std::string& name) {
  RecordPtr r;
  EXPECT_TRUE(fs.ns().Lookup(name, &r).ok()) << name;
  return r ? Describe(*r) : FileInfo{};
}

void ExpectMatches(LsmStore& store, const std::map<std::string, std::string>& ref,
                   uint64_t key_space) {
  for (uint64_t i = 0; i < key_space; ++i) {
    std::string k = Key(i), v;
    Status s = store.Get(k, &v);
    auto it = ref.find(k);
    if (it == ref.end()) {
      ASSERT_TRUE(s.IsNotFound()) << k << " " << s.ToString();
    } else {
      ASSERT_TRUE(s.ok()) << k << " " << s.ToString();
      ASSERT_EQ(v, it->second) << k;
    }
  }
}

// Encoding pieces.

TEST(LsmFormat, VarintRoundTrip) {
  std::vector<uint64_t> values = {0, 1, 127, 128, 300, 1ull << 32, UINT64_MAX};
  std::string buf;
  for (uint64_t v : values) PutVarint64(&buf, v);
  std::string_view in(buf);
  for (uint64_t v : values) {
    uint64_t got = 0;
    ASSERT_TRUE(GetVarint64(&in, &got));
    EXPECT_EQ(got, v);
  }
  EXPECT_TRUE(in.empty());
  uint64_t x;
  std::string_view cut("\x80", 1);
  EXPECT_FALSE(GetVarint64(&cut, &x));
}

TEST(LsmFormat, CrcMatchesStandardCheckValue) {
  EXPECT_EQ(Crc32("123456789"), 0xCBF43926u);
}

TEST(LsmFormat, FileNames) {
  uint64_t n = 0;
  EXPECT_EQ(TableFileName(12), "000012.sst");
  EXPECT_EQ(ParseStoreFileName("000012.sst", &n), StoreFile::kTable);
  EXPECT_EQ(n, 12u);
  EXPECT_EQ(ParseStoreFileName(LogFileName(7), &n), StoreFile::kLog);
  EXPECT_EQ(n, 7u);
  EXPECT_EQ(ParseStoreFileName(ManifestFileName(4), &n), StoreFile::kManifest);
  EXPECT_EQ(n, 4u);
  EXPECT_EQ(ParseStoreFileName("CURRENT", &n), StoreFile::kCurrent);
  EXPECT_EQ(ParseStoreFileName("CURRENT.tmp", &n), StoreFile::kTemp);
  EXPECT_EQ(ParseStoreFileName("notes.txt", &n), StoreFile::kOther);
}

TEST(LsmMemtable, KeepsNewestVersionAndCountsBytes) {
  Memtable m;
  m.Add(1, ValueType::kValue, "a", "1234");
  EXPECT_EQ(m.bytes(), 1 + 4 + Memtable::kEntryOverhead);
  m.Add(2, ValueType::kValue, "a", "12");
  EXPECT_EQ(m.bytes(), 1 + 2 + Memtable::kEntryOverhead);
  m.Add(3, ValueType::kDeletion, "b", "");
  std::string v;
  bool deleted = false;
  ASSERT_TRUE(m.Get("a", &v, &deleted));
  EXPECT_FALSE(deleted);
  EXPECT_EQ(v, "12");
  ASSERT_TRUE(m.Get("b", &v, &deleted));
  EXPECT_TRUE(deleted);
  EXPECT_FALSE(m.Get("c", &v, &deleted));
  EXPECT_EQ(m.entries(), 2u);
  EXPECT_EQ(m.max_seq(), 3u);
}

TEST(LsmIterator, MergeKeepsHighestSequence) {
  std::vector<std::unique_ptr<InternalIterator>> kids;
  kids.push_back(std::make_unique<VectorIterator>(std::vector<OwnedEntry>{
      {"a", "old", 1, ValueType::kValue}, {"c", "c1", 2, ValueType::kValue}}));
  kids.push_back(std::make_unique<VectorIterator>(std::vector<OwnedEntry>{
      {"a", "new", 5, ValueType::kValue}, {"b", "", 6, ValueType::kDeletion}}));
  auto it = NewMergingIterator(std::move(kids));
  std::vector<std::string> seen;
  for (it->SeekToFirst(); it->Valid(); it->Next()) {
    seen.push_back(std::string(it->key()) + "=" + std::string(it->value()) +
                   (it->type() == ValueType::kDeletion ? "!" : ""));
  }
  EXPECT_EQ(seen, (std::vector<std::string>{"a=new", "b=!", "c=c1"}));
  it->Seek("b");
  ASSERT_TRUE(it->Valid());
  EXPECT_EQ(it->key(), "b");
}

TEST(LsmVersion, EditRoundTrip) {
  VersionEdit e;
  e.log_number = 9;
  e.next_file = 20;
  e.last_sequence = 12345;
  e.deleted.emplace_back(1, 7);
  auto m = std::make_shared<FileMeta>();
  m->number = 11;
  m->size = 4096;
  m->entries = 30;
  m->smallest = "aa";
  m->largest = "zz";
  e.added.push_back({2, m});
  VersionEdit d;
  ASSERT_TRUE(VersionEdit::Decode(e.Encode(), &d).ok());
  EXPECT_EQ(d.log_number, 9u);
  EXPECT_EQ(d.next_file, 20u);
  EXPECT_EQ(d.last_sequence, 12345u);
  ASSERT_EQ(d.deleted.size(), 1u);
  EXPECT_EQ(d.deleted[0], (std::pair<int, uint64_t>(1, 7)));
  ASSERT_EQ(d.added.size(), 1u);
  EXPECT_EQ(d.added[0].level, 2);
  EXPECT_EQ(d.added[0].meta->largest, "zz");
  EXPECT_EQ(d.added[0].meta->entries, 30u);
  std::string bad = e.Encode();
  bad.pop_back();
  EXPECT_TRUE(VersionEdit::Decode(bad, &d).IsCorruption());
}

TEST(LsmVersion, InvariantsCatchOverlap) {
  Version v(3);
  auto f = [](uint64_t n, std::string lo, std::string hi) {
    auto m = std::make_shared<FileMeta>();
    m->number = n;
    m->smallest = lo;
    m->largest = hi;
    return m;
  };
  v.files[1] = {f(1, "a", "c"), f(2, "d", "f")};
  EXPECT_TRUE(v.CheckInvariants().ok());
  EXPECT_EQ(v.FileFor(1, "e")->number, 2u);
  EXPECT_EQ(v.FileFor(1, "cc"), nullptr);
  v.files[1].push_back(f(3, "f", "g"));
  EXPECT_TRUE(v.CheckInvariants().IsCorruption());
}

// Tables and logs through the facade.

class LsmFiles : public ::testing::Test {
 protected:
  void SetUp() override { ASSERT_TRUE(h.OpenFs().ok()); }
  Harness h;
};

TEST_F(LsmFiles, TableRoundTrip) {
  std::unique_ptr<TableBuilder> b;
  ASSERT_TRUE(TableBuilder::Create(h.fs.get(), "000005.sst", IoContext::Flush(), &b).ok());
  const int n = 5000;
  for (int i = 0; i < n; ++i) {
    ValueType t = i % 7 == 0 ? ValueType::kDeletion : ValueType::kValue;
    ASSERT_TRUE(b->Add(Key(i), i + 1, t, t == ValueType::kValue ? Value(i, 0) : "").ok());
  }
  EXPECT_FALSE(b->Add(Key(3), 1, ValueType::kValue, "x").ok());
  TableProperties p;
  ASSERT_TRUE(b->Finish(&p).ok());
  EXPECT_EQ(p.entries, uint64_t(n));
  EXPECT_EQ(p.smallest, Key(0));
  EXPECT_EQ(p.largest, Key(n - 1));
  uint64_t size = 0;
  ASSERT_TRUE(h.fs->FileSize("000005.sst", &size).ok());
  EXPECT_EQ(size, p.file_size);

  BlockCache cache(1 << 20);
  TablePtr t;
  ASSERT_TRUE(Table::Open(h.fs.get(), "000005.sst", 5, &cache, &t).ok());
  EXPECT_GT(t->block_count(), 100u);
  for (int i = 0; i < n; i += 37) {
    bool found = false, deleted = false;
    std::string v;
    ASSERT_TRUE(t->Get(Key(i), &found, &v, &deleted).ok());
    ASSERT_TRUE(found);
    EXPECT_EQ(deleted, i % 7 == 0);
    if (!deleted) EXPECT_EQ(v, Value(i, 0));
  }
  bool found = true, deleted = false;
  std::string v;
  ASSERT_TRUE(t->Get("key~", &found, &v, &deleted).ok());
  EXPECT_FALSE(found);

  auto it = t->NewIterator(false);
  int count = 0;
  for (it->SeekToFirst(); it->Valid(); it->Next()) {
    ASSERT_EQ(it->key(), Key(count));
    ASSERT_EQ(it->seq(), uint64_t(count + 1));
    ++count;
  }
  EXPECT_TRUE(it->status().ok());
  EXPECT_EQ(count, n);
  it->Seek(Key(4000));
  ASSERT_TRUE(it->Valid());
  EXPECT_EQ(it->key(), Key(4000));
}

TEST_F(LsmFiles, CompactionIteratorLeavesBlockCacheAlone) {
  std::unique_ptr<TableBuilder> b;
  ASSERT_TRUE(TableBuilder::Create(h.fs.get(), "000006.sst", IoContext::Flush(), &b).ok());
  for (int i = 0; i < 1000; ++i) ASSERT_TRUE(b->Add(Key(i), 1, ValueType::kValue, Value(i, 0)).ok());
  TableProperties p;
  ASSERT_TRUE(b->Finish(&p).ok());
  BlockCache cache(1 << 20);
  TablePtr t;
  ASSERT_TRUE(Table::Open(h.fs.get(), "000006.sst", 6, &cache, &t).ok());
  auto it = t->NewIterator(false);
  for (it->SeekToFirst(); it->Valid(); it->Next()) {
  }
  EXPECT_EQ(cache.usage(), 0u);
  auto filled = t->NewIterator(true);
  for (filled->SeekToFirst(); filled->Valid(); filled->Next()) {
  }
  EXPECT_GT(cache.usage(), 0u);
}

TEST_F(LsmFiles, CorruptBlockIsReported) {
  std::unique_ptr<TableBuilder> b;
  ASSERT_TRUE(TableBuilder::Create(h.fs.get(), "000007.sst", IoContext::Flush(), &b).ok());
  for (int i = 0; i < 500; ++i) ASSERT_TRUE(b->Add(Key(i), 1, ValueType::kValue, Value(i, 0)).ok());
  TableProperties p;
  ASSERT_TRUE(b->Finish(&p).ok());
  FileInfo info = InfoOf(*h.fs, "000007.sst");
  auto path = h.dir() / ("tier" + std::to_string(info.tier_id)) / info.physical_locator;
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    ASSERT_TRUE(f.good()) << path;
    f.seekp(20);
    f.put('\x7f');
  }
  TablePtr t;
  ASSERT_TRUE(Table::Open(h.fs.get(), "000007.sst", 7, nullptr, &t).ok());
  bool found = false, deleted = false;
  std::string v;
  EXPECT_TRUE(t->Get(Key(0), &found, &v, &deleted).IsCorruption());
}

TEST_F(LsmFiles, WalStopsAtTornTail) {
  uint64_t fd = 0;
  ASSERT_TRUE(h.fs->OpenFile("000003.log", OpenFlags::Create(), IoContext::WalWrite(), &fd).ok());
  {
    WalWriter w(h.fs.get(), fd);
    for (int i = 0; i < 3; ++i) {
      WriteBatch b;
      b.Put(Key(i), Value(i, 0));
      b.Delete(Key(i + 100));
      ASSERT_TRUE(w.AddRecord(b.Encode(10 * i + 1)).ok());
    }
    std::string partial;
    PutFixed32(&partial, 0xdeadbeef);
    PutFixed32(&partial, 1000);
    partial += "short";
    ASSERT_TRUE(h.fs->Append(fd, partial).ok());
  }
  WalReadResult r;
  ASSERT_TRUE(ReadWal(h.fs.get(), "000003.log", &r).ok());
  EXPECT_TRUE(r.torn_tail);
  ASSERT_EQ(r.records.size(), 3u);
  std::vector<std::pair<SequenceNumber, std::string>> ops;
  ASSERT_TRUE(WriteBatch::Iterate(r.records[2], [&](SequenceNumber s, ValueType t,
                                                    std::string_view k, std::string_view) {
                 ops.emplace_back(s, std::string(k) + (t == ValueType::kDeletion ? "!" : ""));
               }).ok());
  EXPECT_EQ(ops, (std::vector<std::pair<SequenceNumber, std::string>>{
                     {21, Key(2)}, {22, Key(102) + "!"}}));
}

// The store.

class LsmStoreTest : public ::testing::Test {
 protected:
  void Open() { ASSERT_TRUE(h.OpenAll().ok()); }
  Harness h;
};

TEST_F(LsmStoreTest, PutGetDelete) {
  Open();
  ASSERT_TRUE(h.store->Put("a", "1").ok());
  ASSERT_TRUE(h.store->Put("b", "2").ok());
  ASSERT_TRUE(h.store->Put("a", "3").ok());
  ASSERT_TRUE(h.store->Delete("b").ok());
  std::string v;
  ASSERT_TRUE(h.store->Get("a", &v).ok());
  EXPECT_EQ(v, "3");
  EXPECT_TRUE(h.store->Get("b", &v).IsNotFound());
  EXPECT_TRUE(h.store->Get("zz", &v).IsNotFound());
  EXPECT_EQ(h.store->last_sequence(), 4u);
}

TEST_F(LsmStoreTest, NewestLevelWins) {
  h.config.auto_compaction = false;
  Open();
  ASSERT_TRUE(h.store->Put("k", "deep").ok());
  ASSERT_TRUE(h.store->Put("j", "gone").ok());
  ASSERT_TRUE(h.store->CompactAll().ok());
  ASSERT_EQ(h.store->LevelFiles().back(), 1);
  ASSERT_TRUE(h.store->Put("k", "shallow").ok());
  ASSERT_TRUE(h.store->Delete("j").ok());
  ASSERT_TRUE(h.store->Flush().ok());
  ASSERT_EQ(h.store->LevelFiles()[0], 1);
  std::string v;
  ASSERT_TRUE(h.store->Get("k", &v).ok());
  EXPECT_EQ(v, "shallow");
  EXPECT_TRUE(h.store->Get("j", &v).IsNotFound());
  std::vector<std::pair<std::string, std::string>> rows;
  ASSERT_TRUE(h.store->Scan("", 10, &rows).ok());
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].second, "shallow");
}

TEST_F(LsmStoreTest, EachSealedMemtableFlushesOnce) {
  h.config.auto_compaction = false;
  h.config.l0_slowdown_trigger = 100;
  h.config.l0_stop_trigger = 100;
  Open();
  const int seals = 6;
  for (int s = 0; s < seals; ++s) {
    for (int i = 0; i < 50; ++i) ASSERT_TRUE(h.store->Put(Key(s * 50 + i), Value(i, s)).ok());
    ASSERT_TRUE(h.store->Flush().ok());
  }
  EXPECT_EQ(h.store->stats().flushes, uint64_t(seals));
  EXPECT_EQ(h.store->LevelFiles()[0], seals);
  // An empty memtable is not sealed.
  ASSERT_TRUE(h.store->Flush().ok());
  EXPECT_EQ(h.store->stats().flushes, uint64_t(seals));
}

TEST_F(LsmStoreTest, MemtableFillSealsAutomatically) {
  h.config.auto_compaction = false;
  h.config.l0_slowdown_trigger = 1000;
  h.config.l0_stop_trigger = 1000;
  Open();
  // 64 KiB memtable, ~1.1 KiB entries: about 57 entries per table.
  for (int i = 0; i < 1000; ++i) ASSERT_TRUE(h.store->Put(Key(i), Value(i, 0, 1000)).ok());
  ASSERT_TRUE(h.store->WaitForIdle().ok());
  int l0 = h.store->LevelFiles()[0];
  EXPECT_GE(l0, 15);
  EXPECT_LE(l0, 18);
}

TEST_F(LsmStoreTest, ForegroundGetTouchesOnlyTheFileItReads) {
  h.config.auto_compaction = false;
  h.config.block_cache_bytes = 0;
  h.config.levels = 4;
  Open();
  for (int i = 0; i < 200; ++i) ASSERT_TRUE(h.store->Put(Key(i), Value(i, 0)).ok());
  ASSERT_TRUE(h.store->CompactAll().ok());
  auto files = h.store->LiveFiles();
  ASSERT_EQ(files.size(), 1u);
  ASSERT_EQ(files[0].level, 3);
  // Unrelated newer data in L0 that does not overlap the probed key.
  for (int i = 1000; i < 1010; ++i) ASSERT_TRUE(h.store->Put(Key(i), Value(i, 0)).ok());
  ASSERT_TRUE(h.store->Flush().ok());
  std::string l0_name;
  for (const auto& f : h.store->LiveFiles()) {
    if (f.level == 0) l0_name = f.name;
  }
  ASSERT_FALSE(l0_name.empty());

  double before = InfoOf(*h.fs, files[0].name).access_count;
  double l0_before = InfoOf(*h.fs, l0_name).access_count;
  std::string v;
  ASSERT_TRUE(h.store->Get(Key(42), &v).ok());
  EXPECT_EQ(v, Value(42, 0));
  EXPECT_EQ(InfoOf(*h.fs, files[0].name).access_count, before + 1);
  EXPECT_EQ(InfoOf(*h.fs, l0_name).access_count, l0_before);
  ASSERT_TRUE(h.store->Get(Key(43), &v).ok());
  EXPECT_EQ(InfoOf(*h.fs, files[0].name).access_count, before + 2);
}

TEST_F(LsmStoreTest, BackgroundReadsDoNotCountAsHeat) {
  h.config.auto_compaction = false;
  h.config.levels = 4;
  Open();
  for (int i = 0; i < 300; ++i) ASSERT_TRUE(h.store->Put(Key(i), Value(i, 0)).ok());
  ASSERT_TRUE(h.store->Flush().ok());
  for (int i = 0; i < 300; i += 2) ASSERT_TRUE(h.store->Put(Key(i), Value(i, 1)).ok());
  ASSERT_TRUE(h.store->CompactAll().ok());
  for (const auto& f : h.store->LiveFiles()) {
    EXPECT_EQ(InfoOf(*h.fs, f.name).access_count, 0) << f.name;
  }
}

TEST_F(LsmStoreTest, ScanMatchesSortedUnion) {
  h.config.levels = 5;
  Open();
  std::map<std::string, std::string> ref;
  std::mt19937_64 rng(7);
  for (int round = 0; round < 8; ++round) {
    for (int i = 0; i < 400; ++i) {
      uint64_t k = rng() % 1500;
      if (rng() % 5 == 0) {
        ASSERT_TRUE(h.store->Delete(Key(k)).ok());
        ref.erase(Key(k));
      } else {
        std::string v = Value(k, round);
        ASSERT_TRUE(h.store->Put(Key(k), v).ok());
        ref[Key(k)] = v;
      }
    }
    if (round % 3 == 2) ASSERT_TRUE(h.store->Flush().ok());
  }
  for (const std::string start : {std::string(""), Key(0), Key(700), Key(1499), Key(5000)}) {
    std::vector<std::pair<std::string, std::string>> rows;
    ASSERT_TRUE(h.store->Scan(start, 50, &rows).ok());
    std::vector<std::pair<std::string, std::string>> want;
    for (auto it = ref.lower_bound(start); it != ref.end() && want.size() < 50; ++it) {
      want.emplace_back(it->first, it->second);
    }
    EXPECT_EQ(rows, want) << "start=" << start;
  }
  std::vector<std::pair<std::string, std::string>> all;
  ASSERT_TRUE(h.store->Scan("", ref.size() + 10, &all).ok());
  EXPECT_EQ(all.size(), ref.size());
}

TEST_F(LsmStoreTest, FilesMovedIntoASlowLevelMigrate) {
  PlacementScheme s;
  s.wal_tier = 0;
  s.level_tier = {0, 0, 0, 1};
  h.scheme = s;
  h.config.levels = 4;
  h.config.auto_compaction = false;
  Open();
  for (int i = 0; i < 2000; ++i) ASSERT_TRUE(h.store->Put(Key(i), Value(i, 0)).ok());
  ASSERT_TRUE(h.store->Flush().ok());
  ASSERT_TRUE(h.store->CompactAll().ok());
  ASSERT_TRUE(h.store->CheckInvariants().ok());
  auto files = h.store->LiveFiles();
  ASSERT_FALSE(files.empty());
  // L2 to L3 had nothing to merge with, so the files moved without a rewrite
  // and wait for the migration workers.
  EXPECT_EQ(h.fs->cache().queued_migration_tasks(), files.size());
  EXPECT_EQ(h.fs->cache().DrainQueues(), files.size());
  for (const auto& f : files) {
    EXPECT_EQ(f.level, 3);
    FileInfo info = InfoOf(*h.fs, f.name);
    EXPECT_EQ(info.tier_id, 1) << f.name;
    EXPECT_EQ(info.level, 3);
  }
  for (int i = 0; i < 2000; i += 101) {
    std::string v;
    ASSERT_TRUE(h.store->Get(Key(i), &v).ok());
    EXPECT_EQ(v, Value(i, 0));
  }
}

TEST_F(LsmStoreTest, MergingCompactionWritesDirectlyToSlowTier) {
  PlacementScheme s;
  s.wal_tier = 0;
  s.level_tier = {0, 0, 0, 1};
  h.scheme = s;
  h.config.levels = 4;
  h.config.auto_compaction = false;
  Open();
  for (int i = 0; i < 500; ++i) ASSERT_TRUE(h.store->Put(Key(i), Value(i, 0)).ok());
  ASSERT_TRUE(h.store->CompactAll().ok());
  h.fs->cache().DrainQueues();
  for (int i = 0; i < 500; i += 3) ASSERT_TRUE(h.store->Put(Key(i), Value(i, 1)).ok());
  ASSERT_TRUE(h.store->Flush().ok());
  uint64_t slow_writes = h.fs->writes(1);
  uint64_t merges = h.store->stats().compactions_into[3];
  ASSERT_TRUE(h.store->CompactAll().ok());
  EXPECT_GT(h.store->stats().compactions_into[3], merges);
  EXPECT_GT(h.fs->writes(1), slow_writes);
  EXPECT_EQ(h.fs->cache().queued_migration_tasks(), 0u);
  for (const auto& f : h.store->LiveFiles()) EXPECT_EQ(InfoOf(*h.fs, f.name).tier_id, 1);
  std::string v;
  ASSERT_TRUE(h.store->Get(Key(3), &v).ok());
  EXPECT_EQ(v, Value(3, 1));
  ASSERT_TRUE(h.store->Get(Key(4), &v).ok());
  EXPECT_EQ(v, Value(4, 0));
}

TEST_F(LsmStoreTest, TrivialMovesKeepTheFileAndFollowTheScheme) {
  PlacementScheme s;
  s.wal_tier = 0;
  s.level_tier = {0, 0, 1};
  h.scheme = s;
  h.config.levels = 3;
  h.config.auto_compaction = false;
  Open();
  for (int i = 0; i < 100; ++i) ASSERT_TRUE(h.store->Put(Key(i), Value(i, 0)).ok());
  ASSERT_TRUE(h.store->Flush().ok());
  std::string name = h.store->LiveFiles().at(0).name;
  ASSERT_TRUE(h.store->CompactAll().ok());
  auto files = h.store->LiveFiles();
  ASSERT_EQ(files.size(), 1u);
  EXPECT_EQ(files[0].name, name);
  EXPECT_EQ(files[0].level, 2);
  EXPECT_EQ(h.store->stats().trivial_moves, 2u);
  EXPECT_EQ(h.store->stats().compactions, 0u);
  // The move to L2 crosses to tier 1 once the migration runs.
  EXPECT_GE(h.fs->cache().DrainQueues(), 1u);
  FileInfo info = InfoOf(*h.fs, name);
  EXPECT_EQ(info.level, 2);
  EXPECT_EQ(info.tier_id, 1);
  std::string v;
  ASSERT_TRUE(h.store->Get(Key(9), &v).ok());
  EXPECT_EQ(v, Value(9, 0));
}

TEST_F(LsmStoreTest, EveryFileIsCreatedWithItsOperation) {
  Open();
  std::mt19937 rng(3);
  for (int i = 0; i < 6000; ++i) {
    ASSERT_TRUE(h.store->Put(Key(rng() % 3000), Value(i, 0)).ok());
  }
  ASSERT_TRUE(h.store->WaitForIdle().ok());
  ASSERT_TRUE(h.store->CompactAll().ok());
  EXPECT_EQ(h.fs->creates(IoContext::Kind::kUnknown), 0u);
  EXPECT_GT(h.fs->creates(IoContext::Kind::kWalWrite), 1u);
  EXPECT_GT(h.fs->creates(IoContext::Kind::kFlush), 1u);
  EXPECT_GT(h.fs->creates(IoContext::Kind::kCompaction), 0u);
  ASSERT_TRUE(h.Reopen().ok());
  EXPECT_EQ(h.fs->creates(IoContext::Kind::kUnknown), 0u);
}

TEST_F(LsmStoreTest, LevelsStayDisjointUnderConcurrentCompaction) {
  h.config.compaction_threads = 4;
  h.config.fanout = 4;
  Open();
  std::mt19937_64 rng(11);
  for (int i = 0; i < 30000; ++i) {
    ASSERT_TRUE(h.store->Put(Key(rng() % 20000), Value(i, 0, 60)).ok());
    if (i % 5000 == 0) ASSERT_TRUE(h.store->CheckInvariants().ok());
  }
  ASSERT_TRUE(h.store->WaitForIdle().ok());
  ASSERT_TRUE(h.store->CheckInvariants().ok());
  auto files = h.store->LevelFiles();
  int deeper = 0;
  for (size_t l = 2; l < files.size(); ++l) deeper += files[l];
  EXPECT_GT(deeper, 0);
}

TEST_F(LsmStoreTest, SlowdownDelaysWritesWhenLevel0Piles) {
  h.config.auto_compaction = false;
  h.config.l0_compaction_trigger = 1;
  h.config.l0_slowdown_trigger = 2;
  h.config.l0_stop_trigger = 100;
  h.config.slowdown_delay = std::chrono::milliseconds(2);
  Open();
  for (int s = 0; s < 2; ++s) {
    ASSERT_TRUE(h.store->Put(Key(s), "v").ok());
    ASSERT_TRUE(h.store->Flush().ok());
  }
  EXPECT_EQ(h.store->stall_micros(), 0u);
  auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < 10; ++i) ASSERT_TRUE(h.store->Put(Key(100 + i), "v").ok());
  auto spent = std::chrono::steady_clock::now() - t0;
  EXPECT_GE(spent, std::chrono::milliseconds(20));
  EXPECT_GE(h.store->stall_micros(), 20000u);
  EXPECT_EQ(h.store->stats().stall_micros, h.store->stall_micros());
}

TEST_F(LsmStoreTest, StopTriggerCapsLevel0) {
  h.config.l0_compaction_trigger = 2;
  h.config.l0_slowdown_trigger = 3;
  h.config.l0_stop_trigger = 4;
  h.config.compaction_threads = 1;
  Open();
  std::atomic<bool> done{false};
  std::atomic<int> max_l0{0};
  std::thread watcher([&] {
    while (!done) {
      int l0 = h.store->LevelFiles()[0];
      if (l0 > max_l0) max_l0 = l0;
      std::this_thread::sleep_for(std::chrono::microseconds(200));
    }
  });
  for (int i = 0; i < 20000; ++i) ASSERT_TRUE(h.store->Put(Key(i % 7000), Value(i, 0)).ok());
  done = true;
  watcher.join();
  EXPECT_LE(max_l0.load(), 4);
  EXPECT_GT(h.store->stall_micros(), 0u);
  ASSERT_TRUE(h.store->WaitForIdle().ok());
}

TEST_F(LsmStoreTest, ConcurrentWritersShareGroups) {
  Open();
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < 2000; ++i) {
        ASSERT_TRUE(h.store->Put(Key(t * 10000 + i), Value(i, t)).ok());
      }
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_EQ(h.store->last_sequence(), 16000u);
  EXPECT_LE(h.store->stats().write_groups, 16000u);
  for (int t = 0; t < 8; ++t) {
    std::string v;
    ASSERT_TRUE(h.store->Get(Key(t * 10000 + 1999), &v).ok());
    EXPECT_EQ(v, Value(1999, t));
  }
}

TEST_F(LsmStoreTest, CloseKeepsMemtableInTheLog) {
  Open();
  ASSERT_TRUE(h.store->Put("x", "1").ok());
  ASSERT_TRUE(h.store->Delete("y").ok());
  ASSERT_TRUE(h.Reopen().ok());
  std::string v;
  ASSERT_TRUE(h.store->Get("x", &v).ok());
  EXPECT_EQ(v, "1");
  EXPECT_EQ(h.store->last_sequence(), 2u);
  EXPECT_EQ(h.store->LevelFiles()[0], 1);
  ASSERT_TRUE(h.store->Put("z", "2").ok());
  EXPECT_EQ(h.store->last_sequence(), 3u);
}

TEST_F(LsmStoreTest, RecoveryRemovesLeftovers) {
  Open();
  for (int i = 0; i < 3000; ++i) ASSERT_TRUE(h.store->Put(Key(i), Value(i, 0)).ok());
  ASSERT_TRUE(h.store->WaitForIdle().ok());
  h.CloseAll();
  ASSERT_TRUE(h.OpenFs().ok());
  for (const char* junk : {"999990.sst", "CURRENT.tmp", "MANIFEST-999991"}) {
    uint64_t fd = 0;
    IoContext ctx = std::string(junk).ends_with(".sst") ? IoContext::Flush() : IoContext::WalWrite();
    ASSERT_TRUE(h.fs->OpenFile(junk, OpenFlags::Create(), ctx, &fd).ok());
    ASSERT_TRUE(h.fs->Append(fd, std::string("junk")).ok());
    ASSERT_TRUE(h.fs->Close(fd).ok());
  }
  ASSERT_TRUE(h.OpenStore().ok());
  EXPECT_FALSE(h.fs->Exists("999990.sst"));
  EXPECT_FALSE(h.fs->Exists("CURRENT.tmp"));
  EXPECT_FALSE(h.fs->Exists("MANIFEST-999991"));
  std::vector<std::string> names;
  ASSERT_TRUE(h.fs->List(&names).ok());
  int manifests = 0, logs = 0, tables = 0;
  for (const auto& n : names) {
    uint64_t num;
    switch (ParseStoreFileName(n, &num)) {
      case StoreFile::kManifest: ++manifests; break;
      case StoreFile::kLog: ++logs; break;
      case StoreFile::kTable: ++tables; break;
      default: break;
    }
  }
  EXPECT_EQ(manifests, 1);
  EXPECT_EQ(logs, 1);
  EXPECT_EQ(tables, static_cast<int>(h.store->LiveFiles().size()));
  std::string v;
  ASSERT_TRUE(h.store->Get(Key(2999), &v).ok());
  EXPECT_EQ(v, Value(2999, 0));
}

TEST_F(LsmStoreTest, MissingLiveTableFailsRecovery) {
  h.config.auto_compaction = false;
  Open();
  ASSERT_TRUE(h.store->Put("a", "1").ok());
  ASSERT_TRUE(h.store->Flush().ok());
  std::string name = h.store->LiveFiles().at(0).name;
  h.CloseAll();
  ASSERT_TRUE(h.OpenFs().ok());
  ASSERT_TRUE(h.fs->Unlink(name).ok());
  EXPECT_TRUE(h.OpenStore().IsCorruption());
}

TEST_F(LsmStoreTest, ObsoleteTablesDisappearAfterCompaction) {
  h.config.auto_compaction = false;
  Open();
  for (int s = 0; s < 4; ++s) {
    for (int i = 0; i < 100; ++i) ASSERT_TRUE(h.store->Put(Key(i), Value(i, s)).ok());
    ASSERT_TRUE(h.store->Flush().ok());
  }
  std::vector<std::string> before;
  for (const auto& f : h.store->LiveFiles()) before.push_back(f.name);
  // An open scan pins the old version; its files stay readable.
  std::vector<std::pair<std::string, std::string>> rows;
  ASSERT_TRUE(h.store->CompactAll().ok());
  for (const auto& n : before) EXPECT_FALSE(h.fs->Exists(n)) << n;
  ASSERT_TRUE(h.store->Scan("", 1000, &rows).ok());
  EXPECT_EQ(rows.size(), 100u);
  EXPECT_EQ(rows[5].second, Value(5, 3));
}

TEST_F(LsmStoreTest, ConfigKeysApply) {
  KvText kv;
  ASSERT_TRUE(KvText::Parse("lsm.memtable_bytes=1048576\nlsm.fanout=8\nlsm.threads=3\n"
                            "lsm.strict_durability=true\nlsm.slowdown_us=50\n",
                            &kv).ok());
  LsmConfig c;
  ASSERT_TRUE(c.Apply(kv).ok());
  EXPECT_EQ(c.memtable_bytes, 1u << 20);
  EXPECT_EQ(c.fanout, 8);
  EXPECT_EQ(c.compaction_threads, 3);
  EXPECT_TRUE(c.strict_durability);
  EXPECT_EQ(c.slowdown_delay.count(), 50);
  EXPECT_EQ(c.BaseLevelBytes(), 4u << 20);
  EXPECT_EQ(c.LevelTarget(2), 32u << 20);
  KvText bad;
  ASSERT_TRUE(KvText::Parse("lsm.l0_stop=2\n", &bad).ok());
  EXPECT_FALSE(c.Apply(bad).ok());
}

// Reference-map oracle over many flush and compaction cycles, with a clean
// reopen and a crash in the middle.
TEST_F(LsmStoreTest, RandomOpsMatchReferenceAcrossCrash) {
  h.faults = std::make_shared<FaultInjector>();
  h.config.fanout = 4;
  Open();
  std::map<std::string, std::string> ref;
  std::mt19937_64 rng(2024);
  const uint64_t kKeys = 5000;
  auto step = [&](int i) {
    uint64_t k = rng() % kKeys;
    uint64_t dice = rng() % 100;
    if (dice < 15) {
      ASSERT_TRUE(h.store->Delete(Key(k)).ok());
      ref.erase(Key(k));
    } else if (dice < 20) {
      WriteBatch b;
      std::vector<std::pair<std::string, std::string>> puts;
      for (int j = 0; j < 5; ++j) {
        std::string kk = Key((k + j * 17) % kKeys);
        puts.emplace_back(kk, Value(k, i + j, 40));
        b.Put(kk, puts.back().second);
      }
      ASSERT_TRUE(h.store->Write(b).ok());
      for (auto& [kk, vv] : puts) ref[kk] = vv;
    } else {
      std::string v = Value(k, i, 20 + rng() % 200);
      ASSERT_TRUE(h.store->Put(Key(k), v).ok());
      ref[Key(k)] = v;
    }
  };
  for (int i = 0; i < 50000; ++i) {
    step(i);
    if (HasFatalFailure()) return;
    if (i % 10000 == 9999) ExpectMatches(*h.store, ref, kKeys);
  }
  ASSERT_TRUE(h.store->WaitForIdle().ok());
  ASSERT_TRUE(h.store->CheckInvariants().ok());
  auto st = h.store->stats();
  EXPECT_GE(st.flushes, 3u);
  EXPECT_GE(st.compactions + st.trivial_moves, 3u);

  ASSERT_TRUE(h.Reopen(std::make_shared<FaultInjector>()).ok());
  ExpectMatches(*h.store, ref, kKeys);

  for (int i = 50000; i < 100000; ++i) {
    step(i);
    if (HasFatalFailure()) return;
  }
  // Crash with background work in flight: on-disk state freezes at once.
  h.faults->Crash();
  h.store->Close();
  ASSERT_TRUE(h.Reopen(std::make_shared<FaultInjector>()).ok());
  ASSERT_TRUE(h.store->CheckInvariants().ok());
  ExpectMatches(*h.store, ref, kKeys);
}

class LsmCrashPoint : public LsmStoreTest, public ::testing::WithParamInterface<int> {};

// Crashes after N device mutations during a flush or a compaction. Every
// acknowledged write must survive recovery.
TEST_P(LsmCrashPoint, FlushAndCompactionAreAtomic) {
  h.faults = std::make_shared<FaultInjector>();
  h.config.auto_compaction = false;
  h.config.memtable_bytes = 1 << 20;
  Open();
  std::map<std::string, std::string> ref;
  for (int round = 0; round < 3; ++round) {
    for (int i = 0; i < 300; ++i) {
      std::string v = Value(i, round, 150);
      ASSERT_TRUE(h.store->Put(Key(i * 3 + round), v).ok());
      ref[Key(i * 3 + round)] = v;
    }
    if (round < 2) ASSERT_TRUE(h.store->Flush().ok());
  }
  h.faults->CrashAfterMutations(GetParam());
  Status s = h.store->CompactAll();
  (void)s;
  h.store->Close();
  ASSERT_TRUE(h.Reopen(std::make_shared<FaultInjector>()).ok());
  ASSERT_TRUE(h.store->CheckInvariants().ok());
  ExpectMatches(*h.store, ref, 900);
  // The recovered store keeps working.
  ASSERT_TRUE(h.store->Put(Key(1), "after").ok());
  ASSERT_TRUE(h.store->CompactAll().ok());
  std::string v;
  ASSERT_TRUE(h.store->Get(Key(1), &v).ok());
  EXPECT_EQ(v, "after");
}

INSTANTIATE_TEST_SUITE_P(Points, LsmCrashPoint,
                         ::testing::Values(1, 2, 3, 5, 8, 13, 21, 34, 55, 89, 144));

TEST_F(LsmStoreTest, SampledDemandTracksWriterEvents) {
  h.log_events = true;
  h.config.memtable_bytes = 32 << 10;
  h.config.fanout = 4;
  Open();
  DemandSampler sampler(h.fs.get(), std::chrono::milliseconds(1), h.config.levels);
  auto begin = std::chrono::steady_clock::now();
  sampler.Start();
  std::mt19937_64 rng(5);
  auto until = begin + std::chrono::milliseconds(1500);
  int i = 0;
  while (std::chrono::steady_clock::now() < until) {
    ASSERT_TRUE(h.store->Put(Key(rng() % 20000), Value(i++, 0, 200)).ok());
  }
  ConcurrencyDemand sampled = sampler.Stop();
  auto end = std::chrono::steady_clock::now();
  ConcurrencyDemand exact = DemandFromEvents(h.fs->TakeWriterEvents(), begin, end);
  ASSERT_GT(sampled.samples, 500u);
  EXPECT_NEAR(sampled.wal, exact.wal, 0.05 * std::max(exact.wal, 1.0));
  EXPECT_NEAR(sampled.wal, 1.0, 0.05);
  double sampled_total = sampled.flush, exact_total = exact.flush;
  for (int l = 1; l < h.config.levels; ++l) {
    sampled_total += sampled.Level(l);
    exact_total += exact.Level(l);
  }
  EXPECT_NEAR(sampled_total, exact_total, 0.05 * std::max(exact_total, 1.0));
  ASSERT_TRUE(h.store->WaitForIdle().ok());
}

}  // namespace
}  // namespace tierkv::lsm
