#include <gtest/gtest.h>

#include <atomic>
#include <map>
#include <random>
#include <thread>

#include "test_util.hpp"
#include "tierkv/namespace.hpp"

namespace tierkv {
namespace {

using testing::TempDir;

class NamespaceTest : public ::testing::Test {
 protected:
  void SetUp() override { Reopen(); }

  void Reopen() {
    ns_.reset();
    devices_.clear();
    for (int i = 0; i < 3; ++i) {
      auto d = std::make_unique<TierDevice>(
          MakePresetProfile(DevicePreset::kZeroDelay, i, 64 << 20,
                            dir_ / ("t" + std::to_string(i))),
          DelayModelOptions{}, faults_);
      ASSERT_TRUE(d->Open().ok());
      devices_.push_back(std::move(d));
    }
    std::vector<TierDevice*> raw;
    for (auto& d : devices_) raw.push_back(d.get());
    ns_ = std::make_unique<FileNamespace>(raw);
  }

  ReplicaPtr MakeFile(int tier, const std::string& locator, const std::string& content) {
    std::shared_ptr<DeviceFile> f;
    EXPECT_TRUE(devices_[tier]->Create(locator, &f).ok());
    if (!content.empty()) EXPECT_TRUE(devices_[tier]->Write(*f, 0, content).ok());
    return std::make_shared<Replica>(devices_[tier].get(), locator, f);
  }

  uint64_t Register(const std::string& name, int tier, std::optional<int> level,
                    const std::string& content = "abc") {
    uint64_t fd = 0;
    EXPECT_TRUE(ns_->Register(name, ClassifyFileName(name), level,
                              MakeFile(tier, "data/" + name, content), &fd)
                    .ok());
    return fd;
  }

  bool PhysicallyExists(int tier, const std::string& locator) {
    return std::filesystem::exists(dir_ / ("t" + std::to_string(tier)) / locator);
  }

  TempDir dir_;
  std::shared_ptr<FaultInjector> faults_ = std::make_shared<FaultInjector>();
  std::vector<std::unique_ptr<TierDevice>> devices_;
  std::unique_ptr<FileNamespace> ns_;
};

TEST(FileClassTest, ClassifiesByName) {
  EXPECT_EQ(ClassifyFileName("000012.sst"), FileClass::kSst);
  EXPECT_EQ(ClassifyFileName("000003.log"), FileClass::kWal);
  EXPECT_EQ(ClassifyFileName("MANIFEST-000001"), FileClass::kManifest);
  EXPECT_EQ(ClassifyFileName("CURRENT"), FileClass::kOther);
}

TEST_F(NamespaceTest, RegisterIssuesFreshFd) {
  uint64_t a = Register("000012.sst", 0, 2);
  uint64_t b = Register("000013.sst", 0, 2);
  EXPECT_NE(a, b);
  RecordPtr r;
  ASSERT_TRUE(ns_->Lookup("000012.sst", &r).ok());
  FileInfo info = Describe(*r);
  EXPECT_EQ(info.level, 2);
  EXPECT_EQ(info.tier_id, 0);
  EXPECT_EQ(info.physical_locator, "data/000012.sst");
  EXPECT_EQ(info.file_class, FileClass::kSst);
}

TEST_F(NamespaceTest, RegisterWalWithoutLevel) {
  Register("000001.log", 0, std::nullopt);
  RecordPtr r;
  ASSERT_TRUE(ns_->Lookup("000001.log", &r).ok());
  EXPECT_FALSE(Describe(*r).level.has_value());
}

TEST_F(NamespaceTest, DuplicateRegisterConflicts) {
  Register("a.sst", 0, 1);
  uint64_t fd;
  auto replica = MakeFile(1, "data/a.sst", "x");
  EXPECT_TRUE(ns_->Register("a.sst", FileClass::kSst, 1, replica, &fd).IsConflict());
}

TEST_F(NamespaceTest, ConcurrentRegisterExactlyOneWins) {
  for (int round = 0; round < 20; ++round) {
    std::string name = "race" + std::to_string(round) + ".sst";
    std::vector<ReplicaPtr> replicas;
    for (int t = 0; t < 3; ++t) replicas.push_back(MakeFile(t, "data/" + name, "r"));
    std::atomic<int> wins{0}, conflicts{0};
    std::vector<std::thread> threads;
    for (int t = 0; t < 3; ++t) {
      threads.emplace_back([&, t] {
        uint64_t fd;
        Status s = ns_->Register(name, FileClass::kSst, 1, replicas[t], &fd);
        if (s.ok()) ++wins;
        if (s.IsConflict()) ++conflicts;
      });
    }
    for (auto& th : threads) th.join();
    EXPECT_EQ(wins.load(), 1);
    EXPECT_EQ(conflicts.load(), 2);
  }
}

TEST_F(NamespaceTest, ResolvePrefersCachedCopy) {
  uint64_t fd = Register("f.sst", 1, 3);
  ReplicaPtr r;
  ASSERT_TRUE(ns_->Resolve(fd, false, &r).ok());
  EXPECT_EQ(r->tier_id(), 1);
  ReplicaPtr home = r;
  ASSERT_TRUE(ns_->SetCachedCopy("f.sst", home, MakeFile(0, "cache/f.sst", "abc")).ok());
  ASSERT_TRUE(ns_->Resolve(fd, false, &r).ok());
  EXPECT_EQ(r->tier_id(), 0);
  ASSERT_TRUE(ns_->InvalidateCachedCopy("f.sst").ok());
  ASSERT_TRUE(ns_->Resolve(fd, false, &r).ok());
  EXPECT_EQ(r->tier_id(), 1);
  EXPECT_FALSE(PhysicallyExists(0, "cache/f.sst"));
}

TEST_F(NamespaceTest, CachedCopyMustBeFaster) {
  Register("f.sst", 1, 3);
  ReplicaPtr home;
  ASSERT_TRUE(ns_->ResolvePath("f.sst", &home).ok());
  EXPECT_FALSE(ns_->SetCachedCopy("f.sst", home, MakeFile(2, "cache/f.sst", "abc")).ok());
  EXPECT_FALSE(PhysicallyExists(2, "cache/f.sst"));
}

TEST_F(NamespaceTest, ForegroundResolveBumpsHotness) {
  uint64_t fd = Register("f.sst", 0, 1);
  ReplicaPtr r;
  for (int i = 0; i < 5; ++i) ASSERT_TRUE(ns_->Resolve(fd, true, &r).ok());
  ASSERT_TRUE(ns_->Resolve(fd, false, &r).ok());
  RecordPtr rec;
  ASSERT_TRUE(ns_->Lookup("f.sst", &rec).ok());
  EXPECT_DOUBLE_EQ(Describe(*rec).access_count, 5.0);
}

TEST_F(NamespaceTest, StaleFdIsNotFound) {
  ReplicaPtr r;
  EXPECT_TRUE(ns_->Resolve(999999, false, &r).IsNotFound());
  uint64_t fd = Register("f.sst", 0, 1);
  ASSERT_TRUE(ns_->Unlink("f.sst").ok());
  EXPECT_TRUE(ns_->Resolve(fd, false, &r).IsNotFound());
}

TEST_F(NamespaceTest, RelocateMovesReads) {
  uint64_t fd = Register("l4.sst", 1, 4, "payload");
  bool skipped = true;
  ASSERT_TRUE(ns_->Relocate("l4.sst", MakeFile(2, "data/l4.sst", "payload"), &skipped).ok());
  EXPECT_FALSE(skipped);
  ReplicaPtr r;
  ASSERT_TRUE(ns_->Resolve(fd, false, &r).ok());
  EXPECT_EQ(r->tier_id(), 2);
  EXPECT_FALSE(PhysicallyExists(1, "data/l4.sst"));
}

TEST_F(NamespaceTest, RelocateDefersDeleteWhileReaderHoldsReplica) {
  uint64_t fd = Register("f.sst", 1, 4, "payload");
  ReplicaPtr reader;
  ASSERT_TRUE(ns_->Resolve(fd, false, &reader).ok());
  bool skipped;
  ASSERT_TRUE(ns_->Relocate("f.sst", MakeFile(2, "data/f.sst", "payload"), &skipped).ok());
  // Reader count is one (ours): the old file must still be there and readable.
  EXPECT_TRUE(PhysicallyExists(1, "data/f.sst"));
  std::string out;
  ASSERT_TRUE(reader->device().Read(reader->file(), 0, 7, &out).ok());
  EXPECT_EQ(out, "payload");
  reader.reset();
  EXPECT_FALSE(PhysicallyExists(1, "data/f.sst"));
}

TEST_F(NamespaceTest, RelocateInvalidatesCachedCopy) {
  Register("f.sst", 1, 3);
  ReplicaPtr home;
  ASSERT_TRUE(ns_->ResolvePath("f.sst", &home).ok());
  ASSERT_TRUE(ns_->SetCachedCopy("f.sst", home, MakeFile(0, "cache/f.sst", "abc")).ok());
  home.reset();
  bool skipped;
  ASSERT_TRUE(ns_->Relocate("f.sst", MakeFile(2, "data/f.sst", "abc"), &skipped).ok());
  RecordPtr rec;
  ASSERT_TRUE(ns_->Lookup("f.sst", &rec).ok());
  EXPECT_FALSE(Describe(*rec).cached_copy_tier.has_value());
  EXPECT_FALSE(PhysicallyExists(0, "cache/f.sst"));
}

TEST_F(NamespaceTest, RelocateOfDeletedFileIsSkipped) {
  Register("f.sst", 1, 3);
  ASSERT_TRUE(ns_->Unlink("f.sst").ok());
  bool skipped = false;
  ASSERT_TRUE(ns_->Relocate("f.sst", MakeFile(2, "data/f.sst", "abc"), &skipped).ok());
  EXPECT_TRUE(skipped);
  EXPECT_FALSE(PhysicallyExists(2, "data/f.sst"));
}

TEST_F(NamespaceTest, UnlinkRemovesHomeAndCopy) {
  Register("f.sst", 1, 3);
  ReplicaPtr home;
  ASSERT_TRUE(ns_->ResolvePath("f.sst", &home).ok());
  ASSERT_TRUE(ns_->SetCachedCopy("f.sst", home, MakeFile(0, "cache/f.sst", "abc")).ok());
  home.reset();
  ASSERT_TRUE(ns_->Unlink("f.sst").ok());
  EXPECT_FALSE(PhysicallyExists(1, "data/f.sst"));
  EXPECT_FALSE(PhysicallyExists(0, "cache/f.sst"));
  EXPECT_TRUE(ns_->Unlink("f.sst").IsNotFound());
  EXPECT_TRUE(ns_->Unlink("unknown").IsNotFound());
}

TEST_F(NamespaceTest, FdsAreNeverReused) {
  std::set<uint64_t> seen;
  for (int i = 0; i < 50; ++i) {
    std::string name = "f" + std::to_string(i) + ".sst";
    uint64_t fd = Register(name, 0, 1);
    EXPECT_TRUE(seen.insert(fd).second);
    ASSERT_TRUE(ns_->Close(fd).ok());
    ASSERT_TRUE(ns_->Unlink(name).ok());
  }
  EXPECT_EQ(ns_->open_fds(), 0u);
}

TEST_F(NamespaceTest, RecoveryDropsCacheAndKeepsDurableState) {
  Register("a.sst", 0, 1, "aaaa");
  Register("b.sst", 1, 3, "bbbbbb");
  Register("c.log", 0, std::nullopt, "cc");
  ReplicaPtr home;
  ASSERT_TRUE(ns_->ResolvePath("b.sst", &home).ok());
  ASSERT_TRUE(ns_->SetCachedCopy("b.sst", home, MakeFile(0, "cache/b.sst", "bbbbbb")).ok());
  home.reset();
  ASSERT_TRUE(ns_->SetLevel("a.sst", 2).ok());
  // Snapshot before the crash, with cached tiers cleared: the oracle.
  std::map<std::string, std::tuple<int, std::optional<int>, uint64_t>> before;
  for (const auto& info : ns_->Snapshot()) {
    before[info.logical_path] = {info.tier_id, info.level, info.size_bytes};
  }
  // Leftovers of an interrupted copy and an interrupted migration.
  MakeFile(0, "cache/partial.sst", "pp");
  MakeFile(2, "data/a.sst.tmp", "aa");

  faults_->Crash();
  ns_.reset();
  faults_ = std::make_shared<FaultInjector>();
  Reopen();
  RecoveryReport rep;
  ASSERT_TRUE(ns_->Recover(&rep).ok());
  EXPECT_EQ(rep.registered, 3u);
  EXPECT_EQ(ns_->size(), 3u);
  EXPECT_EQ(rep.cache_residues_deleted, 2u);
  EXPECT_EQ(rep.temporaries_deleted, 1u);
  std::map<std::string, std::tuple<int, std::optional<int>, uint64_t>> after;
  for (const auto& info : ns_->Snapshot()) {
    after[info.logical_path] = {info.tier_id, info.level, info.size_bytes};
    EXPECT_FALSE(info.cached_copy_tier.has_value());
  }
  EXPECT_EQ(before, after);
  EXPECT_FALSE(PhysicallyExists(0, "cache/partial.sst"));
  EXPECT_FALSE(PhysicallyExists(0, "cache/b.sst"));
}

TEST_F(NamespaceTest, RecoveryKeepsFasterDuplicate) {
  Register("d.sst", 1, 4, "dddd");
  MakeFile(2, "data/d.sst", "dddd");
  ns_.reset();
  Reopen();
  RecoveryReport rep;
  ASSERT_TRUE(ns_->Recover(&rep).ok());
  EXPECT_EQ(rep.duplicates_deleted, 1u);
  ReplicaPtr r;
  ASSERT_TRUE(ns_->ResolvePath("d.sst", &r).ok());
  EXPECT_EQ(r->tier_id(), 1);
  EXPECT_FALSE(PhysicallyExists(2, "data/d.sst"));
}

TEST_F(NamespaceTest, SidecarToleratesTornLine) {
  Register("a.sst", 0, 1);
  ASSERT_TRUE(devices_[0]->AppendMetadata(LevelSidecar::kFileName, "a.sst 5").ok());
  std::map<std::string, LevelSidecar::Entry> entries;
  ASSERT_TRUE(LevelSidecar::Load(*devices_[0], &entries).ok());
  ASSERT_TRUE(entries.count("a.sst"));
  EXPECT_EQ(entries["a.sst"].level, 1);
}

// Sequential model: path -> (tier, has_cache). Random single-threaded
// histories must agree with it step by step.
TEST_F(NamespaceTest, MatchesSequentialModel) {
  std::mt19937 rng(42);
  std::map<std::string, std::pair<int, bool>> model;
  int serial = 0;
  for (int step = 0; step < 400; ++step) {
    int op = rng() % 5;
    std::string name = "m" + std::to_string(rng() % 8) + ".sst";
    bool live = model.count(name) > 0;
    switch (op) {
      case 0: {
        int tier = 1 + rng() % 2;
        uint64_t fd;
        auto replica = MakeFile(tier, "data/x" + std::to_string(serial++), "z");
        Status s = ns_->Register(name, FileClass::kSst, 1, replica, &fd);
        EXPECT_EQ(s.ok(), !live);
        if (s.ok()) {
          model[name] = {tier, false};
          ns_->Close(fd);
        } else {
          replica->Retire();
        }
        break;
      }
      case 1: {
        Status s = ns_->Unlink(name);
        EXPECT_EQ(s.ok(), live);
        model.erase(name);
        break;
      }
      case 2: {
        if (!live || model[name].first == 2) break;
        bool skipped;
        ASSERT_TRUE(
            ns_->Relocate(name, MakeFile(2, "data/x" + std::to_string(serial++), "z"), &skipped)
                .ok());
        model[name] = {2, false};
        break;
      }
      case 3: {
        if (!live) break;
        ReplicaPtr home;
        ASSERT_TRUE(ns_->ResolvePath(name, &home).ok());
        if (model[name].second) break;
        ASSERT_TRUE(ns_->SetCachedCopy(name, home,
                                       MakeFile(0, "cache/x" + std::to_string(serial++), "z"))
                        .ok());
        model[name].second = true;
        break;
      }
      case 4: {
        if (!live) break;
        ASSERT_TRUE(ns_->InvalidateCachedCopy(name).ok());
        model[name].second = false;
        break;
      }
    }
    for (const auto& [path, st] : model) {
      ReplicaPtr r;
      ASSERT_TRUE(ns_->ResolvePath(path, &r).ok());
      EXPECT_EQ(r->tier_id(), st.second ? 0 : st.first);
    }
    EXPECT_EQ(ns_->size(), model.size());
  }
}

TEST_F(NamespaceTest, ConcurrentReadersNeverSeeDeletedFile) {
  Register("hot.sst", 1, 2, std::string(8192, 'h'));
  uint64_t fd;
  ASSERT_TRUE(ns_->Open("hot.sst", &fd).ok());
  std::atomic<bool> stop{false};
  std::atomic<int> failures{0};
  std::vector<std::thread> readers;
  for (int i = 0; i < 4; ++i) {
    readers.emplace_back([&] {
      std::string out;
      while (!stop.load()) {
        ReplicaPtr r;
        if (!ns_->Resolve(fd, true, &r).ok()) continue;
        if (!r->device().Read(r->file(), 0, 8192, &out).ok() || out != std::string(8192, 'h')) {
          ++failures;
        }
      }
    });
  }
  for (int i = 0; i < 200; ++i) {
    int tier = 1 + (i % 2);
    bool skipped;
    ASSERT_TRUE(ns_->Relocate("hot.sst",
                              MakeFile(tier, "data/hot" + std::to_string(i) + ".sst",
                                       std::string(8192, 'h')),
                              &skipped)
                    .ok());
  }
  stop.store(true);
  for (auto& t : readers) t.join();
  EXPECT_EQ(failures.load(), 0);
}

}  // namespace
}  // namespace tierkv
