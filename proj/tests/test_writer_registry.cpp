#include <gtest/gtest.h>

#include <atomic>
#include <random>
#include <thread>

#include "tierkv/writer_registry.hpp"

namespace tierkv {
namespace {

TEST(WriterRegistryTest, CacheBudgetDropsToZeroUnderFullLoad) {
  WriterRegistry reg({4});
  reg.Acquire(0, WriterSource::kWal);
  reg.Acquire(0, WriterSource::kFlush);
  reg.Acquire(0, WriterSource::kCompaction);
  reg.Acquire(0, WriterSource::kCompaction);
  EXPECT_EQ(reg.CacheWorkerBudget(0), 0);
  EXPECT_FALSE(reg.TryAcquireThrottled(0, WriterSource::kCacheCopy));
  // A compaction completing frees one slot.
  reg.Release(0, WriterSource::kCompaction);
  EXPECT_EQ(reg.CacheWorkerBudget(0), 1);
  EXPECT_TRUE(reg.TryAcquireThrottled(0, WriterSource::kCacheCopy));
  EXPECT_FALSE(reg.TryAcquireThrottled(0, WriterSource::kCacheCopy));
}

TEST(WriterRegistryTest, IdleTierGetsFullBudget) {
  WriterRegistry reg({4, 16});
  EXPECT_EQ(reg.CacheWorkerBudget(0), 4);
  EXPECT_EQ(reg.MigrationWorkerBudget(1), 16);
  reg.Acquire(1, WriterSource::kCompaction);
  reg.Acquire(1, WriterSource::kCompaction);
  EXPECT_EQ(reg.MigrationWorkerBudget(1), 14);
}

TEST(WriterRegistryTest, CountsBalance) {
  WriterRegistry reg({8});
  reg.Acquire(0, WriterSource::kWal);
  ASSERT_TRUE(reg.TryAcquireThrottled(0, WriterSource::kMigration));
  EXPECT_EQ(reg.Total(0), 2);
  reg.ReleaseThrottled(0, WriterSource::kMigration);
  reg.Release(0, WriterSource::kWal);
  EXPECT_EQ(reg.Total(0), 0);
}

TEST(WriterRegistryTest, ForcedIgnoresCapAndIsFlagged) {
  WriterRegistry reg({1});
  reg.Acquire(0, WriterSource::kCompaction);
  reg.AcquireForced(0);
  auto s = reg.SampleTier(0);
  EXPECT_EQ(s.forced, 1);
  EXPECT_TRUE(s.Violates());
  reg.ReleaseForced(0);
  EXPECT_FALSE(reg.SampleTier(0).Violates());
}

TEST(WriterRegistryTest, PriorityWriterWaitsForThrottledChunk) {
  WriterRegistry reg({2});
  reg.Acquire(0, WriterSource::kWal);
  ASSERT_TRUE(reg.TryAcquireThrottled(0, WriterSource::kCacheCopy));
  std::atomic<bool> acquired{false};
  std::thread t([&] {
    reg.Acquire(0, WriterSource::kCompaction);
    acquired = true;
  });
  std::this_thread::sleep_for(std::chrono::milliseconds(50));
  EXPECT_FALSE(acquired.load());
  EXPECT_FALSE(reg.SampleTier(0).Violates());
  reg.ReleaseThrottled(0, WriterSource::kCacheCopy);
  t.join();
  EXPECT_TRUE(acquired.load());
  EXPECT_FALSE(reg.SampleTier(0).Violates());
}

// Random mix of priority and throttled writers; a sampler checks the bound
// at every observation.
TEST(WriterRegistryTest, StressNeverViolates) {
  WriterRegistry reg({4});
  std::atomic<bool> stop{false};
  std::atomic<int> violations{0};
  std::atomic<long> samples{0};
  std::vector<std::thread> threads;
  for (int i = 0; i < 6; ++i) {
    threads.emplace_back([&, i] {
      std::mt19937 rng(i);
      while (!stop.load()) {
        if (i < 3) {
          auto src = static_cast<WriterSource>(rng() % 3);
          reg.Acquire(0, src);
          std::this_thread::sleep_for(std::chrono::microseconds(rng() % 200));
          reg.Release(0, src);
        } else {
          auto src = (rng() % 2) ? WriterSource::kCacheCopy : WriterSource::kMigration;
          if (reg.AcquireThrottled(0, src, std::chrono::milliseconds(5))) {
            std::this_thread::sleep_for(std::chrono::microseconds(rng() % 200));
            reg.ReleaseThrottled(0, src);
          }
        }
      }
    });
  }
  threads.emplace_back([&] {
    while (!stop.load()) {
      if (reg.SampleTier(0).Violates()) ++violations;
      ++samples;
      std::this_thread::yield();
    }
  });
  std::this_thread::sleep_for(std::chrono::milliseconds(500));
  stop.store(true);
  for (auto& t : threads) t.join();
  EXPECT_GT(samples.load(), 100);
  EXPECT_EQ(violations.load(), 0);
  EXPECT_EQ(reg.Total(0), 0);
}

}  // namespace
}  // namespace tierkv
