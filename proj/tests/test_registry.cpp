#include <gtest/gtest.h>

#include <map>
#include <random>
#include <set>

#include "collectium/registry.hpp"

using namespace collectium;

TEST(Registry, AllocIsInterceptedAndReused) {
  BufferRegistry reg;
  const auto h1 = reg.alloc(BufferKind::kDevice, 256);
  EXPECT_EQ(reg.stats(CachePolicy::kInterceptCache).inserts, 1u);
  EXPECT_EQ(reg.classify(h1, CachePolicy::kInterceptCache), BufferKind::kDevice);
  const auto h2 = reg.alloc(BufferKind::kHost, 64);
  EXPECT_NE(h1.address, h2.address);
  reg.free(h1);
  const auto h3 = reg.alloc(BufferKind::kHost, 64);
  EXPECT_EQ(h3.address, h1.address);
  EXPECT_THROW(reg.alloc(BufferKind::kHost, 0), ParameterError);
}

TEST(Registry, DoubleFreeIsRejected) {
  BufferRegistry reg;
  const auto h = reg.alloc(BufferKind::kHost, 8);
  reg.free(h);
  EXPECT_THROW(reg.free(h), InvalidHandleError);
}

TEST(Registry, InterceptSeesReuse) {
  BufferRegistry reg;
  const auto h1 = reg.alloc(BufferKind::kHost, 8);
  reg.free(h1);
  const auto h2 = reg.alloc(BufferKind::kDevice, 8);
  ASSERT_EQ(h2.address, h1.address);
  EXPECT_EQ(reg.classify(h2, CachePolicy::kInterceptCache), BufferKind::kDevice);
  EXPECT_EQ(reg.stats(CachePolicy::kInterceptCache).invalidations, 1u);
}

TEST(Registry, LazyCacheGoesStale) {
  BufferRegistry reg;
  const auto h1 = reg.alloc(BufferKind::kHost, 8);
  EXPECT_EQ(reg.classify(h1, CachePolicy::kLazyCache), BufferKind::kHost);
  reg.free(h1);
  const auto h2 = reg.alloc(BufferKind::kDevice, 8);
  ASSERT_EQ(h2.address, h1.address);
  EXPECT_EQ(reg.classify(h2, CachePolicy::kLazyCache), BufferKind::kHost);
  EXPECT_EQ(reg.classify(h2, CachePolicy::kInterceptCache), BufferKind::kDevice);
  EXPECT_EQ(reg.classify(h2, CachePolicy::kNoCache), BufferKind::kDevice);
}

TEST(Registry, QueryCountsPerPolicy) {
  BufferRegistry reg;
  const auto h = reg.alloc(BufferKind::kDevice, 1024);
  for (int i = 0; i < 5; ++i) {
    reg.classify(h, CachePolicy::kNoCache);
    reg.classify(h, CachePolicy::kLazyCache);
    reg.classify(h, CachePolicy::kInterceptCache);
  }
  EXPECT_EQ(reg.stats(CachePolicy::kNoCache).driver_queries, 5u);
  EXPECT_EQ(reg.stats(CachePolicy::kLazyCache).driver_queries, 1u);
  EXPECT_EQ(reg.stats(CachePolicy::kLazyCache).cache_hits, 4u);
  EXPECT_EQ(reg.stats(CachePolicy::kInterceptCache).driver_queries, 0u);
  EXPECT_EQ(reg.stats(CachePolicy::kInterceptCache).cache_hits, 5u);
  EXPECT_DOUBLE_EQ(reg.driver_seconds(CachePolicy::kNoCache), 5 * 1e-6);
}

TEST(Registry, UnknownBuffer) {
  BufferRegistry reg;
  const BufferHandle bogus{0x1234, 8};
  EXPECT_THROW(reg.classify(bogus, CachePolicy::kInterceptCache), UnknownBufferError);
  EXPECT_THROW(reg.classify(bogus, CachePolicy::kNoCache), UnknownBufferError);
}

TEST(Registry, StatsJsonKeys) {
  RegistryStats s{3, 4, 5, 6};
  EXPECT_EQ(stats_json(CachePolicy::kLazyCache, s),
            R"({"policy":"lazy_cache","driver_queries":3,"cache_hits":4,"inserts":5,"invalidations":6})");
  EXPECT_EQ(parse_cache_policy("no_cache"), CachePolicy::kNoCache);
  EXPECT_THROW(parse_cache_policy("lru"), ParameterError);
}

// Random alloc/free/classify traces.
TEST(Registry, RandomTracesKeepCorrectnessAndQueryBound) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 rng(seed);
    BufferRegistry reg;
    std::map<std::uint64_t, std::pair<BufferHandle, BufferKind>> live;
    std::set<std::uint64_t> classified;
    std::uint64_t classifies = 0;
    for (int op = 0; op < 1000; ++op) {
      const int choice = static_cast<int>(rng() % 10);
      if (choice < 3 || live.empty()) {
        const auto kind = rng() % 2 ? BufferKind::kDevice : BufferKind::kHost;
        const auto h = reg.alloc(kind, 1 + rng() % 4096);
        ASSERT_FALSE(live.contains(h.address));
        live[h.address] = {h, kind};
      } else if (choice < 5) {
        auto it = std::next(live.begin(), static_cast<long>(rng() % live.size()));
        reg.free(it->second.first);
        live.erase(it);
      } else {
        auto it = std::next(live.begin(), static_cast<long>(rng() % live.size()));
        const auto [h, truth] = it->second;
        ASSERT_EQ(reg.classify(h, CachePolicy::kNoCache), truth);
        ASSERT_EQ(reg.classify(h, CachePolicy::kInterceptCache), truth);
        reg.classify(h, CachePolicy::kLazyCache);
        classified.insert(h.address);
        ++classifies;
      }
    }
    const auto intercept = reg.stats(CachePolicy::kInterceptCache).driver_queries;
    const auto lazy = reg.stats(CachePolicy::kLazyCache).driver_queries;
    const auto none = reg.stats(CachePolicy::kNoCache).driver_queries;
    EXPECT_EQ(intercept, 0u);
    EXPECT_LE(lazy, classified.size());
    EXPECT_LE(classified.size(), none);
    EXPECT_EQ(none, classifies);
  }
}
