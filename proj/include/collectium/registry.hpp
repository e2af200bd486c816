#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>

#include "collectium/core.hpp"

namespace collectium {

class InvalidHandleError : public Error {
 public:
  using Error::Error;
};

class UnknownBufferError : public Error {
 public:
  using Error::Error;
};

enum class BufferKind : std::uint8_t { kHost, kDevice };

std::string_view buffer_kind_name(BufferKind kind);

struct BufferHandle {
  std::uint64_t address = 0;
  std::size_t size = 0;

  bool operator==(const BufferHandle&) const = default;
};

// How the runtime learns whether a pointer is host or device memory.
enum class CachePolicy : std::uint8_t {
  kNoCache,         // ask the driver on every classification
  kLazyCache,       // ask the driver on first sight, remember forever
  kInterceptCache,  // learn from intercepted alloc/free, never ask the driver
};

std::string_view cache_policy_name(CachePolicy policy);
CachePolicy parse_cache_policy(std::string_view name);

struct RegistryStats {
  std::uint64_t driver_queries = 0;
  std::uint64_t cache_hits = 0;
  std::uint64_t inserts = 0;
  std::uint64_t invalidations = 0;
};

// {"policy": ..., "driver_queries": ..., "cache_hits": ..., "inserts": ...,
//  "invalidations": ...}
std::string stats_json(CachePolicy policy, const RegistryStats& stats);

// Simulated allocator plus the three classification strategies. All three
// caches observe the same allocation trace, so one trace can be classified
// under every policy and the per-policy statistics compared directly.
//
// The "driver" is the allocator's ground-truth table; each query to it costs
// driver_delay_ns of simulated time. Freed addresses are reused lowest first.
class BufferRegistry {
 public:
  explicit BufferRegistry(std::uint64_t driver_delay_ns = 1000);

  BufferHandle alloc(BufferKind kind, std::size_t size);
  void free(BufferHandle handle);
  BufferKind classify(BufferHandle handle, CachePolicy policy);

  RegistryStats stats(CachePolicy policy) const;
  std::uint64_t driver_delay_ns() const { return driver_delay_ns_; }
  // Simulated driver time spent by `policy` so far.
  double driver_seconds(CachePolicy policy) const;

  bool live(std::uint64_t address) const;

 private:
  BufferKind driver_query(std::uint64_t address, CachePolicy policy);
  RegistryStats& stats_for(CachePolicy policy);

  static constexpr std::uint64_t kBaseAddress = 0x7f0000000000ULL;
  static constexpr std::uint64_t kAddressStride = 0x100000ULL;

  std::uint64_t driver_delay_ns_;
  mutable std::mutex mutex_;
  std::unordered_map<std::uint64_t, BufferKind> live_;  // ground truth
  std::set<std::uint64_t> freed_;
  std::uint64_t next_address_ = kBaseAddress;

  std::unordered_map<std::uint64_t, BufferKind> lazy_cache_;
  std::unordered_map<std::uint64_t, BufferKind> intercept_cache_;
  RegistryStats no_cache_stats_;
  RegistryStats lazy_stats_;
  RegistryStats intercept_stats_;
};

}  // namespace collectium
