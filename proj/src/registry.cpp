#include "collectium/registry.hpp"

#include <fmt/core.h>

#include "json.hpp"

namespace collectium {

std::string_view buffer_kind_name(BufferKind kind) {
  return kind == BufferKind::kHost ? "host" : "device";
}

std::string_view cache_policy_name(CachePolicy policy) {
  switch (policy) {
    case CachePolicy::kNoCache:
      return "no_cache";
    case CachePolicy::kLazyCache:
      return "lazy_cache";
    case CachePolicy::kInterceptCache:
      return "intercept_cache";
  }
  return "unknown";
}

CachePolicy parse_cache_policy(std::string_view name) {
  if (name == "no_cache") return CachePolicy::kNoCache;
  if (name == "lazy_cache") return CachePolicy::kLazyCache;
  if (name == "intercept_cache") return CachePolicy::kInterceptCache;
  throw ParameterError(fmt::format("unknown cache policy '{}'", name));
}

std::string stats_json(CachePolicy policy, const RegistryStats& stats) {
  nlohmann::ordered_json j;
  j["policy"] = std::string(cache_policy_name(policy));
  j["driver_queries"] = stats.driver_queries;
  j["cache_hits"] = stats.cache_hits;
  j["inserts"] = stats.inserts;
  j["invalidations"] = stats.invalidations;
  return j.dump();
}

BufferRegistry::BufferRegistry(std::uint64_t driver_delay_ns)
    : driver_delay_ns_(driver_delay_ns) {}

BufferHandle BufferRegistry::alloc(BufferKind kind, std::size_t size) {
  if (size == 0) {
    throw ParameterError("alloc: size must be > 0");
  }
  std::lock_guard lock(mutex_);
  std::uint64_t address;
  if (!freed_.empty()) {
    address = *freed_.begin();
    freed_.erase(freed_.begin());
  } else {
    address = next_address_;
    next_address_ += kAddressStride;
  }
  live_[address] = kind;
  // Interception sees every allocation.
  intercept_cache_[address] = kind;
  ++intercept_stats_.inserts;
  return BufferHandle{address, size};
}

void BufferRegistry::free(BufferHandle handle) {
  std::lock_guard lock(mutex_);
  auto it = live_.find(handle.address);
  if (it == live_.end()) {
    throw InvalidHandleError(
        fmt::format("free: address {:#x} is not a live allocation", handle.address));
  }
  live_.erase(it);
  freed_.insert(handle.address);
  if (intercept_cache_.erase(handle.address) > 0) {
    ++intercept_stats_.invalidations;
  }
  // The lazy cache never hears about frees.
}

BufferKind BufferRegistry::driver_query(std::uint64_t address, CachePolicy policy) {
  ++stats_for(policy).driver_queries;
  auto it = live_.find(address);
  if (it == live_.end()) {
    throw UnknownBufferError(fmt::format("address {:#x} is not a known allocation", address));
  }
  return it->second;
}

BufferKind BufferRegistry::classify(BufferHandle handle, CachePolicy policy) {
  std::lock_guard lock(mutex_);
  switch (policy) {
    case CachePolicy::kNoCache:
      return driver_query(handle.address, policy);
    case CachePolicy::kLazyCache: {
      if (auto it = lazy_cache_.find(handle.address); it != lazy_cache_.end()) {
        ++lazy_stats_.cache_hits;
        return it->second;
      }
      const BufferKind kind = driver_query(handle.address, policy);
      lazy_cache_[handle.address] = kind;
      ++lazy_stats_.inserts;
      return kind;
    }
    case CachePolicy::kInterceptCache: {
      auto it = intercept_cache_.find(handle.address);
      if (it == intercept_cache_.end()) {
        throw UnknownBufferError(
            fmt::format("address {:#x} is not a known allocation", handle.address));
      }
      ++intercept_stats_.cache_hits;
      return it->second;
    }
  }
  throw ParameterError("classify: unknown policy");
}

RegistryStats& BufferRegistry::stats_for(CachePolicy policy) {
  switch (policy) {
    case CachePolicy::kNoCache:
      return no_cache_stats_;
    case CachePolicy::kLazyCache:
      return lazy_stats_;
    case CachePolicy::kInterceptCache:
      break;
  }
  return intercept_stats_;
}

RegistryStats BufferRegistry::stats(CachePolicy policy) const {
  std::lock_guard lock(mutex_);
  switch (policy) {
    case CachePolicy::kNoCache:
      return no_cache_stats_;
    case CachePolicy::kLazyCache:
      return lazy_stats_;
    case CachePolicy::kInterceptCache:
      break;
  }
  return intercept_stats_;
}

double BufferRegistry::driver_seconds(CachePolicy policy) const {
  return static_cast<double>(stats(policy).driver_queries) *
         static_cast<double>(driver_delay_ns_) * 1e-9;
}

bool BufferRegistry::live(std::uint64_t address) const {
  std::lock_guard lock(mutex_);
  return live_.contains(address);
}

}  // namespace collectium
