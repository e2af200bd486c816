#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "collectium/collectives.hpp"
#include "collectium/core.hpp"
#include "collectium/registry.hpp"
#include "collectium/transport.hpp"

namespace collectium {

// Gradients of one iteration. Names are unique.
struct GradientSet {
  std::vector<Tensor> tensors;
  std::int64_t iteration = 0;

  const Tensor* find(const std::string& name) const;
};

// Tunable; the best value is platform dependent.
inline constexpr std::size_t kDefaultFusionThresholdBytes = 67108864;

struct FusionConfig {
  std::size_t threshold_bytes = kDefaultFusionThresholdBytes;
};

// Several same-dtype tensors packed back to back.
struct FusedBuffer {
  std::vector<std::string> names;
  std::vector<Chunk> members;  // element offset/length per name
  Tensor payload;

  std::vector<Tensor> unpack() const;
  std::vector<Tensor> unpack(const Tensor& reduced) const;
};

// Intersection of every rank's ready set, sorted by name, identical on all
// ranks. Rank 0 gathers and broadcasts.
std::vector<std::string> negotiate_ready(const std::vector<std::string>& local_ready,
                                         Transport& transport);

// Greedy packing in the given order: a tensor joins the open group while the
// group stays within the threshold and shares its dtype; a tensor at or above
// the threshold travels alone.
std::vector<FusedBuffer> fuse(const std::vector<Tensor>& ready, const FusionConfig& config);

struct AggregateOptions {
  Algorithm algo = Algorithm::kAuto;
  std::size_t switch_bytes = kDefaultSwitchBytes;
  FusionConfig fusion;
  // When set, each fused buffer is registered as device memory and
  // classified once before its allreduce.
  BufferRegistry* registry = nullptr;
  CachePolicy cache_policy = CachePolicy::kInterceptCache;
};

struct AggregateReport {
  std::size_t negotiated = 0;
  std::size_t allreduce_calls = 0;
  std::vector<Algorithm> algorithms;  // one per allreduce call
};

// Data-parallel gradient mean: negotiate, fuse, allreduce(sum), divide by p.
// Returns tensors in canonical (name) order.
GradientSet aggregate(const GradientSet& grads, Transport& transport,
                      const AggregateOptions& options = {}, AggregateReport* report = nullptr);

using ParamSet = std::map<std::string, Tensor>;

// params[name] <- params[name] - lr * grad, element-wise in the tensor dtype.
void apply_sgd(ParamSet& params, const GradientSet& mean_grads, double learning_rate);
void apply_sgd(Tensor& param, const Tensor& mean_grad, double learning_rate);

}  // namespace collectium
