#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "collectium/aggregation.hpp"
#include "collectium/core.hpp"
#include "collectium/transport.hpp"

namespace collectium {

class ProtocolError : public Error {
 public:
  using Error::Error;
};

class StalledProducerError : public Error {
 public:
  using Error::Error;
};

// Pull-model rendezvous between producers and consumers of named tensors.
// A tensor produced with nobody waiting stays in the table until requested;
// a request with nothing produced waits until a produce arrives. Each
// produce is delivered exactly once, to the oldest waiting request.
class TensorTable {
 public:
  explicit TensorTable(double request_timeout_s = 30.0);

  // Never blocks. Throws ProtocolError if an unconsumed tensor of the same
  // name is already pending.
  void produce(Tensor tensor);

  // Blocks until the named tensor is produced or the timeout elapses
  // (StalledProducerError).
  Tensor request(const std::string& name, RankId consumer);
  Tensor request(const std::string& name, RankId consumer, double timeout_s);

  std::size_t pending_tensor_count() const;
  std::size_t pending_request_count() const;
  bool has_pending_tensor(const std::string& name) const;
  std::size_t waiting_requests(const std::string& name) const;

 private:
  struct Waiter {
    RankId consumer;
    std::optional<Tensor> value;
  };

  double timeout_s_;
  mutable std::mutex mutex_;
  std::condition_variable served_;
  std::map<std::string, Tensor> pending_tensors_;
  std::map<std::string, std::deque<std::shared_ptr<Waiter>>> pending_requests_;
};

struct PsTopology {
  std::vector<RankId> workers;
  std::vector<RankId> ps;
  std::map<std::string, RankId> shard_map;

  // Assigns sorted tensor names to ps ranks round robin.
  static PsTopology round_robin(std::vector<RankId> workers, std::vector<RankId> ps,
                                std::vector<std::string> names);

  RankId owner(const std::string& name) const;
  bool is_worker(RankId rank) const;
  bool is_ps(RankId rank) const;
  std::vector<std::string> owned_by(RankId rank) const;  // sorted
  void validate(int group_size) const;
};

// Per-consumer table keys, so each pull is a distinct one-version entry.
std::string gradient_key(const std::string& name, RankId worker);
std::string param_key(const std::string& name, RankId worker);

// Message layout. Tags carry a 20-bit FNV-1a hash of the table key on top of
// a per-kind base; payloads are wire-encoded (see wire.hpp):
//   produce  (worker -> ps): tag kPsProduce|h,  payload = encoded tensor named key
//   request  (worker -> ps): tag kPsRequest|h,  payload = key bytes
//   response (ps -> worker): tag kPsResponse|h, payload = encoded tensor named key
namespace tags {
inline constexpr int kPsProduce = 1 << 24;
inline constexpr int kPsRequest = 2 << 24;
inline constexpr int kPsResponse = 3 << 24;
}  // namespace tags

int ps_tag(int base, const std::string& key);

struct PsStepOptions {
  double timeout_s = 30.0;
};

struct PsStepReport {
  std::size_t tensors_served = 0;
  std::size_t table_pending_tensors = 0;
  std::size_t table_pending_requests = 0;
};

// One synchronous training step, executed by every rank of the group.
// Workers push their gradients to the owning PS; each PS averages its shard
// over workers (worker order), applies params <- params - lr * mean, and
// serves the updated shard to every worker's pull. On return each worker's
// `params` holds every updated tensor; a PS-only rank holds its own shards.
// A worker that never contributes surfaces as StalledProducerError.
void ps_training_step(Transport& transport, const PsTopology& topology, const GradientSet& grads,
                      ParamSet& params, double learning_rate, const PsStepOptions& options = {},
                      PsStepReport* report = nullptr);

}  // namespace collectium
