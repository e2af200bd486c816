#include "collectium/paramserver.hpp"

#include <algorithm>
#include <chrono>
#include <set>

#include <fmt/core.h>

#include "collectium/sim_transport.hpp"
#include "collectium/wire.hpp"

namespace collectium {

TensorTable::TensorTable(double request_timeout_s) : timeout_s_(request_timeout_s) {}

void TensorTable::produce(Tensor tensor) {
  std::lock_guard lock(mutex_);
  const std::string name = tensor.name();
  if (auto it = pending_requests_.find(name); it != pending_requests_.end() && !it->second.empty()) {
    std::shared_ptr<Waiter> waiter = it->second.front();
    it->second.pop_front();
    if (it->second.empty()) pending_requests_.erase(it);
    waiter->value = std::move(tensor);
    served_.notify_all();
    return;
  }
  if (pending_tensors_.contains(name)) {
    throw ProtocolError(fmt::format("tensor '{}' produced again before it was consumed", name));
  }
  pending_tensors_.emplace(name, std::move(tensor));
}

Tensor TensorTable::request(const std::string& name, RankId consumer) {
  return request(name, consumer, timeout_s_);
}

Tensor TensorTable::request(const std::string& name, RankId consumer, double timeout_s) {
  if (consumer < 0) {
    throw RoutingError(fmt::format("request for '{}' from invalid rank {}", name, consumer));
  }
  std::unique_lock lock(mutex_);
  if (auto it = pending_tensors_.find(name); it != pending_tensors_.end()) {
    Tensor t = std::move(it->second);
    pending_tensors_.erase(it);
    return t;
  }
  auto waiter = std::make_shared<Waiter>(Waiter{consumer, std::nullopt});
  pending_requests_[name].push_back(waiter);
  const auto timeout = std::chrono::duration<double>(timeout_s);
  if (!served_.wait_for(lock, timeout, [&] { return waiter->value.has_value(); })) {
    auto& queue = pending_requests_[name];
    queue.erase(std::remove(queue.begin(), queue.end(), waiter), queue.end());
    if (queue.empty()) pending_requests_.erase(name);
    throw StalledProducerError(fmt::format(
        "rank {} waited {} s for tensor '{}' but no producer delivered it", consumer, timeout_s, name));
  }
  return std::move(*waiter->value);
}

std::size_t TensorTable::pending_tensor_count() const {
  std::lock_guard lock(mutex_);
  return pending_tensors_.size();
}

std::size_t TensorTable::pending_request_count() const {
  std::lock_guard lock(mutex_);
  std::size_t n = 0;
  for (const auto& [name, queue] : pending_requests_) n += queue.size();
  return n;
}

bool TensorTable::has_pending_tensor(const std::string& name) const {
  std::lock_guard lock(mutex_);
  return pending_tensors_.contains(name);
}

std::size_t TensorTable::waiting_requests(const std::string& name) const {
  std::lock_guard lock(mutex_);
  auto it = pending_requests_.find(name);
  return it == pending_requests_.end() ? 0 : it->second.size();
}

PsTopology PsTopology::round_robin(std::vector<RankId> workers, std::vector<RankId> ps,
                                   std::vector<std::string> names) {
  if (ps.empty()) {
    throw ParameterError("topology needs at least one ps rank");
  }
  std::sort(names.begin(), names.end());
  PsTopology topo{std::move(workers), std::move(ps), {}};
  for (std::size_t i = 0; i < names.size(); ++i) {
    topo.shard_map[names[i]] = topo.ps[i % topo.ps.size()];
  }
  return topo;
}

RankId PsTopology::owner(const std::string& name) const {
  auto it = shard_map.find(name);
  if (it == shard_map.end()) {
    throw ParameterError(fmt::format("tensor '{}' has no owning ps rank", name));
  }
  return it->second;
}

bool PsTopology::is_worker(RankId rank) const {
  return std::find(workers.begin(), workers.end(), rank) != workers.end();
}

bool PsTopology::is_ps(RankId rank) const {
  return std::find(ps.begin(), ps.end(), rank) != ps.end();
}

std::vector<std::string> PsTopology::owned_by(RankId rank) const {
  std::vector<std::string> names;
  for (const auto& [name, owner] : shard_map) {
    if (owner == rank) names.push_back(name);
  }
  return names;
}

void PsTopology::validate(int group_size) const {
  if (workers.empty() || ps.empty()) {
    throw ParameterError("topology needs at least one worker and one ps rank");
  }
  auto check = [group_size](const std::vector<RankId>& ranks, const char* role) {
    if (std::set<RankId>(ranks.begin(), ranks.end()).size() != ranks.size()) {
      throw ParameterError(fmt::format("duplicate {} rank", role));
    }
    for (RankId r : ranks) {
      if (r < 0 || r >= group_size) {
        throw ParameterError(fmt::format("{} rank {} outside group of size {}", role, r, group_size));
      }
    }
  };
  check(workers, "worker");
  check(ps, "ps");
  for (const auto& [name, owner] : shard_map) {
    if (!is_ps(owner)) {
      throw ParameterError(fmt::format("tensor '{}' mapped to non-ps rank {}", name, owner));
    }
  }
}

std::string gradient_key(const std::string& name, RankId worker) {
  return fmt::format("grad/{}#{}", name, worker);
}

std::string param_key(const std::string& name, RankId worker) {
  return fmt::format("param/{}#{}", name, worker);
}

int ps_tag(int base, const std::string& key) {
  return base | static_cast<int>(fnv1a64(key) & 0xFFFFF);
}

namespace {

template <typename T>
Tensor mean_over_workers(const std::vector<Tensor>& shards, const std::string& name) {
  std::vector<T> acc(shards.front().values<T>().begin(), shards.front().values<T>().end());
  for (std::size_t w = 1; w < shards.size(); ++w) {
    auto in = shards[w].values<T>();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] = acc[i] + in[i];
  }
  const double divisor = static_cast<double>(shards.size());
  for (T& v : acc) v = static_cast<T>(static_cast<double>(v) / divisor);
  return Tensor(name, std::move(acc));
}

}  // namespace

void ps_training_step(Transport& transport, const PsTopology& topology, const GradientSet& grads,
                      ParamSet& params, double learning_rate, const PsStepOptions& options,
                      PsStepReport* report) {
  topology.validate(transport.size());
  const RankId me = transport.rank();
  const bool worker = topology.is_worker(me);
  const bool server = topology.is_ps(me);
  TensorTable table(options.timeout_s);
  PsStepReport local;

  std::vector<std::string> names;
  for (const auto& [name, owner] : topology.shard_map) names.push_back(name);

  // Workers push gradient shards to their owners.
  if (worker) {
    for (const auto& name : names) {
      const Tensor* g = grads.find(name);
      if (g == nullptr) {
        throw ShapeError(fmt::format("worker {} has no gradient for '{}'", me, name));
      }
      Tensor shard = *g;
      const std::string key = gradient_key(name, me);
      shard.set_name(key);
      const RankId owner = topology.owner(name);
      if (owner == me) {
        table.produce(std::move(shard));
      } else {
        transport.send(owner, ps_tag(tags::kPsProduce, key), wire::encode_tensor(shard));
      }
    }
  }

  // Servers collect every worker's shard, average, update, and stage the
  // updated parameter once per worker.
  const auto owned = server ? topology.owned_by(me) : std::vector<std::string>{};
  if (server) {
    for (const auto& name : owned) {
      for (RankId w : topology.workers) {
        if (w == me) continue;
        const std::string key = gradient_key(name, w);
        std::vector<std::byte> payload;
        try {
          payload = transport.recv(w, ps_tag(tags::kPsProduce, key));
        } catch (const DeadlockError&) {
          throw StalledProducerError(
              fmt::format("ps rank {} never received '{}' from worker {}", me, key, w));
        } catch (const TransportError& e) {
          throw StalledProducerError(fmt::format("ps rank {} never received '{}' from worker {}: {}",
                                                 me, key, w, e.what()));
        }
        Tensor shard = wire::decode_tensor(payload);
        if (shard.name() != key) {
          throw ProtocolError(fmt::format("expected '{}' from worker {}, got '{}'", key, w, shard.name()));
        }
        table.produce(std::move(shard));
      }
    }
    for (const auto& name : owned) {
      auto param = params.find(name);
      if (param == params.end()) {
        throw ShapeError(fmt::format("ps rank {} holds no parameter '{}'", me, name));
      }
      std::vector<Tensor> shards;
      for (RankId w : topology.workers) {
        shards.push_back(table.request(gradient_key(name, w), me));
      }
      const Tensor mean = param->second.dtype() == DType::kFloat32
                              ? mean_over_workers<float>(shards, name)
                              : mean_over_workers<double>(shards, name);
      apply_sgd(param->second, mean, learning_rate);
      for (RankId w : topology.workers) {
        Tensor copy = param->second;
        copy.set_name(param_key(name, w));
        table.produce(std::move(copy));
      }
    }
  }

  // Workers pull updated parameters.
  if (worker) {
    for (const auto& name : names) {
      const RankId owner = topology.owner(name);
      const std::string key = param_key(name, me);
      if (owner == me) {
        Tensor t = table.request(key, me);
        t.set_name(name);
        params[name] = std::move(t);
        ++local.tensors_served;
      } else {
        std::vector<std::byte> request(key.size());
        std::memcpy(request.data(), key.data(), key.size());
        transport.send(owner, ps_tag(tags::kPsRequest, key), request);
      }
    }
  }

  if (server) {
    for (const auto& name : owned) {
      for (RankId w : topology.workers) {
        if (w == me) continue;
        const std::string key = param_key(name, w);
        auto payload = transport.recv(w, ps_tag(tags::kPsRequest, key));
        const std::string asked(reinterpret_cast<const char*>(payload.data()), payload.size());
        if (asked != key) {
          throw ProtocolError(fmt::format("worker {} requested '{}', expected '{}'", w, asked, key));
        }
        transport.send(w, ps_tag(tags::kPsResponse, key), wire::encode_tensor(table.request(key, w)));
        ++local.tensors_served;
      }
    }
  }

  if (worker) {
    for (const auto& name : names) {
      const RankId owner = topology.owner(name);
      if (owner == me) continue;
      const std::string key = param_key(name, me);
      Tensor t = wire::decode_tensor(transport.recv(owner, ps_tag(tags::kPsResponse, key)));
      if (t.name() != key) {
        throw ProtocolError(fmt::format("expected '{}' from ps {}, got '{}'", key, owner, t.name()));
      }
      t.set_name(name);
      params[name] = std::move(t);
    }
  }

  local.table_pending_tensors = table.pending_tensor_count();
  local.table_pending_requests = table.pending_request_count();
  if (report != nullptr) *report = local;
}

}  // namespace collectium
