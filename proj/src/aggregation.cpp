#include "collectium/aggregation.hpp"

#include <algorithm>
#include <iterator>
#include <cstring>
#include <set>

#include <fmt/core.h>

#include "collectium/wire.hpp"

namespace collectium {

namespace {

constexpr int kTagNegotiateGather = 0x200;
constexpr int kTagNegotiateBroadcast = 0x201;

Tensor slice_tensor(const Tensor& source, const std::string& name, Chunk chunk) {
  const std::size_t elem = dtype_size(source.dtype());
  return Tensor::from_bytes(name, source.dtype(),
                            source.bytes().subspan(chunk.offset * elem, chunk.length * elem));
}

template <typename T>
void divide_in_place(std::span<T> values, int p) {
  const double divisor = static_cast<double>(p);
  for (T& v : values) {
    v = static_cast<T>(static_cast<double>(v) / divisor);
  }
}

}  // namespace

const Tensor* GradientSet::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name() == name) return &t;
  }
  return nullptr;
}

std::vector<Tensor> FusedBuffer::unpack() const { return unpack(payload); }

std::vector<Tensor> FusedBuffer::unpack(const Tensor& reduced) const {
  if (reduced.size() != payload.size() || reduced.dtype() != payload.dtype()) {
    throw ShapeError("unpack: reduced buffer does not match the fused layout");
  }
  std::vector<Tensor> out;
  out.reserve(names.size());
  for (std::size_t i = 0; i < names.size(); ++i) {
    out.push_back(slice_tensor(reduced, names[i], members[i]));
  }
  return out;
}

std::vector<std::string> negotiate_ready(const std::vector<std::string>& local_ready,
                                         Transport& transport) {
  const int p = transport.size();
  std::set<std::string> common(local_ready.begin(), local_ready.end());
  if (p == 1) {
    return {common.begin(), common.end()};
  }
  if (transport.rank() == 0) {
    for (RankId src = 1; src < p; ++src) {
      auto theirs = wire::decode_strings(transport.recv(src, kTagNegotiateGather));
      std::set<std::string> other(theirs.begin(), theirs.end());
      std::set<std::string> kept;
      std::set_intersection(common.begin(), common.end(), other.begin(), other.end(),
                            std::inserter(kept, kept.end()));
      common = std::move(kept);
    }
    std::vector<std::string> result(common.begin(), common.end());
    const auto encoded = wire::encode_strings(result);
    for (RankId dst = 1; dst < p; ++dst) {
      transport.send(dst, kTagNegotiateBroadcast, encoded);
    }
    return result;
  }
  transport.send(0, kTagNegotiateGather, wire::encode_strings(local_ready));
  return wire::decode_strings(transport.recv(0, kTagNegotiateBroadcast));
}

std::vector<FusedBuffer> fuse(const std::vector<Tensor>& ready, const FusionConfig& config) {
  if (config.threshold_bytes == 0) {
    throw ParameterError("fusion threshold must be > 0");
  }
  std::vector<std::vector<const Tensor*>> groups;
  std::size_t open_bytes = 0;
  bool open = false;
  for (const Tensor& t : ready) {
    const std::size_t bytes = t.byte_size();
    const bool fits = open && groups.back().front()->dtype() == t.dtype() &&
                      open_bytes + bytes <= config.threshold_bytes;
    if (fits) {
      groups.back().push_back(&t);
      open_bytes += bytes;
    } else {
      groups.push_back({&t});
      open_bytes = bytes;
      open = true;
    }
    if (bytes >= config.threshold_bytes) {
      open = false;
    }
  }

  std::vector<FusedBuffer> fused;
  fused.reserve(groups.size());
  for (const auto& group : groups) {
    FusedBuffer buffer;
    std::size_t total = 0;
    for (const Tensor* t : group) {
      buffer.names.push_back(t->name());
      buffer.members.push_back(Chunk{total, t->size()});
      total += t->size();
    }
    const DType dtype = group.front()->dtype();
    buffer.payload = Tensor::zeros(fmt::format("fused[{}..{}]", buffer.names.front(),
                                               buffer.names.back()),
                                   dtype, total);
    auto dst = buffer.payload.mutable_bytes();
    const std::size_t elem = dtype_size(dtype);
    for (std::size_t i = 0; i < group.size(); ++i) {
      auto src = group[i]->bytes();
      if (!src.empty()) {
        std::memcpy(dst.data() + buffer.members[i].offset * elem, src.data(), src.size());
      }
    }
    fused.push_back(std::move(buffer));
  }
  return fused;
}

GradientSet aggregate(const GradientSet& grads, Transport& transport,
                      const AggregateOptions& options, AggregateReport* report) {
  std::vector<std::string> names;
  names.reserve(grads.tensors.size());
  for (const auto& t : grads.tensors) {
    names.push_back(t.name());
  }
  if (std::set<std::string>(names.begin(), names.end()).size() != names.size()) {
    throw ShapeError("aggregate: gradient names must be unique");
  }

  const auto ready_names = negotiate_ready(names, transport);
  std::vector<Tensor> ready;
  ready.reserve(ready_names.size());
  for (const auto& name : ready_names) {
    ready.push_back(*grads.find(name));
  }

  GradientSet out;
  out.iteration = grads.iteration;
  AggregateReport local;
  local.negotiated = ready.size();
  const int p = transport.size();

  for (const FusedBuffer& buffer : fuse(ready, options.fusion)) {
    if (options.registry != nullptr) {
      const BufferHandle handle =
          options.registry->alloc(BufferKind::kDevice, std::max<std::size_t>(1, buffer.payload.byte_size()));
      options.registry->classify(handle, options.cache_policy);
      options.registry->free(handle);
    }
    AllreduceResult reduced =
        allreduce(buffer.payload, ReduceOp::kSum, transport, options.algo, options.switch_bytes);
    ++local.allreduce_calls;
    local.algorithms.push_back(reduced.stats.algorithm);
    if (reduced.tensor.dtype() == DType::kFloat32) {
      divide_in_place(reduced.tensor.values<float>(), p);
    } else {
      divide_in_place(reduced.tensor.values<double>(), p);
    }
    for (Tensor& t : buffer.unpack(reduced.tensor)) {
      out.tensors.push_back(std::move(t));
    }
  }
  if (report != nullptr) {
    *report = std::move(local);
  }
  return out;
}

void apply_sgd(Tensor& param, const Tensor& mean_grad, double learning_rate) {
  if (param.dtype() != mean_grad.dtype() || param.size() != mean_grad.size()) {
    throw ShapeError(fmt::format("sgd: parameter '{}' and gradient disagree in shape",
                                 param.name()));
  }
  if (param.dtype() == DType::kFloat32) {
    auto w = param.values<float>();
    auto g = mean_grad.values<float>();
    const auto lr = static_cast<float>(learning_rate);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = w[i] - lr * g[i];
  } else {
    auto w = param.values<double>();
    auto g = mean_grad.values<double>();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = w[i] - learning_rate * g[i];
  }
}

void apply_sgd(ParamSet& params, const GradientSet& mean_grads, double learning_rate) {
  for (const Tensor& g : mean_grads.tensors) {
    auto it = params.find(g.name());
    if (it == params.end()) {
      throw ShapeError(fmt::format("sgd: no parameter named '{}'", g.name()));
    }
    apply_sgd(it->second, g, learning_rate);
  }
}

}  // namespace collectium
