#pragma once

#include <cstddef>
#include <string_view>

#include "collectium/core.hpp"
#include "collectium/transport.hpp"

namespace collectium {

enum class Algorithm { kFlat, kRing, kRhd, kAuto };

std::string_view algorithm_name(Algorithm algo);
// Accepts flat, ring, rhd, auto (also ring_rsa, rhd_rsa). Throws ParameterError.
Algorithm parse_algorithm(std::string_view name);

// Messages below this many bytes use recursive halving/doubling under kAuto.
inline constexpr std::size_t kDefaultSwitchBytes = 131072;

struct CollectiveStats {
  Algorithm algorithm = Algorithm::kFlat;
  int rounds = 0;
  int messages_per_rank = 0;  // sends issued by this rank
  std::size_t bytes_sent_per_rank = 0;
};

struct AllreduceResult {
  Tensor tensor;
  CollectiveStats stats;
};

// Tags used on the wire, one per phase.
namespace tags {
inline constexpr int kFlatGather = 0x100;
inline constexpr int kFlatBroadcast = 0x101;
inline constexpr int kRingReduceScatter = 0x110;
inline constexpr int kRingAllgather = 0x111;
inline constexpr int kRhdFold = 0x120;
inline constexpr int kRhdReduceScatter = 0x121;
inline constexpr int kRhdAllgather = 0x122;
inline constexpr int kRhdUnfold = 0x123;
}  // namespace tags

// Gather to rank 0, reduce in rank order, broadcast.
AllreduceResult allreduce_flat(const Tensor& input, ReduceOp op, Transport& transport);

// Ring reduce-scatter then ring allgather, 2(p-1) steps. Each step sends one
// chunk to the left neighbour (rank-1) and receives from the right. Rank r
// finishes the reduce-scatter owning chunk r of chunk_partition(n, p).
AllreduceResult allreduce_ring(const Tensor& input, ReduceOp op, Transport& transport);

// Recursive vector halving reduce-scatter, partner = rank ^ 2^step, followed
// by recursive doubling allgather in reverse. The lower rank of each pair keeps
// the lower half. For non-power-of-two p the first 2r ranks
// (r = p - 2^floor(log2 p)) fold: odd ranks hand their vector to rank-1 and
// receive the final result from it.
AllreduceResult allreduce_rhd(const Tensor& input, ReduceOp op, Transport& transport);

// kAuto picks kRhd when the message is smaller than switch_bytes, else kRing.
Algorithm resolve_algorithm(Algorithm algo, std::size_t message_bytes, std::size_t switch_bytes);

AllreduceResult allreduce(const Tensor& input, ReduceOp op, Transport& transport,
                          Algorithm algo = Algorithm::kAuto,
                          std::size_t switch_bytes = kDefaultSwitchBytes);

}  // namespace collectium
