#include "collectium/collectives.hpp"

#include <bit>
#include <cstring>
#include <vector>

#include <fmt/core.h>

namespace collectium {

std::string_view algorithm_name(Algorithm algo) {
  switch (algo) {
    case Algorithm::kFlat:
      return "flat";
    case Algorithm::kRing:
      return "ring";
    case Algorithm::kRhd:
      return "rhd";
    case Algorithm::kAuto:
      return "auto";
  }
  return "unknown";
}

Algorithm parse_algorithm(std::string_view name) {
  if (name == "flat") return Algorithm::kFlat;
  if (name == "ring" || name == "ring_rsa") return Algorithm::kRing;
  if (name == "rhd" || name == "rhd_rsa") return Algorithm::kRhd;
  if (name == "auto") return Algorithm::kAuto;
  throw ParameterError(fmt::format("unknown allreduce algorithm '{}'", name));
}

namespace {

// Tracks the sends of one collective call and validates incoming sizes.
class Exchange {
 public:
  Exchange(Transport& transport, DType dtype)
      : transport_(transport), elem_(dtype_size(dtype)) {}

  void send(RankId dst, int tag, std::span<const std::byte> bytes) {
    transport_.send(dst, tag, bytes);
    ++messages_;
    bytes_sent_ += bytes.size();
  }

  std::vector<std::byte> recv(RankId src, int tag, std::size_t expected_bytes) {
    auto payload = transport_.recv(src, tag);
    if (payload.size() != expected_bytes) {
      throw ShapeError(fmt::format(
          "allreduce: rank {} expected {} elements from rank {}, got {} bytes "
          "(ranks disagree on tensor length)",
          transport_.rank(), expected_bytes / elem_, src, payload.size()));
    }
    return payload;
  }

  CollectiveStats stats(Algorithm algo, int rounds) const {
    return CollectiveStats{algo, rounds, messages_, bytes_sent_};
  }

 private:
  Transport& transport_;
  std::size_t elem_;
  int messages_ = 0;
  std::size_t bytes_sent_ = 0;
};

struct ByteRange {
  std::size_t offset = 0;
  std::size_t length = 0;
};

std::span<std::byte> slice(std::span<std::byte> buffer, ByteRange r) {
  return buffer.subspan(r.offset, r.length);
}

ByteRange to_bytes(Chunk c, std::size_t elem) {
  return ByteRange{c.offset * elem, c.length * elem};
}

}  // namespace

AllreduceResult allreduce_flat(const Tensor& input, ReduceOp op, Transport& transport) {
  transport.mark("allreduce:flat");
  const int p = transport.size();
  const RankId me = transport.rank();
  Tensor result = input;
  Exchange ex(transport, input.dtype());
  if (p == 1) {
    return {std::move(result), ex.stats(Algorithm::kFlat, 0)};
  }
  auto buffer = result.mutable_bytes();
  if (me == 0) {
    // Gather everything, then reduce in rank order.
    std::vector<std::vector<std::byte>> gathered;
    gathered.reserve(static_cast<std::size_t>(p - 1));
    for (RankId src = 1; src < p; ++src) {
      gathered.push_back(ex.recv(src, tags::kFlatGather, buffer.size()));
    }
    for (const auto& incoming : gathered) {
      reduce_bytes_into(input.dtype(), buffer, incoming, op);
      transport.charge_reduction(buffer.size());
    }
    for (RankId dst = 1; dst < p; ++dst) {
      ex.send(dst, tags::kFlatBroadcast, buffer);
    }
  } else {
    ex.send(0, tags::kFlatGather, buffer);
    auto reduced = ex.recv(0, tags::kFlatBroadcast, buffer.size());
    if (!reduced.empty()) {
      std::memcpy(buffer.data(), reduced.data(), reduced.size());
    }
  }
  return {std::move(result), ex.stats(Algorithm::kFlat, 2)};
}

AllreduceResult allreduce_ring(const Tensor& input, ReduceOp op, Transport& transport) {
  transport.mark("allreduce:ring");
  const int p = transport.size();
  const RankId me = transport.rank();
  Tensor result = input;
  Exchange ex(transport, input.dtype());
  if (p == 1) {
    return {std::move(result), ex.stats(Algorithm::kRing, 0)};
  }
  const std::size_t elem = dtype_size(input.dtype());
  const auto chunks = chunk_partition(input.size(), p);
  auto chunk_bytes = [&](int index) {
    return to_bytes(chunks[static_cast<std::size_t>((index % p + p) % p)], elem);
  };
  auto buffer = result.mutable_bytes();
  const RankId left = (me - 1 + p) % p;
  const RankId right = (me + 1) % p;

  // Reduce-scatter: at step s rank r forwards chunk r+s+1 and folds the
  // partial for chunk r+s+2 arriving from the right.
  for (int step = 0; step < p - 1; ++step) {
    const ByteRange out = chunk_bytes(me + step + 1);
    const ByteRange in = chunk_bytes(me + step + 2);
    ex.send(left, tags::kRingReduceScatter, slice(buffer, out));
    auto incoming = ex.recv(right, tags::kRingReduceScatter, in.length);
    reduce_bytes_into(input.dtype(), slice(buffer, in), incoming, op);
    transport.charge_reduction(in.length);
  }
  // Allgather: rank r starts by forwarding its own finished chunk r.
  for (int step = 0; step < p - 1; ++step) {
    const ByteRange out = chunk_bytes(me + step);
    const ByteRange in = chunk_bytes(me + step + 1);
    ex.send(left, tags::kRingAllgather, slice(buffer, out));
    auto incoming = ex.recv(right, tags::kRingAllgather, in.length);
    if (in.length > 0) {
      std::memcpy(buffer.data() + in.offset, incoming.data(), in.length);
    }
  }
  return {std::move(result), ex.stats(Algorithm::kRing, 2 * (p - 1))};
}

AllreduceResult allreduce_rhd(const Tensor& input, ReduceOp op, Transport& transport) {
  transport.mark("allreduce:rhd");
  const int p = transport.size();
  const RankId me = transport.rank();
  Tensor result = input;
  Exchange ex(transport, input.dtype());
  if (p == 1) {
    return {std::move(result), ex.stats(Algorithm::kRhd, 0)};
  }
  const std::size_t elem = dtype_size(input.dtype());
  auto buffer = result.mutable_bytes();
  const int pow2 = static_cast<int>(std::bit_floor(static_cast<unsigned>(p)));
  const int excess = p - pow2;
  const int log2p = std::countr_zero(static_cast<unsigned>(pow2));
  const int rounds = 2 * log2p + (excess > 0 ? 2 : 0);

  // Fold the excess ranks onto their even neighbours.
  int vrank = -1;
  if (me < 2 * excess) {
    if (me % 2 == 1) {
      ex.send(me - 1, tags::kRhdFold, buffer);
      auto reduced = ex.recv(me - 1, tags::kRhdUnfold, buffer.size());
      if (!reduced.empty()) {
        std::memcpy(buffer.data(), reduced.data(), reduced.size());
      }
      return {std::move(result), ex.stats(Algorithm::kRhd, rounds)};
    }
    auto incoming = ex.recv(me + 1, tags::kRhdFold, buffer.size());
    reduce_bytes_into(input.dtype(), buffer, incoming, op);
    transport.charge_reduction(buffer.size());
    vrank = me / 2;
  } else {
    vrank = me - excess;
  }
  auto real_rank = [excess](int v) { return v < excess ? 2 * v : v + excess; };

  // Reduce-scatter by recursive vector halving. Segments are in elements.
  struct Split {
    std::size_t lo, mid, hi;
    bool keep_lower;
  };
  std::vector<Split> splits;
  splits.reserve(static_cast<std::size_t>(log2p));
  std::size_t lo = 0;
  std::size_t hi = input.size();
  for (int step = 0; step < log2p; ++step) {
    const int vpartner = vrank ^ (1 << step);
    const RankId partner = real_rank(vpartner);
    const std::size_t mid = lo + (hi - lo + 1) / 2;
    const bool keep_lower = vrank < vpartner;
    const ByteRange keep = keep_lower ? ByteRange{lo * elem, (mid - lo) * elem}
                                      : ByteRange{mid * elem, (hi - mid) * elem};
    const ByteRange give = keep_lower ? ByteRange{mid * elem, (hi - mid) * elem}
                                      : ByteRange{lo * elem, (mid - lo) * elem};
    ex.send(partner, tags::kRhdReduceScatter, slice(buffer, give));
    auto incoming = ex.recv(partner, tags::kRhdReduceScatter, keep.length);
    reduce_bytes_into(input.dtype(), slice(buffer, keep), incoming, op);
    transport.charge_reduction(keep.length);
    splits.push_back(Split{lo, mid, hi, keep_lower});
    if (keep_lower) {
      hi = mid;
    } else {
      lo = mid;
    }
  }

  // Allgather by recursive doubling, unwinding the splits.
  for (int step = log2p - 1; step >= 0; --step) {
    const Split& s = splits[static_cast<std::size_t>(step)];
    const RankId partner = real_rank(vrank ^ (1 << step));
    const ByteRange mine = s.keep_lower ? ByteRange{s.lo * elem, (s.mid - s.lo) * elem}
                                        : ByteRange{s.mid * elem, (s.hi - s.mid) * elem};
    const ByteRange theirs = s.keep_lower ? ByteRange{s.mid * elem, (s.hi - s.mid) * elem}
                                          : ByteRange{s.lo * elem, (s.mid - s.lo) * elem};
    ex.send(partner, tags::kRhdAllgather, slice(buffer, mine));
    auto incoming = ex.recv(partner, tags::kRhdAllgather, theirs.length);
    if (theirs.length > 0) {
      std::memcpy(buffer.data() + theirs.offset, incoming.data(), theirs.length);
    }
  }

  if (me < 2 * excess) {
    ex.send(me + 1, tags::kRhdUnfold, buffer);
  }
  return {std::move(result), ex.stats(Algorithm::kRhd, rounds)};
}

Algorithm resolve_algorithm(Algorithm algo, std::size_t message_bytes, std::size_t switch_bytes) {
  if (algo != Algorithm::kAuto) {
    return algo;
  }
  if (switch_bytes == 0) {
    throw ParameterError("switch_bytes must be > 0 for auto algorithm selection");
  }
  return message_bytes < switch_bytes ? Algorithm::kRhd : Algorithm::kRing;
}

AllreduceResult allreduce(const Tensor& input, ReduceOp op, Transport& transport, Algorithm algo,
                          std::size_t switch_bytes) {
  switch (resolve_algorithm(algo, input.byte_size(), switch_bytes)) {
    case Algorithm::kFlat:
      return allreduce_flat(input, op, transport);
    case Algorithm::kRing:
      return allreduce_ring(input, op, transport);
    case Algorithm::kRhd:
    case Algorithm::kAuto:
      break;
  }
  return allreduce_rhd(input, op, transport);
}

}  // namespace collectium
