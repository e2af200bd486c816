#include "collectium/core.hpp"

#include <cstring>

#include <fmt/core.h>

namespace collectium {

std::size_t dtype_size(DType dtype) {
  return dtype == DType::kFloat32 ? sizeof(float) : sizeof(double);
}

std::string_view dtype_name(DType dtype) {
  return dtype == DType::kFloat32 ? "float32" : "float64";
}

std::string_view reduce_op_name(ReduceOp op) {
  return op == ReduceOp::kSum ? "sum" : "max";
}

GroupSpec::GroupSpec(int size) : size_(size) {
  if (size < 1) {
    throw InvalidGroupError(fmt::format("group size must be >= 1, got {}", size));
  }
}

Tensor Tensor::zeros(std::string name, DType dtype, std::size_t len) {
  if (dtype == DType::kFloat32) {
    return Tensor(std::move(name), std::vector<float>(len, 0.0f));
  }
  return Tensor(std::move(name), std::vector<double>(len, 0.0));
}

Tensor Tensor::from_bytes(std::string name, DType dtype,
                          std::span<const std::byte> bytes) {
  const std::size_t elem = dtype_size(dtype);
  if (bytes.size() % elem != 0) {
    throw ShapeError(fmt::format("{} bytes is not a whole number of {} elements",
                                 bytes.size(), dtype_name(dtype)));
  }
  Tensor t = zeros(std::move(name), dtype, bytes.size() / elem);
  if (!bytes.empty()) {
    std::memcpy(t.mutable_bytes().data(), bytes.data(), bytes.size());
  }
  return t;
}

std::size_t Tensor::size() const {
  return std::visit([](const auto& v) { return v.size(); }, data_);
}

std::span<const std::byte> Tensor::bytes() const {
  return std::visit(
      [](const auto& v) { return std::as_bytes(std::span(v)); }, data_);
}

std::span<std::byte> Tensor::mutable_bytes() {
  return std::visit(
      [](auto& v) { return std::as_writable_bytes(std::span(v)); }, data_);
}

bool Tensor::bitwise_equal(const Tensor& other) const {
  if (dtype() != other.dtype() || size() != other.size()) {
    return false;
  }
  auto a = bytes();
  auto b = other.bytes();
  return a.empty() || std::memcmp(a.data(), b.data(), a.size()) == 0;
}

namespace {

template <typename T>
void reduce_typed(std::span<std::byte> acc, std::span<const std::byte> in,
                  ReduceOp op) {
  // Chunks are carved from typed buffers so alignment holds for the
  // accumulator; incoming wire buffers may not be aligned.
  const std::size_t n = acc.size() / sizeof(T);
  auto* out = reinterpret_cast<T*>(acc.data());
  for (std::size_t i = 0; i < n; ++i) {
    T v;
    std::memcpy(&v, in.data() + i * sizeof(T), sizeof(T));
    if (op == ReduceOp::kSum) {
      out[i] = out[i] + v;
    } else {
      out[i] = out[i] < v ? v : out[i];
    }
  }
}

}  // namespace

void reduce_bytes_into(DType dtype, std::span<std::byte> accumulator,
                       std::span<const std::byte> incoming, ReduceOp op) {
  if (accumulator.size() != incoming.size()) {
    throw ShapeError(fmt::format("reduce: accumulator has {} bytes, incoming {}",
                                 accumulator.size(), incoming.size()));
  }
  if (dtype == DType::kFloat32) {
    reduce_typed<float>(accumulator, incoming, op);
  } else {
    reduce_typed<double>(accumulator, incoming, op);
  }
}

Tensor local_reduce(const Tensor& a, const Tensor& b, ReduceOp op) {
  if (a.dtype() != b.dtype()) {
    throw ShapeError(fmt::format("local_reduce: dtype mismatch ({} vs {})",
                                 dtype_name(a.dtype()), dtype_name(b.dtype())));
  }
  if (a.size() != b.size()) {
    throw ShapeError(
        fmt::format("local_reduce: length mismatch ({} vs {})", a.size(), b.size()));
  }
  Tensor out = a;
  reduce_bytes_into(a.dtype(), out.mutable_bytes(), b.bytes(), op);
  return out;
}

std::vector<Chunk> chunk_partition(std::size_t n, int p) {
  if (p < 1) {
    throw InvalidGroupError(fmt::format("chunk_partition: p must be >= 1, got {}", p));
  }
  const auto parts = static_cast<std::size_t>(p);
  const std::size_t base = n / parts;
  const std::size_t extra = n % parts;
  std::vector<Chunk> chunks(parts);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < parts; ++i) {
    chunks[i] = Chunk{offset, base + (i < extra ? 1 : 0)};
    offset += chunks[i].length;
  }
  return chunks;
}

std::uint64_t fnv1a64(std::span<const std::byte> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (std::byte b : bytes) {
    h ^= static_cast<std::uint64_t>(b);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a64(std::string_view text) {
  return fnv1a64(std::as_bytes(std::span(text.data(), text.size())));
}

}  // namespace collectium
