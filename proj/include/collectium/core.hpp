#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace collectium {

// Error hierarchy shared by every module. Each subsystem throws the most
// specific subclass; callers that only care about failure catch Error.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class InvalidGroupError : public Error {
 public:
  using Error::Error;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

enum class DType : std::uint8_t { kFloat32 = 0, kFloat64 = 1 };

std::size_t dtype_size(DType dtype);
std::string_view dtype_name(DType dtype);

enum class ReduceOp : std::uint8_t { kSum, kMax };

std::string_view reduce_op_name(ReduceOp op);

using RankId = int;

// A dense process group 0..size-1.
class GroupSpec {
 public:
  explicit GroupSpec(int size);

  int size() const { return size_; }
  bool contains(RankId rank) const { return rank >= 0 && rank < size_; }

 private:
  int size_;
};

// Named, typed, contiguous payload. The unit of reduction and transfer.
class Tensor {
 public:
  Tensor() : data_(std::vector<float>{}) {}
  Tensor(std::string name, std::vector<float> values)
      : name_(std::move(name)), data_(std::move(values)) {}
  Tensor(std::string name, std::vector<double> values)
      : name_(std::move(name)), data_(std::move(values)) {}

  static Tensor zeros(std::string name, DType dtype, std::size_t len);
  // Reinterprets raw bytes as `dtype` elements. bytes.size() must be a
  // multiple of the element size.
  static Tensor from_bytes(std::string name, DType dtype,
                           std::span<const std::byte> bytes);

  const std::string& name() const { return name_; }
  void set_name(std::string name) { name_ = std::move(name); }

  DType dtype() const {
    return std::holds_alternative<std::vector<float>>(data_) ? DType::kFloat32
                                                             : DType::kFloat64;
  }
  std::size_t size() const;
  std::size_t byte_size() const { return size() * dtype_size(dtype()); }

  template <typename T>
  std::span<T> values() {
    return std::span<T>(std::get<std::vector<T>>(data_));
  }
  template <typename T>
  std::span<const T> values() const {
    return std::span<const T>(std::get<std::vector<T>>(data_));
  }

  std::span<const std::byte> bytes() const;
  std::span<std::byte> mutable_bytes();

  // Exact comparison of dtype and payload bits (names ignored).
  bool bitwise_equal(const Tensor& other) const;

 private:
  std::string name_;
  std::variant<std::vector<float>, std::vector<double>> data_;
};

// accumulator[i] <- accumulator[i] op incoming[i]
template <typename T>
void reduce_into(std::span<T> accumulator, std::span<const T> incoming,
                 ReduceOp op) {
  if (accumulator.size() != incoming.size()) {
    throw ShapeError("reduce_into: length mismatch");
  }
  if (op == ReduceOp::kSum) {
    for (std::size_t i = 0; i < accumulator.size(); ++i) {
      accumulator[i] = accumulator[i] + incoming[i];
    }
  } else {
    for (std::size_t i = 0; i < accumulator.size(); ++i) {
      accumulator[i] = accumulator[i] < incoming[i] ? incoming[i] : accumulator[i];
    }
  }
}

// Byte-level variant used by the collectives, which move untyped chunks.
void reduce_bytes_into(DType dtype, std::span<std::byte> accumulator,
                       std::span<const std::byte> incoming, ReduceOp op);

// Element-wise a op b. Throws ShapeError on length or dtype mismatch.
Tensor local_reduce(const Tensor& a, const Tensor& b, ReduceOp op);

struct Chunk {
  std::size_t offset = 0;
  std::size_t length = 0;

  bool operator==(const Chunk&) const = default;
};

// Splits n elements into p contiguous chunks. The first n % p chunks get
// one extra element.
std::vector<Chunk> chunk_partition(std::size_t n, int p);

// 64-bit FNV-1a, used for payload digests and message tags.
std::uint64_t fnv1a64(std::span<const std::byte> bytes,
                      std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::string_view text);

}  // namespace collectium
