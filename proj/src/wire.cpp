#include "collectium/wire.hpp"

#include <cstring>

#include "collectium/transport.hpp"

namespace collectium::wire {

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { raw(&v, 1); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void bytes(std::span<const std::byte> b) { out_.insert(out_.end(), b.begin(), b.end()); }
  std::vector<std::byte> take() { return std::move(out_); }

 private:
  void le(std::uint64_t v, int width) {
    for (int i = 0; i < width; ++i) out_.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xff));
  }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::byte*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  std::vector<std::byte> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::byte> in) : in_(in) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  std::span<const std::byte> bytes(std::size_t n) {
    need(n);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  void finish() const {
    if (pos_ != in_.size()) throw TransportError("malformed payload: trailing bytes");
  }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw TransportError("malformed payload: truncated");
  }
  std::uint64_t le(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(in_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::span<const std::byte> in_;
  std::size_t pos_ = 0;
};

std::span<const std::byte> text_bytes(const std::string& s) {
  return std::as_bytes(std::span(s.data(), s.size()));
}

std::string to_text(std::span<const std::byte> b) {
  return std::string(reinterpret_cast<const char*>(b.data()), b.size());
}

}  // namespace

std::vector<std::byte> encode_strings(const std::vector<std::string>& items) {
  Writer w;
  w.u32(static_cast<std::uint32_t>(items.size()));
  for (const auto& s : items) {
    w.u32(static_cast<std::uint32_t>(s.size()));
    w.bytes(text_bytes(s));
  }
  return w.take();
}

std::vector<std::string> decode_strings(std::span<const std::byte> payload) {
  Reader r(payload);
  const std::uint32_t count = r.u32();
  std::vector<std::string> items;
  items.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    items.push_back(to_text(r.bytes(r.u32())));
  }
  r.finish();
  return items;
}

std::vector<std::byte> encode_tensor(const Tensor& tensor) {
  Writer w;
  w.u32(static_cast<std::uint32_t>(tensor.name().size()));
  w.bytes(text_bytes(tensor.name()));
  w.u8(static_cast<std::uint8_t>(tensor.dtype()));
  w.u64(tensor.size());
  w.bytes(tensor.bytes());
  return w.take();
}

Tensor decode_tensor(std::span<const std::byte> payload) {
  Reader r(payload);
  std::string name = to_text(r.bytes(r.u32()));
  const std::uint8_t code = r.u8();
  if (code > 1) throw TransportError("malformed payload: unknown dtype");
  const auto dtype = static_cast<DType>(code);
  const std::uint64_t count = r.u64();
  auto data = r.bytes(count * dtype_size(dtype));
  r.finish();
  return Tensor::from_bytes(std::move(name), dtype, data);
}

}  // namespace collectium::wire
