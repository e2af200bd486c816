#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "collectium/core.hpp"

namespace collectium::wire {

// Little-endian encodings used inside message payloads (hosts are assumed
// little-endian; element data is copied verbatim).
//
//   string list: u32 count, then per string u32 length + bytes
//   tensor:      u32 name length, name bytes, u8 dtype (0 f32, 1 f64),
//                u64 element count, element bytes

std::vector<std::byte> encode_strings(const std::vector<std::string>& items);
std::vector<std::string> decode_strings(std::span<const std::byte> payload);

std::vector<std::byte> encode_tensor(const Tensor& tensor);
Tensor decode_tensor(std::span<const std::byte> payload);

}  // namespace collectium::wire
