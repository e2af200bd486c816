#pragma once

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "collectium/core.hpp"

namespace collectium {

class RoutingError : public Error {
 public:
  using Error::Error;
};

class TransportError : public Error {
 public:
  using Error::Error;
};

class UnsupportedOperationError : public Error {
 public:
  using Error::Error;
};

// Raised in simulated mode when every unfinished rank is blocked in recv and
// nothing that could unblock them is in flight.
class DeadlockError : public Error {
 public:
  explicit DeadlockError(std::vector<RankId> blocked);

  const std::vector<RankId>& blocked_ranks() const { return blocked_; }

 private:
  std::vector<RankId> blocked_;
};

// Point-to-point cost: alpha seconds per message plus beta seconds per byte.
struct LinkModel {
  double alpha = 0.0;
  double beta = 0.0;

  double cost(std::size_t bytes) const {
    return alpha + static_cast<double>(bytes) * beta;
  }
};

enum class EventKind : std::uint8_t { kSend, kRecv, kMark };

struct Event {
  EventKind kind;
  RankId rank;
  RankId peer;  // -1 for marks
  int tag;
  std::size_t bytes;
  double time;  // virtual seconds in simulated mode, 0 on sockets
  std::string label;
};

struct RankCounters {
  std::uint64_t messages_sent = 0;
  std::uint64_t bytes_sent = 0;
  std::uint64_t messages_received = 0;
  std::uint64_t bytes_received = 0;
};

// Message and byte accounting. One log is shared by all ranks of a simulated
// network; a socket endpoint keeps a log of its own rank only.
class EventLog {
 public:
  explicit EventLog(int ranks);

  void record_send(RankId rank, RankId dst, int tag, std::size_t bytes, double time);
  void record_recv(RankId rank, RankId src, int tag, std::size_t bytes, double time);
  void record_mark(RankId rank, std::string_view label, double time);

  RankCounters counters(RankId rank) const;
  std::vector<Event> events() const;
  // Number of marks on `rank` whose label starts with `prefix`.
  std::size_t count_marks(RankId rank, std::string_view prefix) const;

  std::uint64_t total_messages_sent() const;
  std::uint64_t total_messages_received() const;
  std::uint64_t total_bytes_sent() const;
  std::uint64_t total_bytes_received() const;

  void clear();

 private:
  mutable std::mutex mutex_;
  std::vector<RankCounters> counters_;
  std::vector<Event> events_;
};

// One rank's endpoint. An endpoint is used by a single thread of execution.
class Transport {
 public:
  virtual ~Transport() = default;

  virtual RankId rank() const = 0;
  virtual int size() const = 0;

  // Messages on one (src, dst, tag) channel are delivered in send order.
  virtual void send(RankId dst, int tag, std::span<const std::byte> payload) = 0;
  virtual std::vector<std::byte> recv(RankId src, int tag) = 0;

  // Current virtual clock. Throws UnsupportedOperationError on real transports.
  virtual double virtual_time() const = 0;

  // Charge local reduction work of `bytes` (gamma term); no-op on real
  // transports where the work is simply timed.
  virtual void charge_reduction(std::size_t bytes) = 0;
  // Advance the virtual clock by modeled compute time; no-op on real transports.
  virtual void advance(double seconds) = 0;

  // Annotates the event log, e.g. one mark per collective call.
  virtual void mark(std::string_view label) = 0;

  virtual const EventLog& log() const = 0;

  virtual bool simulated() const = 0;

 protected:
  void check_peer(RankId peer, const char* op) const;
};

// Helpers for moving typed values through byte payloads.
template <typename T>
std::span<const std::byte> as_payload(const T& value) {
  return std::as_bytes(std::span(&value, 1));
}

template <typename T>
T payload_as(std::span<const std::byte> payload) {
  if (payload.size() != sizeof(T)) {
    throw TransportError("payload size does not match expected scalar");
  }
  T value;
  std::memcpy(&value, payload.data(), sizeof(T));
  return value;
}

}  // namespace collectium
