#include "collectium/transport.hpp"

#include <numeric>

#include <fmt/core.h>
#include <fmt/ranges.h>

namespace collectium {

DeadlockError::DeadlockError(std::vector<RankId> blocked)
    : Error(fmt::format("deadlock: ranks {} blocked in recv with nothing in flight",
                        fmt::join(blocked, ","))),
      blocked_(std::move(blocked)) {}

EventLog::EventLog(int ranks) : counters_(static_cast<std::size_t>(ranks)) {}

void EventLog::record_send(RankId rank, RankId dst, int tag, std::size_t bytes,
                           double time) {
  std::lock_guard lock(mutex_);
  auto& c = counters_.at(static_cast<std::size_t>(rank));
  ++c.messages_sent;
  c.bytes_sent += bytes;
  events_.push_back(Event{EventKind::kSend, rank, dst, tag, bytes, time, {}});
}

void EventLog::record_recv(RankId rank, RankId src, int tag, std::size_t bytes,
                           double time) {
  std::lock_guard lock(mutex_);
  auto& c = counters_.at(static_cast<std::size_t>(rank));
  ++c.messages_received;
  c.bytes_received += bytes;
  events_.push_back(Event{EventKind::kRecv, rank, src, tag, bytes, time, {}});
}

void EventLog::record_mark(RankId rank, std::string_view label, double time) {
  std::lock_guard lock(mutex_);
  events_.push_back(Event{EventKind::kMark, rank, -1, 0, 0, time, std::string(label)});
}

RankCounters EventLog::counters(RankId rank) const {
  std::lock_guard lock(mutex_);
  return counters_.at(static_cast<std::size_t>(rank));
}

std::vector<Event> EventLog::events() const {
  std::lock_guard lock(mutex_);
  return events_;
}

std::size_t EventLog::count_marks(RankId rank, std::string_view prefix) const {
  std::lock_guard lock(mutex_);
  std::size_t n = 0;
  for (const auto& e : events_) {
    if (e.kind == EventKind::kMark && e.rank == rank && e.label.starts_with(prefix)) {
      ++n;
    }
  }
  return n;
}

std::uint64_t EventLog::total_messages_sent() const {
  std::lock_guard lock(mutex_);
  std::uint64_t n = 0;
  for (const auto& c : counters_) n += c.messages_sent;
  return n;
}

std::uint64_t EventLog::total_messages_received() const {
  std::lock_guard lock(mutex_);
  std::uint64_t n = 0;
  for (const auto& c : counters_) n += c.messages_received;
  return n;
}

std::uint64_t EventLog::total_bytes_sent() const {
  std::lock_guard lock(mutex_);
  std::uint64_t n = 0;
  for (const auto& c : counters_) n += c.bytes_sent;
  return n;
}

std::uint64_t EventLog::total_bytes_received() const {
  std::lock_guard lock(mutex_);
  std::uint64_t n = 0;
  for (const auto& c : counters_) n += c.bytes_received;
  return n;
}

void EventLog::clear() {
  std::lock_guard lock(mutex_);
  for (auto& c : counters_) c = RankCounters{};
  events_.clear();
}

void Transport::check_peer(RankId peer, const char* op) const {
  if (peer < 0 || peer >= size()) {
    throw RoutingError(fmt::format("{}: rank {} outside group of size {}", op, peer, size()));
  }
  if (peer == rank()) {
    throw RoutingError(fmt::format("{}: rank {} cannot address itself", op, peer));
  }
}

}  // namespace collectium
