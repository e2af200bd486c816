#pragma once

#include <condition_variable>
#include <deque>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <tuple>
#include <vector>

#include "collectium/transport.hpp"

namespace collectium {

struct SimConfig {
  LinkModel link;
  // Seconds per byte of local reduction.
  double gamma = 0.0;
  // Optional placement. When node_of_rank is non-empty and intra_node is set,
  // pairs on the same node use intra_node instead of link.
  std::vector<int> node_of_rank;
  std::optional<LinkModel> intra_node;
  // Concurrent transfers per endpoint (egress and ingress). With one channel a
  // send occupies the sender for its full cost.
  int channels = 1;
};

// Deterministic virtual-time network. All ranks of a program run inside one
// scheduler that hands a single baton between rank threads: a rank runs
// until it blocks in recv or finishes, and the next runnable rank (round
// robin) takes over. Results do not depend on the schedule because every
// recv names its source and tag.
//
// Timing: a send starting at sender time s on a free egress lane costs
// c = alpha + bytes*beta; it is delivered at max(s, ingress_free) + c where
// ingress_free is the receiver's earliest free ingress lane, processed in the
// receiver's recv order. recv returns at max(receiver clock, delivery).
class SimNetwork {
 public:
  explicit SimNetwork(int ranks, SimConfig config = {});
  ~SimNetwork();

  SimNetwork(const SimNetwork&) = delete;
  SimNetwork& operator=(const SimNetwork&) = delete;

  int size() const { return ranks_; }
  const SimConfig& config() const { return config_; }

  // Runs `program` once per rank to completion. Clocks and the event log
  // carry over between calls. Rethrows the first rank failure; if every
  // failure is a deadlock, throws DeadlockError naming the blocked ranks.
  void run(const std::function<void(Transport&)>& program);

  const EventLog& log() const { return log_; }
  double virtual_time(RankId rank) const;
  double max_virtual_time() const;
  // Resets clocks, lanes, and the event log. Undelivered messages are dropped.
  void reset();

 private:
  class Endpoint;
  friend class Endpoint;

  enum class Status { kRunnable, kBlocked, kDone };

  struct Message {
    std::vector<std::byte> payload;
    double start = 0.0;
    double cost = 0.0;
  };

  using ChannelKey = std::tuple<RankId, RankId, int>;  // src, dst, tag

  const LinkModel& link_between(RankId a, RankId b) const;
  // Caller holds mutex_.
  void hand_off_locked(RankId from);
  void wait_for_baton_locked(std::unique_lock<std::mutex>& lock, RankId rank);

  int ranks_;
  SimConfig config_;
  EventLog log_;

  mutable std::mutex mutex_;
  std::vector<std::unique_ptr<std::condition_variable>> wake_;
  std::condition_variable all_done_;
  RankId current_ = -1;
  bool deadlocked_ = false;
  std::vector<RankId> deadlocked_ranks_;
  std::vector<Status> status_;
  std::vector<std::pair<RankId, int>> waiting_on_;
  std::map<ChannelKey, std::deque<Message>> mailboxes_;

  std::vector<double> clock_;
  std::vector<std::vector<double>> egress_free_;
  std::vector<std::vector<double>> ingress_free_;
};

}  // namespace collectium
