#include "collectium/sim_transport.hpp"

#include <algorithm>
#include <thread>

#include <fmt/core.h>

namespace collectium {

class SimNetwork::Endpoint final : public Transport {
 public:
  Endpoint(SimNetwork& net, RankId rank) : net_(net), rank_(rank) {}

  RankId rank() const override { return rank_; }
  int size() const override { return net_.ranks_; }
  bool simulated() const override { return true; }

  void send(RankId dst, int tag, std::span<const std::byte> payload) override {
    check_peer(dst, "send");
    std::lock_guard lock(net_.mutex_);
    const double cost = net_.link_between(rank_, dst).cost(payload.size());
    auto& lanes = net_.egress_free_[static_cast<std::size_t>(rank_)];
    auto lane = std::min_element(lanes.begin(), lanes.end());
    double& clock = net_.clock_[static_cast<std::size_t>(rank_)];
    const double start = std::max(clock, *lane);
    *lane = start + cost;
    clock = net_.config_.channels == 1 ? start + cost : start;

    net_.mailboxes_[{rank_, dst, tag}].push_back(
        Message{std::vector<std::byte>(payload.begin(), payload.end()), start, cost});
    net_.log_.record_send(rank_, dst, tag, payload.size(), start);

    const auto d = static_cast<std::size_t>(dst);
    if (net_.status_[d] == Status::kBlocked &&
        net_.waiting_on_[d] == std::pair<RankId, int>{rank_, tag}) {
      net_.status_[d] = Status::kRunnable;
    }
  }

  std::vector<std::byte> recv(RankId src, int tag) override {
    check_peer(src, "recv");
    const auto me = static_cast<std::size_t>(rank_);
    std::unique_lock lock(net_.mutex_);
    for (;;) {
      auto it = net_.mailboxes_.find({src, rank_, tag});
      if (it != net_.mailboxes_.end() && !it->second.empty()) {
        Message msg = std::move(it->second.front());
        it->second.pop_front();
        auto& lanes = net_.ingress_free_[me];
        auto lane = std::min_element(lanes.begin(), lanes.end());
        const double delivered = std::max(msg.start, *lane) + msg.cost;
        *lane = delivered;
        double& clock = net_.clock_[me];
        clock = std::max(clock, delivered);
        net_.log_.record_recv(rank_, src, tag, msg.payload.size(), clock);
        return std::move(msg.payload);
      }
      net_.status_[me] = Status::kBlocked;
      net_.waiting_on_[me] = {src, tag};
      net_.hand_off_locked(rank_);
      net_.wait_for_baton_locked(lock, rank_);
      if (net_.current_ != rank_) {
        throw DeadlockError(net_.deadlocked_ranks_);
      }
      net_.status_[me] = Status::kRunnable;
    }
  }

  double virtual_time() const override {
    std::lock_guard lock(net_.mutex_);
    return net_.clock_[static_cast<std::size_t>(rank_)];
  }

  void charge_reduction(std::size_t bytes) override {
    advance(static_cast<double>(bytes) * net_.config_.gamma);
  }

  void advance(double seconds) override {
    std::lock_guard lock(net_.mutex_);
    net_.clock_[static_cast<std::size_t>(rank_)] += seconds;
  }

  void mark(std::string_view label) override {
    net_.log_.record_mark(rank_, label, virtual_time());
  }

  const EventLog& log() const override { return net_.log_; }

 private:
  SimNetwork& net_;
  RankId rank_;
};

SimNetwork::SimNetwork(int ranks, SimConfig config)
    : ranks_(GroupSpec(ranks).size()), config_(std::move(config)), log_(ranks) {
  if (config_.link.alpha < 0 || config_.link.beta < 0 || config_.gamma < 0) {
    throw ParameterError("link costs must be non-negative");
  }
  if (config_.channels < 1) {
    throw ParameterError("channels must be >= 1");
  }
  if (!config_.node_of_rank.empty() &&
      config_.node_of_rank.size() != static_cast<std::size_t>(ranks)) {
    throw ParameterError("node_of_rank must list every rank");
  }
  const auto n = static_cast<std::size_t>(ranks);
  for (int i = 0; i < ranks; ++i) {
    wake_.push_back(std::make_unique<std::condition_variable>());
  }
  status_.assign(n, Status::kDone);
  waiting_on_.assign(n, {-1, 0});
  reset();
}

SimNetwork::~SimNetwork() = default;

const LinkModel& SimNetwork::link_between(RankId a, RankId b) const {
  if (config_.intra_node && !config_.node_of_rank.empty() &&
      config_.node_of_rank[static_cast<std::size_t>(a)] ==
          config_.node_of_rank[static_cast<std::size_t>(b)]) {
    return *config_.intra_node;
  }
  return config_.link;
}

void SimNetwork::hand_off_locked(RankId from) {
  if (deadlocked_) {
    return;
  }
  for (int step = 1; step <= ranks_; ++step) {
    const RankId next = (from + step) % ranks_;
    if (status_[static_cast<std::size_t>(next)] == Status::kRunnable) {
      current_ = next;
      wake_[static_cast<std::size_t>(next)]->notify_one();
      return;
    }
  }
  current_ = -1;
  std::vector<RankId> blocked;
  for (RankId r = 0; r < ranks_; ++r) {
    if (status_[static_cast<std::size_t>(r)] == Status::kBlocked) {
      blocked.push_back(r);
    }
  }
  if (!blocked.empty()) {
    deadlocked_ = true;
    deadlocked_ranks_ = blocked;
    for (RankId r : blocked) {
      wake_[static_cast<std::size_t>(r)]->notify_one();
    }
  }
}

void SimNetwork::wait_for_baton_locked(std::unique_lock<std::mutex>& lock, RankId rank) {
  wake_[static_cast<std::size_t>(rank)]->wait(
      lock, [&] { return current_ == rank || deadlocked_; });
}

void SimNetwork::run(const std::function<void(Transport&)>& program) {
  {
    std::lock_guard lock(mutex_);
    std::fill(status_.begin(), status_.end(), Status::kRunnable);
    deadlocked_ = false;
    deadlocked_ranks_.clear();
    current_ = 0;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(ranks_));
  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(ranks_));
  for (RankId r = 0; r < ranks_; ++r) {
    threads.emplace_back([this, r, &program, &errors] {
      Endpoint endpoint(*this, r);
      {
        std::unique_lock lock(mutex_);
        wait_for_baton_locked(lock, r);
      }
      try {
        program(endpoint);
      } catch (...) {
        errors[static_cast<std::size_t>(r)] = std::current_exception();
      }
      std::lock_guard lock(mutex_);
      status_[static_cast<std::size_t>(r)] = Status::kDone;
      hand_off_locked(r);
    });
  }
  for (auto& t : threads) {
    t.join();
  }

  // Prefer the root cause over the deadlocks it induced on other ranks.
  std::exception_ptr deadlock;
  for (auto& e : errors) {
    if (!e) continue;
    try {
      std::rethrow_exception(e);
    } catch (const DeadlockError&) {
      if (!deadlock) deadlock = e;
    } catch (...) {
      throw;
    }
  }
  if (deadlock) {
    std::rethrow_exception(deadlock);
  }
}

double SimNetwork::virtual_time(RankId rank) const {
  std::lock_guard lock(mutex_);
  return clock_.at(static_cast<std::size_t>(rank));
}

double SimNetwork::max_virtual_time() const {
  std::lock_guard lock(mutex_);
  return *std::max_element(clock_.begin(), clock_.end());
}

void SimNetwork::reset() {
  std::lock_guard lock(mutex_);
  const auto n = static_cast<std::size_t>(ranks_);
  const auto lanes = static_cast<std::size_t>(config_.channels);
  clock_.assign(n, 0.0);
  egress_free_.assign(n, std::vector<double>(lanes, 0.0));
  ingress_free_.assign(n, std::vector<double>(lanes, 0.0));
  mailboxes_.clear();
  log_.clear();
}

}  // namespace collectium
