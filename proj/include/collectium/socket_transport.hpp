#pragma once

#include <array>
#include <atomic>
#include <condition_variable>
#include <deque>
#include <istream>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "collectium/transport.hpp"

namespace collectium {

struct HostEntry {
  RankId rank = 0;
  std::string host;
  int port = 0;
};

// Hostfile: one `rank host port` line per rank. Blank lines and lines
// starting with '#' are ignored. Ranks must be dense 0..p-1.
std::vector<HostEntry> parse_hostfile(std::istream& in);
std::vector<HostEntry> load_hostfile(const std::string& path);

struct SocketOptions {
  double recv_timeout_s = 30.0;
  double connect_timeout_s = 30.0;
};

// Wire frame: 8-byte little-endian payload length, 4-byte little-endian tag,
// 4-byte little-endian source rank, then the payload bytes.
inline constexpr std::size_t kFrameHeaderBytes = 16;

std::array<std::byte, kFrameHeaderBytes> encode_frame_header(std::uint64_t length,
                                                             std::int32_t tag,
                                                             std::int32_t src);

struct FrameHeader {
  std::uint64_t length;
  std::int32_t tag;
  std::int32_t src;
};

FrameHeader decode_frame_header(std::span<const std::byte, kFrameHeaderBytes> raw);

// Full-mesh TCP transport. Every rank listens on its hostfile port; rank r
// dials every rank below it (rank 0 is dialed by all) and announces itself
// with a 4-byte little-endian rank id. A reader thread per peer drains its
// socket into per-tag queues so large symmetric exchanges cannot stall.
class SocketTransport final : public Transport {
 public:
  static std::unique_ptr<SocketTransport> connect(const std::vector<HostEntry>& hosts,
                                                  RankId rank,
                                                  SocketOptions options = {});
  ~SocketTransport() override;

  SocketTransport(const SocketTransport&) = delete;
  SocketTransport& operator=(const SocketTransport&) = delete;

  RankId rank() const override { return rank_; }
  int size() const override { return size_; }
  bool simulated() const override { return false; }

  void send(RankId dst, int tag, std::span<const std::byte> payload) override;
  std::vector<std::byte> recv(RankId src, int tag) override;

  double virtual_time() const override;
  void charge_reduction(std::size_t) override {}
  void advance(double) override {}
  void mark(std::string_view label) override;
  const EventLog& log() const override { return log_; }

 private:
  SocketTransport(RankId rank, int size, SocketOptions options);

  void start_readers();
  void reader_loop(RankId peer);
  void shutdown();

  RankId rank_;
  int size_;
  SocketOptions options_;
  EventLog log_;

  std::vector<int> fds_;  // indexed by peer rank, -1 for self
  std::vector<std::thread> readers_;

  std::mutex mutex_;
  std::condition_variable arrived_;
  std::map<std::pair<RankId, int>, std::deque<std::vector<std::byte>>> inbox_;
  std::vector<bool> peer_closed_;
  std::vector<std::string> peer_error_;
};

}  // namespace collectium
