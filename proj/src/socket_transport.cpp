#include "collectium/socket_transport.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/uio.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/core.h>

namespace collectium {

namespace {

using Clock = std::chrono::steady_clock;

std::string errno_text() { return std::strerror(errno); }

void store_le(std::byte* out, std::uint64_t value, std::size_t width) {
  for (std::size_t i = 0; i < width; ++i) {
    out[i] = static_cast<std::byte>((value >> (8 * i)) & 0xff);
  }
}

std::uint64_t load_le(const std::byte* in, std::size_t width) {
  std::uint64_t value = 0;
  for (std::size_t i = 0; i < width; ++i) {
    value |= static_cast<std::uint64_t>(in[i]) << (8 * i);
  }
  return value;
}

int remaining_ms(Clock::time_point deadline) {
  auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
  return left.count() < 0 ? 0 : static_cast<int>(left.count());
}

// Reads exactly out.size() bytes. Returns false on orderly EOF before any
// byte was read; throws on errors or EOF mid-buffer.
bool read_full(int fd, std::span<std::byte> out) {
  std::size_t done = 0;
  while (done < out.size()) {
    ssize_t n = ::recv(fd, out.data() + done, out.size() - done, 0);
    if (n == 0) {
      if (done == 0) return false;
      throw TransportError("peer closed connection mid-frame");
    }
    if (n < 0) {
      if (errno == EINTR) continue;
      throw TransportError(fmt::format("recv failed: {}", errno_text()));
    }
    done += static_cast<std::size_t>(n);
  }
  return true;
}

void write_full(int fd, std::span<const std::byte> head, std::span<const std::byte> body) {
  std::size_t head_done = 0;
  std::size_t body_done = 0;
  while (head_done < head.size() || body_done < body.size()) {
    iovec iov[2];
    int count = 0;
    if (head_done < head.size()) {
      iov[count].iov_base = const_cast<std::byte*>(head.data() + head_done);
      iov[count].iov_len = head.size() - head_done;
      ++count;
    }
    if (body_done < body.size()) {
      iov[count].iov_base = const_cast<std::byte*>(body.data() + body_done);
      iov[count].iov_len = body.size() - body_done;
      ++count;
    }
    msghdr msg{};
    msg.msg_iov = iov;
    msg.msg_iovlen = static_cast<std::size_t>(count);
    ssize_t n = ::sendmsg(fd, &msg, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw TransportError(fmt::format("send failed: {}", errno_text()));
    }
    auto sent = static_cast<std::size_t>(n);
    const std::size_t head_part = std::min(sent, head.size() - head_done);
    head_done += head_part;
    body_done += sent - head_part;
  }
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

int listen_on(int port) {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw TransportError(fmt::format("socket: {}", errno_text()));
  int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_ANY);
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0 ||
      ::listen(fd, 128) < 0) {
    std::string why = errno_text();
    ::close(fd);
    throw TransportError(fmt::format("cannot listen on port {}: {}", port, why));
  }
  return fd;
}

int try_dial(const HostEntry& host) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string port = std::to_string(host.port);
  if (::getaddrinfo(host.host.c_str(), port.c_str(), &hints, &res) != 0 || !res) {
    return -1;
  }
  int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  if (fd >= 0 && ::connect(fd, res->ai_addr, res->ai_addrlen) < 0) {
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  return fd;
}

}  // namespace

std::array<std::byte, kFrameHeaderBytes> encode_frame_header(std::uint64_t length,
                                                             std::int32_t tag,
                                                             std::int32_t src) {
  std::array<std::byte, kFrameHeaderBytes> raw{};
  store_le(raw.data(), length, 8);
  store_le(raw.data() + 8, static_cast<std::uint32_t>(tag), 4);
  store_le(raw.data() + 12, static_cast<std::uint32_t>(src), 4);
  return raw;
}

FrameHeader decode_frame_header(std::span<const std::byte, kFrameHeaderBytes> raw) {
  return FrameHeader{load_le(raw.data(), 8),
                     static_cast<std::int32_t>(static_cast<std::uint32_t>(load_le(raw.data() + 8, 4))),
                     static_cast<std::int32_t>(static_cast<std::uint32_t>(load_le(raw.data() + 12, 4)))};
}

std::vector<HostEntry> parse_hostfile(std::istream& in) {
  std::vector<HostEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream fields(line);
    HostEntry e;
    if (!(fields >> e.rank >> e.host >> e.port) || e.port <= 0 || e.port > 65535) {
      throw ParameterError(fmt::format("hostfile line {}: expected `rank host port`", line_no));
    }
    entries.push_back(e);
  }
  std::sort(entries.begin(), entries.end(),
            [](const HostEntry& a, const HostEntry& b) { return a.rank < b.rank; });
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].rank != static_cast<RankId>(i)) {
      throw ParameterError("hostfile ranks must be dense 0..p-1 without duplicates");
    }
  }
  if (entries.empty()) {
    throw ParameterError("hostfile lists no ranks");
  }
  return entries;
}

std::vector<HostEntry> load_hostfile(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ParameterError(fmt::format("cannot open hostfile {}", path));
  }
  return parse_hostfile(in);
}

SocketTransport::SocketTransport(RankId rank, int size, SocketOptions options)
    : rank_(rank),
      size_(size),
      options_(options),
      log_(size),
      fds_(static_cast<std::size_t>(size), -1),
      peer_closed_(static_cast<std::size_t>(size), false),
      peer_error_(static_cast<std::size_t>(size)) {}

std::unique_ptr<SocketTransport> SocketTransport::connect(const std::vector<HostEntry>& hosts,
                                                          RankId rank,
                                                          SocketOptions options) {
  const int size = static_cast<int>(hosts.size());
  if (rank < 0 || rank >= size) {
    throw RoutingError(fmt::format("rank {} not present in hostfile of {} ranks", rank, size));
  }
  std::unique_ptr<SocketTransport> t(new SocketTransport(rank, size, options));
  if (size == 1) {
    return t;
  }
  const auto deadline =
      Clock::now() + std::chrono::milliseconds(static_cast<long>(options.connect_timeout_s * 1000));
  const int listener = listen_on(hosts[static_cast<std::size_t>(rank)].port);
  try {
    for (RankId peer = 0; peer < rank; ++peer) {
      int fd = -1;
      while ((fd = try_dial(hosts[static_cast<std::size_t>(peer)])) < 0) {
        if (Clock::now() >= deadline) {
          throw TransportError(fmt::format("rendezvous timeout: rank {} unreachable at {}:{}",
                                           peer, hosts[static_cast<std::size_t>(peer)].host,
                                           hosts[static_cast<std::size_t>(peer)].port));
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
      }
      set_nodelay(fd);
      std::array<std::byte, 4> hello{};
      store_le(hello.data(), static_cast<std::uint32_t>(rank), 4);
      write_full(fd, hello, {});
      t->fds_[static_cast<std::size_t>(peer)] = fd;
    }
    for (int expected = size - 1 - rank; expected > 0; --expected) {
      pollfd pfd{listener, POLLIN, 0};
      if (::poll(&pfd, 1, remaining_ms(deadline)) <= 0) {
        throw TransportError(fmt::format("rendezvous timeout: rank {} still waiting for {} peer(s)",
                                         rank, expected));
      }
      int fd = ::accept(listener, nullptr, nullptr);
      if (fd < 0) throw TransportError(fmt::format("accept: {}", errno_text()));
      set_nodelay(fd);
      pollfd hello_pfd{fd, POLLIN, 0};
      std::array<std::byte, 4> hello{};
      if (::poll(&hello_pfd, 1, remaining_ms(deadline)) <= 0 || !read_full(fd, hello)) {
        ::close(fd);
        throw TransportError("rendezvous: peer did not announce its rank");
      }
      const auto peer = static_cast<RankId>(load_le(hello.data(), 4));
      if (peer <= rank || peer >= size || t->fds_[static_cast<std::size_t>(peer)] >= 0) {
        ::close(fd);
        throw TransportError(fmt::format("rendezvous: unexpected peer rank {}", peer));
      }
      t->fds_[static_cast<std::size_t>(peer)] = fd;
    }
  } catch (...) {
    ::close(listener);
    throw;
  }
  ::close(listener);
  t->start_readers();
  return t;
}

void SocketTransport::start_readers() {
  for (RankId peer = 0; peer < size_; ++peer) {
    if (peer == rank_) continue;
    readers_.emplace_back([this, peer] { reader_loop(peer); });
  }
}

void SocketTransport::reader_loop(RankId peer) {
  const int fd = fds_[static_cast<std::size_t>(peer)];
  std::string error;
  try {
    for (;;) {
      std::array<std::byte, kFrameHeaderBytes> raw{};
      if (!read_full(fd, raw)) break;
      const FrameHeader header = decode_frame_header(raw);
      if (header.src != peer) {
        throw TransportError(fmt::format("frame from rank {} claims source {}", peer, header.src));
      }
      std::vector<std::byte> payload(header.length);
      if (header.length > 0 && !read_full(fd, payload)) {
        throw TransportError("peer closed connection mid-frame");
      }
      std::lock_guard lock(mutex_);
      inbox_[{peer, header.tag}].push_back(std::move(payload));
      arrived_.notify_all();
    }
  } catch (const std::exception& e) {
    error = e.what();
  }
  std::lock_guard lock(mutex_);
  peer_closed_[static_cast<std::size_t>(peer)] = true;
  peer_error_[static_cast<std::size_t>(peer)] = error;
  arrived_.notify_all();
}

void SocketTransport::send(RankId dst, int tag, std::span<const std::byte> payload) {
  check_peer(dst, "send");
  const auto header = encode_frame_header(payload.size(), tag, rank_);
  write_full(fds_[static_cast<std::size_t>(dst)], header, payload);
  log_.record_send(rank_, dst, tag, payload.size(), 0.0);
}

std::vector<std::byte> SocketTransport::recv(RankId src, int tag) {
  check_peer(src, "recv");
  const auto timeout = std::chrono::milliseconds(static_cast<long>(options_.recv_timeout_s * 1000));
  std::unique_lock lock(mutex_);
  const auto key = std::pair{src, tag};
  const auto s = static_cast<std::size_t>(src);
  const bool ready = arrived_.wait_for(lock, timeout, [&] {
    auto it = inbox_.find(key);
    return (it != inbox_.end() && !it->second.empty()) || peer_closed_[s];
  });
  auto it = inbox_.find(key);
  if (it != inbox_.end() && !it->second.empty()) {
    std::vector<std::byte> payload = std::move(it->second.front());
    it->second.pop_front();
    lock.unlock();
    log_.record_recv(rank_, src, tag, payload.size(), 0.0);
    return payload;
  }
  if (!ready) {
    throw TransportError(fmt::format("recv timeout after {} s waiting on rank {} tag {}",
                                     options_.recv_timeout_s, src, tag));
  }
  throw TransportError(fmt::format("rank {} disconnected{}{}", src,
                                   peer_error_[s].empty() ? "" : ": ", peer_error_[s]));
}

double SocketTransport::virtual_time() const {
  throw UnsupportedOperationError("virtual_time is only available on the simulated transport");
}

void SocketTransport::mark(std::string_view label) { log_.record_mark(rank_, label, 0.0); }

void SocketTransport::shutdown() {
  for (int fd : fds_) {
    if (fd >= 0) ::shutdown(fd, SHUT_WR);
  }
  // Wait for peers to finish sending before tearing down, so a fast rank does
  // not reset connections that still carry data for a slower one. A failed
  // rendezvous has no readers and nothing to drain.
  if (!readers_.empty()) {
    std::unique_lock lock(mutex_);
    arrived_.wait_for(
        lock, std::chrono::milliseconds(static_cast<long>(options_.recv_timeout_s * 1000)), [&] {
          for (RankId peer = 0; peer < size_; ++peer) {
            if (peer != rank_ && !peer_closed_[static_cast<std::size_t>(peer)]) return false;
          }
          return true;
        });
  }
  for (int fd : fds_) {
    if (fd >= 0) ::shutdown(fd, SHUT_RDWR);
  }
  for (auto& t : readers_) {
    if (t.joinable()) t.join();
  }
  for (int& fd : fds_) {
    if (fd >= 0) ::close(fd);
    fd = -1;
  }
}

SocketTransport::~SocketTransport() { shutdown(); }

}  // namespace collectium
