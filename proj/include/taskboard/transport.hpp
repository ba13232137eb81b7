#pragma once

// Newline-delimited telemetry over plain TCP. The device side only writes;
// there are no acknowledgements (the server deduplicates by seq).

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <functional>
#include <iostream>
#include <list>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <utility>

namespace taskboard {

class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

/// Parses "host:port" or a bare "port".
inline Endpoint parse_endpoint(std::string_view text, std::string_view default_host = "127.0.0.1") {
  Endpoint ep;
  ep.host = std::string(default_host);
  std::string_view port_text = text;
  if (auto colon = text.rfind(':'); colon != std::string_view::npos) {
    ep.host = std::string(text.substr(0, colon));
    port_text = text.substr(colon + 1);
  }
  if (port_text.empty()) throw std::invalid_argument("missing port in '" + std::string(text) + "'");
  unsigned long value = 0;
  for (char c : port_text) {
    if (c < '0' || c > '9') throw std::invalid_argument("bad port in '" + std::string(text) + "'");
    value = value * 10 + static_cast<unsigned long>(c - '0');
    if (value > 65535) throw std::invalid_argument("port out of range in '" + std::string(text) + "'");
  }
  ep.port = static_cast<std::uint16_t>(value);
  if (ep.host.empty()) ep.host = std::string(default_host);
  return ep;
}

namespace detail {

/// Owning socket descriptor.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  ~Socket() { reset(); }

  int fd() const noexcept { return fd_; }
  explicit operator bool() const noexcept { return fd_ >= 0; }
  void reset() noexcept {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

inline Socket connect_tcp(const Endpoint& ep) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string port = std::to_string(ep.port);
  if (int rc = ::getaddrinfo(ep.host.c_str(), port.c_str(), &hints, &res); rc != 0) {
    throw TransportError("resolve " + ep.host + ": " + ::gai_strerror(rc));
  }
  Socket sock;
  int last_errno = 0;
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    Socket s(::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol));
    if (!s) continue;
    if (::connect(s.fd(), ai->ai_addr, ai->ai_addrlen) == 0) {
      int one = 1;
      ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      sock = std::move(s);
      break;
    }
    last_errno = errno;
  }
  ::freeaddrinfo(res);
  if (!sock) {
    throw TransportError("connect " + ep.host + ":" + port + ": " + std::strerror(last_errno));
  }
  return sock;
}

inline bool send_all(int fd, std::string_view data) {
  while (!data.empty()) {
    ssize_t n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
  return true;
}

}  // namespace detail

struct RetryPolicy {
  int attempts = 5;
  std::chrono::milliseconds initial_backoff{100};
  double factor = 2.0;
};

/// Device-side writer. Connects lazily and reconnects with bounded
/// exponential backoff; gives up with TransportError.
class TcpLineSender {
 public:
  explicit TcpLineSender(Endpoint server, RetryPolicy retry = {}) : server_(std::move(server)), retry_(retry) {}

  void send_line(std::string_view line) {
    std::lock_guard lock(mutex_);
    auto backoff = retry_.initial_backoff;
    std::string last_error = "no attempt made";
    for (int attempt = 0; attempt < retry_.attempts; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(backoff);
        backoff = std::chrono::milliseconds(static_cast<long long>(static_cast<double>(backoff.count()) * retry_.factor));
      }
      try {
        if (!socket_) socket_ = detail::connect_tcp(server_);
      } catch (const TransportError& e) {
        last_error = e.what();
        continue;
      }
      if (detail::send_all(socket_.fd(), line)) return;
      last_error = std::string("send: ") + std::strerror(errno);
      socket_.reset();
    }
    throw TransportError("giving up after " + std::to_string(retry_.attempts) + " attempts: " + last_error);
  }

  void close() {
    std::lock_guard lock(mutex_);
    socket_.reset();
  }

 private:
  Endpoint server_;
  RetryPolicy retry_;
  std::mutex mutex_;
  detail::Socket socket_;
};

/// Accepts TCP connections and hands every complete line to `on_line`.
/// Each connection is served by its own thread.
class LineListener {
 public:
  using Handler = std::function<void(std::string_view)>;

  LineListener(const Endpoint& bind_to, Handler on_line) : on_line_(std::move(on_line)) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    hints.ai_flags = AI_PASSIVE;
    addrinfo* res = nullptr;
    const std::string port = std::to_string(bind_to.port);
    const char* host = bind_to.host.empty() ? nullptr : bind_to.host.c_str();
    if (int rc = ::getaddrinfo(host, port.c_str(), &hints, &res); rc != 0) {
      throw TransportError("resolve " + bind_to.host + ": " + ::gai_strerror(rc));
    }
    for (addrinfo* ai = res; ai && !listen_socket_; ai = ai->ai_next) {
      detail::Socket s(::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol));
      if (!s) continue;
      int one = 1;
      ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
      if (::bind(s.fd(), ai->ai_addr, ai->ai_addrlen) == 0 && ::listen(s.fd(), 64) == 0) listen_socket_ = std::move(s);
    }
    ::freeaddrinfo(res);
    if (!listen_socket_) throw TransportError("cannot listen on " + bind_to.host + ":" + port);

    sockaddr_storage addr{};
    socklen_t len = sizeof(addr);
    ::getsockname(listen_socket_.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.ss_family == AF_INET6 ? reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port
                                               : reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
    accept_thread_ = std::thread([this] { accept_loop(); });
  }

  LineListener(const LineListener&) = delete;
  LineListener& operator=(const LineListener&) = delete;
  ~LineListener() { stop(); }

  std::uint16_t port() const noexcept { return port_; }

  void stop() {
    if (stopping_.exchange(true)) return;
    if (accept_thread_.joinable()) accept_thread_.join();
    std::lock_guard lock(connections_mutex_);
    for (auto& t : connections_) {
      if (t.joinable()) t.join();
    }
    connections_.clear();
    listen_socket_.reset();
  }

 private:
  static constexpr int kPollMs = 50;

  void accept_loop() {
    while (!stopping_) {
      pollfd pfd{listen_socket_.fd(), POLLIN, 0};
      if (::poll(&pfd, 1, kPollMs) <= 0) continue;
      int fd = ::accept4(listen_socket_.fd(), nullptr, nullptr, SOCK_CLOEXEC);
      if (fd < 0) continue;
      std::lock_guard lock(connections_mutex_);
      connections_.emplace_back([this, sock = detail::Socket(fd)]() mutable { serve(std::move(sock)); });
    }
  }

  void serve(detail::Socket sock) {
    std::string buffer;
    char chunk[4096];
    while (!stopping_) {
      pollfd pfd{sock.fd(), POLLIN, 0};
      int rc = ::poll(&pfd, 1, kPollMs);
      if (rc == 0) continue;
      if (rc < 0) {
        if (errno == EINTR) continue;
        break;
      }
      ssize_t n = ::recv(sock.fd(), chunk, sizeof(chunk), 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) break;
      buffer.append(chunk, static_cast<std::size_t>(n));
      std::size_t start = 0;
      for (auto nl = buffer.find('\n', start); nl != std::string::npos; nl = buffer.find('\n', start)) {
        deliver(std::string_view(buffer).substr(start, nl - start + 1));
        start = nl + 1;
      }
      buffer.erase(0, start);
    }
  }

  void deliver(std::string_view line) {
    try {
      on_line_(line);
    } catch (const std::exception& e) {
      std::cerr << "telemetry listener: " << e.what() << "\n";
    }
  }

  Handler on_line_;
  detail::Socket listen_socket_;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread accept_thread_;
  std::mutex connections_mutex_;
  std::list<std::thread> connections_;
};

}  // namespace taskboard
