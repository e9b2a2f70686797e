#pragma once

// Ordered, reliable frame links. Both transports move encoded frames, so a
// pipeline behaves identically over in-process queues and loopback TCP.

#include "pdual/pipeline/wire.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pdual {

class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FrameWriter {
 public:
  virtual ~FrameWriter() = default;
  virtual void write_frame(std::span<const std::uint8_t> frame) = 0;
  virtual void close() = 0;
  /// Drops this handle without signalling the peer (after fork, in the
  /// process that does not own the end).
  virtual void abandon() {}
};

class FrameReader {
 public:
  virtual ~FrameReader() = default;
  /// Next complete frame, or nullopt once the peer closed the link.
  virtual std::optional<std::vector<std::uint8_t>> read_frame() = 0;
  virtual void abandon() {}
};

/// Sending end of a link; safe to share between threads.
class Outbound {
 public:
  explicit Outbound(std::unique_ptr<FrameWriter> w) : writer_(std::move(w)) {}
  void send(const Message& m) {
    const auto frame = encode(m);
    std::lock_guard lock(mutex_);
    writer_->write_frame(frame);
  }
  void close() {
    std::lock_guard lock(mutex_);
    writer_->close();
  }
  void abandon() {
    std::lock_guard lock(mutex_);
    writer_->abandon();
  }

 private:
  std::mutex mutex_;
  std::unique_ptr<FrameWriter> writer_;
};

/// Receiving end of a link; single consumer.
class Inbound {
 public:
  explicit Inbound(std::unique_ptr<FrameReader> r) : reader_(std::move(r)) {}
  std::optional<Message> receive() {
    auto frame = reader_->read_frame();
    if (!frame) return std::nullopt;
    return decode_frame(*frame);
  }
  void abandon() { reader_->abandon(); }

 private:
  std::unique_ptr<FrameReader> reader_;
};

struct Link {
  std::unique_ptr<Outbound> out;
  std::unique_ptr<Inbound> in;
};

// ---------------------------------------------------------------- in-process

namespace detail {

struct FrameQueue {
  std::mutex mutex;
  std::condition_variable cv;
  std::deque<std::vector<std::uint8_t>> frames;
  bool closed = false;
};

class QueueWriter final : public FrameWriter {
 public:
  explicit QueueWriter(std::shared_ptr<FrameQueue> q) : q_(std::move(q)) {}
  ~QueueWriter() override { close(); }
  void write_frame(std::span<const std::uint8_t> frame) override {
    {
      std::lock_guard lock(q_->mutex);
      if (q_->closed) throw TransportError("write on closed in-process link");
      q_->frames.emplace_back(frame.begin(), frame.end());
    }
    q_->cv.notify_one();
  }
  void close() override {
    {
      std::lock_guard lock(q_->mutex);
      q_->closed = true;
    }
    q_->cv.notify_all();
  }

 private:
  std::shared_ptr<FrameQueue> q_;
};

class QueueReader final : public FrameReader {
 public:
  explicit QueueReader(std::shared_ptr<FrameQueue> q) : q_(std::move(q)) {}
  std::optional<std::vector<std::uint8_t>> read_frame() override {
    std::unique_lock lock(q_->mutex);
    q_->cv.wait(lock, [&] { return !q_->frames.empty() || q_->closed; });
    if (q_->frames.empty()) return std::nullopt;
    auto f = std::move(q_->frames.front());
    q_->frames.pop_front();
    return f;
  }

 private:
  std::shared_ptr<FrameQueue> q_;
};

}  // namespace detail

inline Link make_inprocess_link() {
  auto q = std::make_shared<detail::FrameQueue>();
  return {std::make_unique<Outbound>(std::make_unique<detail::QueueWriter>(q)),
          std::make_unique<Inbound>(std::make_unique<detail::QueueReader>(q))};
}

// -------------------------------------------------------------------- socket

namespace detail {

class SocketFd {
 public:
  SocketFd() = default;
  explicit SocketFd(int fd) : fd_(fd) {}
  SocketFd(SocketFd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  SocketFd& operator=(SocketFd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  SocketFd(const SocketFd&) = delete;
  SocketFd& operator=(const SocketFd&) = delete;
  ~SocketFd() { reset(); }

  int get() const { return fd_; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }
  void shutdown_write() {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_WR);
  }

 private:
  int fd_ = -1;
};

inline std::string errno_text(const char* what) {
  return std::string(what) + ": " + std::strerror(errno);
}

class SocketWriter final : public FrameWriter {
 public:
  explicit SocketWriter(SocketFd fd) : fd_(std::move(fd)) {}
  ~SocketWriter() override { close(); }
  void write_frame(std::span<const std::uint8_t> frame) override {
    std::size_t sent = 0;
    while (sent < frame.size()) {
      const ssize_t r = ::send(fd_.get(), frame.data() + sent, frame.size() - sent, MSG_NOSIGNAL);
      if (r < 0) {
        if (errno == EINTR) continue;
        throw TransportError(errno_text("socket send"));
      }
      sent += static_cast<std::size_t>(r);
    }
  }
  void close() override {
    fd_.shutdown_write();
    fd_.reset();
  }
  void abandon() override { fd_.reset(); }

 private:
  SocketFd fd_;
};

class SocketReader final : public FrameReader {
 public:
  explicit SocketReader(SocketFd fd) : fd_(std::move(fd)) {}
  void abandon() override { fd_.reset(); }
  std::optional<std::vector<std::uint8_t>> read_frame() override {
    std::vector<std::uint8_t> frame(kFrameHeaderSize);
    if (!read_exact(frame.data(), kFrameHeaderSize, true)) return std::nullopt;
    const std::uint32_t len = wire::get_u32(frame.data());
    if (len > kMaxPayload) throw ProtocolError("frame payload too large");
    frame.resize(kFrameHeaderSize + len);
    if (!read_exact(frame.data() + kFrameHeaderSize, len, false)) {
      throw TransportError("link closed mid-frame");
    }
    return frame;
  }

 private:
  // false only on a clean close before the first byte when allow_eof is set
  bool read_exact(std::uint8_t* dst, std::size_t n, bool allow_eof) {
    std::size_t got = 0;
    while (got < n) {
      const ssize_t r = ::recv(fd_.get(), dst + got, n - got, 0);
      if (r == 0) {
        if (allow_eof && got == 0) return false;
        throw TransportError("link closed mid-frame");
      }
      if (r < 0) {
        if (errno == EINTR) continue;
        throw TransportError(errno_text("socket recv"));
      }
      got += static_cast<std::size_t>(r);
    }
    return true;
  }

  SocketFd fd_;
};

inline SocketFd listen_loopback(int port, int& bound_port) {
  SocketFd fd(::socket(AF_INET, SOCK_STREAM, 0));
  if (fd.get() < 0) throw TransportError(errno_text("socket"));
  const int one = 1;
  ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::bind(fd.get(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) {
    throw TransportError(errno_text("bind"));
  }
  if (::listen(fd.get(), 1) < 0) throw TransportError(errno_text("listen"));
  socklen_t len = sizeof addr;
  ::getsockname(fd.get(), reinterpret_cast<sockaddr*>(&addr), &len);
  bound_port = ntohs(addr.sin_port);
  return fd;
}

inline SocketFd connect_loopback(int port) {
  SocketFd fd(::socket(AF_INET, SOCK_STREAM, 0));
  if (fd.get() < 0) throw TransportError(errno_text("socket"));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::connect(fd.get(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) {
    throw TransportError(errno_text("connect"));
  }
  const int one = 1;
  ::setsockopt(fd.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return fd;
}

inline SocketFd accept_one(const SocketFd& listener) {
  for (;;) {
    const int fd = ::accept(listener.get(), nullptr, nullptr);
    if (fd >= 0) return SocketFd(fd);
    if (errno != EINTR) throw TransportError(errno_text("accept"));
  }
}

}  // namespace detail

/// One TCP connection over 127.0.0.1. port 0 picks an ephemeral port.
inline Link make_socket_link(int port = 0) {
  int bound = 0;
  detail::SocketFd listener = detail::listen_loopback(port, bound);
  detail::SocketFd client = detail::connect_loopback(bound);
  detail::SocketFd server = detail::accept_one(listener);
  return {std::make_unique<Outbound>(std::make_unique<detail::SocketWriter>(std::move(client))),
          std::make_unique<Inbound>(std::make_unique<detail::SocketReader>(std::move(server)))};
}

}  // namespace pdual
