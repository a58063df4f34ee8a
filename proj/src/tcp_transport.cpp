#include "chainobs/tcp_transport.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>

namespace chainobs {

namespace {

using SteadyClock = std::chrono::steady_clock;

Millis elapsed_ms(SteadyClock::time_point since)
{
    return std::chrono::duration<double, std::milli>(SteadyClock::now() - since).count();
}

class FileDescriptor {
public:
    explicit FileDescriptor(int fd) : fd_(fd) {}
    FileDescriptor(const FileDescriptor&) = delete;
    FileDescriptor& operator=(const FileDescriptor&) = delete;
    FileDescriptor(FileDescriptor&& other) noexcept : fd_(other.release()) {}
    ~FileDescriptor()
    {
        if (fd_ >= 0) ::close(fd_);
    }

    int get() const { return fd_; }
    int release()
    {
        int fd = fd_;
        fd_ = -1;
        return fd;
    }

private:
    int fd_;
};

class TcpConnection : public Connection {
public:
    explicit TcpConnection(FileDescriptor fd) : fd_(std::move(fd)), epoch_(SteadyClock::now()) {}

    void send(ByteView bytes) override
    {
        std::size_t sent = 0;
        while (sent < bytes.size()) {
            ssize_t n = ::send(fd_.get(), bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
            if (n < 0) {
                if (errno == EINTR) continue;
                if (errno == EAGAIN || errno == EWOULDBLOCK) {
                    pollfd p{fd_.get(), POLLOUT, 0};
                    if (::poll(&p, 1, 1000) <= 0) throw TransportError("send timeout");
                    continue;
                }
                throw TransportError(std::string("send: ") + std::strerror(errno));
            }
            sent += static_cast<std::size_t>(n);
        }
    }

    RecvResult receive(Millis timeout) override
    {
        pollfd p{fd_.get(), POLLIN, 0};
        int rc = ::poll(&p, 1, timeout <= 0 ? 0 : static_cast<int>(timeout + 0.999));
        if (rc == 0) return {RecvStatus::timeout, {}};
        if (rc < 0) {
            if (errno == EINTR) return {RecvStatus::timeout, {}};
            return {RecvStatus::closed, {}};
        }
        Bytes buf(64 * 1024);
        ssize_t n = ::recv(fd_.get(), buf.data(), buf.size(), 0);
        if (n <= 0) {
            if (n < 0 && (errno == EAGAIN || errno == EINTR)) return {RecvStatus::timeout, {}};
            return {RecvStatus::closed, {}};
        }
        buf.resize(static_cast<std::size_t>(n));
        return {RecvStatus::data, std::move(buf)};
    }

    Millis now() const override { return elapsed_ms(epoch_); }

private:
    FileDescriptor fd_;
    SteadyClock::time_point epoch_;
};

} // namespace

ConnectResult TcpTransport::connect(const Endpoint& endpoint, Millis timeout)
{
    if (endpoint.is_onioncat()) return {nullptr, "onion endpoint needs a proxy", 0};

    sockaddr_storage storage{};
    socklen_t len = 0;
    int family = 0;
    if (endpoint.is_ipv4()) {
        auto* sin = reinterpret_cast<sockaddr_in*>(&storage);
        sin->sin_family = AF_INET;
        sin->sin_port = htons(endpoint.port());
        sin->sin_addr.s_addr = htonl(endpoint.ipv4());
        len = sizeof(sockaddr_in);
        family = AF_INET;
    } else {
        auto* sin6 = reinterpret_cast<sockaddr_in6*>(&storage);
        sin6->sin6_family = AF_INET6;
        sin6->sin6_port = htons(endpoint.port());
        std::memcpy(&sin6->sin6_addr, endpoint.ip().data(), 16);
        len = sizeof(sockaddr_in6);
        family = AF_INET6;
    }

    FileDescriptor fd(::socket(family, SOCK_STREAM | SOCK_NONBLOCK | SOCK_CLOEXEC, 0));
    if (fd.get() < 0) return {nullptr, std::string("socket: ") + std::strerror(errno), 0};
    int one = 1;
    ::setsockopt(fd.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));

    auto start = SteadyClock::now();
    if (::connect(fd.get(), reinterpret_cast<sockaddr*>(&storage), len) != 0) {
        if (errno != EINPROGRESS) return {nullptr, std::strerror(errno), elapsed_ms(start)};
        pollfd p{fd.get(), POLLOUT, 0};
        int rc = ::poll(&p, 1, static_cast<int>(timeout));
        if (rc == 0) return {nullptr, "connect timeout", elapsed_ms(start)};
        if (rc < 0) return {nullptr, std::strerror(errno), elapsed_ms(start)};
        int err = 0;
        socklen_t err_len = sizeof(err);
        ::getsockopt(fd.get(), SOL_SOCKET, SO_ERROR, &err, &err_len);
        if (err != 0) return {nullptr, std::strerror(err), elapsed_ms(start)};
    }
    Millis connect_ms = elapsed_ms(start);
    return {std::make_unique<TcpConnection>(std::move(fd)), {}, connect_ms};
}

} // namespace chainobs
