#pragma once

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "onionbox/bytes.hpp"
#include "onionbox/cell.hpp"
#include "onionbox/error.hpp"

namespace onionbox::net {

struct HostPort {
    std::string host;
    uint16_t port = 0;

    std::string str() const { return host + ":" + std::to_string(port); }
};

inline HostPort parse_hostport(const std::string& s) {
    auto pos = s.rfind(':');
    if (pos == std::string::npos || pos == 0 || pos + 1 == s.size())
        throw Error(Error::Kind::Validation, "expected host:port, got '" + s + "'");
    int port = 0;
    try {
        port = std::stoi(s.substr(pos + 1));
    } catch (...) {
        throw Error(Error::Kind::Validation, "bad port in '" + s + "'");
    }
    if (port < 1 || port > 65535) throw Error(Error::Kind::Validation, "port out of range");
    return HostPort{s.substr(0, pos), static_cast<uint16_t>(port)};
}

// IPv4 only, and deliberately no system name resolution: anything that is not
// a dotted quad (or "localhost") must be resolved through the network first.
inline std::optional<in_addr> parse_ipv4(const std::string& host) {
    std::string h = (host == "localhost") ? "127.0.0.1" : host;
    in_addr addr{};
    if (inet_pton(AF_INET, h.c_str(), &addr) == 1) return addr;
    return std::nullopt;
}

inline bool is_ipv4_literal(const std::string& host) { return parse_ipv4(host).has_value(); }

inline std::string ipv4_to_string(const uint8_t octets[4]) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%u.%u.%u.%u", octets[0], octets[1], octets[2], octets[3]);
    return buf;
}

namespace detail {

inline void throw_errno(const std::string& what) {
    throw Error(Error::Kind::Net, what + ": " + std::strerror(errno));
}

inline void set_nonblocking(int fd, bool on) {
    int flags = fcntl(fd, F_GETFL, 0);
    if (flags < 0) throw_errno("fcntl");
    if (fcntl(fd, F_SETFL, on ? (flags | O_NONBLOCK) : (flags & ~O_NONBLOCK)) < 0)
        throw_errno("fcntl");
}

}  // namespace detail

class TcpConn {
public:
    TcpConn() = default;
    explicit TcpConn(int fd) : fd_(fd) {}
    TcpConn(const TcpConn&) = delete;
    TcpConn& operator=(const TcpConn&) = delete;
    TcpConn(TcpConn&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }
    TcpConn& operator=(TcpConn&& o) noexcept {
        if (this != &o) {
            close();
            fd_ = o.fd_;
            o.fd_ = -1;
        }
        return *this;
    }
    ~TcpConn() { close(); }

    static TcpConn connect(const HostPort& to, int timeout_ms) {
        auto addr = parse_ipv4(to.host);
        if (!addr)
            throw Error(Error::Kind::Net,
                        "refusing to resolve '" + to.host + "' locally; IPv4 targets only");
        int fd = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd < 0) detail::throw_errno("socket");
        TcpConn conn(fd);
        sockaddr_in sa{};
        sa.sin_family = AF_INET;
        sa.sin_addr = *addr;
        sa.sin_port = htons(to.port);
        detail::set_nonblocking(fd, true);
        int rc = ::connect(fd, reinterpret_cast<sockaddr*>(&sa), sizeof sa);
        if (rc < 0 && errno != EINPROGRESS) detail::throw_errno("connect " + to.str());
        if (rc < 0) {
            pollfd pfd{fd, POLLOUT, 0};
            int pr = ::poll(&pfd, 1, timeout_ms);
            if (pr == 0)
                throw Error(Error::Kind::Timeout, "connect to " + to.str() + " timed out");
            if (pr < 0) detail::throw_errno("poll");
            int err = 0;
            socklen_t len = sizeof err;
            getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
            if (err != 0)
                throw Error(Error::Kind::Net,
                            "connect " + to.str() + ": " + std::strerror(err));
        }
        detail::set_nonblocking(fd, false);
        int one = 1;
        setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
        return conn;
    }

    bool valid() const { return fd_ >= 0; }
    int fd() const { return fd_; }

    void set_recv_timeout(int ms) const {
        timeval tv{ms / 1000, (ms % 1000) * 1000};
        setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
    }

    // Returns bytes read, 0 on orderly EOF.
    size_t read_some(uint8_t* buf, size_t n) const {
        while (true) {
            ssize_t r = ::recv(fd_, buf, n, 0);
            if (r >= 0) return static_cast<size_t>(r);
            if (errno == EINTR) continue;
            if (errno == EAGAIN || errno == EWOULDBLOCK)
                throw Error(Error::Kind::Timeout, "recv timed out");
            throw Error(Error::Kind::Net, std::string("recv: ") + std::strerror(errno));
        }
    }

    void read_exact(uint8_t* buf, size_t n) const {
        size_t got = 0;
        while (got < n) {
            size_t r = read_some(buf + got, n - got);
            if (r == 0) throw Error(Error::Kind::Net, "connection closed mid-read");
            got += r;
        }
    }

    Bytes read_exact(size_t n) const {
        Bytes out(n);
        read_exact(out.data(), n);
        return out;
    }

    void write_all(BytesView data) const {
        size_t sent = 0;
        while (sent < data.size()) {
            ssize_t w = ::send(fd_, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
            if (w < 0) {
                if (errno == EINTR) continue;
                throw Error(Error::Kind::Net, std::string("send: ") + std::strerror(errno));
            }
            sent += static_cast<size_t>(w);
        }
    }

    void shutdown_both() const {
        if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
    }

    void shutdown_write() const {
        if (fd_ >= 0) ::shutdown(fd_, SHUT_WR);
    }

    void close() {
        if (fd_ >= 0) {
            ::close(fd_);
            fd_ = -1;
        }
    }

    std::string peer() const {
        sockaddr_in sa{};
        socklen_t len = sizeof sa;
        if (getpeername(fd_, reinterpret_cast<sockaddr*>(&sa), &len) != 0) return "?";
        char ip[INET_ADDRSTRLEN];
        inet_ntop(AF_INET, &sa.sin_addr, ip, sizeof ip);
        return std::string(ip) + ":" + std::to_string(ntohs(sa.sin_port));
    }

    uint16_t local_port() const {
        sockaddr_in sa{};
        socklen_t len = sizeof sa;
        if (getsockname(fd_, reinterpret_cast<sockaddr*>(&sa), &len) != 0) return 0;
        return ntohs(sa.sin_port);
    }

private:
    int fd_ = -1;
};

class TcpListener {
public:
    TcpListener() = default;
    TcpListener(const std::string& host, uint16_t port) { bind(host, port); }
    TcpListener(const TcpListener&) = delete;
    TcpListener& operator=(const TcpListener&) = delete;
    ~TcpListener() { close(); }

    void bind(const std::string& host, uint16_t port) {
        auto addr = parse_ipv4(host);
        if (!addr) throw Error(Error::Kind::Net, "listen host must be an IPv4 literal");
        fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd_ < 0) detail::throw_errno("socket");
        int one = 1;
        setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
        sockaddr_in sa{};
        sa.sin_family = AF_INET;
        sa.sin_addr = *addr;
        sa.sin_port = htons(port);
        if (::bind(fd_, reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0) {
            int e = errno;
            ::close(fd_);
            fd_ = -1;
            errno = e;
            detail::throw_errno("bind " + host + ":" + std::to_string(port));
        }
        if (::listen(fd_, 64) != 0) detail::throw_errno("listen");
        socklen_t len = sizeof sa;
        getsockname(fd_, reinterpret_cast<sockaddr*>(&sa), &len);
        port_ = ntohs(sa.sin_port);
        host_ = host;
    }

    // Blocks until a connection arrives or the listener is closed.
    std::optional<TcpConn> accept() const {
        while (true) {
            int cfd = ::accept(fd_, nullptr, nullptr);
            if (cfd >= 0) {
                int one = 1;
                setsockopt(cfd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
                return TcpConn(cfd);
            }
            if (errno == EINTR) continue;
            return std::nullopt;  // listener shut down
        }
    }

    bool valid() const { return fd_ >= 0; }
    uint16_t port() const { return port_; }
    HostPort addr() const { return {host_ == "0.0.0.0" ? "127.0.0.1" : host_, port_}; }

    void close() {
        if (fd_ >= 0) {
            ::shutdown(fd_, SHUT_RDWR);
            ::close(fd_);
            fd_ = -1;
        }
    }

private:
    int fd_ = -1;
    uint16_t port_ = 0;
    std::string host_;
};

// Cell-framed view of a TCP connection. One reader thread per link; writers
// from any thread serialize on the write mutex so cells never interleave.
class FramedLink {
public:
    explicit FramedLink(TcpConn conn) : conn_(std::move(conn)) {}

    // nullopt on orderly EOF at a frame boundary.
    std::optional<Bytes> read_cell() {
        Bytes frame(CELL_SIZE);
        size_t have = 0;
        while (have < CELL_SIZE) {
            if (buf_pos_ < buf_end_) {
                size_t take = std::min(CELL_SIZE - have, buf_end_ - buf_pos_);
                std::memcpy(frame.data() + have, buf_ + buf_pos_, take);
                buf_pos_ += take;
                have += take;
                continue;
            }
            size_t r = conn_.read_some(buf_, sizeof buf_);
            if (r == 0) {
                if (have == 0) return std::nullopt;
                throw Error(Error::Kind::Net, "link closed mid-cell");
            }
            buf_pos_ = 0;
            buf_end_ = r;
        }
        return frame;
    }

    void write_cell(BytesView frame) {
        std::lock_guard lk(write_mu_);
        conn_.write_all(frame);
    }

    void send(const Cell& cell) { write_cell(encode_cell(cell)); }

    void set_recv_timeout(int ms) { conn_.set_recv_timeout(ms); }
    void shutdown() { conn_.shutdown_both(); }
    std::string peer() const { return conn_.peer(); }
    const TcpConn& conn() const { return conn_; }

private:
    TcpConn conn_;
    std::mutex write_mu_;
    uint8_t buf_[16 * CELL_SIZE]{};
    size_t buf_pos_ = 0;
    size_t buf_end_ = 0;
};

// Newline-delimited text exchange (the directory protocol).
inline std::optional<std::string> read_line(const TcpConn& conn, size_t max_len = 1 << 20) {
    std::string line;
    uint8_t c;
    while (line.size() < max_len) {
        size_t r = conn.read_some(&c, 1);
        if (r == 0) return line.empty() ? std::nullopt : std::make_optional(line);
        if (c == '\n') return line;
        line.push_back(static_cast<char>(c));
    }
    throw Error(Error::Kind::Protocol, "line too long");
}

inline void write_line(const TcpConn& conn, const std::string& line) {
    std::string out = line;
    out.push_back('\n');
    conn.write_all(Bytes(out.begin(), out.end()));
}

class UdpSock {
public:
    UdpSock() = default;
    UdpSock(const std::string& host, uint16_t port) { bind(host, port); }
    UdpSock(const UdpSock&) = delete;
    UdpSock& operator=(const UdpSock&) = delete;
    ~UdpSock() { close(); }

    void bind(const std::string& host, uint16_t port) {
        auto addr = parse_ipv4(host);
        if (!addr) throw Error(Error::Kind::Net, "udp bind host must be IPv4");
        fd_ = ::socket(AF_INET, SOCK_DGRAM, 0);
        if (fd_ < 0) detail::throw_errno("socket");
        sockaddr_in sa{};
        sa.sin_family = AF_INET;
        sa.sin_addr = *addr;
        sa.sin_port = htons(port);
        if (::bind(fd_, reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0) {
            int e = errno;
            ::close(fd_);
            fd_ = -1;
            errno = e;
            detail::throw_errno("udp bind");
        }
        socklen_t len = sizeof sa;
        getsockname(fd_, reinterpret_cast<sockaddr*>(&sa), &len);
        port_ = ntohs(sa.sin_port);
    }

    void open_unbound() {
        fd_ = ::socket(AF_INET, SOCK_DGRAM, 0);
        if (fd_ < 0) detail::throw_errno("socket");
    }

    void send_to(const HostPort& to, BytesView payload) const {
        auto addr = parse_ipv4(to.host);
        if (!addr) throw Error(Error::Kind::Net, "udp target must be IPv4");
        sockaddr_in sa{};
        sa.sin_family = AF_INET;
        sa.sin_addr = *addr;
        sa.sin_port = htons(to.port);
        if (::sendto(fd_, payload.data(), payload.size(), 0, reinterpret_cast<sockaddr*>(&sa),
                     sizeof sa) < 0)
            detail::throw_errno("sendto");
    }

    struct Datagram {
        Bytes payload;
        std::string source;
    };

    std::optional<Datagram> recv(int timeout_ms) const {
        pollfd pfd{fd_, POLLIN, 0};
        int pr = ::poll(&pfd, 1, timeout_ms);
        if (pr == 0) return std::nullopt;
        if (pr < 0) {
            if (errno == EINTR) return std::nullopt;
            detail::throw_errno("poll");
        }
        uint8_t buf[2048];
        sockaddr_in sa{};
        socklen_t len = sizeof sa;
        ssize_t r = ::recvfrom(fd_, buf, sizeof buf, 0, reinterpret_cast<sockaddr*>(&sa), &len);
        if (r < 0) return std::nullopt;  // racing close
        char ip[INET_ADDRSTRLEN];
        inet_ntop(AF_INET, &sa.sin_addr, ip, sizeof ip);
        Datagram d;
        d.payload.assign(buf, buf + r);
        d.source = std::string(ip) + ":" + std::to_string(ntohs(sa.sin_port));
        return d;
    }

    uint16_t port() const { return port_; }
    bool valid() const { return fd_ >= 0; }

    void close() {
        if (fd_ >= 0) {
            ::shutdown(fd_, SHUT_RDWR);
            ::close(fd_);
            fd_ = -1;
        }
    }

private:
    int fd_ = -1;
    uint16_t port_ = 0;
};

}  // namespace onionbox::net
