#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <thread>
#include <vector>

#include <json.hpp>

#include "onionbox/gateway.hpp"
#include "onionbox/relay.hpp"

namespace onionbox::harness {

// --- destination servers ------------------------------------------------------

struct ConnRecord {
    uint64_t bytes = 0;
    std::string hash_hex;  // BLAKE2b of everything received
};

// Returns whatever it receives. Keeps per-connection byte counts and hashes so
// tests can compare exit-side plaintext with what the client sent.
class EchoServer {
public:
    explicit EchoServer(uint16_t port = 0) : listener_("127.0.0.1", port) {
        accept_thread_ = std::thread([this] { accept_loop(); });
    }
    ~EchoServer() { stop(); }

    void stop() {
        bool expected = false;
        if (!stopping_.compare_exchange_strong(expected, true)) return;
        listener_.close();
        if (accept_thread_.joinable()) accept_thread_.join();
        std::vector<std::thread> conns;
        {
            std::lock_guard lk(mu_);
            conns.swap(conn_threads_);
        }
        for (auto& t : conns)
            if (t.joinable()) t.join();
    }

    net::HostPort addr() const { return listener_.addr(); }
    uint16_t port() const { return listener_.port(); }

    uint64_t total_received() const { return total_; }

    std::vector<ConnRecord> connections() const {
        std::lock_guard lk(mu_);
        return records_;
    }

private:
    void accept_loop() {
        while (true) {
            auto conn = listener_.accept();
            if (!conn) return;
            std::lock_guard lk(mu_);
            if (stopping_) return;
            conn_threads_.emplace_back(
                [this, c = std::make_shared<net::TcpConn>(std::move(*conn))] { serve(*c); });
        }
    }

    void serve(const net::TcpConn& conn) {
        crypto::Hasher hasher;
        uint64_t bytes = 0;
        Bytes buf(16 * 1024);
        try {
            while (true) {
                size_t r = conn.read_some(buf.data(), buf.size());
                if (r == 0) break;
                hasher.update(BytesView(buf.data(), r));
                bytes += r;
                total_ += r;
                conn.write_all(BytesView(buf.data(), r));
            }
        } catch (const Error&) {
        }
        std::lock_guard lk(mu_);
        records_.push_back(ConnRecord{bytes, hasher.hex()});
    }

    net::TcpListener listener_;
    std::thread accept_thread_;
    std::atomic<bool> stopping_{false};
    std::atomic<uint64_t> total_{0};
    mutable std::mutex mu_;
    std::vector<std::thread> conn_threads_;
    std::vector<ConnRecord> records_;
};

// Upload target: reads an 8-octet big-endian size then that many octets, and
// acknowledges with the received count (the "last byte acknowledged" moment).
class ByteSinkServer {
public:
    explicit ByteSinkServer(uint16_t port = 0) : listener_("127.0.0.1", port) {
        accept_thread_ = std::thread([this] { accept_loop(); });
    }
    ~ByteSinkServer() { stop(); }

    void stop() {
        bool expected = false;
        if (!stopping_.compare_exchange_strong(expected, true)) return;
        listener_.close();
        if (accept_thread_.joinable()) accept_thread_.join();
        std::vector<std::thread> conns;
        {
            std::lock_guard lk(mu_);
            conns.swap(conn_threads_);
        }
        for (auto& t : conns)
            if (t.joinable()) t.join();
    }

    net::HostPort addr() const { return listener_.addr(); }
    uint64_t total_received() const { return total_; }

private:
    void accept_loop() {
        while (true) {
            auto conn = listener_.accept();
            if (!conn) return;
            std::lock_guard lk(mu_);
            if (stopping_) return;
            conn_threads_.emplace_back(
                [this, c = std::make_shared<net::TcpConn>(std::move(*conn))] { serve(*c); });
        }
    }

    void serve(const net::TcpConn& conn) {
        try {
            Bytes header = conn.read_exact(8);
            uint64_t expect = get_be64(header.data());
            Bytes buf(64 * 1024);
            uint64_t got = 0;
            while (got < expect) {
                size_t r = conn.read_some(buf.data(),
                                          std::min<uint64_t>(buf.size(), expect - got));
                if (r == 0) break;
                got += r;
                total_ += r;
            }
            Bytes ack(8);
            put_be64(ack.data(), got);
            conn.write_all(ack);
        } catch (const Error&) {
        }
    }

    net::TcpListener listener_;
    std::thread accept_thread_;
    std::atomic<bool> stopping_{false};
    std::atomic<uint64_t> total_{0};
    mutable std::mutex mu_;
    std::vector<std::thread> conn_threads_;
};

// Download source: reads an 8-octet big-endian size request and streams that
// many octets back.
class ByteSourceServer {
public:
    explicit ByteSourceServer(uint16_t port = 0) : listener_("127.0.0.1", port) {
        accept_thread_ = std::thread([this] { accept_loop(); });
    }
    ~ByteSourceServer() { stop(); }

    void stop() {
        bool expected = false;
        if (!stopping_.compare_exchange_strong(expected, true)) return;
        listener_.close();
        if (accept_thread_.joinable()) accept_thread_.join();
        std::vector<std::thread> conns;
        {
            std::lock_guard lk(mu_);
            conns.swap(conn_threads_);
        }
        for (auto& t : conns)
            if (t.joinable()) t.join();
    }

    net::HostPort addr() const { return listener_.addr(); }
    uint64_t total_sent() const { return total_; }

private:
    void accept_loop() {
        while (true) {
            auto conn = listener_.accept();
            if (!conn) return;
            std::lock_guard lk(mu_);
            if (stopping_) return;
            conn_threads_.emplace_back(
                [this, c = std::make_shared<net::TcpConn>(std::move(*conn))] { serve(*c); });
        }
    }

    void serve(const net::TcpConn& conn) {
        try {
            Bytes header = conn.read_exact(8);
            uint64_t want = get_be64(header.data());
            Bytes buf(64 * 1024);
            for (size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<uint8_t>(i * 31 + 7);
            uint64_t sent = 0;
            while (sent < want) {
                size_t n = std::min<uint64_t>(buf.size(), want - sent);
                conn.write_all(BytesView(buf.data(), n));
                sent += n;
                total_ += n;
            }
        } catch (const Error&) {
        }
    }

    net::TcpListener listener_;
    std::thread accept_thread_;
    std::atomic<bool> stopping_{false};
    std::atomic<uint64_t> total_{0};
    mutable std::mutex mu_;
    std::vector<std::thread> conn_threads_;
};

// --- trap resolver --------------------------------------------------------------
//
// A UDP listener that logs every datagram it receives. Doubles as the
// artifact's stand-in "system resolver": query = the bare hostname, reply =
// status octet + IPv4. Any query that reaches it IS a leak when the sender
// was supposed to resolve through the network.

struct TrapHit {
    int64_t timestamp_ms = 0;
    std::string source;
    std::string query;
};

class UdpNameServer {
public:
    explicit UdpNameServer(std::map<std::string, std::string> hosts = {}, uint16_t port = 0)
        : hosts_(std::move(hosts)) {
        try {
            sock_.bind("127.0.0.1", port);
        } catch (const Error& e) {
            throw Error(Error::Kind::Spawn, std::string("trap resolver: ") + e.what());
        }
        thread_ = std::thread([this] { loop(); });
    }
    ~UdpNameServer() { stop(); }

    void stop() {
        bool expected = false;
        if (!stopping_.compare_exchange_strong(expected, true)) return;
        sock_.close();
        if (thread_.joinable()) thread_.join();
    }

    net::HostPort addr() const { return {"127.0.0.1", sock_.port()}; }

    size_t hit_count() const {
        std::lock_guard lk(mu_);
        return hits_.size();
    }

    std::vector<TrapHit> hits() const {
        std::lock_guard lk(mu_);
        return hits_;
    }

private:
    void loop() {
        while (!stopping_) {
            std::optional<net::UdpSock::Datagram> dg;
            try {
                dg = sock_.recv(200);
            } catch (const Error&) {
                return;
            }
            if (!dg) continue;
            std::string name = to_string(dg->payload);
            {
                std::lock_guard lk(mu_);
                hits_.push_back(TrapHit{
                    std::chrono::duration_cast<std::chrono::milliseconds>(
                        std::chrono::system_clock::now().time_since_epoch())
                        .count(),
                    dg->source, name});
            }
            Bytes reply;
            auto it = hosts_.find(name);
            if (it != hosts_.end()) {
                reply.push_back(RESOLVED_OK);
                auto addr = net::parse_ipv4(it->second);
                reply.resize(5);
                std::memcpy(reply.data() + 1, &addr->s_addr, 4);
            } else {
                reply.push_back(RESOLVED_UNKNOWN_HOST);
            }
            try {
                sock_.send_to(net::parse_hostport(dg->source), reply);
            } catch (const Error&) {
            }
        }
    }

    net::UdpSock sock_;
    std::map<std::string, std::string> hosts_;
    std::thread thread_;
    std::atomic<bool> stopping_{false};
    mutable std::mutex mu_;
    std::vector<TrapHit> hits_;
};

// --- wire tap ---------------------------------------------------------------------
//
// A forwarding proxy spliced into an inter-node link. It audits the byte
// stream in both directions (everything after the JSON directory exchange
// must parse as back-to-back 512-octet cells) and can flip one bit in the
// next RELAY cell to exercise tamper handling.

class TapProxy {
public:
    explicit TapProxy(net::HostPort target, uint16_t port = 0)
        : target_(std::move(target)), listener_("127.0.0.1", port) {
        accept_thread_ = std::thread([this] { accept_loop(); });
    }
    ~TapProxy() { stop(); }

    void stop() {
        bool expected = false;
        if (!stopping_.compare_exchange_strong(expected, true)) return;
        listener_.close();
        std::vector<std::shared_ptr<net::TcpConn>> conns;
        {
            std::lock_guard lk(mu_);
            conns = open_conns_;
        }
        for (auto& c : conns) c->shutdown_both();
        if (accept_thread_.joinable()) accept_thread_.join();
        std::vector<std::thread> pumps;
        {
            std::lock_guard lk(mu_);
            pumps.swap(pump_threads_);
        }
        for (auto& t : pumps)
            if (t.joinable()) t.join();
    }

    net::HostPort addr() const { return listener_.addr(); }

    uint64_t frames_seen() const { return frames_; }
    uint64_t off_size_frames() const { return off_size_; }
    uint64_t bytes_seen() const { return bytes_; }

    // Flip one payload bit in the next RELAY cell passing in either direction.
    void arm_corruption() { corrupt_armed_ = true; }
    bool corruption_pending() const { return corrupt_armed_; }

private:
    void accept_loop() {
        while (true) {
            auto conn = listener_.accept();
            if (!conn) return;
            std::shared_ptr<net::TcpConn> client;
            std::shared_ptr<net::TcpConn> server;
            try {
                client = std::make_shared<net::TcpConn>(std::move(*conn));
                server = std::make_shared<net::TcpConn>(net::TcpConn::connect(target_, 5000));
            } catch (const Error&) {
                continue;  // target down; drop the attempt
            }
            std::lock_guard lk(mu_);
            if (stopping_) return;
            open_conns_.push_back(client);
            open_conns_.push_back(server);
            pump_threads_.emplace_back([this, client, server] { pump(*client, *server); });
            pump_threads_.emplace_back([this, client, server] { pump(*server, *client); });
        }
    }

    // Forward whole frames so the audit and the corruption hook stay aligned
    // with cell boundaries.
    void pump(const net::TcpConn& from, const net::TcpConn& to) {
        Bytes pending;
        Bytes buf(16 * 1024);
        try {
            while (true) {
                size_t r = from.read_some(buf.data(), buf.size());
                if (r == 0) break;
                bytes_ += r;
                append(pending, BytesView(buf.data(), r));
                size_t full = pending.size() / CELL_SIZE * CELL_SIZE;
                if (full == 0) continue;
                for (size_t off = 0; off < full; off += CELL_SIZE)
                    audit_frame(std::span<uint8_t>(pending.data() + off, CELL_SIZE));
                to.write_all(BytesView(pending.data(), full));
                pending.erase(pending.begin(), pending.begin() + full);
            }
        } catch (const Error&) {
        }
        if (!pending.empty()) {
            off_size_++;  // stream ended mid-frame
            try {
                to.write_all(pending);
            } catch (const Error&) {
            }
        }
        to.shutdown_write();
    }

    void audit_frame(std::span<uint8_t> frame) {
        frames_++;
        try {
            decode_cell(BytesView(frame.data(), frame.size()));
        } catch (const Error&) {
            off_size_++;  // not a well-formed cell
            return;
        }
        if (frame[4] == static_cast<uint8_t>(CellCommand::RELAY)) {
            bool expected = true;
            if (corrupt_armed_.compare_exchange_strong(expected, false))
                frame[CELL_HEADER + 40] ^= 0x01;
        }
    }

    net::HostPort target_;
    net::TcpListener listener_;
    std::thread accept_thread_;
    std::atomic<bool> stopping_{false};
    std::atomic<uint64_t> frames_{0};
    std::atomic<uint64_t> off_size_{0};
    std::atomic<uint64_t> bytes_{0};
    std::atomic<bool> corrupt_armed_{false};
    std::mutex mu_;
    std::vector<std::thread> pump_threads_;
    std::vector<std::shared_ptr<net::TcpConn>> open_conns_;
};

// --- testnet ----------------------------------------------------------------------

struct TestnetSpec {
    size_t relays = 3;
    size_t path_length = 3;
    bool with_gateway = true;
    GatewayMode gateway_mode = GatewayMode::ONION;
    bool leaky = false;
    bool with_taps = false;                  // splice a TapProxy before every relay
    int circuit_lifetime_s = 600;
    std::vector<double> shape_mbps;          // per-relay token bucket, 0 = unshaped
    std::map<std::string, std::string> exit_hosts;  // extra static names for exits
    std::map<std::string, std::string> trap_hosts;  // names the trap resolver answers
    std::optional<RngFn> gateway_rng;
    // Explicit ports (0 = pick free). Used by the port-conflict and reuse tests.
    uint16_t directory_port = 0;
    std::vector<uint16_t> relay_ports;
    uint16_t gateway_port = 0;
};

// Boots directory + relays + gateway + destination servers + trap resolver in
// one process group, on loopback ports.
class Testnet {
public:
    explicit Testnet(TestnetSpec spec) : spec_(std::move(spec)) {
        try {
            boot();
        } catch (...) {
            shutdown();
            throw;
        }
    }

    ~Testnet() { shutdown(); }

    net::HostPort directory_addr() const { return directory_->addr(); }
    net::HostPort gateway_addr() const { return gateway_->addr(); }
    net::HostPort echo_addr() const { return echo_->addr(); }
    net::HostPort sink_addr() const { return sink_->addr(); }
    net::HostPort source_addr() const { return source_->addr(); }
    net::HostPort trap_addr() const { return trap_->addr(); }

    Gateway& gateway() { return *gateway_; }
    RelayNode& relay(size_t i) { return *relays_.at(i); }
    size_t relay_count() const { return relays_.size(); }
    TapProxy& tap(size_t i) { return *taps_.at(i); }
    size_t tap_count() const { return taps_.size(); }
    UdpNameServer& trap() { return *trap_; }
    EchoServer& echo() { return *echo_; }
    ByteSinkServer& sink() { return *sink_; }
    ByteSourceServer& source() { return *source_; }
    DirectoryServer& directory() { return *directory_; }

    // Fresh gateway against this testnet's directory/trap (leak-test phases).
    std::unique_ptr<Gateway> spawn_gateway(GatewayMode mode, bool leaky,
                                           size_t path_length = 0) {
        GatewayConfig gc;
        gc.directory = directory_->addr();
        gc.path_length = path_length ? path_length : spec_.path_length;
        gc.mode = mode;
        gc.leaky_mode = leaky;
        gc.host_resolver = trap_->addr();
        gc.circuit_lifetime_s = spec_.circuit_lifetime_s;
        auto gw = std::make_unique<Gateway>(gc);
        if (mode == GatewayMode::ONION) gw->wait_ready(10'000);
        return gw;
    }

private:
    void boot() {
        echo_ = spawn_component<EchoServer>("echo server", uint16_t(0));
        sink_ = spawn_component<ByteSinkServer>("byte sink", uint16_t(0));
        source_ = spawn_component<ByteSourceServer>("byte source", uint16_t(0));

        auto trap_hosts = spec_.trap_hosts;
        trap_hosts.emplace("echo.test", "127.0.0.1");
        trap_hosts.emplace("sink.test", "127.0.0.1");
        trap_hosts.emplace("source.test", "127.0.0.1");
        try {
            trap_ = std::make_unique<UdpNameServer>(trap_hosts);
        } catch (const Error& e) {
            throw Error(Error::Kind::Spawn, e.what());
        }

        try {
            directory_ = std::make_unique<DirectoryServer>("127.0.0.1", spec_.directory_port);
        } catch (const Error& e) {
            throw Error(Error::Kind::Spawn, std::string("directory: ") + e.what());
        }

        std::map<std::string, std::string> hosts = spec_.exit_hosts;
        hosts.emplace("localhost", "127.0.0.1");
        hosts.emplace("echo.test", "127.0.0.1");
        hosts.emplace("sink.test", "127.0.0.1");
        hosts.emplace("source.test", "127.0.0.1");

        for (size_t i = 0; i < spec_.relays; ++i) {
            RelayConfig rc;
            rc.listen_port = i < spec_.relay_ports.size() ? spec_.relay_ports[i] : 0;
            rc.roles = ALL_ROLES;
            rc.directory = directory_->addr();
            rc.hosts = hosts;
            rc.name = "relay" + std::to_string(i);
            if (i < spec_.shape_mbps.size()) rc.shape_mbps = spec_.shape_mbps[i];
            std::unique_ptr<RelayNode> relay;
            try {
                relay = std::make_unique<RelayNode>(rc);
            } catch (const Error& e) {
                throw Error(Error::Kind::Spawn, rc.name + ": " + e.what());
            }
            if (spec_.with_taps) {
                std::unique_ptr<TapProxy> tap;
                try {
                    tap = std::make_unique<TapProxy>(relay->listen_addr());
                } catch (const Error& e) {
                    throw Error(Error::Kind::Spawn,
                                "tap for " + rc.name + ": " + e.what());
                }
                relay->set_advertise(tap->addr().str());
                taps_.push_back(std::move(tap));
            }
            relay->start();
            relays_.push_back(std::move(relay));
        }

        if (spec_.with_gateway) {
            GatewayConfig gc;
            gc.listen_port = spec_.gateway_port;
            gc.directory = directory_->addr();
            gc.path_length = spec_.path_length;
            gc.circuit_lifetime_s = spec_.circuit_lifetime_s;
            gc.mode = spec_.gateway_mode;
            gc.leaky_mode = spec_.leaky;
            gc.host_resolver = trap_->addr();
            if (spec_.gateway_rng) gc.rng = *spec_.gateway_rng;
            try {
                gateway_ = std::make_unique<Gateway>(gc);
            } catch (const Error& e) {
                throw Error(Error::Kind::Spawn, std::string("gateway: ") + e.what());
            }
            if (spec_.gateway_mode == GatewayMode::ONION) gateway_->wait_ready(10'000);
        }
    }

    template <typename T, typename... Args>
    std::unique_ptr<T> spawn_component(const std::string& what, Args&&... args) {
        try {
            return std::make_unique<T>(std::forward<Args>(args)...);
        } catch (const Error& e) {
            throw Error(Error::Kind::Spawn, what + ": " + e.what());
        }
    }

    void shutdown() {
        gateway_.reset();
        for (auto& r : relays_) r.reset();
        relays_.clear();
        for (auto& t : taps_) t.reset();
        taps_.clear();
        directory_.reset();
        trap_.reset();
        echo_.reset();
        sink_.reset();
        source_.reset();
    }

    TestnetSpec spec_;
    std::unique_ptr<EchoServer> echo_;
    std::unique_ptr<ByteSinkServer> sink_;
    std::unique_ptr<ByteSourceServer> source_;
    std::unique_ptr<UdpNameServer> trap_;
    std::unique_ptr<DirectoryServer> directory_;
    std::vector<std::unique_ptr<TapProxy>> taps_;
    std::vector<std::unique_ptr<RelayNode>> relays_;
    std::unique_ptr<Gateway> gateway_;
};

// --- SOCKS client side (what an application would do) --------------------------

inline net::TcpConn socks_connect(const net::HostPort& gateway, const std::string& host,
                                  uint16_t port, bool domain) {
    auto conn = net::TcpConn::connect(gateway, 5000);
    conn.set_recv_timeout(30'000);
    conn.write_all(Bytes{0x05, 0x01, 0x00});
    Bytes greet = conn.read_exact(2);
    if (greet[0] != 0x05 || greet[1] != 0x00)
        throw Error(Error::Kind::Net, "SOCKS method negotiation failed");
    Bytes req{0x05, 0x01, 0x00};
    if (domain) {
        req.push_back(0x03);
        req.push_back(static_cast<uint8_t>(host.size()));
        append(req, to_bytes(host));
    } else {
        req.push_back(0x01);
        auto addr = net::parse_ipv4(host);
        if (!addr) throw Error(Error::Kind::Validation, "not an IPv4 literal: " + host);
        req.resize(req.size() + 4);
        std::memcpy(req.data() + req.size() - 4, &addr->s_addr, 4);
    }
    req.resize(req.size() + 2);
    put_be16(req.data() + req.size() - 2, port);
    conn.write_all(req);
    Bytes reply = conn.read_exact(10);
    if (reply[1] != SOCKS_OK)
        throw Error(Error::Kind::Net,
                    "SOCKS connect refused, code " + std::to_string(reply[1]));
    return conn;
}

// --- measurements ------------------------------------------------------------------

enum class Direction { DOWNLOAD, UPLOAD };

inline std::string to_string(Direction d) {
    return d == Direction::DOWNLOAD ? "download" : "upload";
}

struct ThroughputSample {
    Direction direction = Direction::DOWNLOAD;
    GatewayMode mode = GatewayMode::ONION;
    uint64_t bytes = 0;
    double elapsed_s = 0;
    double mbps = 0;  // bytes*8 / elapsed / 1e6
};

struct SpeedStats {
    size_t count = 0;
    double mean = 0, min = 0, max = 0;
};

struct SpeedReport {
    std::vector<ThroughputSample> samples;
    size_t failures = 0;

    SpeedStats stats(GatewayMode mode, Direction dir) const {
        SpeedStats s;
        double sum = 0;
        for (const auto& x : samples) {
            if (x.mode != mode || x.direction != dir) continue;
            if (s.count == 0) {
                s.min = s.max = x.mbps;
            } else {
                s.min = std::min(s.min, x.mbps);
                s.max = std::max(s.max, x.mbps);
            }
            sum += x.mbps;
            s.count++;
        }
        if (s.count) s.mean = sum / static_cast<double>(s.count);
        return s;
    }

    // Bucket width 0.5 Mb/s; key = lower bucket edge in Mb/s.
    std::map<double, size_t> histogram(GatewayMode mode, Direction dir) const {
        std::map<double, size_t> h;
        for (const auto& x : samples) {
            if (x.mode != mode || x.direction != dir) continue;
            h[std::floor(x.mbps / 0.5) * 0.5]++;
        }
        return h;
    }

    double overhead_ratio(Direction dir) const {
        auto onion = stats(GatewayMode::ONION, dir);
        auto direct = stats(GatewayMode::DIRECT, dir);
        if (onion.count == 0 || direct.count == 0 || onion.mean == 0) return 0;
        return direct.mean / onion.mean;
    }
};

// One timed transfer through the SOCKS gateway. Timing runs from the first
// byte of the request to the last byte read/acknowledged.
inline ThroughputSample run_transfer(const net::HostPort& gateway, GatewayMode mode,
                                     Direction dir, const net::HostPort& server,
                                     uint64_t size_bytes) {
    auto conn = socks_connect(gateway, server.host, server.port, false);
    conn.set_recv_timeout(120'000);
    Bytes header(8);
    put_be64(header.data(), size_bytes);
    auto t0 = std::chrono::steady_clock::now();
    if (dir == Direction::UPLOAD) {
        conn.write_all(header);
        Bytes buf(64 * 1024);
        for (size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<uint8_t>(i * 131 + 17);
        uint64_t sent = 0;
        while (sent < size_bytes) {
            size_t n = std::min<uint64_t>(buf.size(), size_bytes - sent);
            conn.write_all(BytesView(buf.data(), n));
            sent += n;
        }
        Bytes ack = conn.read_exact(8);
        if (get_be64(ack.data()) != size_bytes)
            throw Error(Error::Kind::Net, "sink acknowledged wrong byte count");
    } else {
        conn.write_all(header);
        Bytes buf(64 * 1024);
        uint64_t got = 0;
        while (got < size_bytes) {
            size_t r = conn.read_some(buf.data(), buf.size());
            if (r == 0) throw Error(Error::Kind::Net, "source ended early");
            got += r;
        }
    }
    auto t1 = std::chrono::steady_clock::now();
    ThroughputSample s;
    s.direction = dir;
    s.mode = mode;
    s.bytes = size_bytes;
    s.elapsed_s = std::chrono::duration<double>(t1 - t0).count();
    s.mbps = static_cast<double>(size_bytes) * 8.0 / s.elapsed_s / 1e6;
    return s;
}

// The paper-style speed comparison: repeated timed transfers through the
// gateway, one sample per repetition, failures excluded but counted.
inline void run_speed_test(SpeedReport& report, const net::HostPort& gateway, GatewayMode mode,
                           Direction dir, const net::HostPort& server, uint64_t size_bytes,
                           size_t repetitions) {
    if (size_bytes < (1u << 20))
        throw Error(Error::Kind::Validation, "transfer size must be at least 1 MiB");
    if (repetitions < 5)
        throw Error(Error::Kind::Validation, "at least 5 repetitions required");
    for (size_t i = 0; i < repetitions; ++i) {
        try {
            report.samples.push_back(run_transfer(gateway, mode, dir, server, size_bytes));
        } catch (const Error&) {
            report.failures++;
        }
    }
}

// --- leak test -----------------------------------------------------------------------

struct LeakReport {
    enum class Verdict { NO_LEAK, LEAK };
    std::vector<TrapHit> trap_hits;
    Verdict verdict = Verdict::NO_LEAK;

    static LeakReport from_hits(std::vector<TrapHit> hits) {
        LeakReport r;
        r.trap_hits = std::move(hits);
        r.verdict = r.trap_hits.empty() ? Verdict::NO_LEAK : Verdict::LEAK;
        return r;
    }
};

inline std::string to_string(LeakReport::Verdict v) {
    return v == LeakReport::Verdict::NO_LEAK ? "NO_LEAK" : "LEAK";
}

// Drives `connects` DOMAIN-type CONNECTs (plus `resolves` circuit resolutions
// in onion mode) through the given gateway and reports what reached the trap
// while the workload ran.
inline LeakReport drive_leak_workload(Testnet& net, Gateway& gateway, size_t connects,
                                      size_t resolves) {
    size_t before = net.trap().hit_count();
    uint16_t echo_port = net.echo_addr().port;
    for (size_t i = 0; i < connects; ++i) {
        auto conn = socks_connect(gateway.addr(), "echo.test", echo_port, true);
        Bytes probe = to_bytes("leakcheck" + std::to_string(i));
        conn.write_all(probe);
        Bytes back = conn.read_exact(probe.size());
        if (back != probe) throw Error(Error::Kind::Net, "echo mismatch during leak workload");
        conn.shutdown_both();
    }
    if (gateway.config().mode == GatewayMode::ONION) {
        for (size_t i = 0; i < resolves; ++i) gateway.resolve_via_circuit("echo.test");
    }
    auto all = net.trap().hits();
    return LeakReport::from_hits(
        std::vector<TrapHit>(all.begin() + static_cast<ptrdiff_t>(before), all.end()));
}

struct DnsLeakResult {
    LeakReport onion;    // must be NO_LEAK
    LeakReport leaky;    // must be LEAK with >= connects hits
    LeakReport direct;   // must be LEAK
};

// The full §-style evaluation: all three verdicts from one run against one
// trap resolver. The non-leaky onion gateway is the testnet's own.
inline DnsLeakResult run_dns_leak_test(Testnet& net, size_t connects = 100,
                                       size_t resolves = 100) {
    DnsLeakResult result;
    result.onion = drive_leak_workload(net, net.gateway(), connects, resolves);
    {
        auto leaky_gw = net.spawn_gateway(GatewayMode::ONION, /*leaky=*/true);
        result.leaky = drive_leak_workload(net, *leaky_gw, connects, 0);
    }
    {
        auto direct_gw = net.spawn_gateway(GatewayMode::DIRECT, /*leaky=*/false);
        result.direct = drive_leak_workload(net, *direct_gw, connects, 0);
    }
    return result;
}

// --- reports -----------------------------------------------------------------------

inline void write_csv(const SpeedReport& report, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw Error(Error::Kind::Io, "cannot write " + path);
    f << "mode,direction,bytes,elapsed,mbps\n";
    for (const auto& s : report.samples)
        f << to_string(s.mode) << ',' << to_string(s.direction) << ',' << s.bytes << ','
          << s.elapsed_s << ',' << s.mbps << '\n';
    if (!f) throw Error(Error::Kind::Io, "write failed: " + path);
}

inline nlohmann::json summary_json(const SpeedReport& report) {
    nlohmann::json j;
    j["sample_count"] = report.samples.size();
    j["failures"] = report.failures;
    for (GatewayMode mode : {GatewayMode::ONION, GatewayMode::DIRECT}) {
        for (Direction dir : {Direction::DOWNLOAD, Direction::UPLOAD}) {
            auto st = report.stats(mode, dir);
            if (st.count == 0) continue;
            nlohmann::json h = nlohmann::json::object();
            for (const auto& [bucket, count] : report.histogram(mode, dir))
                h[std::to_string(bucket)] = count;
            j[to_string(mode)][to_string(dir)] = {{"count", st.count},
                                                  {"mean_mbps", st.mean},
                                                  {"min_mbps", st.min},
                                                  {"max_mbps", st.max},
                                                  {"histogram", h}};
        }
    }
    for (Direction dir : {Direction::DOWNLOAD, Direction::UPLOAD}) {
        double r = report.overhead_ratio(dir);
        if (r > 0) j["overhead_ratio"][to_string(dir)] = r;
    }
    return j;
}

inline void write_json_summary(const SpeedReport& report, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw Error(Error::Kind::Io, "cannot write " + path);
    f << summary_json(report).dump(2) << '\n';
}

inline std::string histogram_text(const SpeedReport& report, GatewayMode mode, Direction dir) {
    std::string out;
    for (const auto& [bucket, count] : report.histogram(mode, dir)) {
        char line[64];
        std::snprintf(line, sizeof line, "%6.1f-%-6.1f ", bucket, bucket + 0.5);
        out += line;
        out += std::string(count, '#') + " (" + std::to_string(count) + ")\n";
    }
    return out;
}

}  // namespace onionbox::harness
