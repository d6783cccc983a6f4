#pragma once

#include <atomic>
#include <fstream>
#include <memory>
#include <optional>
#include <thread>

#include <json.hpp>

#include "onionbox/client.hpp"
#include "onionbox/net.hpp"

namespace onionbox {

enum class GatewayMode { ONION, DIRECT };

inline std::string to_string(GatewayMode m) { return m == GatewayMode::ONION ? "onion" : "direct"; }

inline GatewayMode gateway_mode_from_string(const std::string& s) {
    if (s == "onion") return GatewayMode::ONION;
    if (s == "direct") return GatewayMode::DIRECT;
    throw Error(Error::Kind::Config, "mode must be 'onion' or 'direct', got '" + s + "'");
}

struct GatewayConfig {
    std::string listen_host = "127.0.0.1";
    uint16_t listen_port = 0;
    std::optional<net::HostPort> directory;
    size_t path_length = 3;
    int circuit_lifetime_s = 600;
    GatewayMode mode = GatewayMode::ONION;
    // Present only so leaks are detectable; a non-leaky ONION gateway never
    // contacts it. DIRECT mode uses it as the stand-in system resolver.
    std::optional<net::HostPort> host_resolver;
    bool leaky_mode = false;
    RngFn rng = crypto_rng();

    static GatewayConfig from_json(const nlohmann::json& j) {
        GatewayConfig c;
        if (j.contains("listen_addr")) {
            auto hp = net::parse_hostport(j.at("listen_addr").get<std::string>());
            c.listen_host = hp.host;
            c.listen_port = hp.port;
        }
        if (j.contains("directory_addr"))
            c.directory = net::parse_hostport(j.at("directory_addr").get<std::string>());
        c.path_length = j.value("path_length", size_t(3));
        c.circuit_lifetime_s = j.value("circuit_lifetime", 600);
        if (j.contains("mode")) c.mode = gateway_mode_from_string(j.at("mode").get<std::string>());
        if (j.contains("host_resolver"))
            c.host_resolver = net::parse_hostport(j.at("host_resolver").get<std::string>());
        c.leaky_mode = j.value("leaky_mode", false);
        if (c.path_length < 1) throw Error(Error::Kind::Config, "path_length must be >= 1");
        return c;
    }

    static GatewayConfig load_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw Error(Error::Kind::Io, "cannot read config file: " + path);
        nlohmann::json j;
        f >> j;
        return from_json(j);
    }
};

// SOCKS5 reply codes (RFC 1928 §6).
constexpr uint8_t SOCKS_OK = 0x00;
constexpr uint8_t SOCKS_GENERAL_FAILURE = 0x01;
constexpr uint8_t SOCKS_HOST_UNREACHABLE = 0x04;
constexpr uint8_t SOCKS_CMD_NOT_SUPPORTED = 0x07;
constexpr uint8_t SOCKS_ATYP_NOT_SUPPORTED = 0x08;

// The "Tor router" stand-in: every application connection entering the SOCKS
// listener leaves through a circuit (ONION) or straight to the target
// (DIRECT, the no-router baseline). DOMAIN names are never resolved on this
// host in ONION mode; they travel to the exit verbatim.
class Gateway {
public:
    explicit Gateway(GatewayConfig config)
        : config_(std::move(config)), listener_(config_.listen_host, config_.listen_port) {
        if (config_.mode == GatewayMode::ONION) {
            if (!config_.directory)
                throw Error(Error::Kind::Config, "onion mode requires a directory address");
            ClientOptions opts;
            opts.path_length = config_.path_length;
            opts.rng = config_.rng;
            pool_ = std::make_unique<CircuitManager>(*config_.directory, opts);
        }
        accept_thread_ = std::thread([this] { accept_loop(); });
        tick_thread_ = std::thread([this] { tick_loop(); });
    }

    ~Gateway() { stop(); }

    void stop() {
        bool expected = false;
        if (!stopping_.compare_exchange_strong(expected, true)) return;
        listener_.close();
        tick_cv_.notify_all();
        if (accept_thread_.joinable()) accept_thread_.join();
        if (tick_thread_.joinable()) tick_thread_.join();
        std::vector<std::thread> handlers;
        std::vector<std::shared_ptr<net::TcpConn>> conns;
        {
            std::lock_guard lk(handlers_mu_);
            handlers.swap(handlers_);
            conns.swap(handler_conns_);
        }
        for (auto& c : conns) c->shutdown_both();  // unblock proxied connections
        for (auto& t : handlers)
            if (t.joinable()) t.join();
        pool_.reset();
    }

    uint16_t port() const { return listener_.port(); }
    net::HostPort addr() const { return listener_.addr(); }
    const GatewayConfig& config() const { return config_; }

    // Blocks until the pool holds a usable circuit (ONION) or returns at once
    // (DIRECT). Throws on deadline.
    void wait_ready(int timeout_ms) {
        if (config_.mode == GatewayMode::DIRECT) return;
        auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
        while (std::chrono::steady_clock::now() < deadline) {
            try {
                if (pool_->ensure()) return;
            } catch (const Error&) {
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(100));
        }
        throw Error(Error::Kind::Timeout, "gateway has no ready circuit");
    }

    // Name resolution through the network, for workloads that need the
    // paper-style "DNS via the router" path without opening a stream.
    std::string resolve_via_circuit(const std::string& hostname) {
        if (config_.mode != GatewayMode::ONION)
            throw Error(Error::Kind::Config, "resolve_via_circuit requires onion mode");
        auto circuit = pool_->ensure();
        return circuit->resolve(hostname);
    }

    size_t rotations() const { return rotations_.load(); }
    CircuitManager* pool() { return pool_.get(); }

private:
    void accept_loop() {
        while (true) {
            auto conn = listener_.accept();
            if (!conn) return;
            auto c = std::make_shared<net::TcpConn>(std::move(*conn));
            std::lock_guard lk(handlers_mu_);
            if (stopping_) return;
            handler_conns_.push_back(c);
            handlers_.emplace_back([this, c]() mutable {
                try {
                    serve(*c);
                } catch (const Error&) {
                    // connection-level failure: drop the client
                }
                c->shutdown_both();
            });
        }
    }

    // Pool maintenance: keep one fresh circuit around, rotate stale ones,
    // retire drained ones. Build failures back off exponentially.
    void tick_loop() {
        if (config_.mode != GatewayMode::ONION) return;
        double backoff_s = 0.5;
        std::mutex mu;
        while (!stopping_) {
            {
                std::unique_lock lk(mu);
                tick_cv_.wait_for(lk, std::chrono::milliseconds(250),
                                  [&] { return stopping_.load(); });
            }
            if (stopping_) break;
            try {
                auto current = pool_->current();
                if (!current) {
                    pool_->ensure();
                    backoff_s = 0.5;
                } else {
                    auto age = std::chrono::duration_cast<std::chrono::seconds>(
                                   std::chrono::steady_clock::now() - current->created_at())
                                   .count();
                    if (age >= config_.circuit_lifetime_s) {
                        pool_->rotate();
                        rotations_++;
                        backoff_s = 0.5;
                    }
                }
                pool_->prune();
            } catch (const Error&) {
                // directory down or relays gone: keep serving existing circuits
                std::unique_lock lk(mu);
                tick_cv_.wait_for(lk, std::chrono::duration<double>(backoff_s),
                                  [&] { return stopping_.load(); });
                backoff_s = std::min(backoff_s * 2.0, 30.0);
            }
        }
    }

    struct SocksRequest {
        bool domain = false;
        std::string host;  // dotted quad or domain name
        uint16_t port = 0;
    };

    void serve(net::TcpConn& conn) {
        conn.set_recv_timeout(10'000);
        // Method negotiation: only "no authentication" is acceptable.
        uint8_t head[2];
        conn.read_exact(head, 2);
        if (head[0] != 0x05) return;  // not SOCKS5: drop silently
        Bytes methods = conn.read_exact(head[1]);
        bool no_auth = std::find(methods.begin(), methods.end(), 0x00) != methods.end();
        if (!no_auth) {
            conn.write_all(Bytes{0x05, 0xFF});
            return;
        }
        conn.write_all(Bytes{0x05, 0x00});

        uint8_t req[4];
        conn.read_exact(req, 4);
        if (req[0] != 0x05 || req[1] != 0x01) {  // only CONNECT
            reply(conn, SOCKS_CMD_NOT_SUPPORTED);
            return;
        }
        SocksRequest target;
        if (req[3] == 0x01) {  // IPv4
            Bytes addr = conn.read_exact(6);
            target.host = net::ipv4_to_string(addr.data());
            target.port = get_be16(addr.data() + 4);
        } else if (req[3] == 0x03) {  // DOMAIN
            uint8_t len;
            conn.read_exact(&len, 1);
            Bytes name = conn.read_exact(len);
            Bytes port = conn.read_exact(2);
            target.domain = true;
            target.host = to_string(name);
            target.port = get_be16(port.data());
        } else {
            reply(conn, SOCKS_ATYP_NOT_SUPPORTED);
            return;
        }
        conn.set_recv_timeout(0);

        if (config_.mode == GatewayMode::ONION)
            serve_onion(conn, target);
        else
            serve_direct(conn, target);
    }

    void serve_onion(net::TcpConn& conn, const SocksRequest& target) {
        if (config_.leaky_mode && target.domain) leak_query(target.host);

        std::string dest = target.host + ":" + std::to_string(target.port);
        std::unique_ptr<Stream> stream;
        try {
            stream = open_with_retry(dest);
        } catch (const Error&) {
            reply(conn, SOCKS_GENERAL_FAILURE);
            return;
        }
        reply(conn, SOCKS_OK);
        pump_socks(conn, *stream);
    }

    // One rebuild retry before giving up on a CONNECT.
    std::unique_ptr<Stream> open_with_retry(const std::string& dest) {
        try {
            auto circuit = pool_->ensure();
            return circuit->open_stream(dest);
        } catch (const StreamOpenError&) {
            throw;  // the exit refused; a new circuit will not help
        } catch (const Error&) {
            auto circuit = pool_->rotate();
            rotations_++;
            return circuit->open_stream(dest);
        }
    }

    void serve_direct(net::TcpConn& conn, const SocksRequest& target) {
        std::string host = target.host;
        if (target.domain) {
            // The baseline resolves on this host, through the stand-in system
            // resolver; this is exactly the leak the onion mode removes.
            auto resolved = resolve_locally(target.host);
            if (!resolved) {
                reply(conn, SOCKS_HOST_UNREACHABLE);
                return;
            }
            host = *resolved;
        }
        net::TcpConn out;
        try {
            out = net::TcpConn::connect({host, target.port}, 5000);
        } catch (const Error&) {
            reply(conn, SOCKS_GENERAL_FAILURE);
            return;
        }
        reply(conn, SOCKS_OK);
        pump_direct(conn, out);
    }

    void reply(net::TcpConn& conn, uint8_t code) {
        Bytes r{0x05, code, 0x00, 0x01, 0, 0, 0, 0, 0, 0};
        try {
            conn.write_all(r);
        } catch (const Error&) {
        }
    }

    // client <-> stream, both directions until either side ends.
    void pump_socks(net::TcpConn& conn, Stream& stream) {
        std::thread up([&] {
            Bytes buf(16 * 1024);
            try {
                while (true) {
                    size_t r = conn.read_some(buf.data(), buf.size());
                    if (r == 0) break;
                    stream.write(BytesView(buf.data(), r));
                }
            } catch (const Error&) {
            }
            try {
                stream.close();
            } catch (...) {
            }
        });
        Bytes buf(16 * 1024);
        try {
            while (true) {
                size_t r = stream.read(buf.data(), buf.size());
                if (r == 0) break;
                conn.write_all(BytesView(buf.data(), r));
            }
        } catch (const Error&) {
        }
        conn.shutdown_both();
        up.join();
    }

    void pump_direct(net::TcpConn& a, net::TcpConn& b) {
        std::thread up([&] {
            Bytes buf(16 * 1024);
            try {
                while (true) {
                    size_t r = a.read_some(buf.data(), buf.size());
                    if (r == 0) break;
                    b.write_all(BytesView(buf.data(), r));
                }
            } catch (const Error&) {
            }
            b.shutdown_write();
        });
        Bytes buf(16 * 1024);
        try {
            while (true) {
                size_t r = b.read_some(buf.data(), buf.size());
                if (r == 0) break;
                a.write_all(BytesView(buf.data(), r));
            }
        } catch (const Error&) {
        }
        a.shutdown_both();
        up.join();
        b.shutdown_both();
    }

    // The stand-in for a system resolver call: one UDP datagram per lookup.
    std::optional<std::string> resolve_locally(const std::string& name) {
        if (!config_.host_resolver) return std::nullopt;
        try {
            net::UdpSock sock;
            sock.open_unbound();
            sock.send_to(*config_.host_resolver, to_bytes(name));
            auto reply = sock.recv(2000);
            if (!reply || reply->payload.size() < 5 || reply->payload[0] != RESOLVED_OK)
                return std::nullopt;
            return net::ipv4_to_string(reply->payload.data() + 1);
        } catch (const Error&) {
            return std::nullopt;
        }
    }

    void leak_query(const std::string& name) {
        if (!config_.host_resolver) return;
        try {
            net::UdpSock sock;
            sock.open_unbound();
            sock.send_to(*config_.host_resolver, to_bytes(name));
        } catch (const Error&) {
        }
    }

    GatewayConfig config_;
    net::TcpListener listener_;
    std::unique_ptr<CircuitManager> pool_;
    std::thread accept_thread_;
    std::thread tick_thread_;
    std::condition_variable tick_cv_;
    std::atomic<bool> stopping_{false};
    std::atomic<size_t> rotations_{0};
    std::mutex handlers_mu_;
    std::vector<std::thread> handlers_;
    std::vector<std::shared_ptr<net::TcpConn>> handler_conns_;
};

}  // namespace onionbox
