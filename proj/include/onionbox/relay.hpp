#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <thread>
#include <vector>

#include "onionbox/cell.hpp"
#include "onionbox/crypto.hpp"
#include "onionbox/directory.hpp"
#include "onionbox/net.hpp"
#include "onionbox/onion.hpp"

namespace onionbox {

// Sleep-based token bucket; throttles a shaped relay's cell writes.
class TokenBucket {
public:
    TokenBucket(double rate_bytes_per_sec, double burst_bytes)
        : rate_(rate_bytes_per_sec), burst_(burst_bytes), tokens_(burst_bytes),
          last_(std::chrono::steady_clock::now()) {}

    void acquire(size_t n) {
        std::unique_lock lk(mu_);
        while (true) {
            auto now = std::chrono::steady_clock::now();
            double elapsed = std::chrono::duration<double>(now - last_).count();
            last_ = now;
            tokens_ = std::min(burst_, tokens_ + elapsed * rate_);
            if (tokens_ >= static_cast<double>(n)) {
                tokens_ -= static_cast<double>(n);
                return;
            }
            double wait_s = (static_cast<double>(n) - tokens_) / rate_;
            lk.unlock();
            std::this_thread::sleep_for(std::chrono::duration<double>(wait_s));
            lk.lock();
        }
    }

private:
    std::mutex mu_;
    double rate_;
    double burst_;
    double tokens_;
    std::chrono::steady_clock::time_point last_;
};

struct RelayConfig {
    std::string listen_host = "127.0.0.1";
    uint16_t listen_port = 0;
    std::optional<std::string> advertise;     // address published to the directory
    std::optional<net::HostPort> directory;   // register on startup when set
    RoleSet roles = ALL_ROLES;
    std::optional<crypto::KeyPair> identity;  // generated when absent
    std::map<std::string, std::string> hosts; // static name -> IPv4 map
    std::optional<net::HostPort> dns;         // upstream UDP name service
    double shape_mbps = 0;                    // token bucket rate, 0 = unshaped
    double shape_burst_bytes = 16 * 1024;
    int exit_connect_timeout_ms = 5000;
    std::string name = "relay";
};

// Per-circuit debug view for white-box tests; mirrors the stored state
// one-to-one so tests can enumerate everything a relay knows.
struct RelayCircuitDebug {
    std::string prev_peer;
    uint32_t prev_circuit_id = 0;
    bool has_next = false;
    std::string next_peer;
    uint32_t next_circuit_id = 0;
    std::string forward_key_hex;
    std::string backward_key_hex;
    uint64_t forward_counter = 0;
    uint64_t backward_counter = 0;
    std::vector<std::string> stream_destinations;  // non-empty only at an exit

    // Flat rendering of every stored field, for "knows only its neighbors"
    // assertions: the test greps this for addresses that must not appear.
    std::string flatten() const {
        std::string s = "prev=" + prev_peer + " prev_id=" + std::to_string(prev_circuit_id);
        if (has_next) s += " next=" + next_peer + " next_id=" + std::to_string(next_circuit_id);
        s += " fwd_key=" + forward_key_hex + " bwd_key=" + backward_key_hex;
        s += " fwd_ctr=" + std::to_string(forward_counter) +
             " bwd_ctr=" + std::to_string(backward_counter);
        for (const auto& d : stream_destinations) s += " stream_dest=" + d;
        return s;
    }
};

class RelayNode {
public:
    explicit RelayNode(RelayConfig config)
        : config_(std::move(config)),
          identity_(config_.identity ? *config_.identity : crypto::KeyPair::generate()),
          listener_(config_.listen_host, config_.listen_port) {
        if (config_.shape_mbps > 0)
            bucket_ = std::make_unique<TokenBucket>(config_.shape_mbps * 1e6 / 8.0,
                                                    config_.shape_burst_bytes);
    }

    ~RelayNode() { stop(); }

    void start() {
        if (config_.directory) {
            DirectoryClient dir(*config_.directory);
            dir.register_relay(descriptor());
        }
        accept_thread_ = std::thread([this] { accept_loop(); });
    }

    void stop() {
        bool expected = false;
        if (!stopping_.compare_exchange_strong(expected, true)) return;
        listener_.close();
        if (accept_thread_.joinable()) accept_thread_.join();
        // Tear every circuit down, then unblock and join all link readers.
        std::vector<std::shared_ptr<CircuitState>> circuits;
        {
            std::lock_guard lk(circuits_mu_);
            for (auto& [k, st] : by_prev_) circuits.push_back(st);
            by_prev_.clear();
            by_next_.clear();
        }
        for (auto& st : circuits) teardown(st, false, false);
        std::vector<std::shared_ptr<Link>> links;
        std::vector<std::thread> threads;
        {
            std::lock_guard lk(links_mu_);
            links.swap(links_);
            threads.swap(reader_threads_);
        }
        for (auto& l : links) l->framed.shutdown();
        for (auto& t : threads)
            if (t.joinable()) t.join();
    }

    uint16_t port() const { return listener_.port(); }
    net::HostPort listen_addr() const { return listener_.addr(); }
    const crypto::KeyPair& identity() const { return identity_; }

    std::string advertised_address() const {
        return config_.advertise ? *config_.advertise : listener_.addr().str();
    }

    // Must be set before start() for it to reach the directory.
    void set_advertise(std::string addr) { config_.advertise = std::move(addr); }

    RelayDescriptor descriptor() const {
        RelayDescriptor d;
        d.relay_id = relay_id_for_key(identity_.public_key);
        d.address = advertised_address();
        d.roles = config_.roles;
        d.public_key = identity_.public_key;
        return d;
    }

    // --- white-box instrumentation ------------------------------------------

    size_t circuit_count() const {
        std::lock_guard lk(circuits_mu_);
        return by_prev_.size();
    }

    std::vector<RelayCircuitDebug> debug_circuits() const {
        std::vector<std::shared_ptr<CircuitState>> circuits;
        {
            std::lock_guard lk(circuits_mu_);
            for (const auto& [k, st] : by_prev_) circuits.push_back(st);
        }
        std::vector<RelayCircuitDebug> out;
        for (const auto& st : circuits) {
            std::lock_guard lk(st->mu);
            RelayCircuitDebug d;
            d.prev_peer = st->prev_link->peer;
            d.prev_circuit_id = st->prev_id;
            d.has_next = st->next_link != nullptr;
            if (st->next_link) {
                d.next_peer = st->next_link->peer;
                d.next_circuit_id = st->next_id;
            }
            d.forward_key_hex = to_hex(st->session.forward_key);
            d.backward_key_hex = to_hex(st->session.backward_key);
            d.forward_counter = st->session.forward_counter;
            d.backward_counter = st->session.backward_counter;
            for (const auto& [sid, stream] : st->streams)
                d.stream_destinations.push_back(stream->destination);
            out.push_back(std::move(d));
        }
        return out;
    }

    std::vector<std::string> debug_events() const {
        std::lock_guard lk(events_mu_);
        return events_;
    }

private:
    struct Link {
        uint64_t id;
        net::FramedLink framed;
        std::string peer;

        Link(uint64_t lid, net::TcpConn conn) : id(lid), framed(std::move(conn)) {
            peer = framed.peer();
        }
    };

    struct ExitStream {
        uint16_t stream_id = 0;
        std::string destination;
        net::TcpConn conn;
        std::thread pump;
        std::mutex wmu;
        std::condition_variable wcv;
        int send_credits = STREAM_WINDOW;  // backward DATA budget
        int recv_since_credit = 0;         // forward DATA absorbed since last credit
        std::atomic<bool> closing{false};
    };

    // All a relay ever stores about a circuit: its two neighbor links and one
    // session key. No originator, no path, no destination beyond live exit
    // streams this hop opened itself.
    struct CircuitState {
        std::shared_ptr<Link> prev_link;
        uint32_t prev_id = 0;
        std::shared_ptr<Link> next_link;
        uint32_t next_id = 0;
        SessionKey session;
        std::map<uint16_t, std::unique_ptr<ExitStream>> streams;
        std::mutex mu;
        bool destroyed = false;
    };

    using CircuitKey = std::pair<uint64_t, uint32_t>;  // (link id, circuit id)

    // --- link plumbing --------------------------------------------------------

    void accept_loop() {
        while (true) {
            auto conn = listener_.accept();
            if (!conn) return;
            auto link = std::make_shared<Link>(next_link_id_++, std::move(*conn));
            register_link(link);
        }
    }

    void register_link(const std::shared_ptr<Link>& link) {
        std::lock_guard lk(links_mu_);
        if (stopping_) {
            link->framed.shutdown();
            return;
        }
        links_.push_back(link);
        reader_threads_.emplace_back([this, link] { link_reader(link); });
    }

    void link_reader(const std::shared_ptr<Link>& link) {
        try {
            while (true) {
                auto frame = link->framed.read_cell();
                if (!frame) break;
                dispatch(link, decode_cell(*frame));
            }
        } catch (const Error&) {
            // framing/socket failure: treated like link loss below
        }
        drop_link(link);
    }

    // A lost link kills every circuit riding on it, notifying the other side.
    void drop_link(const std::shared_ptr<Link>& link) {
        std::vector<std::shared_ptr<CircuitState>> on_prev, on_next;
        {
            std::lock_guard lk(circuits_mu_);
            for (auto& [k, st] : by_prev_)
                if (k.first == link->id) on_prev.push_back(st);
            for (auto& [k, st] : by_next_)
                if (k.first == link->id) on_next.push_back(st);
        }
        for (auto& st : on_prev) teardown(st, false, true);
        for (auto& st : on_next) teardown(st, true, false);
    }

    void send_cell(const std::shared_ptr<Link>& link, const Cell& cell) {
        if (bucket_) bucket_->acquire(CELL_SIZE);
        link->framed.send(cell);
    }

    bool try_send_cell(const std::shared_ptr<Link>& link, const Cell& cell) {
        try {
            send_cell(link, cell);
            return true;
        } catch (const Error&) {
            return false;
        }
    }

    void dispatch(const std::shared_ptr<Link>& link, const Cell& cell) {
        switch (cell.command) {
            case CellCommand::CREATE:
                handle_create(link, cell);
                return;
            case CellCommand::CREATED:
                return;  // only meaningful inside an extend exchange
            case CellCommand::RELAY: {
                if (auto st = find(by_prev_, link, cell.circuit_id)) {
                    forward_cell(st, cell);
                    return;
                }
                if (auto st = find(by_next_, link, cell.circuit_id)) {
                    backward_cell(st, cell);
                    return;
                }
                // Unknown circuit: tell the sender to stop.
                try_send_cell(link, Cell{cell.circuit_id, CellCommand::DESTROY, {}});
                return;
            }
            case CellCommand::DESTROY: {
                if (auto st = find(by_prev_, link, cell.circuit_id)) teardown(st, false, true);
                else if (auto st2 = find(by_next_, link, cell.circuit_id))
                    teardown(st2, true, false);
                return;
            }
        }
    }

    std::shared_ptr<CircuitState> find(const std::map<CircuitKey, std::shared_ptr<CircuitState>>& m,
                                       const std::shared_ptr<Link>& link, uint32_t id) const {
        std::lock_guard lk(circuits_mu_);
        auto it = m.find({link->id, id});
        return it == m.end() ? nullptr : it->second;
    }

    // --- handshake -------------------------------------------------------------

    void handle_create(const std::shared_ptr<Link>& link, const Cell& cell) {
        crypto::Key client_eph{};
        try {
            Bytes pt = crypto::unseal(identity_, cell.payload);
            if (pt.size() != crypto::KEY_LEN)
                throw Error(Error::Kind::Crypto, "bad handshake payload length");
            std::copy(pt.begin(), pt.end(), client_eph.begin());
        } catch (const Error&) {
            // Not sealed to us: refuse, keep no state.
            try_send_cell(link, Cell{cell.circuit_id, CellCommand::DESTROY, {}});
            return;
        }

        auto eph = crypto::KeyPair::generate();
        crypto::Key shared = crypto::x25519_shared(eph.secret_key, client_eph);
        Bytes transcript(client_eph.begin(), client_eph.end());
        append(transcript, eph.public_key);
        auto material = crypto::derive_session_key(shared, transcript);

        // Duplicate CREATE on a live id: drop the old state, honor the new one.
        if (auto old = find(by_prev_, link, cell.circuit_id)) teardown(old, false, true);

        auto st = std::make_shared<CircuitState>();
        st->prev_link = link;
        st->prev_id = cell.circuit_id;
        st->session = SessionKey::from_material(material);
        {
            std::lock_guard lk(circuits_mu_);
            by_prev_[{link->id, cell.circuit_id}] = st;
        }

        Bytes reply(eph.public_key.begin(), eph.public_key.end());
        append(reply, material.confirm);
        if (!try_send_cell(link, Cell{cell.circuit_id, CellCommand::CREATED, reply})) {
            teardown(st, false, false);
            return;
        }
        note(st->prev_id, "created");
    }

    // --- forward direction (from the previous hop) -------------------------------

    void forward_cell(const std::shared_ptr<CircuitState>& st, const Cell& cell) {
        std::unique_lock lk(st->mu);
        if (st->destroyed) return;
        OnionLayer layer;
        try {
            layer = unwrap_layer(cell.payload, st->session, st->session.forward_counter);
        } catch (const Error&) {
            lk.unlock();
            teardown(st, true, true);  // DESTROY both ways
            return;
        }
        if (layer.flag == LayerFlag::FORWARD) {
            if (!st->next_link) {
                lk.unlock();
                teardown(st, true, true);
                return;
            }
            note(st->prev_id, "forwarded");
            auto next = st->next_link;
            auto next_id = st->next_id;
            if (!try_send_cell(next, Cell{next_id, CellCommand::RELAY, layer.body})) {
                lk.unlock();
                teardown(st, true, false);
            }
            return;
        }
        RelayMessage msg;
        try {
            msg = decode_relay_message(layer.body);
        } catch (const Error&) {
            lk.unlock();
            teardown(st, true, true);
            return;
        }
        note(st->prev_id, "delivered " + relay_cmd_name(msg.cmd));
        switch (msg.cmd) {
            case RelayCommand::EXTEND: handle_extend(st, lk, msg); return;
            case RelayCommand::BEGIN: handle_begin(st, msg); return;
            case RelayCommand::DATA: handle_data(st, lk, msg); return;
            case RelayCommand::END: handle_end(st, lk, msg); return;
            case RelayCommand::RESOLVE: handle_resolve(st, msg); return;
            default:
                lk.unlock();
                teardown(st, true, true);  // EXTENDED/CONNECTED/... have no business here
                return;
        }
    }

    // --- backward direction (from the next hop): add one layer, pass along -------

    void backward_cell(const std::shared_ptr<CircuitState>& st, const Cell& cell) {
        std::unique_lock lk(st->mu);
        if (st->destroyed) return;
        if (cell.payload.size() + LAYER_OVERHEAD > CELL_PAYLOAD) {
            lk.unlock();
            teardown(st, true, true);
            return;
        }
        Bytes wrapped = wrap_backward_add(cell.payload, st->session);
        if (!try_send_cell(st->prev_link, Cell{st->prev_id, CellCommand::RELAY, wrapped})) {
            lk.unlock();
            teardown(st, false, true);
        }
    }

    // Reply originated at this hop; caller holds st->mu.
    bool send_backward(const std::shared_ptr<CircuitState>& st, const RelayMessage& msg) {
        Bytes wrapped = wrap_backward_seal(encode_relay_message(msg), st->session);
        return try_send_cell(st->prev_link, Cell{st->prev_id, CellCommand::RELAY, wrapped});
    }

    // --- chain extension ---------------------------------------------------------

    void handle_extend(const std::shared_ptr<CircuitState>& st, std::unique_lock<std::mutex>& lk,
                       const RelayMessage& msg) {
        if (st->next_link) {
            lk.unlock();
            teardown(st, true, true);  // extending twice is a state machine violation
            return;
        }
        ExtendRequest req;
        try {
            req = decode_extend(msg.data);
        } catch (const Error&) {
            lk.unlock();
            teardown(st, true, true);
            return;
        }

        std::shared_ptr<Link> out;
        Cell created;
        try {
            auto target = net::parse_hostport(req.target_address);
            auto conn = net::TcpConn::connect(target, config_.exit_connect_timeout_ms);
            conn.set_recv_timeout(config_.exit_connect_timeout_ms);
            out = std::make_shared<Link>(next_link_id_++, std::move(conn));
            uint32_t out_id = crypto::random_u32();
            // The sealed blob travels verbatim; this hop cannot read it.
            out->framed.send(Cell{out_id, CellCommand::CREATE, req.sealed_handshake});
            auto frame = out->framed.read_cell();
            if (!frame) throw Error(Error::Kind::Net, "next hop closed during handshake");
            created = decode_cell(*frame);
            if (created.command != CellCommand::CREATED || created.circuit_id != out_id)
                throw Error(Error::Kind::Protocol, "next hop refused handshake");
            out->framed.set_recv_timeout(0);
            st->next_link = out;
            st->next_id = out_id;
        } catch (const Error&) {
            send_backward(st, RelayMessage{0, RelayCommand::EXTENDED, Bytes{0x01}});
            return;
        }
        {
            std::lock_guard clk(circuits_mu_);
            by_next_[{out->id, st->next_id}] = st;
        }
        register_link(out);  // backward traffic now flows through the reader

        Bytes data{0x00};
        append(data, created.payload);
        send_backward(st, RelayMessage{0, RelayCommand::EXTENDED, data});
    }

    // --- exit-side stream handling ------------------------------------------------

    std::optional<std::string> resolve_name(const std::string& host) {
        if (net::is_ipv4_literal(host)) return host;
        if (auto it = config_.hosts.find(host); it != config_.hosts.end()) return it->second;
        if (config_.dns) return resolve_upstream(host);
        return std::nullopt;
    }

    std::optional<std::string> resolve_upstream(const std::string& host) {
        try {
            net::UdpSock sock;
            sock.open_unbound();
            sock.send_to(*config_.dns, to_bytes(host));
            auto reply = sock.recv(2000);
            if (!reply || reply->payload.empty() || reply->payload[0] != RESOLVED_OK ||
                reply->payload.size() < 5)
                return std::nullopt;
            return net::ipv4_to_string(reply->payload.data() + 1);
        } catch (const Error&) {
            return std::nullopt;
        }
    }

    void handle_begin(const std::shared_ptr<CircuitState>& st, const RelayMessage& msg) {
        std::string dest = to_string(msg.data);
        net::HostPort target;
        try {
            target = net::parse_hostport(dest);
        } catch (const Error&) {
            send_backward(st, RelayMessage{msg.stream_id, RelayCommand::END,
                                           Bytes{uint8_t(EndReason::PROTOCOL)}});
            return;
        }
        auto ip = resolve_name(target.host);
        if (!ip) {
            send_backward(st, RelayMessage{msg.stream_id, RelayCommand::END,
                                           Bytes{uint8_t(EndReason::RESOLVE_FAILED)}});
            return;
        }
        net::TcpConn conn;
        try {
            conn = net::TcpConn::connect({*ip, target.port}, config_.exit_connect_timeout_ms);
        } catch (const Error& e) {
            auto reason = e.kind() == Error::Kind::Timeout ? EndReason::TIMEOUT : EndReason::REFUSED;
            send_backward(st, RelayMessage{msg.stream_id, RelayCommand::END,
                                           Bytes{uint8_t(reason)}});
            return;
        }

        auto stream = std::make_unique<ExitStream>();
        stream->stream_id = msg.stream_id;
        stream->destination = dest;
        stream->conn = std::move(conn);
        ExitStream* raw = stream.get();
        st->streams[msg.stream_id] = std::move(stream);

        Bytes connected(6);
        auto addr = net::parse_ipv4(*ip);
        std::memcpy(connected.data(), &addr->s_addr, 4);
        put_be16(connected.data() + 4, target.port);
        send_backward(st, RelayMessage{msg.stream_id, RelayCommand::CONNECTED, connected});

        raw->pump = std::thread([this, st, raw] { exit_stream_pump(st, raw); });
    }

    // Destination -> client: read the socket, send DATA cells backward while
    // window credits last.
    void exit_stream_pump(const std::shared_ptr<CircuitState>& st, ExitStream* stream) {
        const size_t chunk_size = backward_stream_chunk();
        Bytes buf(chunk_size);
        bool orderly = false;
        while (!stream->closing) {
            {
                std::unique_lock wl(stream->wmu);
                bool ok = stream->wcv.wait_for(wl, std::chrono::seconds(30), [&] {
                    return stream->send_credits > 0 || stream->closing.load();
                });
                if (!ok || stream->closing) break;
                stream->send_credits--;
            }
            size_t r = 0;
            try {
                r = stream->conn.read_some(buf.data(), buf.size());
            } catch (const Error&) {
                break;
            }
            if (r == 0) {
                orderly = true;
                break;
            }
            std::lock_guard lk(st->mu);
            if (st->destroyed || stream->closing) break;
            if (!send_backward(st, RelayMessage{stream->stream_id, RelayCommand::DATA,
                                                Bytes(buf.begin(), buf.begin() + r)}))
                break;
        }
        if (!stream->closing) {
            std::lock_guard lk(st->mu);
            if (!st->destroyed)
                send_backward(st, RelayMessage{stream->stream_id, RelayCommand::END,
                                               Bytes{uint8_t(orderly ? EndReason::DONE
                                                                     : EndReason::REFUSED)}});
        }
    }

    void handle_data(const std::shared_ptr<CircuitState>& st, std::unique_lock<std::mutex>& lk,
                     const RelayMessage& msg) {
        auto it = st->streams.find(msg.stream_id);
        if (it == st->streams.end()) {
            send_backward(st, RelayMessage{msg.stream_id, RelayCommand::END,
                                           Bytes{uint8_t(EndReason::NO_STREAM)}});
            return;
        }
        ExitStream* stream = it->second.get();
        if (msg.data.empty()) {
            // Window credit from the client for our backward direction.
            std::lock_guard wl(stream->wmu);
            stream->send_credits = STREAM_WINDOW;
            stream->wcv.notify_all();
            return;
        }
        try {
            stream->conn.write_all(msg.data);
        } catch (const Error&) {
            auto dead = take_stream(st, msg.stream_id);
            send_backward(st, RelayMessage{msg.stream_id, RelayCommand::END,
                                           Bytes{uint8_t(EndReason::REFUSED)}});
            lk.unlock();
            reap_stream(std::move(dead));
            return;
        }
        if (++stream->recv_since_credit >= STREAM_WINDOW) {
            stream->recv_since_credit = 0;
            send_backward(st, RelayMessage{msg.stream_id, RelayCommand::DATA, {}});
        }
    }

    void handle_end(const std::shared_ptr<CircuitState>& st, std::unique_lock<std::mutex>& lk,
                    const RelayMessage& msg) {
        auto dead = take_stream(st, msg.stream_id);
        lk.unlock();
        reap_stream(std::move(dead));
    }

    void handle_resolve(const std::shared_ptr<CircuitState>& st, const RelayMessage& msg) {
        auto ip = resolve_name(to_string(msg.data));
        Bytes reply;
        if (ip) {
            reply.push_back(RESOLVED_OK);
            auto addr = net::parse_ipv4(*ip);
            reply.resize(5);
            std::memcpy(reply.data() + 1, &addr->s_addr, 4);
        } else {
            reply.push_back(RESOLVED_UNKNOWN_HOST);
        }
        send_backward(st, RelayMessage{msg.stream_id, RelayCommand::RESOLVED, reply});
    }

    // Detach a stream under st->mu; join its pump only after releasing the lock.
    std::unique_ptr<ExitStream> take_stream(const std::shared_ptr<CircuitState>& st,
                                            uint16_t stream_id) {
        auto it = st->streams.find(stream_id);
        if (it == st->streams.end()) return nullptr;
        auto stream = std::move(it->second);
        st->streams.erase(it);
        stream->closing = true;
        stream->conn.shutdown_both();
        stream->wcv.notify_all();
        return stream;
    }

    void reap_stream(std::unique_ptr<ExitStream> stream) {
        if (!stream) return;
        if (stream->pump.joinable()) stream->pump.join();
    }

    // --- teardown ------------------------------------------------------------------

    void teardown(const std::shared_ptr<CircuitState>& st, bool notify_prev, bool notify_next) {
        std::vector<std::unique_ptr<ExitStream>> streams;
        std::shared_ptr<Link> prev, next;
        uint32_t prev_id = 0, next_id = 0;
        {
            std::lock_guard lk(st->mu);
            if (st->destroyed) return;
            st->destroyed = true;
            prev = st->prev_link;
            prev_id = st->prev_id;
            next = st->next_link;
            next_id = st->next_id;
            for (auto& [sid, stream] : st->streams) {
                stream->closing = true;
                stream->conn.shutdown_both();
                stream->wcv.notify_all();
                streams.push_back(std::move(stream));
            }
            st->streams.clear();
        }
        {
            std::lock_guard lk(circuits_mu_);
            if (prev) by_prev_.erase({prev->id, prev_id});
            if (next) by_next_.erase({next->id, next_id});
        }
        if (notify_prev && prev) try_send_cell(prev, Cell{prev_id, CellCommand::DESTROY, {}});
        if (notify_next && next) try_send_cell(next, Cell{next_id, CellCommand::DESTROY, {}});
        for (auto& s : streams) reap_stream(std::move(s));
        note(prev_id, "destroyed");
    }

    static std::string relay_cmd_name(RelayCommand c) {
        switch (c) {
            case RelayCommand::BEGIN: return "BEGIN";
            case RelayCommand::DATA: return "DATA";
            case RelayCommand::END: return "END";
            case RelayCommand::EXTEND: return "EXTEND";
            case RelayCommand::EXTENDED: return "EXTENDED";
            case RelayCommand::RESOLVE: return "RESOLVE";
            case RelayCommand::RESOLVED: return "RESOLVED";
            case RelayCommand::CONNECTED: return "CONNECTED";
        }
        return "?";
    }

    void note(uint32_t circuit_id, const std::string& what) const {
        std::lock_guard lk(events_mu_);
        if (events_.size() >= 50'000) return;  // keep early (build-time) events, bound memory
        events_.push_back("cid=" + std::to_string(circuit_id) + " " + what);
    }

    RelayConfig config_;
    crypto::KeyPair identity_;
    net::TcpListener listener_;
    std::unique_ptr<TokenBucket> bucket_;
    std::thread accept_thread_;
    std::atomic<bool> stopping_{false};
    std::atomic<uint64_t> next_link_id_{1};

    std::mutex links_mu_;
    std::vector<std::shared_ptr<Link>> links_;
    std::vector<std::thread> reader_threads_;

    mutable std::mutex circuits_mu_;
    std::map<CircuitKey, std::shared_ptr<CircuitState>> by_prev_;
    std::map<CircuitKey, std::shared_ptr<CircuitState>> by_next_;

    mutable std::mutex events_mu_;
    mutable std::vector<std::string> events_;
};

}  // namespace onionbox
