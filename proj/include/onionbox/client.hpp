#pragma once

#include <algorithm>
#include <condition_variable>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <thread>
#include <vector>

#include "onionbox/cell.hpp"
#include "onionbox/crypto.hpp"
#include "onionbox/directory.hpp"
#include "onionbox/net.hpp"
#include "onionbox/onion.hpp"

namespace onionbox {

// Uniform draw from [0, bound). Injected so path selection is deterministic
// under test; the default pulls from the CSPRNG.
using RngFn = std::function<uint64_t(uint64_t)>;

inline RngFn crypto_rng() {
    return [](uint64_t bound) -> uint64_t {
        if (bound <= 1) return 0;
        crypto::ensure_init();
        return randombytes_uniform(static_cast<uint32_t>(bound));
    };
}

inline RngFn seeded_rng(uint64_t seed) {
    auto gen = std::make_shared<std::mt19937_64>(seed);
    return [gen](uint64_t bound) -> uint64_t {
        if (bound <= 1) return 0;
        return std::uniform_int_distribution<uint64_t>(0, bound - 1)(*gen);
    };
}

struct ClientOptions {
    size_t path_length = 3;  // 1..MAX_PATH_LENGTH
    int handshake_timeout_ms = 5000;
    int connected_timeout_ms = 10000;
    int window_timeout_ms = 30000;
    RngFn rng = crypto_rng();
};

// Position 1 must be ENTRY-capable (when it is not also the exit), position n
// EXIT-capable, middles MIDDLE-capable; relays never repeat within a path.
inline std::vector<RelayDescriptor> select_path(const DirectorySnapshot& snapshot, size_t n,
                                                const RngFn& rng) {
    if (n < 1 || n > MAX_PATH_LENGTH)
        throw Error(Error::Kind::Selection, "path length must be 1.." +
                                                std::to_string(MAX_PATH_LENGTH));
    auto pick = [&](Role role, const std::vector<RelayDescriptor>& chosen)
        -> RelayDescriptor {
        std::vector<const RelayDescriptor*> pool;
        for (const auto& d : snapshot.relays) {
            if (!d.has_role(role)) continue;
            bool used = false;
            for (const auto& c : chosen) used = used || c.relay_id == d.relay_id;
            if (!used) pool.push_back(&d);
        }
        if (pool.empty())
            throw Error(Error::Kind::Selection,
                        "no unused " + to_string(role) + "-capable relay available");
        return *pool[rng(pool.size())];
    };

    std::vector<RelayDescriptor> chosen;
    RelayDescriptor exit = pick(Role::EXIT, chosen);
    chosen.push_back(exit);
    std::vector<RelayDescriptor> path;
    if (n >= 2) path.push_back(pick(Role::ENTRY, chosen));
    if (n >= 2) chosen.push_back(path.back());
    for (size_t i = 2; i < n; ++i) {
        path.push_back(pick(Role::MIDDLE, chosen));
        chosen.push_back(path.back());
    }
    path.push_back(exit);
    return path;
}

// Build failures carry the 1-based index of the hop that failed.
class BuildError : public Error {
public:
    BuildError(size_t hop, Kind kind, const std::string& what)
        : Error(kind, "hop " + std::to_string(hop) + ": " + what), failed_hop_(hop) {}
    size_t failed_hop() const { return failed_hop_; }

private:
    size_t failed_hop_;
};

// Stream open refusals carry the exit's END reason code.
class StreamOpenError : public Error {
public:
    StreamOpenError(EndReason reason, const std::string& what)
        : Error(Error::Kind::Net, what), reason_(reason) {}
    EndReason reason() const { return reason_; }

private:
    EndReason reason_;
};

class Circuit;

class Stream {
public:
    Stream(std::shared_ptr<Circuit> circuit, uint16_t id)
        : circuit_(std::move(circuit)), id_(id) {}
    ~Stream() { close(); }

    Stream(const Stream&) = delete;
    Stream& operator=(const Stream&) = delete;

    void write(BytesView data);
    size_t read(uint8_t* buf, size_t n);  // 0 = orderly end of stream
    Bytes read_exact(size_t n);
    void close();

    uint16_t id() const { return id_; }

private:
    std::shared_ptr<Circuit> circuit_;
    uint16_t id_;
    bool closed_ = false;
};

// Client-side record of an established chain: the ordered hops with their
// session keys, the entry link, and per-stream state.
class Circuit : public std::enable_shared_from_this<Circuit> {
public:
    struct Hop {
        RelayDescriptor relay;
        SessionKey session;
    };

    static std::shared_ptr<Circuit> build(const std::vector<RelayDescriptor>& path,
                                          const ClientOptions& opts = {});

    ~Circuit() { destroy(); }

    std::unique_ptr<Stream> open_stream(const std::string& dest);
    std::string resolve(const std::string& hostname);
    void destroy();

    bool alive() const {
        std::lock_guard lk(mu_);
        return !destroyed_;
    }

    size_t hop_count() const { return hops_.size(); }
    size_t live_stream_count() const {
        std::lock_guard lk(mu_);
        return streams_.size();
    }

    std::chrono::steady_clock::time_point created_at() const { return created_at_; }

    // White-box accessors for key-isolation assertions.
    std::vector<std::string> debug_forward_keys() const {
        std::vector<std::string> out;
        for (const auto& h : hops_) out.push_back(to_hex(h.session.forward_key));
        return out;
    }
    const std::vector<Hop>& hops() const { return hops_; }

private:
    friend class Stream;

    struct StreamState {
        uint16_t id = 0;
        std::deque<Bytes> inbox;
        Bytes partial;  // consumed front chunk remainder
        bool connected = false;
        bool remote_end = false;
        EndReason end_reason = EndReason::DONE;
        int send_credits = STREAM_WINDOW;
        int consumed_since_credit = 0;
        std::condition_variable cv;
    };

    Circuit() = default;

    // The pump captures `this` only: destroy() (run by whoever drops the last
    // reference) shuts the link and joins, so members outlive the thread.
    void start_pump() {
        pump_thread_ = std::thread([this] { pump(); });
    }

    void pump();
    void route(const RelayMessage& msg);
    void fail_all_streams();
    void send_message(const RelayMessage& msg);  // full-depth wrap + send
    void send_credit(uint16_t stream_id);
    uint16_t allocate_stream_id();

    std::vector<Hop> hops_;
    std::unique_ptr<net::FramedLink> link_;
    uint32_t circuit_id_ = 0;
    ClientOptions opts_;
    std::chrono::steady_clock::time_point created_at_;

    mutable std::mutex mu_;  // guards streams_, destroyed_, hops_ backward counters
    std::map<uint16_t, std::shared_ptr<StreamState>> streams_;
    bool destroyed_ = false;
    bool destroy_sent_ = false;
    uint16_t next_stream_id_ = 1;

    std::mutex send_mu_;  // serializes forward wrap+write so counters stay ordered
    std::thread pump_thread_;
};

// --- construction --------------------------------------------------------------

inline std::shared_ptr<Circuit> Circuit::build(const std::vector<RelayDescriptor>& path,
                                               const ClientOptions& opts) {
    if (path.empty()) throw Error(Error::Kind::Selection, "empty path");
    if (path.size() > MAX_PATH_LENGTH)
        throw Error(Error::Kind::Selection, "path too long");
    for (size_t i = 0; i < path.size(); ++i)
        for (size_t j = i + 1; j < path.size(); ++j)
            if (path[i].relay_id == path[j].relay_id)
                throw Error(Error::Kind::Selection, "path repeats a relay");

    auto circuit = std::shared_ptr<Circuit>(new Circuit());
    circuit->opts_ = opts;
    circuit->circuit_id_ = crypto::random_u32();
    circuit->created_at_ = std::chrono::steady_clock::now();

    // CREATE to hop 1.
    {
        const auto& entry = path[0];
        net::TcpConn conn;
        try {
            conn = net::TcpConn::connect(net::parse_hostport(entry.address),
                                         opts.handshake_timeout_ms);
        } catch (const Error& e) {
            throw BuildError(1, e.kind(), e.what());
        }
        conn.set_recv_timeout(opts.handshake_timeout_ms);
        circuit->link_ = std::make_unique<net::FramedLink>(std::move(conn));

        auto eph = crypto::KeyPair::generate();
        Bytes sealed = crypto::seal_to(entry.public_key, eph.public_key);
        circuit->link_->send(Cell{circuit->circuit_id_, CellCommand::CREATE, sealed});

        Cell reply;
        try {
            auto frame = circuit->link_->read_cell();
            if (!frame) throw Error(Error::Kind::Net, "entry closed during handshake");
            reply = decode_cell(*frame);
        } catch (const Error& e) {
            throw BuildError(1, e.kind(), e.what());
        }
        if (reply.command == CellCommand::DESTROY)
            throw BuildError(1, Error::Kind::Crypto, "entry refused handshake");
        if (reply.command != CellCommand::CREATED || reply.circuit_id != circuit->circuit_id_ ||
            reply.payload.size() != CREATED_PAYLOAD_LEN)
            throw BuildError(1, Error::Kind::Protocol, "unexpected handshake reply");

        crypto::Key relay_eph{};
        std::copy(reply.payload.begin(), reply.payload.begin() + 32, relay_eph.begin());
        crypto::Key shared = crypto::x25519_shared(eph.secret_key, relay_eph);
        Bytes transcript(eph.public_key.begin(), eph.public_key.end());
        append(transcript, relay_eph);
        auto material = crypto::derive_session_key(shared, transcript);
        if (!std::equal(material.confirm.begin(), material.confirm.end(),
                        reply.payload.begin() + 32))
            throw BuildError(1, Error::Kind::Crypto, "key confirmation mismatch");
        circuit->hops_.push_back(Hop{entry, SessionKey::from_material(material)});
    }

    // Telescope: EXTEND to hop i through the prefix already built.
    for (size_t i = 2; i <= path.size(); ++i) {
        const auto& target = path[i - 1];
        auto fail = [&](Error::Kind kind, const std::string& what) -> BuildError {
            try {
                circuit->link_->send(Cell{circuit->circuit_id_, CellCommand::DESTROY, {}});
            } catch (const Error&) {
            }
            return BuildError(i, kind, what);
        };

        auto eph = crypto::KeyPair::generate();
        Bytes sealed = crypto::seal_to(target.public_key, eph.public_key);
        Bytes extend = encode_relay_message(
            RelayMessage{0, RelayCommand::EXTEND, encode_extend({target.address, sealed})});
        std::vector<SessionKey*> keys;
        for (auto& h : circuit->hops_) keys.push_back(&h.session);
        Bytes ct = onion_wrap_keys(extend, keys);
        circuit->link_->send(Cell{circuit->circuit_id_, CellCommand::RELAY, ct});

        Cell reply;
        try {
            auto frame = circuit->link_->read_cell();
            if (!frame) throw Error(Error::Kind::Net, "entry closed during extend");
            reply = decode_cell(*frame);
        } catch (const Error& e) {
            throw fail(e.kind(), e.what());
        }
        if (reply.command == CellCommand::DESTROY)
            throw BuildError(i, Error::Kind::Closed, "circuit destroyed during extend");
        if (reply.command != CellCommand::RELAY)
            throw fail(Error::Kind::Protocol, "unexpected cell during extend");

        BackwardResult res;
        try {
            std::vector<SessionKey> view;
            for (auto& h : circuit->hops_) view.push_back(h.session);
            res = unwrap_backward(reply.payload, view);
            for (size_t k = 0; k < view.size(); ++k)
                circuit->hops_[k].session.backward_counter = view[k].backward_counter;
        } catch (const Error& e) {
            throw fail(e.kind(), std::string("extend reply: ") + e.what());
        }
        RelayMessage msg;
        try {
            msg = decode_relay_message(res.message);
        } catch (const Error& e) {
            throw fail(e.kind(), e.what());
        }
        if (msg.cmd != RelayCommand::EXTENDED || res.from_hop != circuit->hops_.size() - 1)
            throw fail(Error::Kind::Protocol, "expected EXTENDED from the last hop");
        if (msg.data.empty() || msg.data[0] != 0x00)
            throw fail(Error::Kind::Net, "next hop unreachable from relay");
        if (msg.data.size() != 1 + CREATED_PAYLOAD_LEN)
            throw fail(Error::Kind::Protocol, "bad EXTENDED payload");

        crypto::Key relay_eph{};
        std::copy(msg.data.begin() + 1, msg.data.begin() + 33, relay_eph.begin());
        crypto::Key shared = crypto::x25519_shared(eph.secret_key, relay_eph);
        Bytes transcript(eph.public_key.begin(), eph.public_key.end());
        append(transcript, relay_eph);
        auto material = crypto::derive_session_key(shared, transcript);
        if (!std::equal(material.confirm.begin(), material.confirm.end(),
                        msg.data.begin() + 33))
            throw fail(Error::Kind::Crypto, "key confirmation mismatch");
        circuit->hops_.push_back(Hop{target, SessionKey::from_material(material)});
    }

    circuit->link_->set_recv_timeout(0);
    circuit->start_pump();
    return circuit;
}

// --- steady-state receive path ---------------------------------------------------

inline void Circuit::pump() {
    try {
        while (true) {
            auto frame = link_->read_cell();
            if (!frame) break;
            Cell cell = decode_cell(*frame);
            if (cell.command == CellCommand::DESTROY) break;
            if (cell.command != CellCommand::RELAY) continue;
            BackwardResult res;
            {
                std::lock_guard lk(mu_);
                if (destroyed_) break;
                std::vector<SessionKey> view;
                view.reserve(hops_.size());
                for (auto& h : hops_) view.push_back(h.session);
                res = unwrap_backward(cell.payload, view);  // throws on tamper
                for (size_t k = 0; k < view.size(); ++k)
                    hops_[k].session.backward_counter = view[k].backward_counter;
            }
            route(decode_relay_message(res.message));
        }
    } catch (const Error&) {
        // authentication failure or link loss: the circuit is done
        try {
            std::lock_guard lk(mu_);
            if (!destroy_sent_) {
                destroy_sent_ = true;
                link_->send(Cell{circuit_id_, CellCommand::DESTROY, {}});
            }
        } catch (const Error&) {
        }
    }
    std::lock_guard lk(mu_);
    destroyed_ = true;
    fail_all_streams();
}

inline void Circuit::route(const RelayMessage& msg) {
    std::lock_guard lk(mu_);
    auto it = streams_.find(msg.stream_id);
    if (it == streams_.end()) return;  // late traffic for a closed stream
    auto& st = *it->second;
    switch (msg.cmd) {
        case RelayCommand::CONNECTED:
            st.connected = true;
            break;
        case RelayCommand::DATA:
            if (msg.data.empty()) {
                st.send_credits = STREAM_WINDOW;
            } else {
                st.inbox.push_back(msg.data);
            }
            break;
        case RelayCommand::END:
            st.remote_end = true;
            st.end_reason = msg.data.empty() ? EndReason::DONE
                                             : static_cast<EndReason>(msg.data[0]);
            break;
        case RelayCommand::RESOLVED:
            st.inbox.push_back(msg.data);
            st.connected = true;  // doubles as "answer arrived"
            break;
        default:
            break;
    }
    st.cv.notify_all();
}

inline void Circuit::fail_all_streams() {
    for (auto& [id, st] : streams_) {
        st->remote_end = true;
        st->cv.notify_all();
    }
}

inline void Circuit::send_message(const RelayMessage& msg) {
    Bytes body = encode_relay_message(msg);
    std::lock_guard lk(send_mu_);
    {
        std::lock_guard state_lk(mu_);
        if (destroyed_) throw Error(Error::Kind::Closed, "circuit is closed");
    }
    std::vector<SessionKey*> keys;
    for (auto& h : hops_) keys.push_back(&h.session);
    link_->send(Cell{circuit_id_, CellCommand::RELAY, onion_wrap_keys(body, keys)});
}

inline void Circuit::send_credit(uint16_t stream_id) {
    send_message(RelayMessage{stream_id, RelayCommand::DATA, {}});
}

inline uint16_t Circuit::allocate_stream_id() {
    for (int tries = 0; tries < 0xFFFF; ++tries) {
        uint16_t id = next_stream_id_++;
        if (id == 0) continue;
        if (!streams_.count(id)) return id;
    }
    throw Error(Error::Kind::Protocol, "stream id space exhausted");
}

inline std::unique_ptr<Stream> Circuit::open_stream(const std::string& dest) {
    if (dest.empty()) throw Error(Error::Kind::Validation, "empty destination");
    net::parse_hostport(dest);  // shape check only; the hostname travels verbatim
    std::shared_ptr<StreamState> st;
    uint16_t id = 0;
    {
        std::lock_guard lk(mu_);
        if (destroyed_) throw Error(Error::Kind::Closed, "circuit is closed");
        id = allocate_stream_id();
        st = std::make_shared<StreamState>();
        st->id = id;
        streams_[id] = st;
    }
    try {
        send_message(RelayMessage{id, RelayCommand::BEGIN, to_bytes(dest)});
    } catch (...) {
        std::lock_guard lk(mu_);
        streams_.erase(id);
        throw;
    }

    std::unique_lock lk(mu_);
    bool ok = st->cv.wait_for(lk, std::chrono::milliseconds(opts_.connected_timeout_ms), [&] {
        return st->connected || st->remote_end || destroyed_;
    });
    if (st->connected) return std::make_unique<Stream>(shared_from_this(), id);
    streams_.erase(id);
    if (st->remote_end)
        throw StreamOpenError(st->end_reason,
                              "stream refused by exit, reason " +
                                  std::to_string(static_cast<int>(st->end_reason)));
    if (destroyed_) throw Error(Error::Kind::Closed, "circuit destroyed while opening stream");
    throw Error(Error::Kind::Timeout, "no CONNECTED within deadline");
}

inline std::string Circuit::resolve(const std::string& hostname) {
    std::shared_ptr<StreamState> st;
    uint16_t id = 0;
    {
        std::lock_guard lk(mu_);
        if (destroyed_) throw Error(Error::Kind::Closed, "circuit is closed");
        id = allocate_stream_id();
        st = std::make_shared<StreamState>();
        st->id = id;
        streams_[id] = st;
    }
    try {
        send_message(RelayMessage{id, RelayCommand::RESOLVE, to_bytes(hostname)});
    } catch (...) {
        std::lock_guard lk(mu_);
        streams_.erase(id);
        throw;
    }
    std::unique_lock lk(mu_);
    bool ok = st->cv.wait_for(lk, std::chrono::milliseconds(opts_.connected_timeout_ms), [&] {
        return (st->connected && !st->inbox.empty()) || st->remote_end || destroyed_;
    });
    streams_.erase(id);
    if (!ok) throw Error(Error::Kind::Timeout, "no RESOLVED within deadline");
    if (st->inbox.empty()) throw Error(Error::Kind::Closed, "circuit closed during resolve");
    Bytes answer = st->inbox.front();
    if (answer.empty() || answer[0] != RESOLVED_OK || answer.size() < 5)
        throw Error(Error::Kind::Resolve, "resolution failed for '" + hostname + "'");
    return net::ipv4_to_string(answer.data() + 1);
}

inline void Circuit::destroy() {
    {
        std::lock_guard lk(mu_);
        if (!destroyed_) {
            destroyed_ = true;
            if (!destroy_sent_ && link_) {
                destroy_sent_ = true;
                try {
                    link_->send(Cell{circuit_id_, CellCommand::DESTROY, {}});
                } catch (const Error&) {
                }
            }
            fail_all_streams();
        }
        if (link_) link_->shutdown();
    }
    if (pump_thread_.joinable() && pump_thread_.get_id() != std::this_thread::get_id())
        pump_thread_.join();
}

// --- stream I/O -------------------------------------------------------------------

inline void Stream::write(BytesView data) {
    if (closed_) throw Error(Error::Kind::Closed, "stream closed");
    size_t chunk_max = max_stream_chunk(circuit_->hop_count());
    size_t off = 0;
    while (off < data.size()) {
        std::shared_ptr<Circuit::StreamState> st;
        {
            std::unique_lock lk(circuit_->mu_);
            auto it = circuit_->streams_.find(id_);
            if (it == circuit_->streams_.end() || circuit_->destroyed_)
                throw Error(Error::Kind::Closed, "stream closed");
            st = it->second;
            bool ok = st->cv.wait_for(
                lk, std::chrono::milliseconds(circuit_->opts_.window_timeout_ms), [&] {
                    return st->send_credits > 0 || st->remote_end || circuit_->destroyed_;
                });
            if (st->remote_end || circuit_->destroyed_)
                throw Error(Error::Kind::Closed, "stream ended by peer");
            if (!ok) throw Error(Error::Kind::Timeout, "stream window stalled");
            st->send_credits--;
        }
        size_t take = std::min(chunk_max, data.size() - off);
        circuit_->send_message(RelayMessage{
            id_, RelayCommand::DATA, Bytes(data.begin() + off, data.begin() + off + take)});
        off += take;
    }
}

inline size_t Stream::read(uint8_t* buf, size_t n) {
    if (n == 0) return 0;
    size_t take = 0;
    bool want_credit = false;
    {
        std::unique_lock lk(circuit_->mu_);
        auto it = circuit_->streams_.find(id_);
        if (it == circuit_->streams_.end()) return 0;
        auto st = it->second;
        st->cv.wait(lk, [&] {
            return !st->inbox.empty() || !st->partial.empty() || st->remote_end ||
                   circuit_->destroyed_;
        });
        if (st->partial.empty() && st->inbox.empty()) {
            if (st->remote_end) return 0;  // orderly END
            throw Error(Error::Kind::Closed, "circuit destroyed mid-read");
        }
        if (st->partial.empty()) {
            st->partial = std::move(st->inbox.front());
            st->inbox.pop_front();
            st->consumed_since_credit++;
        }
        take = std::min(n, st->partial.size());
        std::memcpy(buf, st->partial.data(), take);
        st->partial.erase(st->partial.begin(), st->partial.begin() + take);
        if (st->consumed_since_credit >= STREAM_WINDOW) {
            st->consumed_since_credit = 0;
            want_credit = true;
        }
    }
    if (want_credit) circuit_->send_credit(id_);
    return take;
}

inline Bytes Stream::read_exact(size_t n) {
    Bytes out(n);
    size_t got = 0;
    while (got < n) {
        size_t r = read(out.data() + got, n - got);
        if (r == 0) throw Error(Error::Kind::Net, "stream ended mid-read");
        got += r;
    }
    return out;
}

inline void Stream::close() {
    if (closed_) return;
    closed_ = true;
    bool send_end = false;
    {
        std::lock_guard lk(circuit_->mu_);
        auto it = circuit_->streams_.find(id_);
        if (it != circuit_->streams_.end()) {
            send_end = !it->second->remote_end && !circuit_->destroyed_;
            it->second->remote_end = true;  // wake any blocked reader/writer
            it->second->cv.notify_all();
            circuit_->streams_.erase(it);
        }
    }
    if (send_end) {
        try {
            circuit_->send_message(
                RelayMessage{id_, RelayCommand::END, Bytes{uint8_t(EndReason::DONE)}});
        } catch (const Error&) {
        }
    }
}

// Owns the active circuit plus retirees still serving streams.
class CircuitManager {
public:
    CircuitManager(net::HostPort directory, ClientOptions opts)
        : directory_(std::move(directory)), opts_(std::move(opts)) {}

    ~CircuitManager() {
        std::lock_guard lk(mu_);
        if (current_) current_->destroy();
        for (auto& c : retired_) c->destroy();
    }

    std::shared_ptr<Circuit> current() {
        std::lock_guard lk(mu_);
        if (current_ && !current_->alive()) current_ = nullptr;
        return current_;
    }

    std::shared_ptr<Circuit> ensure() {
        if (auto c = current()) return c;
        return rotate();
    }

    // Builds a replacement first; the old circuit keeps serving its streams
    // until they end. On failure the old circuit stays current.
    std::shared_ptr<Circuit> rotate() {
        DirectoryClient dir(directory_);
        auto snapshot = dir.list_relays();
        auto path = select_path(snapshot, opts_.path_length, opts_.rng);
        auto fresh = Circuit::build(path, opts_);
        std::lock_guard lk(mu_);
        if (current_) {
            if (current_->live_stream_count() == 0)
                current_->destroy();
            else
                retired_.push_back(current_);
        }
        current_ = fresh;
        return fresh;
    }

    // Destroys retirees whose streams have all ended.
    void prune() {
        std::lock_guard lk(mu_);
        for (auto it = retired_.begin(); it != retired_.end();) {
            if ((*it)->live_stream_count() == 0 || !(*it)->alive()) {
                (*it)->destroy();
                it = retired_.erase(it);
            } else {
                ++it;
            }
        }
    }

    size_t retired_count() const {
        std::lock_guard lk(mu_);
        return retired_.size();
    }

    const ClientOptions& options() const { return opts_; }

private:
    net::HostPort directory_;
    ClientOptions opts_;
    mutable std::mutex mu_;
    std::shared_ptr<Circuit> current_;
    std::vector<std::shared_ptr<Circuit>> retired_;
};

}  // namespace onionbox
