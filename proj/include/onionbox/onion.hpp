#pragma once

#include <cstdint>
#include <span>

#include "onionbox/bytes.hpp"
#include "onionbox/cell.hpp"
#include "onionbox/crypto.hpp"
#include "onionbox/error.hpp"

namespace onionbox {

// Per-hop key pair with per-direction nonce counters. Counters are owned by
// exactly one circuit handler; a (key, counter) pair is never reused.
struct SessionKey {
    crypto::Key forward_key{};   // client -> exit direction
    crypto::Key backward_key{};  // exit -> client direction
    uint64_t forward_counter = 0;
    uint64_t backward_counter = 0;

    static SessionKey from_material(const crypto::SessionKeyMaterial& m) {
        SessionKey k;
        k.forward_key = m.forward_key;
        k.backward_key = m.backward_key;
        return k;
    }
};

enum class LayerFlag : uint8_t {
    FORWARD = 0,  // body is the next hop's ciphertext
    DELIVER = 1,  // body is a relay message for this hop
};

struct OnionLayer {
    LayerFlag flag = LayerFlag::DELIVER;
    Bytes body;
};

// Each layer adds a flag octet plus the AEAD tag.
constexpr size_t LAYER_OVERHEAD = 1 + crypto::AEAD_TAG_LEN;

// Largest end-to-end plaintext that still fits a cell after n wraps.
inline size_t max_onion_plaintext(size_t hops) {
    size_t budget = CELL_PAYLOAD;
    size_t need = hops * LAYER_OVERHEAD;
    if (need >= budget) return 0;
    return budget - need;
}

namespace detail {

inline Bytes seal_layer(const crypto::Key& key, uint64_t counter, LayerFlag flag,
                        BytesView body) {
    Bytes pt(1 + body.size());
    pt[0] = static_cast<uint8_t>(flag);
    std::memcpy(pt.data() + 1, body.data(), body.size());
    return crypto::aead_seal(key, counter, pt);
}

inline OnionLayer open_layer(const crypto::Key& key, uint64_t counter, BytesView ciphertext) {
    Bytes pt = crypto::aead_open(key, counter, ciphertext);
    if (pt.empty()) throw Error(Error::Kind::Protocol, "empty onion layer");
    if (pt[0] > 1) throw Error(Error::Kind::Protocol, "bad layer flag");
    OnionLayer layer;
    layer.flag = static_cast<LayerFlag>(pt[0]);
    layer.body.assign(pt.begin() + 1, pt.end());
    return layer;
}

}  // namespace detail

// Wrap a message for the chain: innermost layer uses the LAST key (DELIVER),
// each enclosing layer uses the previous key (FORWARD). Advances each hop's
// forward counter. An empty key list returns the message unchanged.
inline Bytes onion_wrap_keys(BytesView message, std::span<SessionKey* const> hops) {
    if (hops.empty()) return Bytes(message.begin(), message.end());
    if (message.size() > max_onion_plaintext(hops.size()))
        throw Error(Error::Kind::Size,
                    "message of " + std::to_string(message.size()) + " octets exceeds budget " +
                        std::to_string(max_onion_plaintext(hops.size())) + " for " +
                        std::to_string(hops.size()) + " hops");
    SessionKey& innermost = *hops[hops.size() - 1];
    Bytes ct = detail::seal_layer(innermost.forward_key, innermost.forward_counter,
                                  LayerFlag::DELIVER, message);
    innermost.forward_counter++;
    for (size_t i = hops.size() - 1; i-- > 0;) {
        ct = detail::seal_layer(hops[i]->forward_key, hops[i]->forward_counter,
                                LayerFlag::FORWARD, ct);
        hops[i]->forward_counter++;
    }
    return ct;
}

inline Bytes onion_wrap(BytesView message, std::span<SessionKey> hops) {
    std::vector<SessionKey*> keys;
    keys.reserve(hops.size());
    for (auto& h : hops) keys.push_back(&h);
    return onion_wrap_keys(message, keys);
}

// Remove one forward layer at a relay. `counter` must equal the hop's next
// expected forward counter; the counter advances only on success.
inline OnionLayer unwrap_layer(BytesView ciphertext, SessionKey& session, uint64_t counter) {
    if (counter != session.forward_counter)
        throw Error(Error::Kind::Replay, "forward counter mismatch: got " +
                                             std::to_string(counter) + ", expected " +
                                             std::to_string(session.forward_counter));
    OnionLayer layer = detail::open_layer(session.forward_key, counter, ciphertext);
    session.forward_counter++;
    return layer;
}

// Backward path: the originating hop seals a DELIVER layer, every relay on
// the way to the client adds a FORWARD layer on top.
inline Bytes wrap_backward_seal(BytesView message, SessionKey& session) {
    Bytes ct = detail::seal_layer(session.backward_key, session.backward_counter,
                                  LayerFlag::DELIVER, message);
    session.backward_counter++;
    return ct;
}

inline Bytes wrap_backward_add(BytesView ciphertext, SessionKey& session) {
    Bytes ct = detail::seal_layer(session.backward_key, session.backward_counter,
                                  LayerFlag::FORWARD, ciphertext);
    session.backward_counter++;
    return ct;
}

// Full reply path as one call: hop `from_hop` (0-based) originates, hops
// from_hop-1 .. 0 add layers. Mirrors what the relay pipeline does in steps.
inline Bytes wrap_backward(BytesView message, std::span<SessionKey> hops, size_t from_hop) {
    if (from_hop >= hops.size())
        throw Error(Error::Kind::Protocol, "from_hop out of range");
    Bytes ct = wrap_backward_seal(message, hops[from_hop]);
    for (size_t i = from_hop; i-- > 0;) ct = wrap_backward_add(ct, hops[i]);
    return ct;
}

struct BackwardResult {
    size_t from_hop = 0;  // 0-based index of the originating hop
    Bytes message;
};

// Client side: strip layers entry-first until a DELIVER appears. Advances the
// backward counter of every hop that touched the cell. Authentication failure
// on any layer is fatal for the circuit (caller tears down).
inline BackwardResult unwrap_backward(BytesView ciphertext, std::span<SessionKey> hops) {
    Bytes current(ciphertext.begin(), ciphertext.end());
    for (size_t i = 0; i < hops.size(); ++i) {
        OnionLayer layer =
            detail::open_layer(hops[i].backward_key, hops[i].backward_counter, current);
        hops[i].backward_counter++;
        if (layer.flag == LayerFlag::DELIVER) return BackwardResult{i, std::move(layer.body)};
        current = std::move(layer.body);
    }
    throw Error(Error::Kind::Protocol, "backward cell with no DELIVER layer");
}

// --- Relay messages (the DELIVER payloads) ---------------------------------
//
//   [0..2) stream_id big-endian    0 = circuit-level (EXTEND/EXTENDED)
//   [2]    relay command
//   [3..]  data

enum class RelayCommand : uint8_t {
    BEGIN = 1,
    DATA = 2,
    END = 3,
    EXTEND = 4,
    EXTENDED = 5,
    RESOLVE = 6,
    RESOLVED = 7,
    CONNECTED = 8,
};

constexpr size_t RELAY_MSG_HEADER = 3;

inline bool circuit_level(RelayCommand c) {
    return c == RelayCommand::EXTEND || c == RelayCommand::EXTENDED;
}

struct RelayMessage {
    uint16_t stream_id = 0;
    RelayCommand cmd = RelayCommand::END;
    Bytes data;

    RelayMessage() = default;
    RelayMessage(uint16_t sid, RelayCommand c, Bytes d)
        : stream_id(sid), cmd(c), data(std::move(d)) {}
};

inline Bytes encode_relay_message(const RelayMessage& msg) {
    if (circuit_level(msg.cmd) != (msg.stream_id == 0))
        throw Error(Error::Kind::Protocol, "stream_id 0 is reserved for EXTEND/EXTENDED");
    Bytes out(RELAY_MSG_HEADER + msg.data.size());
    put_be16(out.data(), msg.stream_id);
    out[2] = static_cast<uint8_t>(msg.cmd);
    std::memcpy(out.data() + RELAY_MSG_HEADER, msg.data.data(), msg.data.size());
    return out;
}

inline RelayMessage decode_relay_message(BytesView raw) {
    if (raw.size() < RELAY_MSG_HEADER)
        throw Error(Error::Kind::Protocol, "relay message too short");
    uint8_t cmd = raw[2];
    if (cmd < 1 || cmd > 8)
        throw Error(Error::Kind::Protocol, "unknown relay command " + std::to_string(cmd));
    RelayMessage msg;
    msg.stream_id = get_be16(raw.data());
    msg.cmd = static_cast<RelayCommand>(cmd);
    if (circuit_level(msg.cmd) != (msg.stream_id == 0))
        throw Error(Error::Kind::Protocol, "stream_id/command level mismatch");
    msg.data.assign(raw.begin() + RELAY_MSG_HEADER, raw.end());
    return msg;
}

// Largest DATA chunk that fits end-to-end through an n-hop circuit.
inline size_t max_stream_chunk(size_t hops) {
    size_t pt = max_onion_plaintext(hops);
    return pt > RELAY_MSG_HEADER ? pt - RELAY_MSG_HEADER : 0;
}

constexpr size_t MAX_PATH_LENGTH = 8;

// Stop-and-wait stream window: a sender may have this many DATA cells
// outstanding; a zero-length DATA on the same stream re-opens the window.
constexpr int STREAM_WINDOW = 64;

// A relay replying from mid-circuit cannot know the full path length, so
// backward DATA chunks budget for the deepest allowed circuit.
inline size_t backward_stream_chunk() { return max_stream_chunk(MAX_PATH_LENGTH); }

// END reason codes (first data octet of an END message).
enum class EndReason : uint8_t {
    DONE = 0,
    REFUSED = 1,
    TIMEOUT = 2,
    RESOLVE_FAILED = 3,
    NO_STREAM = 4,
    PROTOCOL = 5,
};

// RESOLVED status octets.
constexpr uint8_t RESOLVED_OK = 0x00;
constexpr uint8_t RESOLVED_UNKNOWN_HOST = 0x04;

// Handshake payload shapes.
//   CREATE   payload: client ephemeral public key sealed to the relay identity
//   CREATED  payload: relay ephemeral public key (32) || confirmation tag (32)
//   EXTEND   data:    be16 address length || address || sealed CREATE blob
//   EXTENDED data:    status octet (0 ok / 1 unreachable) || CREATED payload
constexpr size_t CREATED_PAYLOAD_LEN = 2 * crypto::KEY_LEN;

struct ExtendRequest {
    std::string target_address;
    Bytes sealed_handshake;
};

inline Bytes encode_extend(const ExtendRequest& req) {
    if (req.target_address.empty() || req.target_address.size() > 0xFFFF)
        throw Error(Error::Kind::Protocol, "bad extend target length");
    Bytes out(2 + req.target_address.size() + req.sealed_handshake.size());
    put_be16(out.data(), static_cast<uint16_t>(req.target_address.size()));
    std::memcpy(out.data() + 2, req.target_address.data(), req.target_address.size());
    std::memcpy(out.data() + 2 + req.target_address.size(), req.sealed_handshake.data(),
                req.sealed_handshake.size());
    return out;
}

inline ExtendRequest decode_extend(BytesView raw) {
    if (raw.size() < 3) throw Error(Error::Kind::Protocol, "extend data too short");
    uint16_t alen = get_be16(raw.data());
    if (raw.size() < 2u + alen + 1u) throw Error(Error::Kind::Protocol, "extend data truncated");
    ExtendRequest req;
    req.target_address.assign(raw.begin() + 2, raw.begin() + 2 + alen);
    req.sealed_handshake.assign(raw.begin() + 2 + alen, raw.end());
    return req;
}

}  // namespace onionbox
