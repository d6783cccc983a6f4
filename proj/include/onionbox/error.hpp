#pragma once

#include <stdexcept>
#include <string>

namespace onionbox {

// One exception type for the whole stack; `kind` carries the protocol-level
// category so callers and tests can match on it without string parsing.
class Error : public std::runtime_error {
public:
    enum class Kind {
        Framing,     // wire unit has the wrong shape/length
        Protocol,    // well-formed bytes, invalid per protocol state
        Encoding,    // value cannot be represented (oversize payload, ...)
        Size,        // message too large for the layer budget
        Unwrap,      // authenticated decryption failed
        Replay,      // nonce counter mismatch
        Crypto,      // primitive failure (unseal, key agreement)
        Validation,  // malformed input record
        NotFound,    // lookup miss
        Selection,   // path selection infeasible
        Net,         // socket-level failure
        Timeout,     // deadline expired
        Closed,      // operating on a torn-down circuit/stream
        Resolve,     // name resolution failure
        Spawn,       // testnet component failed to come up
        Config,      // bad configuration
        Io,          // file I/O
    };

    Error(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

inline const char* to_string(Error::Kind k) {
    switch (k) {
        case Error::Kind::Framing: return "framing";
        case Error::Kind::Protocol: return "protocol";
        case Error::Kind::Encoding: return "encoding";
        case Error::Kind::Size: return "size";
        case Error::Kind::Unwrap: return "unwrap";
        case Error::Kind::Replay: return "replay";
        case Error::Kind::Crypto: return "crypto";
        case Error::Kind::Validation: return "validation";
        case Error::Kind::NotFound: return "not_found";
        case Error::Kind::Selection: return "selection";
        case Error::Kind::Net: return "net";
        case Error::Kind::Timeout: return "timeout";
        case Error::Kind::Closed: return "closed";
        case Error::Kind::Resolve: return "resolve";
        case Error::Kind::Spawn: return "spawn";
        case Error::Kind::Config: return "config";
        case Error::Kind::Io: return "io";
    }
    return "unknown";
}

}  // namespace onionbox
