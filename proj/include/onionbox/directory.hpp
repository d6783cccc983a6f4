#pragma once

#include <atomic>
#include <chrono>
#include <map>
#include <optional>
#include <set>
#include <shared_mutex>
#include <thread>
#include <vector>

#include <json.hpp>

#include "onionbox/crypto.hpp"
#include "onionbox/error.hpp"
#include "onionbox/net.hpp"

namespace onionbox {

enum class Role : uint8_t { ENTRY, MIDDLE, EXIT };

using RoleSet = std::set<Role>;

inline const RoleSet ALL_ROLES{Role::ENTRY, Role::MIDDLE, Role::EXIT};

inline std::string to_string(Role r) {
    switch (r) {
        case Role::ENTRY: return "ENTRY";
        case Role::MIDDLE: return "MIDDLE";
        case Role::EXIT: return "EXIT";
    }
    return "?";
}

inline Role role_from_string(const std::string& s) {
    std::string up;
    for (char c : s) up.push_back(static_cast<char>(std::toupper(c)));
    if (up == "ENTRY") return Role::ENTRY;
    if (up == "MIDDLE") return Role::MIDDLE;
    if (up == "EXIT") return Role::EXIT;
    throw Error(Error::Kind::Validation, "unknown role '" + s + "'");
}

// "entry,middle,exit" -> RoleSet
inline RoleSet parse_roles(const std::string& csv) {
    RoleSet roles;
    std::string cur;
    for (char c : csv + ",") {
        if (c == ',') {
            if (!cur.empty()) roles.insert(role_from_string(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    return roles;
}

using RelayId = std::array<uint8_t, 16>;

struct RelayDescriptor {
    RelayId relay_id{};
    std::string address;  // host:port the relay listens on (or advertises)
    RoleSet roles;
    crypto::Key public_key{};
    int64_t registered_at = 0;

    bool operator==(const RelayDescriptor& o) const {
        return relay_id == o.relay_id && address == o.address && roles == o.roles &&
               public_key == o.public_key;
    }

    bool has_role(Role r) const { return roles.count(r) > 0; }
};

// Stable identifier: truncated hash of the long-term public key.
inline RelayId relay_id_for_key(const crypto::Key& pk) {
    Bytes h = crypto::blake2b(pk, 16);
    RelayId id{};
    std::copy(h.begin(), h.end(), id.begin());
    return id;
}

struct DirectorySnapshot {
    std::vector<RelayDescriptor> relays;
    int64_t issued_at = 0;
};

inline int64_t unix_now() {
    return std::chrono::duration_cast<std::chrono::seconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

// --- JSON forms (keys in lowercase hex) -------------------------------------

inline nlohmann::json descriptor_to_json(const RelayDescriptor& d) {
    nlohmann::json roles = nlohmann::json::array();
    for (Role r : d.roles) roles.push_back(to_string(r));
    return {{"relay_id", to_hex(d.relay_id)},
            {"address", d.address},
            {"roles", roles},
            {"public_key", to_hex(d.public_key)},
            {"registered_at", d.registered_at}};
}

inline RelayDescriptor descriptor_from_json(const nlohmann::json& j) {
    RelayDescriptor d;
    Bytes id = from_hex(j.at("relay_id").get<std::string>());
    if (id.size() != d.relay_id.size())
        throw Error(Error::Kind::Validation, "relay_id must be 16 octets");
    std::copy(id.begin(), id.end(), d.relay_id.begin());
    d.address = j.at("address").get<std::string>();
    if (d.address.empty()) throw Error(Error::Kind::Validation, "empty relay address");
    net::parse_hostport(d.address);  // shape check
    for (const auto& r : j.at("roles")) d.roles.insert(role_from_string(r.get<std::string>()));
    if (d.roles.empty()) throw Error(Error::Kind::Validation, "relay must have at least one role");
    Bytes pk = from_hex(j.at("public_key").get<std::string>());
    if (pk.size() != d.public_key.size())
        throw Error(Error::Kind::Validation, "public_key must be 32 octets");
    std::copy(pk.begin(), pk.end(), d.public_key.begin());
    d.registered_at = j.value("registered_at", int64_t(0));
    return d;
}

// --- Directory node ----------------------------------------------------------
//
// Line protocol over TCP, one JSON object per line:
//   {"op":"register","relay":{...}}          -> {"ok":true}
//   {"op":"list","roles":["EXIT",...]?}      -> {"ok":true,"issued_at":t,"relays":[...]}
//   {"op":"get_key","relay_id":"<hex>"}      -> {"ok":true,"public_key":"<hex>"}
// Errors: {"ok":false,"error":"..."}.

class DirectoryServer {
public:
    explicit DirectoryServer(const std::string& host = "127.0.0.1", uint16_t port = 0)
        : listener_(host, port) {
        accept_thread_ = std::thread([this] { accept_loop(); });
    }

    ~DirectoryServer() { stop(); }

    uint16_t port() const { return listener_.port(); }
    net::HostPort addr() const { return listener_.addr(); }

    void stop() {
        bool expected = false;
        if (!stopping_.compare_exchange_strong(expected, true)) return;
        listener_.close();
        if (accept_thread_.joinable()) accept_thread_.join();
        for (auto& t : conn_threads_)
            if (t.joinable()) t.join();
    }

    size_t relay_count() const {
        std::shared_lock lk(mu_);
        return relays_.size();
    }

private:
    void accept_loop() {
        while (true) {
            auto conn = listener_.accept();
            if (!conn) return;
            std::lock_guard lk(threads_mu_);
            conn_threads_.emplace_back(
                [this, c = std::make_shared<net::TcpConn>(std::move(*conn))] { serve(*c); });
        }
    }

    void serve(const net::TcpConn& conn) {
        try {
            conn.set_recv_timeout(30'000);
            while (true) {
                auto line = net::read_line(conn);
                if (!line) return;
                nlohmann::json reply;
                try {
                    reply = dispatch(nlohmann::json::parse(*line));
                } catch (const std::exception& e) {
                    reply = {{"ok", false}, {"error", e.what()}};
                }
                net::write_line(conn, reply.dump());
            }
        } catch (const Error&) {
            // peer went away; nothing to do
        }
    }

    nlohmann::json dispatch(const nlohmann::json& req) {
        std::string op = req.at("op").get<std::string>();
        if (op == "register") return do_register(req.at("relay"));
        if (op == "list") return do_list(req);
        if (op == "get_key") return do_get_key(req);
        return {{"ok", false}, {"error", "unknown op '" + op + "'"}};
    }

    nlohmann::json do_register(const nlohmann::json& body) {
        RelayDescriptor d = descriptor_from_json(body);
        d.registered_at = unix_now();
        std::unique_lock lk(mu_);
        relays_[d.relay_id] = d;  // same relay_id replaces the previous entry
        return {{"ok", true}};
    }

    nlohmann::json do_list(const nlohmann::json& req) {
        std::optional<RoleSet> filter;
        if (req.contains("roles")) {
            RoleSet rs;
            for (const auto& r : req.at("roles")) rs.insert(role_from_string(r.get<std::string>()));
            filter = rs;
        }
        nlohmann::json relays = nlohmann::json::array();
        {
            std::shared_lock lk(mu_);
            for (const auto& [id, d] : relays_) {
                if (filter) {
                    bool any = false;
                    for (Role r : *filter) any = any || d.has_role(r);
                    if (!any) continue;
                }
                relays.push_back(descriptor_to_json(d));
            }
        }
        return {{"ok", true}, {"issued_at", unix_now()}, {"relays", relays}};
    }

    nlohmann::json do_get_key(const nlohmann::json& req) {
        Bytes idb = from_hex(req.at("relay_id").get<std::string>());
        if (idb.size() != 16) throw Error(Error::Kind::Validation, "relay_id must be 16 octets");
        RelayId id{};
        std::copy(idb.begin(), idb.end(), id.begin());
        std::shared_lock lk(mu_);
        auto it = relays_.find(id);
        if (it == relays_.end()) return {{"ok", false}, {"error", "not_found"}};
        return {{"ok", true}, {"public_key", to_hex(it->second.public_key)}};
    }

    net::TcpListener listener_;
    std::thread accept_thread_;
    std::mutex threads_mu_;
    std::vector<std::thread> conn_threads_;
    mutable std::shared_mutex mu_;
    std::map<RelayId, RelayDescriptor> relays_;
    std::atomic<bool> stopping_{false};
};

class DirectoryClient {
public:
    explicit DirectoryClient(net::HostPort dir_addr, int timeout_ms = 5000)
        : addr_(std::move(dir_addr)), timeout_ms_(timeout_ms) {}

    void register_relay(const RelayDescriptor& d) const {
        nlohmann::json req = {{"op", "register"}, {"relay", descriptor_to_json(d)}};
        auto reply = roundtrip(req);
        if (!reply.value("ok", false))
            throw Error(Error::Kind::Validation,
                        "register rejected: " + reply.value("error", "unknown"));
    }

    DirectorySnapshot list_relays(const std::optional<RoleSet>& filter = std::nullopt) const {
        nlohmann::json req = {{"op", "list"}};
        if (filter) {
            nlohmann::json roles = nlohmann::json::array();
            for (Role r : *filter) roles.push_back(to_string(r));
            req["roles"] = roles;
        }
        auto reply = roundtrip(req);
        if (!reply.value("ok", false))
            throw Error(Error::Kind::Net, "list failed: " + reply.value("error", "unknown"));
        DirectorySnapshot snap;
        snap.issued_at = reply.at("issued_at").get<int64_t>();
        for (const auto& r : reply.at("relays")) snap.relays.push_back(descriptor_from_json(r));
        return snap;
    }

    crypto::Key get_relay_key(const RelayId& id) const {
        nlohmann::json req = {{"op", "get_key"}, {"relay_id", to_hex(id)}};
        auto reply = roundtrip(req);
        if (!reply.value("ok", false)) {
            std::string err = reply.value("error", "unknown");
            if (err == "not_found")
                throw Error(Error::Kind::NotFound, "relay not registered: " + to_hex(id));
            throw Error(Error::Kind::Net, "get_key failed: " + err);
        }
        Bytes pk = from_hex(reply.at("public_key").get<std::string>());
        crypto::Key key{};
        if (pk.size() != key.size()) throw Error(Error::Kind::Protocol, "bad key length");
        std::copy(pk.begin(), pk.end(), key.begin());
        return key;
    }

    const net::HostPort& addr() const { return addr_; }

private:
    nlohmann::json roundtrip(const nlohmann::json& req) const {
        auto conn = net::TcpConn::connect(addr_, timeout_ms_);
        conn.set_recv_timeout(timeout_ms_);
        net::write_line(conn, req.dump());
        auto line = net::read_line(conn);
        if (!line) throw Error(Error::Kind::Net, "directory closed connection");
        return nlohmann::json::parse(*line);
    }

    net::HostPort addr_;
    int timeout_ms_;
};

}  // namespace onionbox
