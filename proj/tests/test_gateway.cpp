#include <catch2/catch_amalgamated.hpp>

#include <thread>

#include "onionbox/harness.hpp"
#include "test_util.hpp"

using namespace onionbox;
using namespace onionbox::harness;
using testutil::kind_of;

TEST_CASE("SOCKS CONNECT through a three-hop circuit echoes intact") {
    Testnet net(TestnetSpec{});
    auto conn = socks_connect(net.gateway_addr(), "127.0.0.1", net.echo_addr().port, false);
    Bytes probe = testutil::random_bytes(4096);
    conn.write_all(probe);
    REQUIRE(conn.read_exact(probe.size()) == probe);
}

TEST_CASE("greeting without the no-auth method is refused with FF") {
    Testnet net(TestnetSpec{});
    auto conn = net::TcpConn::connect(net.gateway_addr(), 2000);
    conn.set_recv_timeout(5000);
    conn.write_all(Bytes{0x05, 0x01, 0x02});  // username/password only
    Bytes reply = conn.read_exact(2);
    REQUIRE(reply == (Bytes{0x05, 0xFF}));
    uint8_t byte;
    REQUIRE(conn.read_some(&byte, 1) == 0);  // closed
}

TEST_CASE("unsupported command and address type get RFC reply codes") {
    Testnet net(TestnetSpec{});
    {
        auto conn = net::TcpConn::connect(net.gateway_addr(), 2000);
        conn.set_recv_timeout(5000);
        conn.write_all(Bytes{0x05, 0x01, 0x00});
        REQUIRE(conn.read_exact(2) == (Bytes{0x05, 0x00}));
        conn.write_all(Bytes{0x05, 0x02, 0x00, 0x01, 127, 0, 0, 1, 0, 80});  // BIND
        Bytes reply = conn.read_exact(10);
        REQUIRE(reply[1] == SOCKS_CMD_NOT_SUPPORTED);
    }
    {
        auto conn = net::TcpConn::connect(net.gateway_addr(), 2000);
        conn.set_recv_timeout(5000);
        conn.write_all(Bytes{0x05, 0x01, 0x00});
        REQUIRE(conn.read_exact(2) == (Bytes{0x05, 0x00}));
        Bytes req{0x05, 0x01, 0x00, 0x04};  // ATYP = IPv6
        req.resize(req.size() + 18);
        conn.write_all(req);
        Bytes reply = conn.read_exact(10);
        REQUIRE(reply[1] == SOCKS_ATYP_NOT_SUPPORTED);
    }
}

TEST_CASE("DOMAIN connect in onion mode leaves the host resolver untouched") {
    Testnet net(TestnetSpec{});
    for (int i = 0; i < 10; ++i) {
        auto conn = socks_connect(net.gateway_addr(), "echo.test", net.echo_addr().port, true);
        Bytes probe = to_bytes("no leak " + std::to_string(i));
        conn.write_all(probe);
        REQUIRE(conn.read_exact(probe.size()) == probe);
    }
    REQUIRE(net.trap().hit_count() == 0);
}

TEST_CASE("leaky mode pings the host resolver once per DOMAIN connect") {
    TestnetSpec spec;
    spec.leaky = true;
    Testnet net(spec);
    for (int i = 0; i < 5; ++i) {
        auto conn = socks_connect(net.gateway_addr(), "echo.test", net.echo_addr().port, true);
        Bytes probe = to_bytes("leaky");
        conn.write_all(probe);
        REQUIRE(conn.read_exact(probe.size()) == probe);
    }
    REQUIRE(net.trap().hit_count() >= 5);
    for (const auto& hit : net.trap().hits()) REQUIRE(hit.query == "echo.test");
}

TEST_CASE("direct mode resolves locally and still delivers") {
    TestnetSpec spec;
    spec.with_gateway = true;
    spec.gateway_mode = GatewayMode::DIRECT;
    spec.relays = 0;  // no circuits needed for the baseline
    Testnet net(spec);

    // IPv4 literal: no resolution anywhere.
    {
        auto conn = socks_connect(net.gateway_addr(), "127.0.0.1", net.echo_addr().port, false);
        Bytes probe = to_bytes("direct ipv4");
        conn.write_all(probe);
        REQUIRE(conn.read_exact(probe.size()) == probe);
    }
    REQUIRE(net.trap().hit_count() == 0);

    // DOMAIN: resolved via the stand-in system resolver - that is the leak.
    {
        auto conn = socks_connect(net.gateway_addr(), "echo.test", net.echo_addr().port, true);
        Bytes probe = to_bytes("direct domain");
        conn.write_all(probe);
        REQUIRE(conn.read_exact(probe.size()) == probe);
    }
    REQUIRE(net.trap().hit_count() == 1);
    REQUIRE(net.trap().hits()[0].query == "echo.test");
}

TEST_CASE("direct and onion modes deliver byte-identical data") {
    Testnet net(TestnetSpec{});
    auto direct_gw = net.spawn_gateway(GatewayMode::DIRECT, false);

    Bytes payload = testutil::random_bytes(100'000);
    auto run = [&](const net::HostPort& gw) {
        auto conn = socks_connect(gw, "echo.test", net.echo_addr().port, true);
        std::thread writer([&] {
            conn.write_all(payload);
        });
        Bytes back = conn.read_exact(payload.size());
        writer.join();
        return back;
    };
    Bytes via_onion = run(net.gateway_addr());
    Bytes via_direct = run(direct_gw->addr());
    REQUIRE(via_onion == via_direct);
    REQUIRE(via_onion == payload);
}

TEST_CASE("stale circuits rotate out after their lifetime") {
    TestnetSpec spec;
    spec.circuit_lifetime_s = 1;
    Testnet net(spec);
    auto first = net.gateway().pool()->current();
    REQUIRE(first != nullptr);
    for (int i = 0; i < 100 && net.gateway().rotations() == 0; ++i)
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
    REQUIRE(net.gateway().rotations() >= 1);
    auto second = net.gateway().pool()->current();
    REQUIRE(second != nullptr);
    REQUIRE(second != first);
}

TEST_CASE("connects keep succeeding across rotation boundaries") {
    TestnetSpec spec;
    spec.circuit_lifetime_s = 1;
    Testnet net(spec);
    size_t rotations_before = net.gateway().rotations();
    for (int i = 0; i < 100; ++i) {
        auto conn = socks_connect(net.gateway_addr(), "127.0.0.1", net.echo_addr().port, false);
        Bytes probe = to_bytes("soak " + std::to_string(i));
        conn.write_all(probe);
        REQUIRE(conn.read_exact(probe.size()) == probe);
        if (i % 10 == 0) std::this_thread::sleep_for(std::chrono::milliseconds(120));
    }
    REQUIRE(net.gateway().rotations() > rotations_before);  // we did cross a boundary
}

TEST_CASE("with every relay down connects are answered 0x01") {
    Testnet net(TestnetSpec{});
    for (size_t i = 0; i < net.relay_count(); ++i) net.relay(i).stop();

    auto conn = net::TcpConn::connect(net.gateway_addr(), 2000);
    conn.set_recv_timeout(15'000);
    conn.write_all(Bytes{0x05, 0x01, 0x00});
    REQUIRE(conn.read_exact(2) == (Bytes{0x05, 0x00}));
    Bytes req{0x05, 0x01, 0x00, 0x01, 127, 0, 0, 1, 0, 80};
    conn.write_all(req);
    Bytes reply = conn.read_exact(10);
    REQUIRE(reply[1] == SOCKS_GENERAL_FAILURE);
}

TEST_CASE("gateway config loads from json with defaults") {
    auto j = nlohmann::json{{"listen_addr", "127.0.0.1:1080"},
                            {"directory_addr", "127.0.0.1:5000"},
                            {"mode", "onion"},
                            {"path_length", 4},
                            {"circuit_lifetime", 120},
                            {"host_resolver", "127.0.0.1:9953"},
                            {"leaky_mode", true}};
    auto c = GatewayConfig::from_json(j);
    REQUIRE(c.listen_port == 1080);
    REQUIRE(c.directory->port == 5000);
    REQUIRE(c.path_length == 4);
    REQUIRE(c.circuit_lifetime_s == 120);
    REQUIRE(c.mode == GatewayMode::ONION);
    REQUIRE(c.host_resolver->port == 9953);
    REQUIRE(c.leaky_mode);

    REQUIRE(kind_of([] {
                GatewayConfig::from_json(nlohmann::json{{"mode", "tunnel"}});
            }) == Error::Kind::Config);
    REQUIRE(kind_of([] {
                GatewayConfig::from_json(nlohmann::json{{"path_length", 0}});
            }) == Error::Kind::Config);
}
