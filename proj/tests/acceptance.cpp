// Acceptance suite: one test case per criterion, one PASS/FAIL line each.
// Run via ctest or directly; cases execute in declaration order.

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <thread>

#include "onionbox/harness.hpp"
#include "test_util.hpp"

using namespace onionbox;
using namespace onionbox::harness;

namespace {

void criterion_line(int n, bool ok, const std::string& what) {
    std::cout << "[criterion " << n << "] " << (ok ? "PASS" : "FAIL") << ": " << what
              << std::endl;
}

// Shared across cases: the tapped testnet from criterion 1 feeds criteria 3
// and 7.
struct SharedState {
    std::unique_ptr<Testnet> tapped_net;
    uint64_t tap_frames = 0;
    uint64_t tap_off_size = 0;
    uint64_t tap_bytes = 0;
    size_t tap_count = 0;
    bool workload_ran = false;
};

SharedState& shared() {
    static SharedState s;
    return s;
}

// 1000 log-spaced sizes covering 1 B .. 1 MiB inclusive.
std::vector<size_t> transfer_sizes() {
    std::vector<size_t> sizes;
    const double top = std::log(1048576.0);
    for (int i = 0; i < 1000; ++i) {
        double u = double(i) / 999.0;
        sizes.push_back(std::max<size_t>(1, size_t(std::llround(std::exp(u * top)))));
    }
    std::shuffle(sizes.begin(), sizes.end(), std::mt19937_64(42));
    return sizes;
}

bool echo_roundtrip(const net::HostPort& gateway, const net::HostPort& echo, size_t size,
                    std::mt19937_64& gen) {
    Bytes payload(size);
    for (auto& b : payload) b = static_cast<uint8_t>(gen());
    auto conn = socks_connect(gateway, "127.0.0.1", echo.port, false);
    conn.set_recv_timeout(60'000);
    std::thread writer([&] {
        try {
            conn.write_all(payload);
        } catch (const Error&) {
        }
    });
    bool ok = false;
    try {
        ok = conn.read_exact(payload.size()) == payload;
    } catch (const Error&) {
        ok = false;
    }
    writer.join();
    return ok;
}

}  // namespace

TEST_CASE("criterion 1: end-to-end correctness, 1000 payloads over 3 hops") {
    auto& s = shared();
    TestnetSpec spec;
    spec.relays = 3;
    spec.path_length = 3;
    spec.with_taps = true;
    s.tapped_net = std::make_unique<Testnet>(spec);
    auto& net = *s.tapped_net;

    auto sizes = transfer_sizes();
    std::atomic<size_t> next{0};
    std::atomic<size_t> failures{0};
    auto t0 = std::chrono::steady_clock::now();

    const int workers = 4;
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            std::mt19937_64 gen(0xFEED + w);
            while (true) {
                size_t i = next.fetch_add(1);
                if (i >= sizes.size()) return;
                if (!echo_roundtrip(net.gateway_addr(), net.echo_addr(), sizes[i], gen))
                    failures.fetch_add(1);
            }
        });
    for (auto& t : pool) t.join();
    double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    // Snapshot the wire audit for criterion 7 before anything else touches it.
    for (size_t i = 0; i < net.tap_count(); ++i) {
        s.tap_frames += net.tap(i).frames_seen();
        s.tap_off_size += net.tap(i).off_size_frames();
        s.tap_bytes += net.tap(i).bytes_seen();
    }
    s.tap_count = net.tap_count();
    s.workload_ran = true;

    uint64_t total_bytes = std::accumulate(sizes.begin(), sizes.end(), uint64_t(0));
    bool ok = failures == 0 && elapsed < 60.0;
    criterion_line(1, ok,
                   "1000 payloads (1 B..1 MiB, " + std::to_string(total_bytes / 1048576) +
                       " MiB total) byte-identical, " + std::to_string(failures.load()) +
                       " corrupt/lost, " + std::to_string(elapsed).substr(0, 5) + " s");
    REQUIRE(failures == 0);
    REQUIRE(elapsed < 60.0);
}

TEST_CASE("criterion 2: onion-layer oracle equivalence and order sensitivity") {
    auto t0 = std::chrono::steady_clock::now();
    auto& gen = testutil::rng();
    bool ok = true;

    for (size_t n = 0; n <= 4; ++n) {
        // 1000 random messages: sequential unwrap equals identity.
        for (int rep = 0; rep < 1000 && ok; ++rep) {
            auto keys = testutil::random_session_keys(n);
            auto relay_side = keys;
            size_t limit = max_onion_plaintext(n);
            Bytes m = testutil::random_bytes(1 + gen() % limit);
            Bytes ct = onion_wrap(m, keys);
            if (n == 0) {
                ok = ct == m;
                continue;
            }
            for (size_t hop = 0; hop < n && ok; ++hop) {
                OnionLayer layer =
                    unwrap_layer(ct, relay_side[hop], relay_side[hop].forward_counter);
                if (hop + 1 < n) {
                    ok = layer.flag == LayerFlag::FORWARD;
                    ct = std::move(layer.body);
                } else {
                    ok = layer.flag == LayerFlag::DELIVER && layer.body == m;
                }
            }
        }
        if (n < 2) continue;  // no non-identity orderings to test

        // Exhaustive unwrap orderings (n! <= 24): only identity succeeds, and
        // failure strikes at the first out-of-order hop.
        for (int rep = 0; rep < 50 && ok; ++rep) {
            auto pristine = testutil::random_session_keys(n);
            Bytes m = testutil::random_bytes(1 + gen() % max_onion_plaintext(n));
            auto wrap_keys = pristine;
            Bytes wrapped = onion_wrap(m, wrap_keys);

            std::vector<size_t> order(n);
            std::iota(order.begin(), order.end(), 0);
            do {
                auto relay_side = pristine;
                Bytes ct = wrapped;
                bool identity = std::is_sorted(order.begin(), order.end());
                bool failed = false;
                for (size_t step = 0; step < n && !failed; ++step) {
                    size_t hop = order[step];
                    try {
                        OnionLayer layer = unwrap_layer(ct, relay_side[hop],
                                                        relay_side[hop].forward_counter);
                        if (layer.flag == LayerFlag::FORWARD) {
                            ct = std::move(layer.body);
                        } else if (layer.body != m) {
                            ok = false;
                        }
                    } catch (const Error&) {
                        failed = true;
                        if (hop == step) ok = false;  // failed at an in-order hop
                    }
                }
                if (identity == failed) ok = false;
            } while (std::next_permutation(order.begin(), order.end()) && ok);
        }
    }
    double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ok = ok && elapsed < 10.0;
    criterion_line(2, ok,
                   "wrap/unwrap identity for n in {0..4} x 1000 messages; all non-identity "
                   "orderings fail; " +
                       std::to_string(elapsed).substr(0, 5) + " s");
    REQUIRE(ok);
}

TEST_CASE("criterion 3: privacy invariants as executable checks") {
    auto& s = shared();
    REQUIRE(s.tapped_net != nullptr);
    auto& net = *s.tapped_net;
    bool ok = true;

    // (a) White box: every relay holds exactly one circuit whose state is one
    // session key plus neighbor links; a middle relay's state never mentions
    // the gateway (origin) or the destination.
    auto circuit = net.gateway().pool()->current();
    REQUIRE(circuit != nullptr);
    auto client_keys = circuit->debug_forward_keys();
    ok = ok && client_keys.size() == 3;
    ok = ok && std::set<std::string>(client_keys.begin(), client_keys.end()).size() == 3;

    std::map<std::string, RelayNode*> by_tap_addr;
    for (size_t i = 0; i < net.relay_count(); ++i)
        by_tap_addr[net.tap(i).addr().str()] = &net.relay(i);
    const auto& hops = circuit->hops();
    std::string gateway_addr = net.gateway_addr().str();
    std::string echo_addr = net.echo_addr().str();
    for (size_t i = 0; i < hops.size(); ++i) {
        RelayNode* relay = by_tap_addr.at(hops[i].relay.address);
        ok = ok && relay->circuit_count() == 1;
        for (const auto& st : relay->debug_circuits()) {
            ok = ok && st.forward_key_hex == client_keys[i];  // one key, the right one
            std::string flat = st.flatten();
            ok = ok && flat.find(gateway_addr) == std::string::npos;
            if (i + 1 < hops.size()) {  // not the exit
                ok = ok && flat.find(echo_addr) == std::string::npos;
                ok = ok && st.stream_destinations.empty();
            }
            if (i == 1) {
                ok = ok && st.has_next;  // middle knows next and prev links only
            }
        }
    }
    bool white_box_ok = ok;

    // (b) Exit-side plaintext equals client plaintext.
    std::mt19937_64 gen(0xFACE);
    Bytes payload(200'000);
    for (auto& b : payload) b = static_cast<uint8_t>(gen());
    crypto::Hasher sent;
    sent.update(payload);
    std::string sent_hash = sent.hex();
    {
        auto conn = socks_connect(net.gateway_addr(), "127.0.0.1", net.echo_addr().port, false);
        conn.set_recv_timeout(60'000);
        std::thread writer([&] { conn.write_all(payload); });
        Bytes back = conn.read_exact(payload.size());
        writer.join();
        ok = ok && back == payload;
        conn.shutdown_both();
    }
    bool tap_equals = false;
    for (int tries = 0; tries < 50 && !tap_equals; ++tries) {
        for (const auto& rec : net.echo().connections())
            tap_equals = tap_equals || (rec.bytes == payload.size() && rec.hash_hex == sent_hash);
        if (!tap_equals) std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    ok = ok && tap_equals;

    // (c) Tampering one forwarded cell destroys the circuit at both ends.
    size_t middle_tap_idx = SIZE_MAX;
    for (size_t i = 0; i < net.tap_count(); ++i)
        if (net.tap(i).addr().str() == hops[1].relay.address) middle_tap_idx = i;
    REQUIRE(middle_tap_idx != SIZE_MAX);
    RelayNode* exit_relay = by_tap_addr.at(hops[2].relay.address);

    auto stream = circuit->open_stream(net.echo_addr().str());
    net.tap(middle_tap_idx).arm_corruption();
    stream->write(to_bytes("this cell gets tampered"));
    bool client_saw_destroy = false;
    try {
        uint8_t buf[16];
        client_saw_destroy = stream->read(buf, sizeof buf) == 0;
    } catch (const Error& e) {
        client_saw_destroy = e.kind() == Error::Kind::Closed;
    }
    bool exit_dropped = false;
    for (int tries = 0; tries < 150 && !exit_dropped; ++tries) {
        exit_dropped = exit_relay->circuit_count() == 0;
        if (!exit_dropped) std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    bool client_dead = !circuit->alive() || client_saw_destroy;
    ok = ok && client_saw_destroy && exit_dropped && client_dead;

    criterion_line(3, ok,
                   std::string("white-box key/neighbor isolation (") +
                       (white_box_ok ? "ok" : "VIOLATED") + "), exit tap == client plaintext (" +
                       (tap_equals ? "ok" : "MISMATCH") + "), tamper => DESTROY both ends (" +
                       ((client_saw_destroy && exit_dropped) ? "ok" : "MISSED") + ")");
    s.tapped_net.reset();  // done with the tapped network
    REQUIRE(ok);
}

TEST_CASE("criterion 4: DNS leak verdicts, all three in one run") {
    TestnetSpec spec;
    spec.relays = 3;
    Testnet net(spec);
    auto result = run_dns_leak_test(net, 100, 100);

    bool onion_ok = result.onion.verdict == LeakReport::Verdict::NO_LEAK &&
                    result.onion.trap_hits.empty();
    bool leaky_ok = result.leaky.verdict == LeakReport::Verdict::LEAK &&
                    result.leaky.trap_hits.size() >= 100;
    bool direct_ok = result.direct.verdict == LeakReport::Verdict::LEAK &&
                     !result.direct.trap_hits.empty();
    bool ok = onion_ok && leaky_ok && direct_ok;
    criterion_line(4, ok,
                   "onion: " + std::to_string(result.onion.trap_hits.size()) +
                       " hits (NO_LEAK), leaky: " + std::to_string(result.leaky.trap_hits.size()) +
                       " hits (LEAK), direct: " + std::to_string(result.direct.trap_hits.size()) +
                       " hits (LEAK)");
    REQUIRE(onion_ok);
    REQUIRE(leaky_ok);
    REQUIRE(direct_ok);
}

TEST_CASE("criterion 5: speed methodology substitutes for the paper's field numbers") {
    auto t0 = std::chrono::steady_clock::now();
    const uint64_t mib16 = 16ull << 20;

    // (a) Overhead ratio > 1 both directions: 10 reps x 16 MiB, loopback.
    TestnetSpec spec;
    spec.relays = 3;
    Testnet net(spec);
    SpeedReport report;
    run_speed_test(report, net.gateway_addr(), GatewayMode::ONION, Direction::DOWNLOAD,
                   net.source_addr(), mib16, 10);
    run_speed_test(report, net.gateway_addr(), GatewayMode::ONION, Direction::UPLOAD,
                   net.sink_addr(), mib16, 10);
    {
        auto direct_gw = net.spawn_gateway(GatewayMode::DIRECT, false);
        run_speed_test(report, direct_gw->addr(), GatewayMode::DIRECT, Direction::DOWNLOAD,
                       net.source_addr(), mib16, 10);
        run_speed_test(report, direct_gw->addr(), GatewayMode::DIRECT, Direction::UPLOAD,
                       net.sink_addr(), mib16, 10);
    }
    double ratio_down = report.overhead_ratio(Direction::DOWNLOAD);
    double ratio_up = report.overhead_ratio(Direction::UPLOAD);
    bool a_ok = report.failures == 0 && ratio_down > 1.0 && ratio_up > 1.0;

    // (b) Mean onion throughput non-increasing in path length 1..4 on one
    // topology ("throttled by the slowest node in the chain").
    std::vector<double> means;
    {
        TestnetSpec spec4;
        spec4.relays = 4;
        spec4.with_gateway = false;
        Testnet net4(spec4);
        for (size_t n = 1; n <= 4; ++n) {
            auto gw = net4.spawn_gateway(GatewayMode::ONION, false, n);
            SpeedReport r;
            run_speed_test(r, gw->addr(), GatewayMode::ONION, Direction::DOWNLOAD,
                           net4.source_addr(), mib16, 10);
            if (r.failures != 0) means.push_back(0);
            else means.push_back(r.stats(GatewayMode::ONION, Direction::DOWNLOAD).mean);
        }
    }
    bool b_ok = true;
    for (size_t i = 0; i + 1 < means.size(); ++i)
        b_ok = b_ok && means[i] > 0 && means[i] >= means[i + 1];

    // (c) One relay shaped to 2 Mb/s throttles the whole chain to <= 2.2 Mb/s.
    double shaped_mean = 0;
    {
        TestnetSpec shaped;
        shaped.relays = 3;
        shaped.shape_mbps = {2.0};
        Testnet snet(shaped);
        double sum = 0;
        for (int rep = 0; rep < 3; ++rep) {
            auto sample = run_transfer(snet.gateway_addr(), GatewayMode::ONION,
                                       Direction::DOWNLOAD, snet.source_addr(), 1 << 20);
            sum += sample.mbps;
        }
        shaped_mean = sum / 3.0;
    }
    bool c_ok = shaped_mean <= 2.0 * 1.1;

    double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool ok = a_ok && b_ok && c_ok && elapsed < 300.0;

    char detail[256];
    std::snprintf(detail, sizeof detail,
                  "overhead ratio down %.2f up %.2f (>1); onion mean Mb/s by hops "
                  "[%.0f, %.0f, %.0f, %.0f] non-increasing: %s; shaped chain %.2f Mb/s <= 2.2; "
                  "%.0f s",
                  ratio_down, ratio_up, means[0], means[1], means[2], means[3],
                  b_ok ? "yes" : "NO", shaped_mean, elapsed);
    criterion_line(5, ok, detail);
    REQUIRE(a_ok);
    REQUIRE(b_ok);
    REQUIRE(c_ok);
    REQUIRE(elapsed < 300.0);
}

TEST_CASE("criterion 6: usability floor, 10 MiB download completes") {
    TestnetSpec spec;
    spec.relays = 3;
    Testnet net(spec);
    bool ok = false;
    std::string note;
    try {
        auto sample = run_transfer(net.gateway_addr(), GatewayMode::ONION, Direction::DOWNLOAD,
                                   net.source_addr(), 10ull << 20);
        ok = sample.bytes == 10ull << 20;
        char buf[96];
        std::snprintf(buf, sizeof buf, "10 MiB through 3 unshaped hops in %.2f s (%.1f Mb/s)",
                      sample.elapsed_s, sample.mbps);
        note = buf;
    } catch (const Error& e) {
        note = std::string("transfer failed: ") + e.what();
    }
    criterion_line(6, ok, note);
    REQUIRE(ok);
}

TEST_CASE("criterion 7: wire discipline, only 512-octet cells between nodes") {
    auto& s = shared();
    bool ok = s.workload_ran && s.tap_count == 3 && s.tap_frames > 0 && s.tap_off_size == 0 &&
              s.tap_bytes % CELL_SIZE == 0 && s.tap_bytes == s.tap_frames * CELL_SIZE;
    criterion_line(7, ok,
                   std::to_string(s.tap_frames) + " frames over " + std::to_string(s.tap_count) +
                       " tapped links during criterion 1, " + std::to_string(s.tap_off_size) +
                       " off-size");
    REQUIRE(ok);
}
