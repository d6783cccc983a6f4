#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "onionbox/harness.hpp"
#include "test_util.hpp"

using namespace onionbox;
using namespace onionbox::harness;
using testutil::kind_of;

TEST_CASE("speed stats: mean, min, max over known samples") {
    SpeedReport report;
    for (double mbps : {1.0, 1.5, 2.0}) {
        ThroughputSample s;
        s.mode = GatewayMode::ONION;
        s.direction = Direction::DOWNLOAD;
        s.bytes = 1 << 20;
        s.elapsed_s = (double(s.bytes) * 8.0) / (mbps * 1e6);
        s.mbps = mbps;
        report.samples.push_back(s);
    }
    auto st = report.stats(GatewayMode::ONION, Direction::DOWNLOAD);
    REQUIRE(st.count == 3);
    REQUIRE(st.mean == Catch::Approx(1.5));
    REQUIRE(st.min == Catch::Approx(1.0));
    REQUIRE(st.max == Catch::Approx(2.0));
}

TEST_CASE("histogram buckets are 0.5 wide and conserve the sample count") {
    SpeedReport report;
    for (double mbps : {0.1, 0.4, 0.6, 1.7, 1.9, 2.3, 7.0}) {
        ThroughputSample s;
        s.mode = GatewayMode::DIRECT;
        s.direction = Direction::UPLOAD;
        s.mbps = mbps;
        report.samples.push_back(s);
    }
    auto h = report.histogram(GatewayMode::DIRECT, Direction::UPLOAD);
    size_t total = 0;
    for (const auto& [bucket, count] : h) total += count;
    REQUIRE(total == report.samples.size());
    REQUIRE(h.at(0.0) == 2);
    REQUIRE(h.at(0.5) == 1);
    REQUIRE(h.at(1.5) == 2);
    REQUIRE(h.at(2.0) == 1);
    REQUIRE(h.at(7.0) == 1);
}

TEST_CASE("overhead ratio divides direct by onion means") {
    SpeedReport report;
    auto add = [&](GatewayMode m, double mbps) {
        ThroughputSample s;
        s.mode = m;
        s.direction = Direction::DOWNLOAD;
        s.mbps = mbps;
        report.samples.push_back(s);
    };
    add(GatewayMode::ONION, 1.7);
    add(GatewayMode::DIRECT, 8.3);
    REQUIRE(report.overhead_ratio(Direction::DOWNLOAD) == Catch::Approx(8.3 / 1.7));
}

TEST_CASE("csv and json report formats agree") {
    SpeedReport report;
    auto& gen = testutil::rng();
    for (int i = 0; i < 12; ++i) {
        ThroughputSample s;
        s.mode = i % 2 ? GatewayMode::ONION : GatewayMode::DIRECT;
        s.direction = i % 3 ? Direction::DOWNLOAD : Direction::UPLOAD;
        s.bytes = 1 << 20;
        s.mbps = 0.5 + double(gen() % 1000) / 100.0;
        s.elapsed_s = double(s.bytes) * 8.0 / (s.mbps * 1e6);
        report.samples.push_back(s);
    }
    auto dir = std::filesystem::temp_directory_path() / "onionbox-report-test";
    std::filesystem::create_directories(dir);
    auto csv_path = (dir / "samples.csv").string();
    auto json_path = (dir / "summary.json").string();
    write_csv(report, csv_path);
    write_json_summary(report, json_path);

    // CSV: header + one row per sample.
    std::ifstream csv(csv_path);
    std::string line;
    std::getline(csv, line);
    REQUIRE(line == "mode,direction,bytes,elapsed,mbps");
    size_t rows = 0;
    double onion_download_sum = 0;
    size_t onion_download_n = 0;
    while (std::getline(csv, line)) {
        rows++;
        std::stringstream ss(line);
        std::string mode, dir_s, bytes_s, elapsed_s, mbps_s;
        std::getline(ss, mode, ',');
        std::getline(ss, dir_s, ',');
        std::getline(ss, bytes_s, ',');
        std::getline(ss, elapsed_s, ',');
        std::getline(ss, mbps_s, ',');
        if (mode == "onion" && dir_s == "download") {
            onion_download_sum += std::stod(mbps_s);
            onion_download_n++;
        }
    }
    REQUIRE(rows == report.samples.size());

    // JSON summary mean equals the CSV recomputation.
    std::ifstream jf(json_path);
    nlohmann::json j;
    jf >> j;
    REQUIRE(j.at("sample_count").get<size_t>() == report.samples.size());
    double json_mean = j.at("onion").at("download").at("mean_mbps").get<double>();
    REQUIRE(json_mean == Catch::Approx(onion_download_sum / double(onion_download_n)));

    // Histogram counts in the summary also conserve the per-cell count.
    size_t hist_total = 0;
    for (const auto& [k, v] : j.at("onion").at("download").at("histogram").items())
        hist_total += v.get<size_t>();
    REQUIRE(hist_total == j.at("onion").at("download").at("count").get<size_t>());
}

TEST_CASE("speed test preconditions are enforced") {
    SpeedReport report;
    REQUIRE(kind_of([&] {
                run_speed_test(report, {"127.0.0.1", 1}, GatewayMode::DIRECT,
                               Direction::DOWNLOAD, {"127.0.0.1", 1}, 1024, 10);
            }) == Error::Kind::Validation);
    REQUIRE(kind_of([&] {
                run_speed_test(report, {"127.0.0.1", 1}, GatewayMode::DIRECT,
                               Direction::DOWNLOAD, {"127.0.0.1", 1}, 1 << 20, 3);
            }) == Error::Kind::Validation);
}

TEST_CASE("measured transfers move exactly the bytes the servers observe") {
    TestnetSpec spec;
    spec.relays = 3;
    Testnet net(spec);
    uint64_t sink_before = net.sink().total_received();
    uint64_t source_before = net.source().total_sent();

    SpeedReport report;
    run_speed_test(report, net.gateway_addr(), GatewayMode::ONION, Direction::UPLOAD,
                   net.sink_addr(), 1 << 20, 5);
    run_speed_test(report, net.gateway_addr(), GatewayMode::ONION, Direction::DOWNLOAD,
                   net.source_addr(), 1 << 20, 5);
    REQUIRE(report.failures == 0);
    REQUIRE(report.samples.size() == 10);
    for (const auto& s : report.samples) {
        REQUIRE(s.bytes == (1 << 20));
        REQUIRE(s.mbps > 0);
        REQUIRE(s.elapsed_s > 0);
    }
    // No phantom throughput: the far ends saw every measured byte.
    REQUIRE(net.sink().total_received() - sink_before == 5ull << 20);
    REQUIRE(net.source().total_sent() - source_before == 5ull << 20);
}

TEST_CASE("testnet spawn: gateway has a circuit within five seconds") {
    auto t0 = std::chrono::steady_clock::now();
    Testnet net(TestnetSpec{});
    net.gateway().wait_ready(5000);
    auto elapsed = std::chrono::steady_clock::now() - t0;
    REQUIRE(std::chrono::duration_cast<std::chrono::seconds>(elapsed).count() < 5);
    REQUIRE(net.gateway().pool()->current()->hop_count() == 3);
}

TEST_CASE("spawn with too few relays for the path length fails") {
    TestnetSpec spec;
    spec.relays = 2;
    spec.path_length = 3;
    REQUIRE_THROWS_AS(Testnet(spec), Error);
}

TEST_CASE("port conflicts name the component") {
    net::TcpListener squatter("127.0.0.1", 0);
    TestnetSpec spec;
    spec.relays = 1;
    spec.path_length = 1;
    spec.with_gateway = false;
    spec.directory_port = squatter.port();
    try {
        Testnet net(spec);
        FAIL("spawn should have failed");
    } catch (const Error& e) {
        REQUIRE(e.kind() == Error::Kind::Spawn);
        REQUIRE(std::string(e.what()).find("directory") != std::string::npos);
    }

    TestnetSpec spec2;
    spec2.relays = 1;
    spec2.path_length = 1;
    spec2.with_gateway = false;
    spec2.relay_ports = {squatter.port()};
    try {
        Testnet net(spec2);
        FAIL("spawn should have failed");
    } catch (const Error& e) {
        REQUIRE(e.kind() == Error::Kind::Spawn);
        REQUIRE(std::string(e.what()).find("relay0") != std::string::npos);
    }
}

TEST_CASE("twenty spawn/teardown cycles leave every port re-bindable") {
    // Fix all ports up front; each cycle must be able to re-bind them.
    std::vector<uint16_t> ports;
    {
        std::vector<std::unique_ptr<net::TcpListener>> probes;
        for (int i = 0; i < 3; ++i) {
            probes.push_back(std::make_unique<net::TcpListener>("127.0.0.1", 0));
            ports.push_back(probes.back()->port());
        }
    }
    for (int cycle = 0; cycle < 20; ++cycle) {
        TestnetSpec spec;
        spec.relays = 2;
        spec.path_length = 2;
        spec.directory_port = ports[0];
        spec.relay_ports = {ports[1], ports[2]};
        Testnet net(spec);
        auto conn = socks_connect(net.gateway_addr(), "127.0.0.1", net.echo_addr().port, false);
        Bytes probe = to_bytes("cycle " + std::to_string(cycle));
        conn.write_all(probe);
        REQUIRE(conn.read_exact(probe.size()) == probe);
    }
}

TEST_CASE("trap resolver and leak workloads: all three verdicts in one run") {
    TestnetSpec spec;
    spec.relays = 3;
    Testnet net(spec);
    auto result = run_dns_leak_test(net, 20, 20);  // reduced load for the unit suite

    REQUIRE(result.onion.verdict == LeakReport::Verdict::NO_LEAK);
    REQUIRE(result.onion.trap_hits.empty());

    REQUIRE(result.leaky.verdict == LeakReport::Verdict::LEAK);
    REQUIRE(result.leaky.trap_hits.size() >= 20);

    REQUIRE(result.direct.verdict == LeakReport::Verdict::LEAK);
    REQUIRE(!result.direct.trap_hits.empty());

    // Detector soundness/completeness, asserted every run.
    REQUIRE((result.leaky.trap_hits.empty() ||
             result.leaky.verdict == LeakReport::Verdict::LEAK));
    REQUIRE((result.onion.trap_hits.empty()) ==
            (result.onion.verdict == LeakReport::Verdict::NO_LEAK));
}

TEST_CASE("wire taps audit the stream and can corrupt one cell") {
    TestnetSpec spec;
    spec.with_taps = true;
    Testnet net(spec);

    auto conn = socks_connect(net.gateway_addr(), "127.0.0.1", net.echo_addr().port, false);
    Bytes probe = testutil::random_bytes(20'000);
    std::thread writer([&] { conn.write_all(probe); });
    Bytes back = conn.read_exact(probe.size());
    writer.join();
    REQUIRE(back == probe);

    size_t frames = 0;
    for (size_t i = 0; i < net.tap_count(); ++i) {
        frames += net.tap(i).frames_seen();
        REQUIRE(net.tap(i).off_size_frames() == 0);
        REQUIRE(net.tap(i).bytes_seen() % CELL_SIZE == 0);
    }
    REQUIRE(frames > 0);
}

TEST_CASE("token-bucket shaping caps throughput at the configured rate") {
    TestnetSpec spec;
    spec.relays = 1;
    spec.path_length = 1;
    spec.shape_mbps = {2.0};
    Testnet net(spec);

    // 512 KiB at 2 Mb/s is ~2.1 s; unshaped this finishes in milliseconds.
    const uint64_t size = 512 * 1024;
    auto sample = run_transfer(net.gateway_addr(), GatewayMode::ONION, Direction::DOWNLOAD,
                               net.source_addr(), size);
    REQUIRE(sample.mbps <= 2.0 * 1.15);
    REQUIRE(sample.mbps > 0.5);
}
