// onionbox: a desk-scale onion-routing network in one binary.
//
// Subcommands run each node type (dir, relay, gateway), boot a whole loopback
// testnet, and reproduce the evaluation (speedtest, leaktest). Exit codes:
// 0 success, 1 runtime error, 2 usage error, 3 leak detected (leaktest).

#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "onionbox/harness.hpp"

using namespace onionbox;

namespace {

std::atomic<bool> g_interrupted{false};

void install_signal_handlers() {
    struct sigaction sa{};
    sa.sa_handler = [](int) { g_interrupted = true; };
    sigaction(SIGINT, &sa, nullptr);
    sigaction(SIGTERM, &sa, nullptr);
}

void wait_for_interrupt() {
    while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(200));
}

// Lines of "<name> <ipv4>"; '#' starts a comment.
std::map<std::string, std::string> load_hosts_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error(Error::Kind::Io, "cannot read hosts file: " + path);
    std::map<std::string, std::string> hosts;
    std::string line;
    while (std::getline(f, line)) {
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ss(line);
        std::string name, ip;
        if (!(ss >> name >> ip)) continue;
        if (!net::is_ipv4_literal(ip))
            throw Error(Error::Kind::Validation, "hosts file entry for '" + name +
                                                     "' is not an IPv4 literal: " + ip);
        hosts[name] = ip;
    }
    return hosts;
}

int cmd_keygen(const std::string& out_path) {
    auto kp = crypto::KeyPair::generate();
    crypto::save_identity(kp, out_path);
    std::cout << "identity written to " << out_path << "\n";
    std::cout << "public key: " << to_hex(kp.public_key) << "\n";
    return 0;
}

int cmd_dir(const std::string& listen) {
    auto hp = net::parse_hostport(listen);
    DirectoryServer server(hp.host, hp.port);
    std::cout << "directory listening on " << server.addr().str() << "\n";
    wait_for_interrupt();
    server.stop();
    return 0;
}

struct RelayArgs {
    std::string listen = "127.0.0.1:0";
    std::string directory;
    std::string roles = "entry,middle,exit";
    std::string identity_file;
    std::string advertise;
    std::string hosts_file;
    std::string dns;
    double shape_mbps = 0;
};

int cmd_relay(const RelayArgs& args) {
    RelayConfig rc;
    auto hp = net::parse_hostport(args.listen);
    rc.listen_host = hp.host;
    rc.listen_port = hp.port;
    if (!args.directory.empty()) rc.directory = net::parse_hostport(args.directory);
    rc.roles = parse_roles(args.roles);
    if (rc.roles.empty()) throw Error(Error::Kind::Config, "relay needs at least one role");
    if (!args.identity_file.empty()) rc.identity = crypto::load_identity(args.identity_file);
    if (!args.advertise.empty()) rc.advertise = args.advertise;
    if (!args.hosts_file.empty()) rc.hosts = load_hosts_file(args.hosts_file);
    if (!args.dns.empty()) rc.dns = net::parse_hostport(args.dns);
    rc.shape_mbps = args.shape_mbps;

    RelayNode relay(rc);
    relay.start();
    std::cout << "relay listening on " << relay.listen_addr().str() << " roles=" << args.roles
              << "\n";
    if (rc.directory) std::cout << "registered with directory " << rc.directory->str() << "\n";
    wait_for_interrupt();
    relay.stop();
    return 0;
}

struct GatewayArgs {
    std::string config_file;
    std::string listen;
    std::string directory;
    std::string mode;
    int path_length = 0;
    int lifetime = 0;
    std::string host_resolver;
    bool leaky = false;
};

GatewayConfig gateway_config_from(const GatewayArgs& args) {
    GatewayConfig gc;
    if (!args.config_file.empty()) gc = GatewayConfig::load_file(args.config_file);
    if (!args.listen.empty()) {
        auto hp = net::parse_hostport(args.listen);
        gc.listen_host = hp.host;
        gc.listen_port = hp.port;
    }
    if (!args.directory.empty()) gc.directory = net::parse_hostport(args.directory);
    if (!args.mode.empty()) gc.mode = gateway_mode_from_string(args.mode);
    if (args.path_length > 0) gc.path_length = static_cast<size_t>(args.path_length);
    if (args.lifetime > 0) gc.circuit_lifetime_s = args.lifetime;
    if (!args.host_resolver.empty())
        gc.host_resolver = net::parse_hostport(args.host_resolver);
    if (args.leaky) gc.leaky_mode = true;
    return gc;
}

int cmd_gateway(const GatewayArgs& args) {
    auto gc = gateway_config_from(args);
    Gateway gateway(gc);
    std::cout << "gateway (" << to_string(gc.mode) << ") listening on "
              << gateway.addr().str() << "\n";
    if (gc.mode == GatewayMode::ONION) {
        gateway.wait_ready(15'000);
        std::cout << "circuit ready, path length " << gc.path_length << "\n";
    }
    wait_for_interrupt();
    gateway.stop();
    return 0;
}

struct TestnetArgs {
    int relays = 3;
    int path_length = 3;
    bool run = false;
};

int cmd_testnet(const TestnetArgs& args) {
    harness::TestnetSpec spec;
    spec.relays = static_cast<size_t>(args.relays);
    spec.path_length = static_cast<size_t>(args.path_length);
    harness::Testnet net(spec);
    net.gateway().wait_ready(5000);

    std::cout << "directory  " << net.directory_addr().str() << "\n";
    for (size_t i = 0; i < net.relay_count(); ++i)
        std::cout << "relay" << i << "     " << net.relay(i).listen_addr().str() << "\n";
    std::cout << "gateway    " << net.gateway_addr().str() << " (socks5)\n";
    std::cout << "echo       " << net.echo_addr().str() << "\n";
    std::cout << "sink       " << net.sink_addr().str() << "\n";
    std::cout << "source     " << net.source_addr().str() << "\n";
    std::cout << "trap dns   " << net.trap_addr().str() << " (udp)\n";
    std::cout << "gateway circuit ready (" << args.path_length << " hops)\n";

    if (args.run) {
        std::cout << "running until interrupted...\n";
        wait_for_interrupt();
    }
    return 0;
}

struct SpeedArgs {
    bool both_modes = false;
    int relays = 3;
    int path_length = 3;
    double size_mib = 16;
    int reps = 10;
    std::string out_prefix = "speedtest";
    bool histogram = false;
};

int cmd_speedtest(const SpeedArgs& args) {
    harness::TestnetSpec spec;
    spec.relays = static_cast<size_t>(args.relays);
    spec.path_length = static_cast<size_t>(args.path_length);
    harness::Testnet net(spec);
    uint64_t size = static_cast<uint64_t>(args.size_mib * (1 << 20));

    harness::SpeedReport report;
    std::cerr << "measuring onion mode (" << args.reps << " x " << args.size_mib
              << " MiB each direction)...\n";
    harness::run_speed_test(report, net.gateway_addr(), GatewayMode::ONION,
                            harness::Direction::DOWNLOAD, net.source_addr(), size,
                            static_cast<size_t>(args.reps));
    harness::run_speed_test(report, net.gateway_addr(), GatewayMode::ONION,
                            harness::Direction::UPLOAD, net.sink_addr(), size,
                            static_cast<size_t>(args.reps));
    if (args.both_modes) {
        std::cerr << "measuring direct mode...\n";
        auto direct_gw = net.spawn_gateway(GatewayMode::DIRECT, false);
        harness::run_speed_test(report, direct_gw->addr(), GatewayMode::DIRECT,
                                harness::Direction::DOWNLOAD, net.source_addr(), size,
                                static_cast<size_t>(args.reps));
        harness::run_speed_test(report, direct_gw->addr(), GatewayMode::DIRECT,
                                harness::Direction::UPLOAD, net.sink_addr(), size,
                                static_cast<size_t>(args.reps));
    }

    std::string csv = args.out_prefix + ".csv";
    std::string json = args.out_prefix + ".json";
    harness::write_csv(report, csv);
    harness::write_json_summary(report, json);
    std::cout << harness::summary_json(report).dump(2) << "\n";
    if (args.histogram) {
        std::cout << "\nonion download (Mb/s):\n"
                  << harness::histogram_text(report, GatewayMode::ONION,
                                             harness::Direction::DOWNLOAD);
        if (args.both_modes)
            std::cout << "\ndirect download (Mb/s):\n"
                      << harness::histogram_text(report, GatewayMode::DIRECT,
                                                 harness::Direction::DOWNLOAD);
    }
    std::cerr << "wrote " << csv << " and " << json << "\n";
    return report.failures == 0 ? 0 : 1;
}

struct LeakArgs {
    std::string config_file;
    int relays = 3;
    int connects = 100;
    int resolves = 100;
    std::string out;
};

int cmd_leaktest(const LeakArgs& args) {
    GatewayConfig gc;
    if (!args.config_file.empty()) gc = GatewayConfig::load_file(args.config_file);

    harness::TestnetSpec spec;
    spec.relays = static_cast<size_t>(args.relays);
    spec.path_length = gc.path_length;
    spec.gateway_mode = gc.mode;
    spec.leaky = gc.leaky_mode;
    spec.circuit_lifetime_s = gc.circuit_lifetime_s;
    harness::Testnet net(spec);

    auto report = harness::drive_leak_workload(net, net.gateway(),
                                               static_cast<size_t>(args.connects),
                                               static_cast<size_t>(args.resolves));
    nlohmann::json j;
    j["verdict"] = to_string(report.verdict);
    j["mode"] = to_string(gc.mode);
    j["leaky_mode"] = gc.leaky_mode;
    j["connects"] = args.connects;
    j["resolves"] = args.resolves;
    j["trap_hits"] = nlohmann::json::array();
    for (const auto& hit : report.trap_hits)
        j["trap_hits"].push_back({{"timestamp_ms", hit.timestamp_ms},
                                  {"source", hit.source},
                                  {"query", hit.query}});
    std::cout << j.dump(2) << "\n";
    if (!args.out.empty()) {
        std::ofstream f(args.out, std::ios::trunc);
        if (!f) throw Error(Error::Kind::Io, "cannot write " + args.out);
        f << j.dump(2) << "\n";
    }
    return report.verdict == harness::LeakReport::Verdict::LEAK ? 3 : 0;
}

}  // namespace

int main(int argc, char** argv) {
    install_signal_handlers();
    CLI::App app{"onionbox: desk-scale onion routing with an evaluation harness"};
    app.require_subcommand(1);

    std::string keygen_out;
    auto* keygen = app.add_subcommand("keygen", "generate a relay identity keypair file");
    keygen->add_option("--out", keygen_out, "output path (64 octets, hex)")->required();

    std::string dir_listen = "127.0.0.1:7700";
    auto* dir = app.add_subcommand("dir", "run the directory node");
    dir->add_option("--listen", dir_listen, "host:port to listen on");

    RelayArgs relay_args;
    auto* relay = app.add_subcommand("relay", "run a relay node");
    relay->add_option("--listen", relay_args.listen, "host:port to listen on");
    relay->add_option("--directory", relay_args.directory, "directory host:port to register with");
    relay->add_option("--roles", relay_args.roles, "comma list of entry,middle,exit");
    relay->add_option("--identity", relay_args.identity_file, "identity keypair file (hex)");
    relay->add_option("--advertise", relay_args.advertise, "address to publish instead of --listen");
    relay->add_option("--hosts-file", relay_args.hosts_file, "static name resolution map");
    relay->add_option("--dns", relay_args.dns, "upstream UDP name service host:port");
    relay->add_option("--shape-mbps", relay_args.shape_mbps, "token-bucket rate limit");

    GatewayArgs gw_args;
    auto* gw = app.add_subcommand("gateway", "run the SOCKS5 gateway");
    gw->add_option("--config", gw_args.config_file, "JSON config file");
    gw->add_option("--listen", gw_args.listen, "host:port for the SOCKS listener");
    gw->add_option("--directory", gw_args.directory, "directory host:port");
    gw->add_option("--mode", gw_args.mode, "onion|direct");
    gw->add_option("--path-length", gw_args.path_length, "hops per circuit");
    gw->add_option("--lifetime", gw_args.lifetime, "circuit lifetime seconds");
    gw->add_option("--host-resolver", gw_args.host_resolver,
                   "stand-in system resolver (leak detection)");
    gw->add_flag("--leaky", gw_args.leaky, "leak one resolver query per DOMAIN connect (test only)");

    TestnetArgs tn_args;
    auto* tn = app.add_subcommand("testnet",
                                  "boot a loopback network, verify it, and exit (or --run)");
    tn->add_option("--relays", tn_args.relays, "relay count")->check(CLI::Range(1, 32));
    tn->add_option("--path-length", tn_args.path_length, "hops per circuit")
        ->check(CLI::Range(1, 8));
    tn->add_flag("--run", tn_args.run, "keep the network up until interrupted");

    SpeedArgs sp_args;
    auto* sp = app.add_subcommand("speedtest", "throughput comparison on a fresh testnet");
    sp->add_flag("--both-modes", sp_args.both_modes, "measure direct mode too");
    sp->add_option("--relays", sp_args.relays, "relay count")->check(CLI::Range(1, 32));
    sp->add_option("--path-length", sp_args.path_length, "hops per circuit")
        ->check(CLI::Range(1, 8));
    sp->add_option("--size-mib", sp_args.size_mib, "MiB per transfer")->check(CLI::Range(1.0, 4096.0));
    sp->add_option("--reps", sp_args.reps, "repetitions per mode/direction")
        ->check(CLI::Range(5, 1000));
    sp->add_option("--out", sp_args.out_prefix, "output file prefix");
    sp->add_flag("--histogram", sp_args.histogram, "print 0.5 Mb/s bucket histograms");

    LeakArgs lk_args;
    auto* lk = app.add_subcommand("leaktest", "DNS leak test (exit 3 on LEAK)");
    lk->add_option("--config", lk_args.config_file, "gateway JSON config");
    lk->add_option("--relays", lk_args.relays, "relay count")->check(CLI::Range(1, 32));
    lk->add_option("--connects", lk_args.connects, "DOMAIN connects to drive")
        ->check(CLI::Range(1, 100000));
    lk->add_option("--resolves", lk_args.resolves, "circuit resolutions to drive")
        ->check(CLI::Range(0, 100000));
    lk->add_option("--out", lk_args.out, "write the leak report JSON here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*keygen) return cmd_keygen(keygen_out);
        if (*dir) return cmd_dir(dir_listen);
        if (*relay) return cmd_relay(relay_args);
        if (*gw) return cmd_gateway(gw_args);
        if (*tn) return cmd_testnet(tn_args);
        if (*sp) return cmd_speedtest(sp_args);
        if (*lk) return cmd_leaktest(lk_args);
    } catch (const Error& e) {
        std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
