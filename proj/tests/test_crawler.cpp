#include "chainobs/crawler.hpp"
#include "chainobs/simnet.hpp"
#include "chainobs/tcp_transport.hpp"

#include <doctest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

using namespace chainobs;
using namespace chainobs::crawler;

namespace {

Endpoint ep(const char* text)
{
    return *Endpoint::parse(text);
}

CrawlConfig sim_config(std::vector<Endpoint> seeds)
{
    CrawlConfig c;
    c.magic = wire::kSimnetMagic;
    c.seeds = std::move(seeds);
    c.max_inflight = 16;
    c.clock = [] { return std::int64_t{1'600'000'000}; };
    return c;
}

simnet::SimPeerProfile profile(const char* address, simnet::Behavior b, std::vector<Endpoint> known = {})
{
    simnet::SimPeerProfile p;
    p.address = ep(address);
    p.behavior = b;
    p.known_peers = std::move(known);
    p.rtt_ms = 40;
    p.start_height = 500000;
    return p;
}

// A peer scripted by a handler; runs on a virtual clock like the simnet.
class ScriptedConnection : public Connection {
public:
    using Handler = std::function<std::vector<std::pair<std::string, Bytes>>(const wire::Message&)>;

    explicit ScriptedConnection(Handler h) : handler_(std::move(h)) {}

    void send(ByteView bytes) override
    {
        inbound_.insert(inbound_.end(), bytes.begin(), bytes.end());
        while (inbound_.size() >= wire::kHeaderSize &&
               inbound_.size() >= wire::kHeaderSize + wire::peek_payload_length(inbound_, wire::kSimnetMagic)) {
            auto f = wire::decode_message(inbound_, wire::kSimnetMagic);
            inbound_.erase(inbound_.begin(), inbound_.begin() + static_cast<std::ptrdiff_t>(f.frame_size));
            for (auto& [cmd, payload] : handler_(f.message)) {
                auto frame = wire::encode_message(cmd, payload, wire::kSimnetMagic);
                outbound_.insert(outbound_.end(), frame.begin(), frame.end());
            }
        }
    }
    RecvResult receive(Millis timeout) override
    {
        if (outbound_.empty()) {
            clock_ += timeout;
            return {RecvStatus::timeout, {}};
        }
        clock_ += 1;
        RecvResult r{RecvStatus::data, Bytes(outbound_.begin(), outbound_.end())};
        outbound_.clear();
        return r;
    }
    Millis now() const override { return clock_; }

private:
    Handler handler_;
    Bytes inbound_;
    std::deque<std::uint8_t> outbound_;
    Millis clock_ = 0;
};

class ScriptedTransport : public Transport {
public:
    explicit ScriptedTransport(ScriptedConnection::Handler h) : handler_(std::move(h)) {}
    ConnectResult connect(const Endpoint&, Millis) override
    {
        return {std::make_unique<ScriptedConnection>(handler_), "", 0};
    }

private:
    ScriptedConnection::Handler handler_;
};

std::vector<std::pair<std::string, Bytes>> handshake_reply(const wire::Message& m)
{
    if (m.command != wire::command::version) return {};
    wire::VersionPayload v;
    v.user_agent = "/scripted/";
    v.start_height = 10;
    return {{"version", wire::encode_version(v)}, {"verack", {}}};
}

// Counts live connections and connect() calls per endpoint around a real
// transport. Each receive sleeps briefly so probes overlap in wall time.
class InstrumentedTransport : public Transport {
public:
    explicit InstrumentedTransport(Transport& inner) : inner_(inner) {}

    ConnectResult connect(const Endpoint& endpoint, Millis timeout) override
    {
        {
            std::lock_guard lock(mutex_);
            ++connects_[endpoint];
        }
        auto r = inner_.connect(endpoint, timeout);
        if (!r.connection) return r;
        int now = ++live_;
        int seen = max_live_.load();
        while (now > seen && !max_live_.compare_exchange_weak(seen, now)) {
        }
        r.connection = std::make_unique<Counted>(std::move(r.connection), live_);
        return r;
    }

    int max_live() const { return max_live_; }
    std::map<Endpoint, int> connects() const
    {
        std::lock_guard lock(mutex_);
        return connects_;
    }

private:
    class Counted : public Connection {
    public:
        Counted(std::unique_ptr<Connection> inner, std::atomic<int>& live) : inner_(std::move(inner)), live_(live) {}
        ~Counted() override { --live_; }
        void send(ByteView b) override { inner_->send(b); }
        RecvResult receive(Millis t) override
        {
            std::this_thread::sleep_for(std::chrono::microseconds(200));
            return inner_->receive(t);
        }
        Millis now() const override { return inner_->now(); }

    private:
        std::unique_ptr<Connection> inner_;
        std::atomic<int>& live_;
    };

    Transport& inner_;
    mutable std::mutex mutex_;
    std::map<Endpoint, int> connects_;
    std::atomic<int> live_{0};
    std::atomic<int> max_live_{0};
};

Errc crawl_error(const std::function<void()>& f)
{
    try {
        f();
    } catch (const CrawlError& e) {
        return e.code();
    }
    FAIL("expected CrawlError");
    return Errc::InvalidConfig;
}

std::set<Endpoint> active_of(const Snapshot& s)
{
    std::set<Endpoint> out;
    for (const auto* r : s.active_records()) out.insert(r->address);
    return out;
}

} // namespace

TEST_CASE("seed list parsing")
{
    std::istringstream in("10.0.0.1:8333\n10.0.0.1:8333\n# comment\n\n10.0.0.2\n[2001:db8::5]:18333 # trailing\n");
    auto seeds = parse_seed_list(in);
    REQUIRE(seeds.size() == 3);
    CHECK(seeds[0] == ep("10.0.0.1:8333"));
    CHECK(seeds[1] == ep("10.0.0.2:8333"));
    CHECK(seeds[2].port() == 18333);

    std::istringstream bad("10.0.0.1\nnot-an-address\n");
    CHECK(crawl_error([&] { parse_seed_list(bad); }) == Errc::InvalidConfig);
}

TEST_CASE("bootstrap_seeds")
{
    auto dir = std::filesystem::temp_directory_path() / "chainobs_seed_test";
    std::filesystem::create_directories(dir);
    auto path = dir / "seeds.txt";

    SUBCASE("file dedup")
    {
        std::ofstream(path) << "10.0.0.1:8333\n10.0.0.1:8333\n";
        SeedSource s;
        s.file = path;
        CHECK(bootstrap_seeds(s).size() == 1);
    }
    SUBCASE("empty file")
    {
        std::ofstream(path) << "";
        SeedSource s;
        s.file = path;
        CHECK(crawl_error([&] { bootstrap_seeds(s); }) == Errc::EmptySeedSet);
    }
    SUBCASE("dns names get the default port and merge with the file")
    {
        std::ofstream(path) << "10.0.0.1\n";
        SeedSource s;
        s.file = path;
        s.dns_names = {"seed.example", "dead.example"};
        s.resolver = [](const std::string& name) -> std::vector<Endpoint::IpBytes> {
            if (name == "dead.example") return {};
            return {ep("10.0.0.1").ip(), ep("[2001:db8::7]").ip()};
        };
        auto seeds = bootstrap_seeds(s);
        CHECK(seeds == std::vector<Endpoint>{ep("10.0.0.1:8333"), ep("[2001:db8::7]:8333")});
    }
    SUBCASE("no name resolves")
    {
        SeedSource s;
        s.dns_names = {"dead.example"};
        s.resolver = [](const std::string&) { return std::vector<Endpoint::IpBytes>{}; };
        CHECK(crawl_error([&] { bootstrap_seeds(s); }) == Errc::UnresolvableAllSeeds);
    }
    SUBCASE("nothing configured")
    {
        CHECK(crawl_error([&] { bootstrap_seeds(SeedSource{}); }) == Errc::EmptySeedSet);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("config validation")
{
    auto c = sim_config({ep("10.0.0.1")});
    CHECK_NOTHROW(c.validate());
    c.connect_timeout_ms = 0;
    CHECK(crawl_error([&] { c.validate(); }) == Errc::InvalidConfig);
    c = sim_config({ep("10.0.0.1")});
    c.max_inflight = 0;
    CHECK(crawl_error([&] { c.validate(); }) == Errc::InvalidConfig);
    c = sim_config({});
    simnet::SimTopology t;
    auto net = simnet::build_network(t);
    CHECK(crawl_error([&] { crawl(c, *net); }) == Errc::EmptySeedSet);

    auto a = sim_config({ep("10.0.0.1")});
    auto b = a;
    CHECK(a.digest() == b.digest());
    b.ping_count = 2;
    CHECK(a.digest() != b.digest());
}

TEST_CASE("probe_peer against simulated peers")
{
    std::vector<Endpoint> ten;
    for (std::uint32_t i = 0; i < 10; ++i) ten.push_back(Endpoint::from_ipv4(0x0b000000 + i, 8333));
    simnet::SimTopology t;
    t.peers = {profile("10.0.0.1", simnet::Behavior::normal, ten), profile("10.0.0.2", simnet::Behavior::silent),
               profile("10.0.0.3", simnet::Behavior::slow), profile("10.0.0.4", simnet::Behavior::unreachable)};
    t.peers[2].slow_delay_ms = 6000;
    t.seed_ids = {ep("10.0.0.1")};
    auto net = simnet::build_network(t);
    auto config = sim_config(t.seed_ids);

    SUBCASE("normal peer advertising 10 peers")
    {
        auto r = probe_peer(ep("10.0.0.1"), config, *net);
        CHECK(r.record.active());
        CHECK(r.harvested.size() == 10);
        CHECK(r.record.addr_count_returned == 10);
        CHECK(r.record.start_height == 500000);
        REQUIRE(r.record.min_rtt_ms);
        CHECK(*r.record.min_rtt_ms == doctest::Approx(40));
    }
    SUBCASE("silent peer")
    {
        auto r = probe_peer(ep("10.0.0.2"), config, *net);
        CHECK_FALSE(r.record.active());
        CHECK(r.harvested.empty());
        CHECK_FALSE(r.record.min_rtt_ms);
    }
    SUBCASE("slow peer beyond the handshake timeout")
    {
        auto r = probe_peer(ep("10.0.0.3"), config, *net);
        CHECK_FALSE(r.record.active());
        config.handshake_timeout_ms = 10000;
        CHECK(probe_peer(ep("10.0.0.3"), config, *net).record.active());
    }
    SUBCASE("unreachable peer")
    {
        auto r = probe_peer(ep("10.0.0.4"), config, *net);
        CHECK_FALSE(r.record.active());
        CHECK(r.record.note.starts_with("connect"));
    }
}

TEST_CASE("measure_min_rtt")
{
    simnet::SimTopology t;
    t.peers = {profile("10.0.0.1", simnet::Behavior::normal)};
    t.seed_ids = {ep("10.0.0.1")};
    auto net = simnet::build_network(t);
    auto conn = net->connect(ep("10.0.0.1"), 1000);
    PeerSession session(*conn.connection, wire::kSimnetMagic);
    CHECK(measure_min_rtt(session, 1, 5000) == doctest::Approx(40));
    CHECK(measure_min_rtt(session, 5, 5000) == doctest::Approx(40));

    ScriptedTransport deaf(handshake_reply);
    auto c2 = deaf.connect(ep("10.0.0.9"), 1000);
    PeerSession quiet(*c2.connection, wire::kSimnetMagic);
    CHECK(crawl_error([&] { measure_min_rtt(quiet, 3, 100); }) == Errc::NoPongReceived);

    // a peer that ignores pings is still active but has no RTT
    auto config = sim_config({ep("10.0.0.9")});
    auto r = probe_peer(ep("10.0.0.9"), config, deaf);
    CHECK(r.record.active());
    CHECK_FALSE(r.record.min_rtt_ms);
}

TEST_CASE("handshake edge cases")
{
    auto config = sim_config({ep("10.0.0.9")});
    config.handshake_timeout_ms = 200;

    SUBCASE("version without verack is inactive")
    {
        ScriptedTransport t([](const wire::Message& m) {
            auto out = handshake_reply(m);
            if (!out.empty()) out.pop_back();
            return out;
        });
        auto r = probe_peer(ep("10.0.0.9"), config, t);
        CHECK_FALSE(r.record.active());
        CHECK(r.record.note == "version without verack");
    }
    SUBCASE("malformed reply marks the peer inactive with a note")
    {
        ScriptedTransport t([](const wire::Message& m) -> std::vector<std::pair<std::string, Bytes>> {
            if (m.command != wire::command::version) return {};
            return {{"version", Bytes{1, 2, 3}}, {"verack", {}}};
        });
        auto r = probe_peer(ep("10.0.0.9"), config, t);
        CHECK_FALSE(r.record.active());
        CHECK(r.record.note.starts_with("protocol:"));
    }
    SUBCASE("peer pings are answered during the probe")
    {
        std::atomic<int> pongs{0};
        ScriptedTransport t([&](const wire::Message& m) -> std::vector<std::pair<std::string, Bytes>> {
            if (m.command == wire::command::version) {
                auto out = handshake_reply(m);
                out.insert(out.begin() + 1, {"ping", wire::encode_ping(5)});
                return out;
            }
            if (m.command == wire::command::pong && wire::decode_pong(m.payload) == 5) ++pongs;
            return {};
        });
        auto r = probe_peer(ep("10.0.0.9"), config, t);
        CHECK(r.record.active());
        CHECK(pongs == 1);
    }
}

TEST_CASE("crawl examples")
{
    SUBCASE("all seeds unreachable")
    {
        simnet::SimTopology t;
        t.peers = {profile("10.0.0.1", simnet::Behavior::unreachable, {ep("10.0.0.2")}),
                   profile("10.0.0.2", simnet::Behavior::normal)};
        t.seed_ids = {ep("10.0.0.1")};
        auto net = simnet::build_network(t);
        auto s = crawl(sim_config(t.seed_ids), *net);
        CHECK(s.total_count() == 1);
        CHECK(s.active_count() == 0);
        CHECK_FALSE(s.partial);
    }
    SUBCASE("frontier cap yields a partial snapshot")
    {
        auto t = simnet::generate_topology({.peer_count = 100, .rng_seed = 4});
        auto net = simnet::build_network(t);
        auto c = sim_config(t.seed_ids);
        c.max_frontier = 10;
        auto s = crawl(c, *net);
        CHECK(s.partial);
        CHECK(s.total_count() == 10);
    }
}

TEST_CASE("crawl equals the reachability oracle, probes once, respects max_inflight")
{
    for (std::uint64_t seed : {1, 2, 3}) {
        simnet::GeneratorParams p;
        p.peer_count = 200;
        p.rng_seed = seed;
        p.stale_fraction = 0.05;
        p.empty_addr_fraction = 0.05;
        p.phantom_peers = 20;
        auto t = simnet::generate_topology(p);
        auto net = simnet::build_network(t);
        InstrumentedTransport counted(*net);
        auto c = sim_config(t.seed_ids);
        c.max_inflight = 8;
        auto s = crawl(c, counted);
        auto oracle = simnet::reachable_set(t);

        CHECK(active_of(s) == oracle.active);
        for (const auto& d : oracle.discovered) CHECK(s.records.contains(d));
        for (const auto& [endpoint, n] : counted.connects()) CHECK(n == 1);
        CHECK(counted.max_live() <= 8);
        CHECK(counted.max_live() >= 1);
        for (const auto* r : s.active_records()) {
            if (r->min_rtt_ms) CHECK(*r->min_rtt_ms > 0);
        }
        for (const auto& [endpoint, r] : s.records) {
            if (r.min_rtt_ms) CHECK(r.active());
        }
    }
}

TEST_CASE("crawl is deterministic and works single-threaded")
{
    auto t = simnet::generate_topology({.peer_count = 150, .rng_seed = 8});
    auto run = [&](std::size_t inflight) {
        auto net = simnet::build_network(t);
        auto c = sim_config(t.seed_ids);
        c.max_inflight = inflight;
        return crawl(c, *net);
    };
    auto a = run(16);
    auto b = run(16);
    auto single = run(1);
    CHECK(a.records == b.records);
    CHECK(a.records == single.records);
}

namespace {

// One-connection loopback peer speaking just enough of the protocol.
void serve_once(int listener, std::atomic<bool>& ok)
{
    int fd = accept(listener, nullptr, nullptr);
    if (fd < 0) return;
    Bytes buffer;
    auto reply = [&](std::string_view cmd, const Bytes& payload) {
        auto frame = wire::encode_message(cmd, payload, wire::kMainnetMagic);
        (void)!::send(fd, frame.data(), frame.size(), MSG_NOSIGNAL);
    };
    std::uint8_t chunk[4096];
    while (true) {
        auto n = recv(fd, chunk, sizeof(chunk), 0);
        if (n <= 0) break;
        buffer.insert(buffer.end(), chunk, chunk + n);
        while (buffer.size() >= wire::kHeaderSize &&
               buffer.size() >= wire::kHeaderSize + wire::peek_payload_length(buffer, wire::kMainnetMagic)) {
            auto f = wire::decode_message(buffer, wire::kMainnetMagic);
            buffer.erase(buffer.begin(), buffer.begin() + static_cast<std::ptrdiff_t>(f.frame_size));
            const auto& m = f.message;
            if (m.command == "version") {
                wire::VersionPayload v;
                v.user_agent = "/loopback/";
                v.start_height = 42;
                reply("version", wire::encode_version(v));
                reply("verack", {});
            } else if (m.command == "ping") {
                reply("pong", wire::encode_pong(wire::decode_ping(m.payload)));
            } else if (m.command == "getaddr") {
                reply("addr", wire::encode_addr({wire::AddrEntry::from_endpoint(*Endpoint::parse("10.1.2.3"), 0, 1),
                                                 wire::AddrEntry::from_endpoint(*Endpoint::parse("10.1.2.4"), 0, 1)}));
                ok = true;
            }
        }
    }
    close(fd);
}

} // namespace

TEST_CASE("probe over real loopback TCP")
{
    int listener = socket(AF_INET, SOCK_STREAM, 0);
    REQUIRE(listener >= 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    REQUIRE(bind(listener, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0);
    REQUIRE(listen(listener, 1) == 0);
    socklen_t len = sizeof(addr);
    getsockname(listener, reinterpret_cast<sockaddr*>(&addr), &len);
    std::uint16_t port = ntohs(addr.sin_port);

    std::atomic<bool> served{false};
    std::thread server(serve_once, listener, std::ref(served));

    CrawlConfig c;
    c.getaddr_rounds = 1;
    c.ping_count = 2;
    c.handshake_timeout_ms = 2000;
    TcpTransport tcp;
    auto r = probe_peer(Endpoint::from_ipv4(0x7f000001, port), c, tcp);
    server.join();
    close(listener);

    CHECK(r.record.active());
    CHECK(r.record.user_agent == "/loopback/");
    CHECK(r.record.start_height == 42);
    CHECK(r.harvested.size() == 2);
    REQUIRE(r.record.min_rtt_ms);
    CHECK(*r.record.min_rtt_ms > 0);
    CHECK(served);

    // nothing listens on the old port any more
    auto refused = tcp.connect(Endpoint::from_ipv4(0x7f000001, port), 500);
    CHECK_FALSE(refused.connection);
    CHECK_FALSE(tcp.connect(*Endpoint::parse("[fd87:d87e:eb43::1]:8333"), 500).connection);
}
