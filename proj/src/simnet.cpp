#include "chainobs/simnet.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <deque>
#include <fstream>
#include <numeric>
#include <queue>
#include <sstream>

namespace chainobs::simnet {

std::string_view to_string(Behavior b)
{
    switch (b) {
    case Behavior::normal: return "normal";
    case Behavior::unreachable: return "unreachable";
    case Behavior::silent: return "silent";
    case Behavior::slow: return "slow";
    case Behavior::stale: return "stale";
    case Behavior::empty_addr: return "empty-addr";
    }
    return "normal";
}

namespace {

std::optional<Behavior> parse_behavior(std::string_view text)
{
    for (auto b : {Behavior::normal, Behavior::unreachable, Behavior::silent, Behavior::slow,
                   Behavior::stale, Behavior::empty_addr}) {
        if (text == to_string(b)) return b;
    }
    return std::nullopt;
}

std::vector<std::string_view> split(std::string_view s, char sep)
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        auto pos = s.find(sep, start);
        out.push_back(s.substr(start, pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

template <typename T>
bool parse_number(std::string_view text, T& out)
{
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
    return ec == std::errc{} && ptr == text.data() + text.size() && !text.empty();
}

[[noreturn]] void parse_fail(std::size_t line, const std::string& why)
{
    throw SimError(Errc::ParseError, "topology line " + std::to_string(line) + ": " + why);
}

std::vector<Endpoint> parse_endpoint_list(std::string_view text, std::size_t line)
{
    std::vector<Endpoint> out;
    if (text == "-" || text.empty()) return out;
    for (auto item : split(text, ',')) {
        auto ep = Endpoint::parse(item);
        if (!ep) parse_fail(line, "bad endpoint '" + std::string(item) + "'");
        out.push_back(*ep);
    }
    return out;
}

std::string format_number(double v)
{
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

std::uint64_t mix64(std::uint64_t x)
{
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

} // namespace

SimTopology parse_topology(std::istream& in)
{
    SimTopology topo;
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        auto hash = raw.find('#');
        std::string_view line(raw.data(), hash == std::string::npos ? raw.size() : hash);

        std::vector<std::string_view> fields;
        std::size_t i = 0;
        while (i < line.size()) {
            while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
            std::size_t j = i;
            while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
            if (j > i) fields.push_back(line.substr(i, j - i));
            i = j;
        }
        if (fields.empty()) continue;

        if (fields[0] == "@seeds") {
            if (fields.size() != 2) parse_fail(line_no, "@seeds takes one list");
            auto seeds = parse_endpoint_list(fields[1], line_no);
            topo.seed_ids.insert(topo.seed_ids.end(), seeds.begin(), seeds.end());
            continue;
        }
        if (fields[0] == "@rng_seed") {
            if (fields.size() != 2 || !parse_number(fields[1], topo.rng_seed)) {
                parse_fail(line_no, "bad @rng_seed");
            }
            continue;
        }
        if (fields.size() != 5 && fields.size() != 6) parse_fail(line_no, "expected 5 or 6 fields");

        SimPeerProfile p;
        auto ep = Endpoint::parse(fields[0]);
        if (!ep) parse_fail(line_no, "bad peer id");
        p.address = *ep;

        auto behavior_text = fields[1];
        if (behavior_text.starts_with("slow:")) {
            p.behavior = Behavior::slow;
            if (!parse_number(behavior_text.substr(5), p.slow_delay_ms)) parse_fail(line_no, "bad slow delay");
        } else {
            auto b = parse_behavior(behavior_text);
            if (!b) parse_fail(line_no, "unknown behavior '" + std::string(behavior_text) + "'");
            p.behavior = *b;
            if (p.behavior == Behavior::slow) p.slow_delay_ms = kDefaultSlowDelayMs;
        }
        if (!parse_number(fields[2], p.services)) parse_fail(line_no, "bad services");
        if (!parse_number(fields[3], p.start_height)) parse_fail(line_no, "bad start_height");
        if (!parse_number(fields[4], p.rtt_ms)) parse_fail(line_no, "bad rtt_ms");
        if (fields.size() == 6) p.known_peers = parse_endpoint_list(fields[5], line_no);
        topo.peers.push_back(std::move(p));
    }
    return topo;
}

SimTopology load_topology(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw SimError(Errc::ParseError, "cannot open topology file " + path.string());
    return parse_topology(in);
}

void write_topology(std::ostream& out, const SimTopology& topology)
{
    auto join = [](const std::vector<Endpoint>& eps) {
        if (eps.empty()) return std::string("-");
        std::string s;
        for (const auto& e : eps) {
            if (!s.empty()) s += ',';
            s += e.to_string();
        }
        return s;
    };
    out << "@rng_seed " << topology.rng_seed << '\n';
    out << "@seeds " << join(topology.seed_ids) << '\n';
    for (const auto& p : topology.peers) {
        out << p.address.to_string() << ' ';
        if (p.behavior == Behavior::slow) {
            out << "slow:" << format_number(p.slow_delay_ms);
        } else {
            out << to_string(p.behavior);
        }
        out << ' ' << p.services << ' ' << p.start_height << ' ' << format_number(p.rtt_ms) << ' '
            << join(p.known_peers) << '\n';
    }
}

ReachableSets reachable_set(const SimTopology& topology)
{
    std::unordered_map<Endpoint, const SimPeerProfile*, EndpointHash> by_address;
    for (const auto& p : topology.peers) by_address.emplace(p.address, &p);

    ReachableSets out;
    std::deque<Endpoint> queue;
    for (const auto& s : topology.seed_ids) {
        if (out.discovered.insert(s).second) queue.push_back(s);
    }
    while (!queue.empty()) {
        Endpoint current = queue.front();
        queue.pop_front();
        auto it = by_address.find(current);
        if (it == by_address.end()) continue;
        const SimPeerProfile& peer = *it->second;
        if (peer.behavior == Behavior::unreachable || peer.behavior == Behavior::silent) continue;
        out.active.insert(current);
        if (peer.behavior == Behavior::empty_addr) continue;
        for (const auto& next : peer.known_peers) {
            if (out.discovered.insert(next).second) queue.push_back(next);
        }
    }
    return out;
}

// PeerEngine

PeerEngine::PeerEngine(SimNetwork& network, std::size_t peer_index)
    : network_(network), peer_index_(peer_index)
{
}

std::vector<Response> PeerEngine::on_bytes(ByteView bytes, double clock_ms)
{
    std::vector<Response> out;
    if (closed_) return out;
    inbound_.insert(inbound_.end(), bytes.begin(), bytes.end());

    std::size_t offset = 0;
    try {
        while (inbound_.size() - offset >= wire::kHeaderSize) {
            ByteView rest(inbound_.data() + offset, inbound_.size() - offset);
            std::uint32_t length = wire::peek_payload_length(rest, network_.magic());
            if (rest.size() < wire::kHeaderSize + length) break;
            auto frame = wire::decode_message(rest, network_.magic());
            offset += frame.frame_size;
            auto responses = handle(frame.message, clock_ms);
            out.insert(out.end(), std::make_move_iterator(responses.begin()),
                       std::make_move_iterator(responses.end()));
        }
    } catch (const wire::WireError&) {
        closed_ = true;
    }
    inbound_.erase(inbound_.begin(), inbound_.begin() + static_cast<std::ptrdiff_t>(offset));
    return out;
}

std::vector<Response> PeerEngine::handle(const wire::Message& msg, double clock_ms)
{
    const SimPeerProfile& profile = network_.profile(peer_index_);
    if (profile.behavior == Behavior::silent) return {};

    double delay = profile.rtt_ms + (profile.behavior == Behavior::slow ? profile.slow_delay_ms : 0);
    auto frame = [&](std::string_view command, const Bytes& payload) {
        return Response{delay, wire::encode_message(command, payload, network_.magic())};
    };

    std::vector<Response> out;
    if (msg.command == wire::command::version) {
        wire::decode_version(msg.payload); // validate
        if (got_version_) return out;
        got_version_ = true;

        wire::VersionPayload v;
        v.protocol_version = wire::kProtocolVersion;
        v.services = profile.services;
        v.timestamp = kSimEpoch + static_cast<std::int64_t>(clock_ms / 1000);
        v.sender = {profile.services, profile.address.ip(), profile.address.port()};
        v.nonce = network_.next_nonce(peer_index_);
        v.user_agent = "/Satoshi:0.18.0/";
        v.start_height = profile.start_height;
        v.relay = true;
        if (profile.behavior == Behavior::stale) {
            v.protocol_version = kStaleProtocolVersion;
            v.user_agent = "/Satoshi:0.11.2/";
            v.start_height = std::max(0, profile.start_height - kStaleHeightLag);
        }
        out.push_back(frame(wire::command::version, wire::encode_version(v)));
        out.push_back(frame(wire::command::verack, {}));
    } else if (msg.command == wire::command::ping) {
        out.push_back(frame(wire::command::pong, wire::encode_pong(wire::decode_ping(msg.payload))));
    } else if (msg.command == wire::command::getaddr && got_version_) {
        std::vector<wire::AddrEntry> entries;
        if (profile.behavior != Behavior::empty_addr) entries = network_.sample_addr(peer_index_);
        out.push_back(frame(wire::command::addr, wire::encode_addr(entries)));
    }
    return out;
}

// Virtual-time connection

namespace {

class SimConnection : public Connection {
public:
    SimConnection(SimNetwork& network, std::size_t index) : engine_(network, index) {}

    void send(ByteView bytes) override
    {
        if (engine_.closed()) throw TransportError("connection closed by peer");
        for (auto& r : engine_.on_bytes(bytes, clock_)) {
            pending_.push_back({clock_ + r.delay_ms, seq_++, std::move(r.bytes)});
            std::push_heap(pending_.begin(), pending_.end(), Later{});
        }
    }

    RecvResult receive(Millis timeout) override
    {
        if (!pending_.empty() && pending_.front().deliver_at <= clock_ + timeout) {
            std::pop_heap(pending_.begin(), pending_.end(), Later{});
            Pending p = std::move(pending_.back());
            pending_.pop_back();
            clock_ = std::max(clock_, p.deliver_at);
            return {RecvStatus::data, std::move(p.bytes)};
        }
        if (engine_.closed() && pending_.empty()) return {RecvStatus::closed, {}};
        clock_ += timeout;
        return {RecvStatus::timeout, {}};
    }

    Millis now() const override { return clock_; }

private:
    struct Pending {
        double deliver_at;
        std::uint64_t seq;
        Bytes bytes;
    };
    struct Later {
        bool operator()(const Pending& a, const Pending& b) const
        {
            return a.deliver_at != b.deliver_at ? a.deliver_at > b.deliver_at : a.seq > b.seq;
        }
    };

    PeerEngine engine_;
    std::vector<Pending> pending_;
    std::uint64_t seq_ = 0;
    double clock_ = 0;
};

} // namespace

SimNetwork::SimNetwork(SimTopology topology, wire::Magic magic)
    : topology_(std::move(topology)), magic_(magic)
{
    for (std::size_t i = 0; i < topology_.peers.size(); ++i) {
        const auto& p = topology_.peers[i];
        if (!index_.emplace(p.address, i).second) {
            throw SimError(Errc::DuplicateAddress, "duplicate peer " + p.address.to_string());
        }
        if (p.known_peers.size() > kMaxKnownPeers) {
            throw SimError(Errc::TooManyKnownPeers, "peer " + p.address.to_string() + " knows too many peers");
        }
        if (!(p.rtt_ms > 0) || p.slow_delay_ms < 0) {
            throw SimError(Errc::InvalidProfile, "peer " + p.address.to_string() + " needs rtt_ms > 0");
        }
        auto state = std::make_unique<PeerState>();
        state->rng.seed(mix64(topology_.rng_seed ^ mix64(EndpointHash{}(p.address))));
        state_.push_back(std::move(state));
    }
    for (const auto& s : topology_.seed_ids) {
        if (!index_.contains(s)) throw SimError(Errc::UnknownSeed, "seed not in topology: " + s.to_string());
    }
}

std::optional<std::size_t> SimNetwork::index_of(const Endpoint& endpoint) const
{
    auto it = index_.find(endpoint);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

ConnectResult SimNetwork::connect(const Endpoint& endpoint, Millis timeout)
{
    auto index = index_of(endpoint);
    if (!index || profile(*index).behavior == Behavior::unreachable) {
        return {nullptr, "connection refused", 0};
    }
    Millis handshake = profile(*index).rtt_ms;
    if (handshake > timeout) return {nullptr, "connect timeout", timeout};
    return {std::make_unique<SimConnection>(*this, *index), {}, handshake};
}

std::vector<wire::AddrEntry> SimNetwork::sample_addr(std::size_t index)
{
    const auto& profile = topology_.peers[index];
    const auto& known = profile.known_peers;
    std::size_t count = std::min(wire::kMaxAddrEntries, known.size());

    std::vector<std::size_t> picks(known.size());
    std::iota(picks.begin(), picks.end(), 0);
    {
        std::lock_guard lock(state_[index]->mutex);
        auto& rng = state_[index]->rng;
        // partial Fisher-Yates
        for (std::size_t i = 0; i < count; ++i) {
            std::uniform_int_distribution<std::size_t> dist(i, picks.size() - 1);
            std::swap(picks[i], picks[dist(rng)]);
        }
    }

    std::vector<wire::AddrEntry> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const Endpoint& e = known[picks[i]];
        std::uint64_t services = wire::kNodeNetwork;
        if (auto j = index_of(e)) services = topology_.peers[*j].services;
        out.push_back(wire::AddrEntry::from_endpoint(e, static_cast<std::uint32_t>(kSimEpoch - 600), services));
    }
    return out;
}

std::uint64_t SimNetwork::next_nonce(std::size_t index)
{
    std::lock_guard lock(state_[index]->mutex);
    return state_[index]->rng();
}

std::shared_ptr<SimNetwork> build_network(SimTopology topology, wire::Magic magic)
{
    return std::make_shared<SimNetwork>(std::move(topology), magic);
}

SimTopology generate_topology(const GeneratorParams& params)
{
    std::mt19937_64 rng(params.rng_seed);
    SimTopology topo;
    topo.rng_seed = params.rng_seed;

    auto address_for = [](std::size_t i) {
        // mostly IPv4, every 8th IPv6, every 25th OnionCat
        if (i % 25 == 24) {
            Endpoint::IpBytes ip{0xfd, 0x87, 0xd8, 0x7e, 0xeb, 0x43};
            ip[14] = static_cast<std::uint8_t>(i >> 8);
            ip[15] = static_cast<std::uint8_t>(i);
            return Endpoint(ip, kDefaultPort);
        }
        if (i % 8 == 7) {
            Endpoint::IpBytes ip{0x20, 0x01, 0x0d, 0xb8};
            ip[14] = static_cast<std::uint8_t>(i >> 8);
            ip[15] = static_cast<std::uint8_t>(i);
            return Endpoint(ip, kDefaultPort);
        }
        std::uint32_t v4 = (10u << 24) | static_cast<std::uint32_t>(i + 1);
        return Endpoint::from_ipv4(v4, i % 10 == 9 ? 8334 : kDefaultPort);
    };

    const std::size_t n = params.peer_count;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<Behavior> behavior(n, Behavior::normal);
    std::size_t cursor = params.seed_count; // seeds stay normal
    auto assign = [&](double fraction, Behavior b) {
        auto k = static_cast<std::size_t>(fraction * static_cast<double>(n) + 0.5);
        for (std::size_t j = 0; j < k && cursor < n; ++j) behavior[order[cursor++]] = b;
    };
    assign(params.unreachable_fraction, Behavior::unreachable);
    assign(params.silent_fraction, Behavior::silent);
    assign(params.slow_fraction, Behavior::slow);
    assign(params.stale_fraction, Behavior::stale);
    assign(params.empty_addr_fraction, Behavior::empty_addr);

    std::uniform_int_distribution<std::size_t> known_count(params.min_known, std::max(params.min_known, params.max_known));
    std::uniform_int_distribution<std::size_t> any_peer(0, n - 1);
    std::uniform_real_distribution<double> rtt(5, 300);
    std::uniform_real_distribution<double> slow_delay(500, 3000);
    std::uniform_int_distribution<int> height_jitter(-3, 0);

    for (std::size_t i = 0; i < n; ++i) {
        SimPeerProfile p;
        p.address = address_for(i);
        p.behavior = behavior[i];
        if (p.behavior == Behavior::slow) p.slow_delay_ms = std::round(slow_delay(rng));
        p.rtt_ms = std::round(rtt(rng));
        p.start_height = 600000 + height_jitter(rng);
        p.services = (i % 7 == 0) ? (wire::kNodeNetworkLimited | wire::kNodeWitness)
                                  : (wire::kNodeNetwork | wire::kNodeWitness);
        std::set<std::size_t> known;
        std::size_t want = std::min(known_count(rng), n - 1);
        while (known.size() < want) {
            std::size_t j = any_peer(rng);
            if (j != i) known.insert(j);
        }
        for (std::size_t j : known) p.known_peers.push_back(address_for(j));
        for (std::size_t j = 0; j < params.phantom_peers; ++j) {
            std::uint32_t v4 = (172u << 24) | (16u << 16) | static_cast<std::uint32_t>(any_peer(rng));
            p.known_peers.push_back(Endpoint::from_ipv4(v4, kDefaultPort));
        }
        topo.peers.push_back(std::move(p));
    }
    for (std::size_t j = 0; j < params.seed_count && j < n; ++j) topo.seed_ids.push_back(topo.peers[order[j]].address);
    return topo;
}

} // namespace chainobs::simnet
