#include "chainobs/crawler.hpp"

#include <netdb.h>
#include <sys/socket.h>
#include <netinet/in.h>
#include <arpa/inet.h>

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_set>

namespace chainobs::crawler {

std::string_view to_string(Errc code)
{
    switch (code) {
    case Errc::EmptySeedSet: return "EmptySeedSet";
    case Errc::UnresolvableAllSeeds: return "UnresolvableAllSeeds";
    case Errc::NoPongReceived: return "NoPongReceived";
    case Errc::FrontierCapExceeded: return "FrontierCapExceeded";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::ProtocolError: return "ProtocolError";
    }
    return "Unknown";
}

namespace {

std::uint64_t mix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

std::int64_t system_clock_seconds()
{
    using namespace std::chrono;
    return duration_cast<seconds>(system_clock::now().time_since_epoch()).count();
}

// Smallest RTT we report; keeps min_rtt_ms strictly positive on clocks that
// can return a zero difference.
constexpr Millis kMinReportableRtt = 1e-3;

} // namespace

std::vector<Endpoint::IpBytes> resolve_dns(const std::string& name)
{
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* result = nullptr;
    std::vector<Endpoint::IpBytes> out;
    if (getaddrinfo(name.c_str(), nullptr, &hints, &result) != 0) return out;
    for (addrinfo* ai = result; ai != nullptr; ai = ai->ai_next) {
        if (ai->ai_family == AF_INET) {
            auto* sin = reinterpret_cast<sockaddr_in*>(ai->ai_addr);
            out.push_back(Endpoint::from_ipv4(ntohl(sin->sin_addr.s_addr), 0).ip());
        } else if (ai->ai_family == AF_INET6) {
            auto* sin6 = reinterpret_cast<sockaddr_in6*>(ai->ai_addr);
            Endpoint::IpBytes ip{};
            std::memcpy(ip.data(), &sin6->sin6_addr, 16);
            out.push_back(ip);
        }
    }
    freeaddrinfo(result);
    return out;
}

std::vector<Endpoint> parse_seed_list(std::istream& in)
{
    std::vector<Endpoint> out;
    std::set<Endpoint> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        auto begin = line.find_first_not_of(" \t\r");
        if (begin == std::string::npos) continue;
        auto end = line.find_last_not_of(" \t\r");
        auto text = std::string_view(line).substr(begin, end - begin + 1);
        auto ep = Endpoint::parse(text);
        if (!ep) {
            throw CrawlError(Errc::InvalidConfig, "seed line " + std::to_string(line_no) + ": bad endpoint");
        }
        if (seen.insert(*ep).second) out.push_back(*ep);
    }
    return out;
}

std::vector<Endpoint> bootstrap_seeds(const SeedSource& source)
{
    std::vector<Endpoint> out;
    std::set<Endpoint> seen;
    auto add = [&](const Endpoint& e) {
        if (seen.insert(e).second) out.push_back(e);
    };

    if (source.file) {
        std::ifstream in(*source.file);
        if (!in) throw CrawlError(Errc::EmptySeedSet, "cannot open seed file " + source.file->string());
        for (const auto& e : parse_seed_list(in)) add(e);
    }
    bool any_resolved = false;
    for (const auto& name : source.dns_names) {
        auto ips = source.resolver ? source.resolver(name) : resolve_dns(name);
        if (ips.empty()) spdlog::warn("seed {} did not resolve", name);
        for (const auto& ip : ips) {
            add(Endpoint(ip, kDefaultPort));
            any_resolved = true;
        }
    }
    if (!out.empty()) return out;
    if (!source.dns_names.empty() && !any_resolved) {
        throw CrawlError(Errc::UnresolvableAllSeeds, "no seed DNS name resolved");
    }
    throw CrawlError(Errc::EmptySeedSet, "seed source is empty");
}

void CrawlConfig::validate() const
{
    if (max_inflight < 1) throw CrawlError(Errc::InvalidConfig, "max_inflight must be >= 1");
    if (!(connect_timeout_ms > 0) || !(handshake_timeout_ms > 0)) {
        throw CrawlError(Errc::InvalidConfig, "timeouts must be > 0");
    }
    if (getaddr_rounds < 0 || ping_count < 0) throw CrawlError(Errc::InvalidConfig, "negative round count");
    if (max_frontier < 1) throw CrawlError(Errc::InvalidConfig, "max_frontier must be >= 1");
}

std::string CrawlConfig::digest() const
{
    std::ostringstream s;
    s << "max_inflight=" << max_inflight << ";connect_timeout_ms=" << connect_timeout_ms
      << ";handshake_timeout_ms=" << handshake_timeout_ms << ";getaddr_rounds=" << getaddr_rounds
      << ";ping_count=" << ping_count << ";max_frontier=" << max_frontier << ";magic=" << to_hex(magic)
      << ";user_agent=" << user_agent << ";nonce_seed=" << nonce_seed << ";seeds=";
    for (const auto& seed : seeds) s << seed.to_string() << ',';
    auto h = sha256(as_bytes(s.str()));
    return to_hex(ByteView(h.data(), 16));
}

// PeerSession

PeerSession::PeerSession(Connection& connection, const wire::Magic& magic)
    : connection_(connection), magic_(magic)
{
}

void PeerSession::send(std::string_view command, ByteView payload)
{
    connection_.send(wire::encode_message(command, payload, magic_));
}

std::optional<wire::Message> PeerSession::next(Millis deadline)
{
    while (true) {
        if (buffer_.size() >= wire::kHeaderSize) {
            try {
                std::uint32_t length = wire::peek_payload_length(buffer_, magic_);
                if (buffer_.size() >= wire::kHeaderSize + length) {
                    auto frame = wire::decode_message(buffer_, magic_);
                    buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(frame.frame_size));
                    if (frame.message.command == wire::command::ping) {
                        send(wire::command::pong, wire::encode_pong(wire::decode_ping(frame.message.payload)));
                        continue;
                    }
                    return std::move(frame.message);
                }
            } catch (const wire::WireError& e) {
                throw CrawlError(Errc::ProtocolError, std::string("malformed message: ") + e.what());
            }
        }

        Millis remaining = deadline - connection_.now();
        if (remaining <= 0) return std::nullopt;
        auto r = connection_.receive(remaining);
        switch (r.status) {
        case RecvStatus::data:
            buffer_.insert(buffer_.end(), r.data.begin(), r.data.end());
            break;
        case RecvStatus::timeout:
            return std::nullopt;
        case RecvStatus::closed:
            throw CrawlError(Errc::ProtocolError, "connection closed by peer");
        }
    }
}

Millis measure_min_rtt(PeerSession& session, int k, Millis timeout, std::uint64_t nonce_seed)
{
    std::optional<Millis> best;
    for (int i = 0; i < k; ++i) {
        std::uint64_t nonce = mix64(nonce_seed + static_cast<std::uint64_t>(i));
        Millis sent_at = session.now();
        session.send(wire::command::ping, wire::encode_ping(nonce));
        Millis deadline = sent_at + timeout;
        while (auto msg = session.next(deadline)) {
            if (msg->command != wire::command::pong) continue;
            std::uint64_t echoed = 0;
            try {
                echoed = wire::decode_pong(msg->payload);
            } catch (const wire::WireError&) {
                continue; // pre-BIP31 pongs carry no nonce
            }
            if (echoed != nonce) continue;
            Millis rtt = session.now() - sent_at;
            best = best ? std::min(*best, rtt) : rtt;
            break;
        }
    }
    if (!best) throw CrawlError(Errc::NoPongReceived, "no pong received");
    return std::max(*best, kMinReportableRtt);
}

ProbeResult probe_peer(const Endpoint& endpoint, const CrawlConfig& config, Transport& transport)
{
    auto clock = config.clock ? config.clock : system_clock_seconds;
    ProbeResult result;
    PeerRecord& rec = result.record;
    rec.address = endpoint;
    rec.net = classify_address(endpoint.ip());
    rec.status = PeerStatus::discovered_inactive;
    rec.first_seen = rec.last_seen = clock();

    auto connected = transport.connect(endpoint, config.connect_timeout_ms);
    if (!connected.connection) {
        rec.note = "connect: " + connected.error;
        return result;
    }

    std::uint64_t nonce_base = mix64(config.nonce_seed ^ EndpointHash{}(endpoint));
    PeerSession session(*connected.connection, config.magic);
    try {
        wire::VersionPayload ours;
        ours.protocol_version = wire::kProtocolVersion;
        ours.services = 0;
        ours.timestamp = clock();
        ours.receiver = {0, endpoint.ip(), endpoint.port()};
        ours.nonce = nonce_base;
        ours.user_agent = config.user_agent;
        ours.start_height = 0;
        ours.relay = false;
        session.send(wire::command::version, wire::encode_version(ours));

        std::optional<wire::VersionPayload> theirs;
        bool verack = false;
        Millis deadline = session.now() + config.handshake_timeout_ms;
        while (!(theirs && verack)) {
            auto msg = session.next(deadline);
            if (!msg) break;
            if (msg->command == wire::command::version && !theirs) {
                theirs = wire::decode_version(msg->payload);
                session.send(wire::command::verack, {});
            } else if (msg->command == wire::command::verack) {
                verack = true;
            }
        }
        if (!theirs) {
            rec.note = "handshake timeout";
            return result;
        }
        rec.services = theirs->services;
        rec.protocol_version = theirs->protocol_version;
        rec.user_agent = theirs->user_agent;
        rec.start_height = theirs->start_height;
        if (!verack) {
            rec.note = "version without verack";
            return result;
        }
        rec.status = PeerStatus::active;
        if (theirs->has_negative_start_height()) rec.note = "negative start_height";

        if (config.ping_count > 0) {
            try {
                rec.min_rtt_ms = measure_min_rtt(session, config.ping_count, config.handshake_timeout_ms, nonce_base);
            } catch (const CrawlError& e) {
                if (e.code() != Errc::NoPongReceived) throw;
                rec.note = "no pong";
            }
        }

        std::set<Endpoint> seen;
        for (int round = 0; round < config.getaddr_rounds; ++round) {
            session.send(wire::command::getaddr, {});
            Millis round_deadline = session.now() + config.handshake_timeout_ms;
            while (auto msg = session.next(round_deadline)) {
                if (msg->command != wire::command::addr) continue;
                auto entries = wire::decode_addr(msg->payload);
                for (const auto& entry : entries) {
                    Endpoint e = entry.endpoint();
                    if (seen.insert(e).second) result.harvested.push_back(e);
                }
                // a lone entry is usually the peer's self-announcement
                if (entries.size() != 1) break;
            }
        }
        rec.addr_count_returned = static_cast<std::uint32_t>(result.harvested.size());
    } catch (const std::exception& e) {
        // CrawlError(ProtocolError), WireError and TransportError all land here
        rec.status = PeerStatus::discovered_inactive;
        rec.min_rtt_ms.reset();
        rec.addr_count_returned = 0;
        rec.note = std::string("protocol: ") + e.what();
        result.harvested.clear();
    }
    rec.last_seen = clock();
    return result;
}

Snapshot crawl(const CrawlConfig& config, Transport& transport)
{
    config.validate();
    if (config.seeds.empty()) throw CrawlError(Errc::EmptySeedSet, "no seeds configured");
    auto clock = config.clock ? config.clock : system_clock_seconds;

    Snapshot snapshot;
    snapshot.started_at = clock();
    snapshot.seeds = config.seeds;
    snapshot.config_digest = config.digest();

    std::mutex mutex;
    std::condition_variable cv;
    std::deque<Endpoint> frontier;
    std::unordered_set<Endpoint, EndpointHash> enqueued;
    std::size_t busy = 0;
    bool partial = false;

    for (const auto& seed : config.seeds) {
        if (enqueued.size() >= config.max_frontier) {
            partial = true;
            break;
        }
        if (enqueued.insert(seed).second) frontier.push_back(seed);
    }

    auto worker = [&] {
        std::unique_lock lock(mutex);
        while (true) {
            cv.wait(lock, [&] { return !frontier.empty() || busy == 0; });
            if (frontier.empty()) {
                cv.notify_all();
                return;
            }
            Endpoint target = frontier.front();
            frontier.pop_front();
            ++busy;
            lock.unlock();

            ProbeResult probe = probe_peer(target, config, transport);

            lock.lock();
            --busy;
            for (const auto& e : probe.harvested) {
                if (enqueued.contains(e)) continue;
                if (enqueued.size() >= config.max_frontier) {
                    partial = true;
                    continue;
                }
                enqueued.insert(e);
                frontier.push_back(e);
            }
            snapshot.records.emplace(target, std::move(probe.record));
            cv.notify_all();
        }
    };

    std::size_t threads = std::min(config.max_inflight, config.max_frontier);
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(threads);
        for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
    }

    snapshot.partial = partial;
    snapshot.finished_at = clock();
    if (partial) {
        spdlog::warn("{}: frontier cap {} reached, snapshot is partial", to_string(Errc::FrontierCapExceeded),
                     config.max_frontier);
    }
    spdlog::info("crawl finished: {} endpoints, {} active", snapshot.total_count(), snapshot.active_count());
    return snapshot;
}

} // namespace chainobs::crawler
