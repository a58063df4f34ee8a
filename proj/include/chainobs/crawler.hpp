#pragma once

// Recursive getaddr crawler. Starting from seed endpoints it handshakes with
// every endpoint it learns about, measures min RTT with ping/pong, harvests
// addr gossip and records the result in a Snapshot.

#include "chainobs/endpoint.hpp"
#include "chainobs/snapshot.hpp"
#include "chainobs/transport.hpp"
#include "chainobs/wire.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace chainobs::crawler {

enum class Errc { EmptySeedSet, UnresolvableAllSeeds, NoPongReceived, FrontierCapExceeded, InvalidConfig, ProtocolError };

std::string_view to_string(Errc code);

class CrawlError : public std::runtime_error {
public:
    CrawlError(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
    Errc code() const { return code_; }

private:
    Errc code_;
};

/// Resolves a DNS name to all of its A/AAAA addresses.
using Resolver = std::function<std::vector<Endpoint::IpBytes>(const std::string& name)>;

/// Resolver backed by getaddrinfo.
std::vector<Endpoint::IpBytes> resolve_dns(const std::string& name);

struct SeedSource {
    std::optional<std::filesystem::path> file;
    std::vector<std::string> dns_names;
    Resolver resolver = resolve_dns;
};

/// Parses `ip[:port]` lines; blank lines and `#` comments are skipped.
/// Returns deduplicated endpoints in first-seen order.
std::vector<Endpoint> parse_seed_list(std::istream& in);

std::vector<Endpoint> bootstrap_seeds(const SeedSource& source);

struct CrawlConfig {
    std::size_t max_inflight = 512;
    Millis connect_timeout_ms = 5000;
    Millis handshake_timeout_ms = 5000;
    int getaddr_rounds = 3;
    int ping_count = 5;
    std::size_t max_frontier = 1'000'000;
    wire::Magic magic = wire::kMainnetMagic;
    std::vector<Endpoint> seeds;
    std::string user_agent = "/chainobs:0.1.0/";
    /// Seeds ping and version nonces.
    std::uint64_t nonce_seed = 0x6368'6169'6e6f'6273ull;
    /// Unix seconds; replaceable for reproducible snapshots.
    std::function<std::int64_t()> clock;

    /// Throws CrawlError(InvalidConfig).
    void validate() const;
    /// Hex digest over every field that influences crawl results.
    std::string digest() const;
};

struct ProbeResult {
    PeerRecord record;
    std::vector<Endpoint> harvested;
};

/// A handshaken-or-not session with one peer: framing, deadlines and the
/// automatic pong reply to peer pings.
class PeerSession {
public:
    PeerSession(Connection& connection, const wire::Magic& magic);

    void send(std::string_view command, ByteView payload);

    /// Next message before the deadline (connection clock), or nullopt on
    /// timeout. Throws CrawlError(ProtocolError) on a malformed frame or a
    /// closed stream.
    std::optional<wire::Message> next(Millis deadline);

    Millis now() const { return connection_.now(); }

private:
    Connection& connection_;
    wire::Magic magic_;
    Bytes buffer_;
};

/// Minimum over k ping/pong round trips, each bounded by `timeout`.
/// Throws CrawlError(NoPongReceived) when no pong arrives at all.
Millis measure_min_rtt(PeerSession& session, int k, Millis timeout, std::uint64_t nonce_seed = 1);

ProbeResult probe_peer(const Endpoint& endpoint, const CrawlConfig& config, Transport& transport);

/// Breadth-first crawl. When the frontier cap is hit the returned snapshot
/// has partial=true.
Snapshot crawl(const CrawlConfig& config, Transport& transport);

} // namespace chainobs::crawler
