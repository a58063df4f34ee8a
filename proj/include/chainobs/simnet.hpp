#pragma once

// Deterministic in-process Bitcoin peer network. Every peer speaks the wire
// protocol over a virtual-time byte stream, so crawls are reproducible and
// cost no wall-clock time.

#include "chainobs/endpoint.hpp"
#include "chainobs/transport.hpp"
#include "chainobs/wire.hpp"

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace chainobs::simnet {

enum class Behavior {
    normal,
    unreachable, ///< refuses connections (NATed node)
    silent,      ///< accepts, never completes the handshake
    slow,        ///< every response delayed by a fixed extra amount
    stale,       ///< advertises an old protocol version and a lagging height
    empty_addr,  ///< answers getaddr with zero entries
};

std::string_view to_string(Behavior b);

inline constexpr std::size_t kMaxKnownPeers = 2500;
inline constexpr double kDefaultSlowDelayMs = 2000;
inline constexpr std::int32_t kStaleProtocolVersion = 70002;
inline constexpr std::int32_t kStaleHeightLag = 2016;
/// Unix time that virtual clock zero maps to in emitted messages.
inline constexpr std::int64_t kSimEpoch = 1'600'000'000;

struct SimPeerProfile {
    Endpoint address;
    Behavior behavior = Behavior::normal;
    double slow_delay_ms = 0; ///< only used by Behavior::slow
    std::vector<Endpoint> known_peers;
    std::uint64_t services = wire::kNodeNetwork | wire::kNodeWitness;
    std::int32_t start_height = 0;
    double rtt_ms = 1;
};

struct SimTopology {
    std::vector<SimPeerProfile> peers;
    std::vector<Endpoint> seed_ids;
    std::uint64_t rng_seed = 0;
};

enum class Errc { DuplicateAddress, UnknownSeed, TooManyKnownPeers, InvalidProfile, ParseError };

class SimError : public std::runtime_error {
public:
    SimError(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
    Errc code() const { return code_; }

private:
    Errc code_;
};

/// Parses the plain-text topology format:
///   id behavior services start_height rtt_ms peer1,peer2,...
/// `behavior` may be `slow:<ms>`; an empty peer list is written `-`.
/// Directives `@seeds a,b,...` and `@rng_seed N` set the remaining fields.
SimTopology parse_topology(std::istream& in);
SimTopology load_topology(const std::filesystem::path& path);
void write_topology(std::ostream& out, const SimTopology& topology);

struct ReachableSets {
    std::set<Endpoint> active;     ///< gossip-reachable and connectable
    std::set<Endpoint> discovered; ///< every endpoint reached by gossip, seeds included
};

/// Breadth-first oracle over known_peers. Only connectable peers that answer
/// getaddr with entries propagate gossip.
ReachableSets reachable_set(const SimTopology& topology);

struct Response {
    double delay_ms = 0;
    Bytes bytes;
};

class SimNetwork;

/// Per-connection protocol state machine of one simulated peer.
class PeerEngine {
public:
    PeerEngine(SimNetwork& network, std::size_t peer_index);

    /// Feeds crawler bytes; returns the responses they trigger. `clock_ms`
    /// stamps emitted timestamps. Sets closed() on a malformed frame.
    std::vector<Response> on_bytes(ByteView bytes, double clock_ms);

    bool closed() const { return closed_; }

private:
    std::vector<Response> handle(const wire::Message& msg, double clock_ms);

    SimNetwork& network_;
    std::size_t peer_index_;
    Bytes inbound_;
    bool got_version_ = false;
    bool closed_ = false;
};

class SimNetwork : public Transport {
public:
    explicit SimNetwork(SimTopology topology, wire::Magic magic = wire::kSimnetMagic);

    ConnectResult connect(const Endpoint& endpoint, Millis timeout) override;

    const SimTopology& topology() const { return topology_; }
    const wire::Magic& magic() const { return magic_; }
    std::optional<std::size_t> index_of(const Endpoint& endpoint) const;
    const SimPeerProfile& profile(std::size_t index) const { return topology_.peers[index]; }

    /// Samples min(1000, |known_peers|) entries without replacement.
    std::vector<wire::AddrEntry> sample_addr(std::size_t index);
    std::uint64_t next_nonce(std::size_t index);

private:
    struct PeerState {
        std::mutex mutex;
        std::mt19937_64 rng;
    };

    SimTopology topology_;
    wire::Magic magic_;
    std::unordered_map<Endpoint, std::size_t, EndpointHash> index_;
    std::vector<std::unique_ptr<PeerState>> state_;
};

/// Validates the topology and returns a connector over it.
std::shared_ptr<SimNetwork> build_network(SimTopology topology, wire::Magic magic = wire::kSimnetMagic);

struct GeneratorParams {
    std::size_t peer_count = 500;
    double unreachable_fraction = 0.30;
    double silent_fraction = 0.05;
    double slow_fraction = 0.05;
    double stale_fraction = 0.0;
    double empty_addr_fraction = 0.0;
    std::size_t min_known = 4;
    std::size_t max_known = 24;
    std::size_t seed_count = 3;
    /// Entries in known_peers that point at endpoints outside the topology.
    std::size_t phantom_peers = 0;
    std::uint64_t rng_seed = 1;
};

/// Random topology whose seeds are normal peers. Slow peers get delays well
/// under the default handshake timeout.
SimTopology generate_topology(const GeneratorParams& params);

} // namespace chainobs::simnet
