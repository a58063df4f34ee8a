#pragma once

// Network-type classification and offline country/ASN annotation of
// snapshot endpoints.

#include "chainobs/endpoint.hpp"
#include "chainobs/snapshot.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace chainobs::enrich {

enum class Errc { InvalidPrefix, DuplicatePrefix, BadRow, BadAddress, Io };

class EnrichError : public std::runtime_error {
public:
    EnrichError(Errc code, const std::string& what, std::size_t line = 0)
        : std::runtime_error(what), code_(code), line_(line)
    {
    }
    Errc code() const { return code_; }
    std::size_t line() const { return line_; }

private:
    Errc code_;
    std::size_t line_;
};

struct IpBytesHash {
    std::size_t operator()(const Endpoint::IpBytes& ip) const noexcept { return EndpointHash{}(Endpoint(ip, 0)); }
};

/// A prefix in the 128-bit space; IPv4 prefixes live under ::ffff:0:0/96.
struct Prefix {
    Endpoint::IpBytes network{};
    int length = 0; ///< 0..128

    /// "10.0.0.0/8" or "2001:db8::/32". Host bits must be zero.
    static std::optional<Prefix> parse(std::string_view text);
    bool contains(const Endpoint::IpBytes& ip) const;
    bool operator==(const Prefix&) const = default;
};

/// Longest-prefix-match table from `prefix,country,asn,org` rows.
class IpMetadataTable {
public:
    /// Throws DuplicatePrefix when the same network/length is inserted twice.
    void insert(const Prefix& prefix, GeoInfo info);
    std::optional<GeoInfo> lookup(const Endpoint::IpBytes& ip) const;
    std::size_t size() const { return entries_.size(); }

    /// Optional header row `prefix,country,asn,org`; `#` comments; ASN may be
    /// written `AS64500` or `64500`.
    static IpMetadataTable load_csv(std::istream& in);
    static IpMetadataTable load_csv(const std::filesystem::path& path);

    struct Entry {
        Prefix prefix;
        GeoInfo info;
    };
    const std::vector<Entry>& entries() const { return entries_; }

private:
    std::vector<Entry> entries_;
    std::array<std::unordered_map<Endpoint::IpBytes, std::size_t, IpBytesHash>, 129> by_length_;
    std::vector<int> lengths_desc_; ///< non-empty lengths, longest first
};

struct TorExitList {
    std::unordered_set<Endpoint::IpBytes, IpBytesHash> addresses;
    std::int64_t fetched_at = 0;

    bool contains(const Endpoint::IpBytes& ip) const { return addresses.contains(ip); }

    /// One IP per line, or TorDNSEL `ExitAddress <ip> ...` lines; other
    /// TorDNSEL keywords are skipped. `# fetched_at <unix>` sets fetched_at.
    static TorExitList load(std::istream& in);
    static TorExitList load(const std::filesystem::path& path);
};

/// OnionCat range -> tor; v4-mapped -> ipv4; else ipv6. Membership in the
/// exit list upgrades any result to tor.
NetType classify_network(const Endpoint& address, const TorExitList* exits = nullptr);

/// Ordered set of tables; the first table with a match wins.
class GeoResolver {
public:
    GeoResolver() = default;
    explicit GeoResolver(std::vector<IpMetadataTable> tables) : tables_(std::move(tables)) {}

    struct Resolution {
        std::optional<GeoInfo> info;
        bool disagreement = false; ///< a later table maps the address differently
    };
    Resolution resolve(const Endpoint::IpBytes& ip) const;
    bool empty() const { return tables_.empty(); }

private:
    std::vector<IpMetadataTable> tables_;
};

struct EnrichSummary {
    std::size_t annotated = 0;
    std::size_t unknown = 0;
    std::size_t tor = 0;
    std::size_t disagreements = 0;
};

/// Sets net and geo on every record. Tor-class records get no geo.
EnrichSummary enrich_snapshot(Snapshot& snapshot, const GeoResolver& resolver, const TorExitList* exits = nullptr);

struct Share {
    std::string label;
    std::size_t count = 0;
    double share = 0;
};

struct ShareReport {
    std::vector<Share> by_country; ///< tor nodes form their own "tor" bucket
    std::vector<Share> by_org;
    std::size_t active = 0;
};

inline constexpr std::string_view kUnknownBucket = "unknown";
inline constexpr std::string_view kTorBucket = "tor";

/// Shares over active nodes of an enriched snapshot, sorted descending
/// (ties by label).
ShareReport aggregate_shares(const Snapshot& enriched);
ShareReport aggregate_shares(const Snapshot& snapshot, const GeoResolver& resolver, const TorExitList* exits = nullptr);

struct SnapshotStats {
    std::vector<Share> by_net;
    std::vector<Share> by_protocol_version;
    std::vector<Share> by_user_agent;
    std::vector<Share> by_services;
    /// Sorted min RTTs of active nodes with their empirical CDF.
    std::vector<std::pair<double, double>> min_rtt_cdf;
};

SnapshotStats snapshot_stats(const Snapshot& snapshot);

} // namespace chainobs::enrich
