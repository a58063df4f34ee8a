#pragma once

#include "chainobs/endpoint.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace chainobs {

enum class PeerStatus { active, discovered_inactive };

std::string_view to_string(PeerStatus status);
std::optional<PeerStatus> parse_peer_status(std::string_view text);

struct GeoInfo {
    std::string country;
    std::uint32_t asn = 0;
    std::string org;

    bool operator==(const GeoInfo&) const = default;
};

struct PeerRecord {
    Endpoint address;
    PeerStatus status = PeerStatus::discovered_inactive;
    NetType net = NetType::ipv4;
    std::uint64_t services = 0;
    std::int32_t protocol_version = 0;
    std::string user_agent;
    std::int32_t start_height = 0;
    std::optional<double> min_rtt_ms;
    std::int64_t first_seen = 0;
    std::int64_t last_seen = 0;
    std::uint32_t addr_count_returned = 0;
    std::string note; ///< diagnostic, e.g. why a probe failed
    std::optional<GeoInfo> geo;

    bool active() const { return status == PeerStatus::active; }
    bool operator==(const PeerRecord&) const = default;
};

struct Snapshot {
    std::int64_t started_at = 0;
    std::int64_t finished_at = 0;
    std::vector<Endpoint> seeds;
    std::map<Endpoint, PeerRecord> records;
    std::string config_digest;
    bool partial = false; ///< crawl stopped at the frontier cap

    std::size_t active_count() const;
    std::size_t total_count() const { return records.size(); }
    std::vector<const PeerRecord*> active_records() const;

    bool operator==(const Snapshot&) const = default;
};

} // namespace chainobs
