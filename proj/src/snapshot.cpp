#include "chainobs/snapshot.hpp"

#include <algorithm>

namespace chainobs {

std::string_view to_string(PeerStatus status)
{
    return status == PeerStatus::active ? "active" : "discovered_inactive";
}

std::optional<PeerStatus> parse_peer_status(std::string_view text)
{
    if (text == "active") return PeerStatus::active;
    if (text == "discovered_inactive") return PeerStatus::discovered_inactive;
    return std::nullopt;
}

std::size_t Snapshot::active_count() const
{
    return static_cast<std::size_t>(
        std::count_if(records.begin(), records.end(), [](const auto& kv) { return kv.second.active(); }));
}

std::vector<const PeerRecord*> Snapshot::active_records() const
{
    std::vector<const PeerRecord*> out;
    for (const auto& [_, r] : records) {
        if (r.active()) out.push_back(&r);
    }
    return out;
}

} // namespace chainobs
