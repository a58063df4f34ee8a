#include "chainobs/enrich.hpp"

#include "chainobs/csv.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

namespace chainobs::enrich {

namespace {

Endpoint::IpBytes mask(const Endpoint::IpBytes& ip, int length)
{
    Endpoint::IpBytes out{};
    for (int i = 0; i < 16; ++i) {
        int bits = std::clamp(length - 8 * i, 0, 8);
        auto m = static_cast<std::uint8_t>(bits == 0 ? 0 : (0xff << (8 - bits)) & 0xff);
        out[i] = ip[i] & m;
    }
    return out;
}

std::string trim(std::string_view s)
{
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<Share> to_shares(const std::map<std::string, std::size_t>& counts, std::size_t total)
{
    std::vector<Share> out;
    if (total == 0) return out;
    for (const auto& [label, count] : counts) {
        out.push_back({label, count, static_cast<double>(count) / static_cast<double>(total)});
    }
    std::sort(out.begin(), out.end(), [](const Share& a, const Share& b) {
        return a.count != b.count ? a.count > b.count : a.label < b.label;
    });
    return out;
}

} // namespace

std::optional<Prefix> Prefix::parse(std::string_view text)
{
    auto slash = text.find('/');
    if (slash == std::string_view::npos) return std::nullopt;
    auto ip = Endpoint::parse_ip(text.substr(0, slash));
    if (!ip) return std::nullopt;

    int length = 0;
    auto len_text = text.substr(slash + 1);
    auto [ptr, ec] = std::from_chars(len_text.data(), len_text.data() + len_text.size(), length);
    if (ec != std::errc{} || ptr != len_text.data() + len_text.size() || len_text.empty()) return std::nullopt;

    bool v4 = text.substr(0, slash).find(':') == std::string_view::npos;
    if (v4) {
        if (length < 0 || length > 32) return std::nullopt;
        length += 96;
    } else if (length < 0 || length > 128) {
        return std::nullopt;
    }
    if (mask(*ip, length) != *ip) return std::nullopt;
    return Prefix{*ip, length};
}

bool Prefix::contains(const Endpoint::IpBytes& ip) const
{
    return mask(ip, length) == network;
}

void IpMetadataTable::insert(const Prefix& prefix, GeoInfo info)
{
    auto& bucket = by_length_[static_cast<std::size_t>(prefix.length)];
    if (bucket.contains(prefix.network)) {
        throw EnrichError(Errc::DuplicatePrefix, "duplicate prefix");
    }
    bucket.emplace(prefix.network, entries_.size());
    entries_.push_back({prefix, std::move(info)});
    if (std::find(lengths_desc_.begin(), lengths_desc_.end(), prefix.length) == lengths_desc_.end()) {
        lengths_desc_.push_back(prefix.length);
        std::sort(lengths_desc_.begin(), lengths_desc_.end(), std::greater<>());
    }
}

std::optional<GeoInfo> IpMetadataTable::lookup(const Endpoint::IpBytes& ip) const
{
    for (int length : lengths_desc_) {
        const auto& bucket = by_length_[static_cast<std::size_t>(length)];
        auto it = bucket.find(mask(ip, length));
        if (it != bucket.end()) return entries_[it->second].info;
    }
    return std::nullopt;
}

IpMetadataTable IpMetadataTable::load_csv(std::istream& in)
{
    IpMetadataTable table;
    std::string line;
    std::vector<std::string> fields;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto content = trim(line);
        if (content.empty() || content.front() == '#') continue;
        if (!csv::split_line(content, fields) || fields.size() != 4) {
            throw EnrichError(Errc::BadRow, "table line " + std::to_string(line_no) + ": expected 4 fields", line_no);
        }
        for (auto& f : fields) f = trim(f);
        if (fields[0] == "prefix") continue;

        auto prefix = Prefix::parse(fields[0]);
        if (!prefix) {
            throw EnrichError(Errc::InvalidPrefix, "table line " + std::to_string(line_no) + ": invalid prefix", line_no);
        }
        std::string_view asn_text = fields[2];
        if (asn_text.starts_with("AS") || asn_text.starts_with("as")) asn_text.remove_prefix(2);
        std::uint32_t asn = 0;
        auto [ptr, ec] = std::from_chars(asn_text.data(), asn_text.data() + asn_text.size(), asn);
        if (ec != std::errc{} || ptr != asn_text.data() + asn_text.size() || asn_text.empty()) {
            throw EnrichError(Errc::BadRow, "table line " + std::to_string(line_no) + ": bad asn", line_no);
        }
        try {
            table.insert(*prefix, GeoInfo{fields[1], asn, fields[3]});
        } catch (const EnrichError&) {
            throw EnrichError(Errc::DuplicatePrefix, "table line " + std::to_string(line_no) + ": duplicate prefix",
                              line_no);
        }
    }
    return table;
}

IpMetadataTable IpMetadataTable::load_csv(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw EnrichError(Errc::Io, "cannot open " + path.string());
    return load_csv(in);
}

TorExitList TorExitList::load(std::istream& in)
{
    TorExitList list;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto content = trim(line);
        if (content.empty()) continue;
        if (content.front() == '#') {
            std::istringstream s(content.substr(1));
            std::string key;
            std::int64_t value = 0;
            if (s >> key >> value && key == "fetched_at") list.fetched_at = value;
            continue;
        }
        std::istringstream s(content);
        std::string first;
        s >> first;
        std::string address = first;
        if (first == "ExitAddress") {
            s >> address;
        } else if (first == "ExitNode" || first == "Published" || first == "LastStatus") {
            continue;
        }
        auto ip = Endpoint::parse_ip(address);
        if (!ip) {
            throw EnrichError(Errc::BadAddress, "exit list line " + std::to_string(line_no) + ": bad address", line_no);
        }
        list.addresses.insert(*ip);
    }
    return list;
}

TorExitList TorExitList::load(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw EnrichError(Errc::Io, "cannot open " + path.string());
    return load(in);
}

NetType classify_network(const Endpoint& address, const TorExitList* exits)
{
    if (exits && exits->contains(address.ip())) return NetType::tor;
    return classify_address(address.ip());
}

GeoResolver::Resolution GeoResolver::resolve(const Endpoint::IpBytes& ip) const
{
    Resolution r;
    for (const auto& table : tables_) {
        auto info = table.lookup(ip);
        if (!info) continue;
        if (!r.info) {
            r.info = std::move(info);
        } else if (info->country != r.info->country || info->asn != r.info->asn) {
            r.disagreement = true;
        }
    }
    return r;
}

EnrichSummary enrich_snapshot(Snapshot& snapshot, const GeoResolver& resolver, const TorExitList* exits)
{
    EnrichSummary summary;
    for (auto& [ep, rec] : snapshot.records) {
        rec.net = classify_network(ep, exits);
        if (rec.net == NetType::tor) {
            rec.geo.reset();
            ++summary.tor;
            continue;
        }
        auto r = resolver.resolve(ep.ip());
        rec.geo = r.info;
        if (r.info) {
            ++summary.annotated;
        } else {
            ++summary.unknown;
        }
        if (r.disagreement) ++summary.disagreements;
    }
    return summary;
}

ShareReport aggregate_shares(const Snapshot& enriched)
{
    std::map<std::string, std::size_t> countries;
    std::map<std::string, std::size_t> orgs;
    ShareReport report;
    for (const auto* r : enriched.active_records()) {
        ++report.active;
        if (r->net == NetType::tor) {
            ++countries[std::string(kTorBucket)];
            ++orgs[std::string(kTorBucket)];
        } else if (r->geo) {
            ++countries[r->geo->country.empty() ? std::string(kUnknownBucket) : r->geo->country];
            ++orgs[r->geo->org.empty() ? std::string(kUnknownBucket) : r->geo->org];
        } else {
            ++countries[std::string(kUnknownBucket)];
            ++orgs[std::string(kUnknownBucket)];
        }
    }
    report.by_country = to_shares(countries, report.active);
    report.by_org = to_shares(orgs, report.active);
    return report;
}

ShareReport aggregate_shares(const Snapshot& snapshot, const GeoResolver& resolver, const TorExitList* exits)
{
    Snapshot copy = snapshot;
    enrich_snapshot(copy, resolver, exits);
    return aggregate_shares(copy);
}

SnapshotStats snapshot_stats(const Snapshot& snapshot)
{
    std::map<std::string, std::size_t> net, pver, ua, services;
    std::vector<double> rtts;
    auto active = snapshot.active_records();
    for (const auto* r : active) {
        ++net[std::string(to_string(r->net))];
        ++pver[std::to_string(r->protocol_version)];
        ++ua[r->user_agent];
        ++services[std::to_string(r->services)];
        if (r->min_rtt_ms) rtts.push_back(*r->min_rtt_ms);
    }
    SnapshotStats stats;
    stats.by_net = to_shares(net, active.size());
    stats.by_protocol_version = to_shares(pver, active.size());
    stats.by_user_agent = to_shares(ua, active.size());
    stats.by_services = to_shares(services, active.size());
    std::sort(rtts.begin(), rtts.end());
    for (std::size_t i = 0; i < rtts.size(); ++i) {
        stats.min_rtt_cdf.emplace_back(rtts[i], static_cast<double>(i + 1) / static_cast<double>(rtts.size()));
    }
    return stats;
}

} // namespace chainobs::enrich
