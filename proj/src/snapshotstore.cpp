#include "chainobs/snapshotstore.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace chainobs::store {

namespace {

constexpr char kHex[] = "0123456789abcdef";

template <typename T>
std::optional<T> parse_number(std::string_view text)
{
    T value{};
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty()) return std::nullopt;
    return value;
}

std::string format_double(double v)
{
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

using Fields = std::map<std::string, std::string, std::less<>>;

std::optional<Fields> split_record(std::string_view line)
{
    Fields fields;
    std::size_t start = 0;
    while (start <= line.size()) {
        auto tab = line.find('\t', start);
        auto item = line.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start);
        auto colon = item.find(':');
        if (colon == std::string_view::npos || colon == 0) return std::nullopt;
        fields.emplace(std::string(item.substr(0, colon)), std::string(item.substr(colon + 1)));
        if (tab == std::string_view::npos) break;
        start = tab + 1;
    }
    return fields;
}

class RecordParser {
public:
    RecordParser(const Fields& fields, std::size_t line) : fields_(fields), line_(line) {}

    const std::string& required(std::string_view key) const
    {
        auto it = fields_.find(key);
        if (it == fields_.end()) fail("missing field '" + std::string(key) + "'");
        return it->second;
    }

    const std::string* optional(std::string_view key) const
    {
        auto it = fields_.find(key);
        return it == fields_.end() ? nullptr : &it->second;
    }

    template <typename T>
    T number(std::string_view key) const
    {
        auto v = parse_number<T>(required(key));
        if (!v) fail("bad number in '" + std::string(key) + "'");
        return *v;
    }

    [[noreturn]] void fail(const std::string& why) const
    {
        throw StoreError(Errc::CorruptRecord, "line " + std::to_string(line_) + ": " + why, line_);
    }

private:
    const Fields& fields_;
    std::size_t line_;
};

std::string join_endpoints(const std::vector<Endpoint>& eps)
{
    std::string out;
    for (const auto& e : eps) {
        if (!out.empty()) out += ',';
        out += e.to_string();
    }
    return out;
}

} // namespace

std::string escape_field(std::string_view raw)
{
    std::string out;
    out.reserve(raw.size());
    for (char ch : raw) {
        auto c = static_cast<unsigned char>(ch);
        switch (c) {
        case '\\': out += "\\\\"; break;
        case '\t': out += "\\t"; break;
        case '\n': out += "\\n"; break;
        case '\r': out += "\\r"; break;
        default:
            if (c < 0x20 || c >= 0x7f) {
                out += "\\x";
                out += kHex[c >> 4];
                out += kHex[c & 0x0f];
            } else {
                out += ch;
            }
        }
    }
    return out;
}

std::string unescape_field(std::string_view escaped)
{
    std::string out;
    out.reserve(escaped.size());
    for (std::size_t i = 0; i < escaped.size(); ++i) {
        char c = escaped[i];
        if (c != '\\') {
            out += c;
            continue;
        }
        if (++i >= escaped.size()) throw std::invalid_argument("dangling escape");
        switch (escaped[i]) {
        case '\\': out += '\\'; break;
        case 't': out += '\t'; break;
        case 'n': out += '\n'; break;
        case 'r': out += '\r'; break;
        case 'x': {
            if (i + 2 >= escaped.size()) throw std::invalid_argument("short \\x escape");
            unsigned value = 0;
            auto [ptr, ec] = std::from_chars(escaped.data() + i + 1, escaped.data() + i + 3, value, 16);
            if (ec != std::errc{} || ptr != escaped.data() + i + 3) throw std::invalid_argument("bad \\x escape");
            out += static_cast<char>(value);
            i += 2;
            break;
        }
        default: throw std::invalid_argument("unknown escape");
        }
    }
    return out;
}

void write_snapshot(const Snapshot& snapshot, std::ostream& out)
{
    out << "schema:" << kSchemaVersion << "\tstarted_at:" << snapshot.started_at
        << "\tfinished_at:" << snapshot.finished_at << "\tseed_count:" << snapshot.seeds.size()
        << "\tdigest:" << snapshot.config_digest << "\tpartial:" << (snapshot.partial ? 1 : 0)
        << "\tseeds:" << join_endpoints(snapshot.seeds) << '\n';

    std::vector<std::pair<std::string, const PeerRecord*>> sorted;
    sorted.reserve(snapshot.records.size());
    for (const auto& [ep, rec] : snapshot.records) sorted.emplace_back(ep.to_string(), &rec);
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

    for (const auto& [_, r] : sorted) {
        out << "addr:" << r->address.ip_string() << "\tport:" << r->address.port() << "\tnet:" << to_string(r->net)
            << "\tstatus:" << to_string(r->status) << "\tservices:" << r->services << "\tpver:" << r->protocol_version
            << "\tua:" << escape_field(r->user_agent) << "\theight:" << r->start_height;
        if (r->min_rtt_ms) out << "\tminrtt:" << format_double(*r->min_rtt_ms);
        out << "\tfirst_seen:" << r->first_seen << "\tlast_seen:" << r->last_seen << "\tnaddr:" << r->addr_count_returned;
        if (!r->note.empty()) out << "\tnote:" << escape_field(r->note);
        if (r->geo) {
            out << "\tcc:" << escape_field(r->geo->country) << "\tasn:" << r->geo->asn
                << "\torg:" << escape_field(r->geo->org);
        }
        out << '\n';
    }
}

void write_snapshot(const Snapshot& snapshot, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw StoreError(Errc::Io, "cannot write " + path.string());
    write_snapshot(snapshot, out);
    out.flush();
    if (!out) throw StoreError(Errc::Io, "write failed for " + path.string());
}

Snapshot read_snapshot(std::istream& in)
{
    Snapshot snap;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;

    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;

        auto fields = split_record(line);
        if (!fields) throw StoreError(Errc::CorruptRecord, "line " + std::to_string(line_no) + ": malformed", line_no);
        RecordParser p(*fields, line_no);

        if (!have_header) {
            auto schema = p.optional("schema");
            if (!schema) p.fail("header must come first");
            auto version = parse_number<int>(*schema);
            if (!version || *version != kSchemaVersion) {
                throw StoreError(Errc::SchemaVersionUnsupported, "unsupported schema version '" + *schema + "'");
            }
            snap.started_at = p.number<std::int64_t>("started_at");
            snap.finished_at = p.number<std::int64_t>("finished_at");
            snap.config_digest = p.required("digest");
            snap.partial = p.number<int>("partial") != 0;
            auto seed_count = p.number<std::size_t>("seed_count");
            if (auto seeds = p.optional("seeds"); seeds && !seeds->empty()) {
                std::string_view rest = *seeds;
                while (!rest.empty()) {
                    auto comma = rest.find(',');
                    auto ep = Endpoint::parse(rest.substr(0, comma));
                    if (!ep) p.fail("bad seed endpoint");
                    snap.seeds.push_back(*ep);
                    rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
                }
            }
            if (snap.seeds.size() != seed_count) p.fail("seed_count does not match seeds");
            have_header = true;
            continue;
        }

        PeerRecord r;
        auto ip = Endpoint::parse_ip(p.required("addr"));
        if (!ip) p.fail("bad addr");
        r.address = Endpoint(*ip, p.number<std::uint16_t>("port"));
        auto net = parse_net_type(p.required("net"));
        if (!net) p.fail("bad net");
        r.net = *net;
        auto status = parse_peer_status(p.required("status"));
        if (!status) p.fail("bad status");
        r.status = *status;
        r.services = p.number<std::uint64_t>("services");
        r.protocol_version = p.number<std::int32_t>("pver");
        r.start_height = p.number<std::int32_t>("height");
        r.first_seen = p.number<std::int64_t>("first_seen");
        r.last_seen = p.number<std::int64_t>("last_seen");
        if (p.optional("minrtt")) r.min_rtt_ms = p.number<double>("minrtt");
        if (p.optional("naddr")) r.addr_count_returned = p.number<std::uint32_t>("naddr");
        try {
            r.user_agent = unescape_field(p.required("ua"));
            if (auto note = p.optional("note")) r.note = unescape_field(*note);
            if (auto cc = p.optional("cc")) {
                GeoInfo geo;
                geo.country = unescape_field(*cc);
                geo.asn = p.number<std::uint32_t>("asn");
                geo.org = unescape_field(p.required("org"));
                r.geo = std::move(geo);
            }
        } catch (const std::invalid_argument& e) {
            p.fail(e.what());
        }
        if (!snap.records.emplace(r.address, r).second) p.fail("duplicate address");
    }
    if (!have_header) throw StoreError(Errc::CorruptRecord, "missing header", 1);
    return snap;
}

Snapshot read_snapshot(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw StoreError(Errc::Io, "cannot open " + path.string());
    return read_snapshot(in);
}

std::vector<Snapshot> read_snapshot_series(const std::filesystem::path& dir)
{
    std::vector<std::filesystem::path> files;
    std::error_code ec;
    for (const auto& entry : std::filesystem::directory_iterator(dir, ec)) {
        auto name = entry.path().filename().string();
        if (entry.is_regular_file() && name.ends_with(kSnapshotExtension)) files.push_back(entry.path());
    }
    if (ec) throw StoreError(Errc::Io, "cannot list " + dir.string() + ": " + ec.message());
    std::sort(files.begin(), files.end());

    std::vector<Snapshot> series;
    series.reserve(files.size());
    for (const auto& f : files) series.push_back(read_snapshot(f));
    std::stable_sort(series.begin(), series.end(),
                     [](const Snapshot& a, const Snapshot& b) { return a.started_at < b.started_at; });
    return series;
}

std::string timestamped_name(std::int64_t unix_seconds)
{
    using namespace std::chrono;
    sys_seconds tp{seconds{unix_seconds}};
    auto day = floor<days>(tp);
    year_month_day ymd{day};
    hh_mm_ss hms{tp - day};
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%04d%02u%02uT%02ld%02ld%02ldZ", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                  static_cast<long>(hms.hours().count()), static_cast<long>(hms.minutes().count()),
                  static_cast<long>(hms.seconds().count()));
    return std::string(buf) + std::string(kSnapshotExtension);
}

SnapshotDiff diff(const Snapshot& a, const Snapshot& b)
{
    if (a.started_at > b.started_at) throw StoreError(Errc::OutOfOrder, "snapshots out of order");
    std::set<Endpoint> active_a;
    std::set<Endpoint> active_b;
    for (const auto& [ep, r] : a.records) {
        if (r.active()) active_a.insert(ep);
    }
    for (const auto& [ep, r] : b.records) {
        if (r.active()) active_b.insert(ep);
    }
    SnapshotDiff d;
    std::set_difference(active_b.begin(), active_b.end(), active_a.begin(), active_a.end(),
                        std::inserter(d.joined, d.joined.end()));
    std::set_difference(active_a.begin(), active_a.end(), active_b.begin(), active_b.end(),
                        std::inserter(d.left, d.left.end()));
    std::set_intersection(active_a.begin(), active_a.end(), active_b.begin(), active_b.end(),
                          std::inserter(d.stayed, d.stayed.end()));
    return d;
}

} // namespace chainobs::store
