#include "chainobs/enrich.hpp"

#include "support/generators.hpp"
#include "support/oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <functional>
#include <set>
#include <sstream>

using namespace chainobs;
using namespace chainobs::enrich;

namespace {

Endpoint ep(const char* text)
{
    return *Endpoint::parse(text);
}

Endpoint::IpBytes ip(const char* text)
{
    return *Endpoint::parse_ip(text);
}

IpMetadataTable table_from(const std::string& csv)
{
    std::istringstream in(csv);
    return IpMetadataTable::load_csv(in);
}

Errc enrich_error(const std::function<void()>& f, std::size_t* line = nullptr)
{
    try {
        f();
    } catch (const EnrichError& e) {
        if (line) *line = e.line();
        return e.code();
    }
    FAIL("expected EnrichError");
    return Errc::Io;
}

PeerRecord active(const char* address)
{
    PeerRecord r;
    r.address = ep(address);
    r.status = PeerStatus::active;
    r.net = classify_address(r.address.ip());
    return r;
}

double share_sum(const std::vector<Share>& shares)
{
    double s = 0;
    for (const auto& x : shares) s += x.share;
    return s;
}

} // namespace

TEST_CASE("classify_network")
{
    CHECK(classify_network(ep("[::ffff:93.184.216.34]:8333")) == NetType::ipv4);
    CHECK(classify_network(ep("[fd87:d87e:eb43::1234]:8333")) == NetType::tor);
    CHECK(classify_network(ep("[2001:db8::1]:8333")) == NetType::ipv6);

    TorExitList exits;
    exits.addresses.insert(ip("2001:db8::1"));
    exits.addresses.insert(ip("93.184.216.34"));
    CHECK(classify_network(ep("[2001:db8::1]:8333"), &exits) == NetType::tor);
    CHECK(classify_network(ep("93.184.216.34:18333"), &exits) == NetType::tor);
    CHECK(classify_network(ep("[2001:db8::2]:8333"), &exits) == NetType::ipv6);
}

TEST_CASE("prefix parsing")
{
    auto p = Prefix::parse("10.1.0.0/16");
    REQUIRE(p);
    CHECK(p->length == 112);
    CHECK(p->contains(ip("10.1.200.3")));
    CHECK_FALSE(p->contains(ip("10.2.0.1")));
    CHECK(Prefix::parse("2001:db8::/32")->length == 32);
    CHECK(Prefix::parse("0.0.0.0/0"));
    CHECK_FALSE(Prefix::parse("10.1.0.1/16"));
    CHECK_FALSE(Prefix::parse("10.0.0.0/33"));
    CHECK_FALSE(Prefix::parse("10.0.0.0"));
    CHECK_FALSE(Prefix::parse("2001:db8::/129"));
    CHECK_FALSE(Prefix::parse("10.0.0.0/x"));
}

TEST_CASE("longest-prefix lookup")
{
    auto table = table_from("10.0.0.0/8,US,64500,TestNet\n10.1.0.0/16,DE,64501,TestNet2\n");
    auto hit = table.lookup(ip("10.1.2.3"));
    REQUIRE(hit);
    CHECK(*hit == GeoInfo{"DE", 64501, "TestNet2"});
    CHECK(table.lookup(ip("10.200.0.1"))->country == "US");
    CHECK_FALSE(table.lookup(ip("192.168.0.1")));
}

TEST_CASE("table CSV loading")
{
    auto table = table_from(
        "# comment\nprefix,country,asn,org\n10.0.0.0/8,US,AS64500,\"Comma, Inc.\"\n2001:db8::/32,JP,64510,Six\n");
    CHECK(table.size() == 2);
    CHECK(table.lookup(ip("10.0.0.1"))->org == "Comma, Inc.");
    CHECK(table.lookup(ip("2001:db8::99"))->asn == 64510);

    std::size_t line = 0;
    CHECK(enrich_error([] { table_from("10.0.0.0/8,US,1,a\n10.0.0.0/8,DE,2,b\n"); }, &line) == Errc::DuplicatePrefix);
    CHECK(line == 2);
    CHECK(enrich_error([] { table_from("10.0.0.1/8,US,1,a\n"); }) == Errc::InvalidPrefix);
    CHECK(enrich_error([] { table_from("10.0.0.0/8,US,ASX,a\n"); }) == Errc::BadRow);
    CHECK(enrich_error([] { table_from("10.0.0.0/8,US\n"); }) == Errc::BadRow);
}

TEST_CASE("lookup equals the linear-scan oracle on random tables")
{
    gen::Rng rng(99);
    for (int t = 0; t < 5; ++t) {
        IpMetadataTable table;
        std::vector<oracle::PrefixRow> rows;
        std::set<std::pair<Endpoint::IpBytes, int>> used;
        for (int i = 0; i < 400; ++i) {
            bool v4 = gen::chance(rng, 0.6);
            Endpoint::IpBytes net{};
            int length;
            if (v4) {
                net = Endpoint::from_ipv4(0x0a000000 | static_cast<std::uint32_t>(gen::uniform(rng, 0, 0xffffff)), 0).ip();
                length = 96 + static_cast<int>(gen::uniform(rng, 8, 32));
            } else {
                net = ip("2001:db8::");
                for (std::size_t k = 4; k < 16; ++k) net[k] = static_cast<std::uint8_t>(gen::uniform(rng, 0, 3));
                length = static_cast<int>(gen::uniform(rng, 32, 128));
            }
            for (int bit = length; bit < 128; ++bit) net[static_cast<std::size_t>(bit / 8)] &= static_cast<std::uint8_t>(~(0x80 >> (bit % 8)));
            if (!used.insert({net, length}).second) continue;
            std::string cc = "C" + std::to_string(i);
            table.insert(Prefix{net, length}, GeoInfo{cc, static_cast<std::uint32_t>(i), "org"});
            rows.push_back({net, length, cc});
        }
        for (int q = 0; q < 2000; ++q) {
            Endpoint::IpBytes query;
            if (gen::chance(rng, 0.6)) {
                query = Endpoint::from_ipv4(0x0a000000 | static_cast<std::uint32_t>(gen::uniform(rng, 0, 0xffffff)), 0).ip();
            } else {
                query = ip("2001:db8::");
                for (std::size_t k = 4; k < 16; ++k) query[k] = static_cast<std::uint8_t>(gen::uniform(rng, 0, 3));
            }
            auto got = table.lookup(query);
            auto want = oracle::lpm_linear(rows, query);
            REQUIRE(got.has_value() == want.has_value());
            if (got) CHECK(got->country == *want);
        }
    }
}

TEST_CASE("tor exit list formats")
{
    std::istringstream in("# fetched_at 1600000000\nExitNode ABCDEF\nPublished 2020-01-01 00:00:00\n"
                          "ExitAddress 10.9.9.9 2020-01-01 00:00:00\n2001:db8::5\n\n");
    auto list = TorExitList::load(in);
    CHECK(list.fetched_at == 1600000000);
    CHECK(list.addresses.size() == 2);
    CHECK(list.contains(ip("10.9.9.9")));
    CHECK(list.contains(ip("2001:db8::5")));

    std::istringstream bad("10.9.9.9\nnot-an-ip\n");
    std::size_t line = 0;
    CHECK(enrich_error([&] { TorExitList::load(bad); }, &line) == Errc::BadAddress);
    CHECK(line == 2);
}

TEST_CASE("enrich_snapshot and shares")
{
    auto table = table_from("10.0.0.0/8,US,64500,Big\n10.1.0.0/16,DE,64501,Small\n");
    Snapshot s;
    for (auto* a : {"10.0.0.1", "10.0.0.2", "10.1.0.1", "192.168.1.1"}) s.records.emplace(ep(a), active(a));
    auto inactive = active("10.0.0.3");
    inactive.status = PeerStatus::discovered_inactive;
    s.records.emplace(inactive.address, inactive);

    GeoResolver resolver({table});
    auto summary = enrich_snapshot(s, resolver);
    CHECK(summary.annotated == 4);
    CHECK(summary.unknown == 1);
    CHECK(s.records.at(ep("10.1.0.1")).geo->country == "DE");
    CHECK_FALSE(s.records.at(ep("192.168.1.1")).geo);

    auto shares = aggregate_shares(s);
    CHECK(shares.active == 4);
    REQUIRE(shares.by_country.size() == 3);
    CHECK(shares.by_country[0].label == "US");
    CHECK(shares.by_country[0].share == 0.5);
    CHECK(shares.by_country[1].label == "DE");
    CHECK(shares.by_country[1].share == 0.25);
    CHECK(shares.by_country[2].label == "unknown");
    CHECK(shares.by_country[2].share == 0.25);

    Snapshot empty;
    CHECK(aggregate_shares(empty).by_country.empty());
}

TEST_CASE("tor nodes form their own bucket and get no geo")
{
    auto table = table_from("10.0.0.0/8,US,64500,Big\n");
    Snapshot s;
    for (auto* a : {"10.0.0.1", "10.0.0.2", "[fd87:d87e:eb43::1]:8333"}) s.records.emplace(ep(a), active(a));
    TorExitList exits;
    exits.addresses.insert(ip("10.0.0.2"));
    auto summary = enrich_snapshot(s, GeoResolver({table}), &exits);
    CHECK(summary.tor == 2);
    CHECK_FALSE(s.records.at(ep("10.0.0.2")).geo);
    CHECK(s.records.at(ep("10.0.0.2")).net == NetType::tor);
    auto shares = aggregate_shares(s);
    REQUIRE(shares.by_country.size() == 2);
    CHECK(shares.by_country[0].label == "tor");
    CHECK(shares.by_country[0].count == 2);
}

TEST_CASE("first table wins and disagreements are counted")
{
    auto a = table_from("10.0.0.0/8,US,64500,A\n");
    auto b = table_from("10.0.0.0/8,NL,64999,B\n10.5.0.0/16,US,64500,A\n");
    Snapshot s;
    for (auto* x : {"10.0.0.1", "10.5.0.1"}) s.records.emplace(ep(x), active(x));
    auto summary = enrich_snapshot(s, GeoResolver({a, b}));
    CHECK(summary.disagreements == 1);
    CHECK(s.records.at(ep("10.0.0.1")).geo->country == "US");
}

TEST_CASE("shares sum to one and survive relabeling")
{
    gen::Rng rng(5);
    for (int round = 0; round < 50; ++round) {
        std::string csv;
        for (int i = 0; i < 8; ++i) csv += "10." + std::to_string(i) + ".0.0/16,C" + std::to_string(gen::uniform(rng, 0, 3)) + "," + std::to_string(i) + ",O" + std::to_string(i) + "\n";
        auto table = table_from(csv);
        Snapshot s;
        auto n = gen::uniform(rng, 1, 60);
        for (std::uint64_t i = 0; i < n; ++i) {
            auto addr = Endpoint::from_ipv4(0x0a000000 | static_cast<std::uint32_t>(gen::uniform(rng, 0, 0xfffff)), 8333);
            PeerRecord r;
            r.address = addr;
            r.status = gen::chance(rng, 0.7) ? PeerStatus::active : PeerStatus::discovered_inactive;
            s.records.emplace(addr, r);
        }
        auto report = aggregate_shares(s, GeoResolver({table}));
        if (report.active == 0) continue;
        CHECK(std::abs(share_sum(report.by_country) - 1.0) <= 1e-12);
        CHECK(std::abs(share_sum(report.by_org) - 1.0) <= 1e-12);
        for (std::size_t i = 1; i < report.by_country.size(); ++i) {
            CHECK(report.by_country[i - 1].count >= report.by_country[i].count);
        }

        // relabel every country: counts per bucket are unchanged
        std::string renamed = csv;
        for (char& c : renamed) {
            if (c == 'C') c = 'K';
        }
        auto relabeled = aggregate_shares(s, GeoResolver({table_from(renamed)}));
        std::multiset<std::size_t> before, after;
        for (const auto& x : report.by_country) before.insert(x.count);
        for (const auto& x : relabeled.by_country) after.insert(x.count);
        CHECK(before == after);
        CHECK(std::abs(share_sum(relabeled.by_country) - 1.0) <= 1e-12);
    }
}

TEST_CASE("snapshot statistics")
{
    Snapshot s;
    auto a = active("10.0.0.1");
    a.protocol_version = 70015;
    a.min_rtt_ms = 30;
    auto b = active("10.0.0.2");
    b.protocol_version = 70015;
    b.min_rtt_ms = 10;
    auto c = active("[2001:db8::1]:8333");
    c.protocol_version = 70002;
    for (const auto& r : {a, b, c}) s.records.emplace(r.address, r);
    auto stats = snapshot_stats(s);
    REQUIRE(stats.by_protocol_version.size() == 2);
    CHECK(stats.by_protocol_version[0].label == "70015");
    CHECK(stats.by_net[0].label == "ipv4");
    REQUIRE(stats.min_rtt_cdf.size() == 2);
    CHECK(stats.min_rtt_cdf[0] == std::pair<double, double>{10, 0.5});
    CHECK(stats.min_rtt_cdf[1] == std::pair<double, double>{30, 1.0});
}
