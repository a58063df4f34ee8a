#include "../tools/cli.hpp"

#include "chainobs/ledger.hpp"
#include "chainobs/snapshotstore.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace chainobs;
namespace fs = std::filesystem;

namespace {

const fs::path kData = CHAINOBS_TEST_DATA;

struct Result {
    int code = 0;
    std::string out;
    std::string err;
};

Result run(std::vector<std::string> args)
{
    std::ostringstream out, err;
    Result r;
    r.code = cli::run(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("chainobs_cli_" + name))
    {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& leaf) const { return (path / leaf).string(); }
};

std::string slurp(const std::string& path)
{
    std::ifstream in(path);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

std::vector<std::string> lines(const std::string& text)
{
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
}

Result sim_crawl(const std::string& out_path)
{
    return run({"crawl", "--transport", "sim", "--topology", (kData / "topology.txt").string(), "--seeds",
                (kData / "seeds.txt").string(), "--out", out_path});
}

} // namespace

TEST_CASE("usage errors exit 1")
{
    CHECK(run({"crawl", "--bogus"}).code == cli::kExitUsage);
    CHECK(run({"nosuchcommand"}).code == cli::kExitUsage);
    CHECK(run({}).code == cli::kExitUsage);
    CHECK(run({"report", "--ledger", "/nonexistent/file.ldg"}).code == cli::kExitUsage);
    CHECK(run({"report"}).code == cli::kExitUsage);
    CHECK(run({"report", "--ledger", (kData / "tiny.ldg").string(), "--bucket", "weekly"}).code == cli::kExitUsage);
    CHECK(run({"crawl", "--transport", "sim", "--topology", (kData / "topology.txt").string()}).code ==
          cli::kExitUsage);
    auto bad = run({"crawl", "--bogus"});
    CHECK(bad.err.find("Usage") != std::string::npos);
}

TEST_CASE("crawl over the simulated transport writes a readable snapshot")
{
    TempDir dir("crawl");
    auto r = sim_crawl(dir / "s.ndrec");
    REQUIRE(r.code == cli::kExitOk);
    CHECK(r.out == dir / "s.ndrec" + ",6,4\n");
    auto snap = store::read_snapshot(fs::path(dir / "s.ndrec"));
    CHECK(snap.total_count() == 6);
    CHECK(snap.active_count() == 4);

    // same inputs, same bytes
    REQUIRE(sim_crawl(dir / "t.ndrec").code == cli::kExitOk);
    CHECK(slurp(dir / "s.ndrec") == slurp(dir / "t.ndrec"));
}

TEST_CASE("enrich writes annotations and shares")
{
    TempDir dir("enrich");
    REQUIRE(sim_crawl(dir / "s.ndrec").code == cli::kExitOk);
    auto r = run({"enrich", "--in", dir / "s.ndrec", "--table", (kData / "geo.csv").string(), "--exits",
                  (kData / "exits.txt").string(), "--out", dir / "e.ndrec"});
    REQUIRE(r.code == cli::kExitOk);
    CHECK(r.out.starts_with("dimension,label,count,share\n"));
    CHECK(r.out.find("country,US,4,1\n") != std::string::npos);
    CHECK(r.err.find("annotated 6") != std::string::npos);
    auto snap = store::read_snapshot(fs::path(dir / "e.ndrec"));
    for (const auto& [ep, rec] : snap.records) {
        REQUIRE(rec.geo);
        CHECK(rec.geo->asn == 64500);
    }
}

TEST_CASE("repeated crawls feed timeline and bni")
{
    TempDir dir("series");
    auto r = run({"crawl", "--transport", "sim", "--topology", (kData / "topology.txt").string(), "--out-dir",
                  dir / "snaps", "--repeat", "30", "--iterations", "3"});
    REQUIRE(r.code == cli::kExitOk);
    CHECK(lines(r.out).size() == 3);

    auto t = run({"timeline", "--dir", dir / "snaps", "--size-out", dir / "size.csv"});
    REQUIRE(t.code == cli::kExitOk);
    auto churn = lines(t.out);
    REQUIRE(churn.size() == 5);
    CHECK(churn[0] == "address,sessions,mean_connection_s,flaps,availability");
    CHECK(churn[1].ends_with(",1,5400,0,1"));
    auto size = lines(slurp(dir / "size.csv"));
    REQUIRE(size.size() == 4);
    CHECK(size[1].ends_with(",4,0,0,4"));

    auto b = run({"bni", "--dir", dir / "snaps", "--out", dir / "bni.csv"});
    REQUIRE(b.code == cli::kExitOk);
    auto rows = lines(slurp(dir / "bni.csv"));
    REQUIRE(rows.size() == 5);
    CHECK(rows[0].starts_with("address,version_index,"));

    fs::create_directories(dir / "empty");
    CHECK(run({"bni", "--dir", dir / "empty"}).code == cli::kExitData);
}

TEST_CASE("cluster and report on the fixture ledger")
{
    TempDir dir("ledger");
    auto c = run({"cluster", "--ledger", (kData / "tiny.ldg").string(), "--partition-out", dir / "p.csv", "--threads",
                  "2"});
    REQUIRE(c.code == cli::kExitOk);
    CHECK(c.out == "entity,address_count,balance_sat\nA,4,4000000000\nE,1,10000000000\nF,1,6000000000\n");
    CHECK(lines(slurp(dir / "p.csv")).size() == 7);

    auto r = run({"report", "--ledger", (kData / "tiny.ldg").string(), "--lorenz-out", dir / "l.csv"});
    REQUIRE(r.code == cli::kExitOk);
    auto top = lines(r.out);
    REQUIRE(top.size() == 4);
    CHECK(top[0] == "rank,entity,address_count,balance_sat,cumulative_share");
    CHECK(top[1] == "1,E,1,10000000000,0.5");
    CHECK(top[3] == "3,A,4,4000000000,1");
    CHECK(r.err.find("gini") != std::string::npos);
    CHECK(lines(slurp(dir / "l.csv")).size() == 5);

    std::ofstream(dir / "b.csv") << c.out;
    auto from_balances = run({"report", "--balances", dir / "b.csv"});
    REQUIRE(from_balances.code == cli::kExitOk);
    CHECK(from_balances.out == r.out);

    auto m = run({"report", "--ledger", (kData / "tiny.ldg").string(), "--tags", (kData / "tags.txt").string(),
                  "--mining-out", dir / "m.csv"});
    REQUIRE(m.code == cli::kExitOk);
    auto mining = slurp(dir / "m.csv");
    CHECK(mining.find("2019-01,SlushPool,1,") != std::string::npos);
    CHECK(mining.find("2019-02,DPool,1,1") != std::string::npos);
}

TEST_CASE("bad data exits 2")
{
    TempDir dir("bad");
    std::ofstream(dir / "bad.ldg") << "not,a,ledger\n";
    auto r = run({"cluster", "--ledger", dir / "bad.ldg"});
    CHECK(r.code == cli::kExitData);
    CHECK_FALSE(r.err.empty());

    std::ofstream(dir / "bad.ndrec") << "schema:9\n";
    CHECK(run({"enrich", "--in", dir / "bad.ndrec", "--out", dir / "x"}).code == cli::kExitData);

    std::ofstream(dir / "neg.ldg") << std::string(63, '0') + "1,1,0,0,,A:5,B:5\n";
    CHECK(run({"report", "--ledger", dir / "neg.ldg"}).code == cli::kExitData);
}

TEST_CASE("sim agrees with the oracle and is deterministic")
{
    TempDir dir("sim");
    auto a = run({"sim", "--peers", "300", "--rng-seed", "5", "--write-topology", dir / "t.txt"});
    REQUIRE(a.code == cli::kExitOk);
    CHECK(a.out.find("active_matches_oracle,1") != std::string::npos);
    CHECK(a.out.find("discovered_covers_oracle,1") != std::string::npos);
    auto b = run({"sim", "--topology", dir / "t.txt"});
    REQUIRE(b.code == cli::kExitOk);
    auto strip = [](const std::string& s) { return s.substr(0, s.find("seconds,")); };
    CHECK(strip(a.out) == strip(b.out));
}

TEST_CASE("installed binary maps errors to exit codes")
{
    auto status = [](const std::string& args) {
        int raw = std::system((std::string(CHAINOBS_BINARY) + " " + args + " >/dev/null 2>&1").c_str());
        return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    };
    CHECK(status("--help") == 0);
    CHECK(status("report --ledger " + (kData / "tiny.ldg").string()) == 0);
    CHECK(status("report --nope") == 1);
    CHECK(status("cluster --ledger " + (kData / "tags.txt").string()) == 2);
}
