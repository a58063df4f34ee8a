#include "cli.hpp"

#include "chainobs/crawler.hpp"
#include "chainobs/csv.hpp"
#include "chainobs/enrich.hpp"
#include "chainobs/ledger.hpp"
#include "chainobs/metrics.hpp"
#include "chainobs/simnet.hpp"
#include "chainobs/snapshotstore.hpp"
#include "chainobs/tcp_transport.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <chrono>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <thread>

namespace chainobs::cli {

namespace {

namespace fs = std::filesystem;

// Writes to the file if a path was given, else to the fallback stream.
class Sink {
public:
    Sink(const std::string& path, std::ostream& fallback)
    {
        if (path.empty()) {
            stream_ = &fallback;
        } else {
            file_ = std::make_unique<std::ofstream>(path);
            if (!*file_) throw std::runtime_error("cannot write " + path);
            stream_ = file_.get();
        }
    }
    std::ostream& operator*() { return *stream_; }

private:
    std::unique_ptr<std::ofstream> file_;
    std::ostream* stream_ = nullptr;
};

struct CrawlOptions {
    std::string seeds;
    std::vector<std::string> dns;
    std::string out;
    std::string out_dir;
    std::string transport = "tcp";
    std::string topology;
    std::string magic;
    double repeat_minutes = 0;
    std::size_t iterations = 0;
    crawler::CrawlConfig config;
};

wire::Magic parse_magic(const std::string& name)
{
    if (name == "mainnet") return wire::kMainnetMagic;
    if (name == "simnet") return wire::kSimnetMagic;
    throw CLI::ValidationError("--magic", "expected mainnet or simnet");
}

int run_crawl(CrawlOptions& o, std::ostream& out, std::ostream& err)
{
    if (o.out.empty() == o.out_dir.empty()) {
        err << "crawl: give exactly one of --out or --out-dir\n";
        return kExitUsage;
    }
    if (o.repeat_minutes > 0 && o.out_dir.empty()) {
        err << "crawl: --repeat writes timestamped files and needs --out-dir\n";
        return kExitUsage;
    }
    bool sim = o.transport == "sim";
    if (sim && o.topology.empty()) {
        err << "crawl: --transport sim needs --topology\n";
        return kExitUsage;
    }

    std::shared_ptr<Transport> transport;
    std::vector<Endpoint> default_seeds;
    if (sim) {
        auto net = simnet::build_network(simnet::load_topology(o.topology));
        default_seeds = net->topology().seed_ids;
        transport = net;
    } else {
        transport = std::make_shared<TcpTransport>();
    }
    auto& config = o.config;
    config.magic = o.magic.empty() ? (sim ? wire::kSimnetMagic : wire::kMainnetMagic) : parse_magic(o.magic);

    crawler::SeedSource source;
    if (!o.seeds.empty()) source.file = o.seeds;
    source.dns_names = o.dns;
    config.seeds = (source.file || !source.dns_names.empty()) ? crawler::bootstrap_seeds(source) : default_seeds;

    // Simulated crawls run on a virtual wall clock so output is reproducible.
    std::int64_t sim_now = simnet::kSimEpoch;
    if (sim) config.clock = [&sim_now] { return sim_now; };

    auto period = std::chrono::duration<double, std::ratio<60>>(o.repeat_minutes);
    std::size_t iterations = o.repeat_minutes > 0 ? o.iterations : 1;
    for (std::size_t i = 0; iterations == 0 || i < iterations; ++i) {
        auto started = std::chrono::steady_clock::now();
        auto snapshot = crawler::crawl(config, *transport);
        fs::path target = o.out.empty() ? fs::path(o.out_dir) / store::timestamped_name(snapshot.started_at)
                                        : fs::path(o.out);
        if (!o.out_dir.empty()) fs::create_directories(o.out_dir);
        store::write_snapshot(snapshot, target);
        out << target.string() << ',' << snapshot.total_count() << ',' << snapshot.active_count() << '\n';
        if (o.repeat_minutes <= 0 || (iterations != 0 && i + 1 == iterations)) break;
        if (sim) {
            sim_now += static_cast<std::int64_t>(o.repeat_minutes * 60);
        } else {
            std::this_thread::sleep_until(started + std::chrono::duration_cast<std::chrono::steady_clock::duration>(period));
        }
    }
    return kExitOk;
}

struct EnrichOptions {
    std::string in;
    std::vector<std::string> tables;
    std::string exits;
    std::string out;
    std::string shares_out;
};

int run_enrich(const EnrichOptions& o, std::ostream& out, std::ostream& err)
{
    auto snapshot = store::read_snapshot(fs::path(o.in));
    std::vector<enrich::IpMetadataTable> tables;
    for (const auto& t : o.tables) tables.push_back(enrich::IpMetadataTable::load_csv(fs::path(t)));
    std::optional<enrich::TorExitList> exits;
    if (!o.exits.empty()) exits = enrich::TorExitList::load(fs::path(o.exits));

    auto summary = enrich::enrich_snapshot(snapshot, enrich::GeoResolver(std::move(tables)), exits ? &*exits : nullptr);
    store::write_snapshot(snapshot, fs::path(o.out));
    err << "annotated " << summary.annotated << ", unknown " << summary.unknown << ", tor " << summary.tor
        << ", table disagreements " << summary.disagreements << '\n';

    Sink sink(o.shares_out, out);
    auto report = enrich::aggregate_shares(snapshot);
    auto stats = enrich::snapshot_stats(snapshot);
    csv::write_row(*sink, {"dimension", "label", "count", "share"});
    auto emit = [&](std::string_view dim, const std::vector<enrich::Share>& shares) {
        for (const auto& s : shares) {
            csv::write_row(*sink, {std::string(dim), s.label, std::to_string(s.count), csv::format_double(s.share)});
        }
    };
    emit("country", report.by_country);
    emit("org", report.by_org);
    emit("net", stats.by_net);
    emit("protocol_version", stats.by_protocol_version);
    emit("user_agent", stats.by_user_agent);
    emit("services", stats.by_services);
    return kExitOk;
}

struct SeriesOptions {
    std::string dir;
    std::int64_t interval = 1800;
    std::string out;
    std::string size_out;
    metrics::BniParams params;
};

void report_missing(const metrics::TimelineSet& t, std::ostream& err)
{
    if (t.missing_slots.empty()) return;
    err << "warning: " << t.missing_slots.size() << " of " << t.slot_count
        << " grid slots have no snapshot and were imputed inactive\n";
}

int run_timeline(const SeriesOptions& o, std::ostream& out, std::ostream& err)
{
    auto series = store::read_snapshot_series(fs::path(o.dir));
    if (series.empty()) {
        err << "timeline: no snapshots in " << o.dir << '\n';
        return kExitData;
    }
    auto timelines = metrics::build_timelines(series, o.interval);
    report_missing(timelines, err);
    {
        Sink sink(o.out, out);
        metrics::write_churn_csv(*sink, timelines);
    }
    if (!o.size_out.empty()) {
        Sink sink(o.size_out, out);
        metrics::write_size_csv(*sink, metrics::network_size_series(series));
    }
    return kExitOk;
}

int run_bni(const SeriesOptions& o, std::ostream& out, std::ostream& err)
{
    auto series = store::read_snapshot_series(fs::path(o.dir));
    if (series.empty()) {
        err << "bni: no snapshots in " << o.dir << '\n';
        return kExitData;
    }
    report_missing(metrics::build_timelines(series, o.interval), err);
    auto scores = metrics::bni_report(series, o.interval, o.params);
    Sink sink(o.out, out);
    metrics::write_bni_csv(*sink, scores);
    return kExitOk;
}

struct LedgerOptions {
    std::string ledger;
    std::string balances;
    ledger::CoinJoinParams coinjoin;
    unsigned threads = 1;
    std::string balances_out;
    std::string partition_out;
    std::size_t top = 100;
    std::string lorenz_out;
    std::string tags;
    std::string mining_out;
    std::string bucket = "month";
};

std::vector<ledger::EntityBalance> balances_from_ledger(const LedgerOptions& o, ledger::EntityPartition* keep,
                                                        std::ostream& err)
{
    auto txs = ledger::load_ledger(fs::path(o.ledger));
    ledger::PartitionStats stats;
    auto partition = ledger::build_partition(txs, o.coinjoin, o.threads, &stats);
    err << txs.size() << " transactions, " << partition.address_count() << " addresses, "
        << partition.entity_count() << " entities, " << stats.coinjoin_filtered << " CoinJoin-filtered\n";
    auto balances = ledger::entity_balances(txs, partition);
    if (keep) *keep = std::move(partition);
    return balances;
}

int run_cluster(const LedgerOptions& o, std::ostream& out, std::ostream& err)
{
    ledger::EntityPartition partition;
    auto balances = balances_from_ledger(o, &partition, err);
    {
        Sink sink(o.balances_out, out);
        ledger::write_balances_csv(*sink, balances);
    }
    if (!o.partition_out.empty()) {
        Sink sink(o.partition_out, out);
        ledger::write_partition_csv(*sink, partition);
    }
    return kExitOk;
}

ledger::Bucketing parse_bucket(const std::string& text)
{
    ledger::Bucketing b;
    if (text == "month") {
        b.kind = ledger::BucketKind::month;
    } else if (text == "day") {
        b.kind = ledger::BucketKind::day;
    } else if (text.starts_with("blocks:")) {
        b.kind = ledger::BucketKind::blocks;
        try {
            b.blocks = std::stoll(text.substr(7));
        } catch (const std::exception&) {
            b.blocks = 0;
        }
        if (b.blocks <= 0) throw CLI::ValidationError("--bucket", "blocks:<n> needs n > 0");
    } else {
        throw CLI::ValidationError("--bucket", "expected month, day or blocks:<n>");
    }
    return b;
}

int run_report(const LedgerOptions& o, std::ostream& out, std::ostream& err)
{
    if (o.ledger.empty() == o.balances.empty()) {
        err << "report: give exactly one of --ledger or --balances\n";
        return kExitUsage;
    }
    if ((!o.tags.empty() || !o.mining_out.empty()) && o.ledger.empty()) {
        err << "report: mining shares need --ledger\n";
        return kExitUsage;
    }
    auto bucketing = parse_bucket(o.bucket);

    std::vector<ledger::EntityBalance> balances;
    if (!o.ledger.empty()) {
        balances = balances_from_ledger(o, nullptr, err);
    } else {
        std::ifstream in(o.balances);
        balances = ledger::read_balances_csv(in);
    }
    auto stats = ledger::distribution_stats(balances, o.top);
    err << "entities " << stats.entity_count << ", zero-balance " << stats.zero_balance_entities << ", total_sat "
        << stats.total << ", gini " << csv::format_double(stats.gini) << '\n';
    ledger::write_top_csv(out, stats.top);

    if (!o.lorenz_out.empty()) {
        Sink sink(o.lorenz_out, out);
        ledger::write_lorenz_csv(*sink, stats.lorenz);
    }
    if (!o.tags.empty() || !o.mining_out.empty()) {
        ledger::PoolTagMap tags;
        if (!o.tags.empty()) tags = ledger::PoolTagMap::load(fs::path(o.tags));
        auto shares = ledger::mining_shares(ledger::load_ledger(fs::path(o.ledger)), tags, bucketing);
        Sink sink(o.mining_out, out);
        ledger::write_mining_csv(*sink, shares);
    }
    return kExitOk;
}

struct SimOptions {
    std::string topology;
    std::string write_topology;
    simnet::GeneratorParams gen;
    crawler::CrawlConfig config;
};

int run_sim(SimOptions& o, std::ostream& out, std::ostream& err)
{
    auto topology = o.topology.empty() ? simnet::generate_topology(o.gen) : simnet::load_topology(o.topology);
    if (!o.write_topology.empty()) {
        std::ofstream f(o.write_topology);
        if (!f) throw std::runtime_error("cannot write " + o.write_topology);
        simnet::write_topology(f, topology);
    }
    auto oracle = simnet::reachable_set(topology);
    auto net = simnet::build_network(topology);

    auto& config = o.config;
    config.magic = wire::kSimnetMagic;
    config.seeds = topology.seed_ids;
    config.clock = [] { return simnet::kSimEpoch; };

    auto started = std::chrono::steady_clock::now();
    auto snapshot = crawler::crawl(config, *net);
    double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

    std::set<Endpoint> active, discovered;
    for (const auto& [ep, rec] : snapshot.records) {
        discovered.insert(ep);
        if (rec.active()) active.insert(ep);
    }
    bool active_ok = active == oracle.active;
    bool discovered_ok = std::includes(discovered.begin(), discovered.end(), oracle.discovered.begin(),
                                       oracle.discovered.end());

    csv::write_row(out, {"metric", "value"});
    csv::write_row(out, {"peers", std::to_string(topology.peers.size())});
    csv::write_row(out, {"oracle_active", std::to_string(oracle.active.size())});
    csv::write_row(out, {"crawl_active", std::to_string(active.size())});
    csv::write_row(out, {"oracle_discovered", std::to_string(oracle.discovered.size())});
    csv::write_row(out, {"crawl_discovered", std::to_string(discovered.size())});
    csv::write_row(out, {"active_matches_oracle", active_ok ? "1" : "0"});
    csv::write_row(out, {"discovered_covers_oracle", discovered_ok ? "1" : "0"});
    csv::write_row(out, {"seconds", csv::format_double(seconds)});
    if (!active_ok || !discovered_ok) {
        err << "sim: crawl disagrees with the reachability oracle\n";
        return kExitData;
    }
    return kExitOk;
}

void add_crawl_params(CLI::App* cmd, crawler::CrawlConfig& c)
{
    cmd->add_option("--max-inflight", c.max_inflight, "Concurrent probes")->capture_default_str();
    cmd->add_option("--connect-timeout", c.connect_timeout_ms, "Connect timeout (ms)")->capture_default_str();
    cmd->add_option("--handshake-timeout", c.handshake_timeout_ms, "Handshake timeout (ms)")->capture_default_str();
    cmd->add_option("--getaddr-rounds", c.getaddr_rounds, "getaddr requests per peer")->capture_default_str();
    cmd->add_option("--pings", c.ping_count, "Pings per peer for min RTT")->capture_default_str();
    cmd->add_option("--max-frontier", c.max_frontier, "Endpoint cap")->capture_default_str();
    cmd->add_option("--nonce-seed", c.nonce_seed, "Seed for message nonces");
}

void add_ledger_params(CLI::App* cmd, LedgerOptions& o)
{
    cmd->add_option("--min-inputs", o.coinjoin.min_inputs, "CoinJoin rule: minimum inputs")->capture_default_str();
    cmd->add_option("--equal-outputs", o.coinjoin.equal_outputs, "CoinJoin rule: equal-valued outputs")
        ->capture_default_str();
    cmd->add_option("--threads", o.threads, "Partition build threads")->capture_default_str();
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Bitcoin network and ledger measurement toolkit", "chainobs"};
    app.require_subcommand(1);

    CrawlOptions crawl;
    auto* crawl_cmd = app.add_subcommand("crawl", "Crawl the network into a snapshot file");
    crawl_cmd->add_option("--seeds", crawl.seeds, "Seed list file (ip[:port] per line)")->check(CLI::ExistingFile);
    crawl_cmd->add_option("--dns", crawl.dns, "DNS seed name (repeatable)");
    crawl_cmd->add_option("--out", crawl.out, "Snapshot output file");
    crawl_cmd->add_option("--out-dir", crawl.out_dir, "Directory for timestamped snapshots");
    crawl_cmd->add_option("--transport", crawl.transport, "tcp or sim")
        ->check(CLI::IsMember({"tcp", "sim"}))
        ->capture_default_str();
    crawl_cmd->add_option("--topology", crawl.topology, "Simulated topology file")->check(CLI::ExistingFile);
    crawl_cmd->add_option("--magic", crawl.magic, "mainnet or simnet")->check(CLI::IsMember({"mainnet", "simnet"}));
    crawl_cmd->add_option("--repeat", crawl.repeat_minutes, "Repeat every N minutes")->check(CLI::NonNegativeNumber);
    crawl_cmd->add_option("--iterations", crawl.iterations, "Stop after N repeats (0 = forever)");
    add_crawl_params(crawl_cmd, crawl.config);

    EnrichOptions en;
    auto* enrich_cmd = app.add_subcommand("enrich", "Annotate a snapshot with network type, country and AS");
    enrich_cmd->add_option("--in", en.in, "Input snapshot")->required()->check(CLI::ExistingFile);
    enrich_cmd->add_option("--table", en.tables, "prefix,country,asn,org CSV (repeatable, first match wins)")
        ->check(CLI::ExistingFile);
    enrich_cmd->add_option("--exits", en.exits, "Tor exit list")->check(CLI::ExistingFile);
    enrich_cmd->add_option("--out", en.out, "Enriched snapshot")->required();
    enrich_cmd->add_option("--shares-out", en.shares_out, "Share report CSV (default stdout)");

    SeriesOptions tl;
    auto* timeline_cmd = app.add_subcommand("timeline", "Churn report over a snapshot directory");
    timeline_cmd->add_option("--dir", tl.dir, "Snapshot directory")->required()->check(CLI::ExistingDirectory);
    timeline_cmd->add_option("--interval", tl.interval, "Snapshot grid spacing (s)")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    timeline_cmd->add_option("--out", tl.out, "Churn CSV (default stdout)");
    timeline_cmd->add_option("--size-out", tl.size_out, "Network size series CSV");

    SeriesOptions bn;
    auto* bni_cmd = app.add_subcommand("bni", "Node index report for the latest snapshot of a series");
    bni_cmd->add_option("--dir", bn.dir, "Snapshot directory")->required()->check(CLI::ExistingDirectory);
    bni_cmd->add_option("--interval", bn.interval, "Snapshot grid spacing (s)")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    bni_cmd->add_option("--tau", bn.params.tau, "Latency excursion threshold")->capture_default_str();
    bni_cmd->add_option("--alpha", bn.params.alpha, "EWMA smoothing factor")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    bni_cmd->add_option("--height-tolerance", bn.params.height_tolerance, "Block height tolerance")
        ->capture_default_str();
    bni_cmd->add_option("--out", bn.out, "BNI CSV (default stdout)");

    LedgerOptions cl;
    auto* cluster_cmd = app.add_subcommand("cluster", "Multiple-input clustering and entity balances");
    cluster_cmd->add_option("--ledger", cl.ledger, "Ledger file")->required()->check(CLI::ExistingFile);
    cluster_cmd->add_option("--balances-out", cl.balances_out, "Balances CSV (default stdout)");
    cluster_cmd->add_option("--partition-out", cl.partition_out, "entity,address CSV");
    add_ledger_params(cluster_cmd, cl);

    LedgerOptions rp;
    auto* report_cmd = app.add_subcommand("report", "Top holders, Lorenz curve, Gini and mining shares");
    report_cmd->add_option("--ledger", rp.ledger, "Ledger file")->check(CLI::ExistingFile);
    report_cmd->add_option("--balances", rp.balances, "Balances CSV from cluster")->check(CLI::ExistingFile);
    report_cmd->add_option("--top", rp.top, "Rows in the top-holder table")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    report_cmd->add_option("--lorenz-out", rp.lorenz_out, "Lorenz points CSV");
    report_cmd->add_option("--tags", rp.tags, "Pool tag map")->check(CLI::ExistingFile);
    report_cmd->add_option("--mining-out", rp.mining_out, "Mining share CSV (default stdout)");
    report_cmd->add_option("--bucket", rp.bucket, "month, day or blocks:<n>")->capture_default_str();
    add_ledger_params(report_cmd, rp);

    SimOptions sm;
    auto* sim_cmd = app.add_subcommand("sim", "Crawl an in-process simulated network and check it");
    sim_cmd->add_option("--topology", sm.topology, "Topology file (default: generate)")->check(CLI::ExistingFile);
    sim_cmd->add_option("--write-topology", sm.write_topology, "Save the topology used");
    sim_cmd->add_option("--peers", sm.gen.peer_count, "Generated peer count")->capture_default_str();
    sim_cmd->add_option("--unreachable", sm.gen.unreachable_fraction, "Fraction unreachable")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    sim_cmd->add_option("--silent", sm.gen.silent_fraction, "Fraction silent")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    sim_cmd->add_option("--slow", sm.gen.slow_fraction, "Fraction slow")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    sim_cmd->add_option("--rng-seed", sm.gen.rng_seed, "Generator seed")->capture_default_str();
    add_crawl_params(sim_cmd, sm.config);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    }

    try {
        if (crawl_cmd->parsed()) return run_crawl(crawl, out, err);
        if (enrich_cmd->parsed()) return run_enrich(en, out, err);
        if (timeline_cmd->parsed()) return run_timeline(tl, out, err);
        if (bni_cmd->parsed()) return run_bni(bn, out, err);
        if (cluster_cmd->parsed()) return run_cluster(cl, out, err);
        if (report_cmd->parsed()) return run_report(rp, out, err);
        if (sim_cmd->parsed()) return run_sim(sm, out, err);
    } catch (const CLI::ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const crawler::CrawlError& e) {
        err << "error: " << e.what() << '\n';
        return e.code() == crawler::Errc::InvalidConfig ? kExitUsage : kExitData;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitData;
    }
    return kExitUsage;
}

} // namespace chainobs::cli
