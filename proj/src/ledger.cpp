#include "chainobs/ledger.hpp"

#include "chainobs/csv.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <numeric>
#include <thread>

namespace chainobs::ledger {

namespace {

__extension__ using Int128 = __int128;

std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

template <typename T>
bool parse_int(std::string_view text, T& out)
{
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
    return ec == std::errc{} && ptr == text.data() + text.size() && !text.empty();
}

std::vector<std::string_view> split(std::string_view s, char sep)
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        auto pos = s.find(sep, start);
        out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

std::vector<TxIo> parse_io_list(std::string_view text, std::size_t line_no)
{
    std::vector<TxIo> out;
    if (text.empty()) return out;
    for (auto item : split(text, ';')) {
        auto colon = item.rfind(':');
        if (colon == std::string_view::npos || colon == 0) {
            throw LedgerError(Errc::ParseError, "ledger line " + std::to_string(line_no) + ": expected addr:value",
                              line_no);
        }
        TxIo io;
        io.address = std::string(item.substr(0, colon));
        if (!parse_int(item.substr(colon + 1), io.value) || io.value < 0) {
            throw LedgerError(Errc::ParseError, "ledger line " + std::to_string(line_no) + ": bad value", line_no);
        }
        out.push_back(std::move(io));
    }
    return out;
}

std::string format_io_list(const std::vector<TxIo>& list)
{
    std::string out;
    for (std::size_t i = 0; i < list.size(); ++i) {
        if (i) out += ';';
        out += list[i].address;
        out += ':';
        out += std::to_string(list[i].value);
    }
    return out;
}

// Plain union-find over dense ids, used for the per-thread forests.
struct Forest {
    std::vector<std::uint32_t> parent;

    explicit Forest(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0u); }

    std::uint32_t find(std::uint32_t x)
    {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    }
    void unite(std::uint32_t a, std::uint32_t b)
    {
        a = find(a);
        b = find(b);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
};

bool clusterable(const LedgerTx& tx, const CoinJoinParams& params, PartitionStats* stats)
{
    if (tx.is_coinbase) {
        if (stats) ++stats->coinbase;
        return false;
    }
    if (is_coinjoin(tx, params)) {
        if (stats) ++stats->coinjoin_filtered;
        return false;
    }
    return true;
}

std::tm utc(std::int64_t t)
{
    std::time_t tt = static_cast<std::time_t>(t);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    return tm;
}

} // namespace

Satoshi LedgerTx::input_total() const
{
    Satoshi s = 0;
    for (const auto& io : inputs) s += io.value;
    return s;
}

Satoshi LedgerTx::output_total() const
{
    Satoshi s = 0;
    for (const auto& io : outputs) s += io.value;
    return s;
}

std::vector<LedgerTx> parse_ledger(std::istream& in)
{
    std::vector<LedgerTx> txs;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto content = trim(line);
        if (content.empty() || content.front() == '#') continue;
        auto fields = split(content, ',');
        auto fail = [&](const std::string& why) {
            return LedgerError(Errc::ParseError, "ledger line " + std::to_string(line_no) + ": " + why, line_no);
        };
        if (fields.size() != 7) throw fail("expected 7 fields");

        LedgerTx tx;
        Bytes id;
        try {
            id = from_hex(trim(fields[0]));
        } catch (const std::invalid_argument&) {
            throw fail("bad txid");
        }
        if (id.size() != 32) throw fail("txid must be 32 bytes");
        std::copy(id.begin(), id.end(), tx.txid.begin());
        if (!parse_int(trim(fields[1]), tx.height)) throw fail("bad height");
        if (!parse_int(trim(fields[2]), tx.timestamp)) throw fail("bad timestamp");
        auto flag = trim(fields[3]);
        if (flag != "0" && flag != "1") throw fail("coinbase flag must be 0 or 1");
        tx.is_coinbase = flag == "1";
        try {
            tx.coinbase_script = from_hex(trim(fields[4]));
        } catch (const std::invalid_argument&) {
            throw fail("bad coinbase script");
        }
        tx.inputs = parse_io_list(trim(fields[5]), line_no);
        tx.outputs = parse_io_list(trim(fields[6]), line_no);

        if (tx.is_coinbase && !tx.inputs.empty()) throw fail("coinbase with inputs");
        if (!tx.is_coinbase && !tx.coinbase_script.empty()) throw fail("script on non-coinbase");
        if (!tx.is_coinbase && tx.input_total() < tx.output_total()) throw fail("outputs exceed inputs");
        txs.push_back(std::move(tx));
    }
    return txs;
}

std::vector<LedgerTx> load_ledger(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw LedgerError(Errc::Io, "cannot open " + path.string());
    return parse_ledger(in);
}

void write_ledger(std::ostream& out, const std::vector<LedgerTx>& txs)
{
    for (const auto& tx : txs) {
        out << to_hex(ByteView(tx.txid.data(), tx.txid.size())) << ',' << tx.height << ',' << tx.timestamp << ','
            << (tx.is_coinbase ? '1' : '0') << ',' << to_hex(tx.coinbase_script) << ',' << format_io_list(tx.inputs)
            << ',' << format_io_list(tx.outputs) << '\n';
    }
}

bool is_coinjoin(const LedgerTx& tx, const CoinJoinParams& params)
{
    if (tx.is_coinbase) throw std::invalid_argument("is_coinjoin: coinbase transaction");
    if (tx.inputs.size() < params.min_inputs || tx.outputs.size() < params.equal_outputs) return false;
    std::map<Satoshi, std::size_t> counts;
    for (const auto& out : tx.outputs) {
        if (++counts[out.value] >= params.equal_outputs) return true;
    }
    return false;
}

EntityPartition::Id EntityPartition::add(std::string_view address)
{
    auto [it, inserted] = ids_.try_emplace(std::string(address), static_cast<Id>(addresses_.size()));
    if (inserted) {
        addresses_.emplace_back(address);
        parent_.push_back(it->second);
        size_.push_back(1);
        min_member_.push_back(it->second);
        ++entity_count_;
    }
    return it->second;
}

std::optional<EntityPartition::Id> EntityPartition::id_of(std::string_view address) const
{
    auto it = ids_.find(std::string(address));
    if (it == ids_.end()) return std::nullopt;
    return it->second;
}

EntityPartition::Id EntityPartition::find(Id id) const
{
    while (parent_[id] != id) {
        parent_[id] = parent_[parent_[id]];
        id = parent_[id];
    }
    return id;
}

void EntityPartition::unite(Id a, Id b)
{
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (size_[a] < size_[b]) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
    if (addresses_[min_member_[b]] < addresses_[min_member_[a]]) min_member_[a] = min_member_[b];
    --entity_count_;
}

bool EntityPartition::same(std::string_view a, std::string_view b) const
{
    auto ia = id_of(a);
    auto ib = id_of(b);
    if (!ia || !ib) return a == b;
    return find(*ia) == find(*ib);
}

std::string EntityPartition::entity_label(Id id) const
{
    return addresses_[min_member_[find(id)]];
}

std::vector<std::vector<std::string>> EntityPartition::entities() const
{
    std::unordered_map<Id, std::vector<std::string>> groups;
    for (Id i = 0; i < addresses_.size(); ++i) groups[find(i)].push_back(addresses_[i]);
    std::vector<std::vector<std::string>> out;
    out.reserve(groups.size());
    for (auto& [_, members] : groups) {
        std::sort(members.begin(), members.end());
        out.push_back(std::move(members));
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.front() < b.front(); });
    return out;
}

EntityPartition build_partition(const std::vector<LedgerTx>& txs, const CoinJoinParams& params, unsigned threads,
                                PartitionStats* stats)
{
    EntityPartition partition;
    for (const auto& tx : txs) {
        for (const auto& io : tx.inputs) partition.add(io.address);
        for (const auto& io : tx.outputs) partition.add(io.address);
    }
    PartitionStats local_stats;

    if (threads <= 1 || txs.size() < 2) {
        for (const auto& tx : txs) {
            if (!clusterable(tx, params, &local_stats) || tx.inputs.empty()) continue;
            auto first = *partition.id_of(tx.inputs.front().address);
            for (std::size_t i = 1; i < tx.inputs.size(); ++i) {
                partition.unite(first, *partition.id_of(tx.inputs[i].address));
            }
        }
    } else {
        threads = std::min<unsigned>(threads, static_cast<unsigned>(txs.size()));
        std::vector<Forest> forests(threads, Forest(partition.address_count()));
        std::vector<PartitionStats> chunk_stats(threads);
        std::vector<std::thread> workers;
        std::size_t chunk = (txs.size() + threads - 1) / threads;
        for (unsigned t = 0; t < threads; ++t) {
            workers.emplace_back([&, t] {
                std::size_t begin = t * chunk;
                std::size_t end = std::min(txs.size(), begin + chunk);
                for (std::size_t k = begin; k < end; ++k) {
                    const auto& tx = txs[k];
                    if (!clusterable(tx, params, &chunk_stats[t]) || tx.inputs.empty()) continue;
                    auto first = *partition.id_of(tx.inputs.front().address);
                    for (std::size_t i = 1; i < tx.inputs.size(); ++i) {
                        forests[t].unite(first, *partition.id_of(tx.inputs[i].address));
                    }
                }
            });
        }
        for (auto& w : workers) w.join();
        for (unsigned t = 0; t < threads; ++t) {
            auto& forest = forests[t];
            for (std::uint32_t i = 0; i < forest.parent.size(); ++i) {
                auto root = forest.find(i);
                if (root != i) partition.unite(i, root);
            }
            local_stats.coinbase += chunk_stats[t].coinbase;
            local_stats.coinjoin_filtered += chunk_stats[t].coinjoin_filtered;
        }
    }
    if (stats) *stats = local_stats;
    return partition;
}

std::vector<EntityBalance> entity_balances(const std::vector<LedgerTx>& txs, const EntityPartition& partition)
{
    std::unordered_map<EntityPartition::Id, Satoshi> totals;
    for (EntityPartition::Id i = 0; i < partition.address_count(); ++i) totals.try_emplace(partition.find(i), 0);

    auto root_of = [&](const std::string& address) {
        auto id = partition.id_of(address);
        if (!id) throw std::invalid_argument("address missing from partition: " + address);
        return partition.find(*id);
    };
    for (const auto& tx : txs) {
        for (const auto& io : tx.outputs) totals[root_of(io.address)] += io.value;
        for (const auto& io : tx.inputs) totals[root_of(io.address)] -= io.value;
    }

    std::vector<EntityBalance> out;
    out.reserve(totals.size());
    for (const auto& [root, balance] : totals) {
        EntityBalance e{root, partition.entity_label(root), partition.entity_size(root), balance};
        if (balance < 0) {
            throw LedgerError(Errc::NegativeBalance,
                              "negative balance " + std::to_string(balance) + " for entity " + e.label);
        }
        out.push_back(std::move(e));
    }
    std::sort(out.begin(), out.end(), [](const EntityBalance& a, const EntityBalance& b) { return a.label < b.label; });
    return out;
}

double gini(std::vector<Satoshi> balances)
{
    if (balances.empty()) throw LedgerError(Errc::Empty, "gini of empty distribution");
    std::sort(balances.begin(), balances.end());
    if (balances.front() < 0) throw std::invalid_argument("gini: negative value");
    auto n = static_cast<Int128>(balances.size());
    Int128 sum = 0;
    Int128 weighted = 0;
    for (std::size_t i = 0; i < balances.size(); ++i) {
        auto rank = static_cast<Int128>(i + 1);
        sum += balances[i];
        weighted += (2 * rank - n - 1) * static_cast<Int128>(balances[i]);
    }
    if (sum == 0) throw LedgerError(Errc::AllZero, "gini of all-zero distribution");
    return static_cast<double>(static_cast<long double>(weighted) / (static_cast<long double>(n) * static_cast<long double>(sum)));
}

std::vector<std::pair<double, double>> lorenz_points(std::vector<Satoshi> balances)
{
    if (balances.empty()) throw LedgerError(Errc::Empty, "lorenz of empty distribution");
    std::sort(balances.begin(), balances.end());
    if (balances.front() < 0) throw std::invalid_argument("lorenz: negative value");
    Int128 total = 0;
    for (auto b : balances) total += b;
    if (total == 0) throw LedgerError(Errc::AllZero, "lorenz of all-zero distribution");

    std::vector<std::pair<double, double>> points{{0.0, 0.0}};
    auto n = static_cast<double>(balances.size());
    Int128 running = 0;
    for (std::size_t j = 0; j < balances.size(); ++j) {
        running += balances[j];
        double wealth = j + 1 == balances.size()
                            ? 1.0
                            : static_cast<double>(static_cast<long double>(running) / static_cast<long double>(total));
        points.emplace_back(static_cast<double>(j + 1) / n, wealth);
    }
    return points;
}

std::vector<HolderRow> top_holders(const std::vector<EntityBalance>& balances, std::size_t k)
{
    std::vector<const EntityBalance*> order;
    Int128 total = 0;
    for (const auto& b : balances) {
        order.push_back(&b);
        total += b.balance;
    }
    std::sort(order.begin(), order.end(), [](const EntityBalance* a, const EntityBalance* b) {
        return a->balance != b->balance ? a->balance > b->balance : a->label < b->label;
    });
    std::vector<HolderRow> rows;
    Int128 running = 0;
    for (std::size_t i = 0; i < order.size() && i < k; ++i) {
        running += order[i]->balance;
        double share = total == 0 ? 0.0
                                  : static_cast<double>(static_cast<long double>(running) / static_cast<long double>(total));
        rows.push_back({order[i]->label, order[i]->address_count, order[i]->balance, share});
    }
    return rows;
}

DistributionStats distribution_stats(const std::vector<EntityBalance>& balances, std::size_t k)
{
    DistributionStats stats;
    stats.entity_count = balances.size();
    for (const auto& b : balances) {
        if (b.balance == 0) {
            ++stats.zero_balance_entities;
        } else {
            stats.balances.push_back(b.balance);
            stats.total += b.balance;
        }
    }
    std::sort(stats.balances.begin(), stats.balances.end());
    if (!stats.balances.empty()) {
        stats.gini = gini(stats.balances);
        stats.lorenz = lorenz_points(stats.balances);
    }
    stats.top = top_holders(balances, k);
    return stats;
}

PoolTagMap PoolTagMap::parse(std::istream& in)
{
    PoolTagMap map;
    auto* section = &map.coinbase_tags;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        auto content = trim(line);
        if (content.empty() || content.front() == '#') continue;
        if (content == "[coinbase_tags]") {
            section = &map.coinbase_tags;
            continue;
        }
        if (content == "[payout_addresses]") {
            section = &map.payout_addresses;
            continue;
        }
        // Tags may carry meaningful spaces, so only the TAB separates fields.
        auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw LedgerError(Errc::ParseError, "tag map line " + std::to_string(line_no) + ": expected key<TAB>pool",
                              line_no);
        }
        std::string key = line.substr(0, tab);
        std::string pool(trim(std::string_view(line).substr(tab + 1)));
        if (key.empty() || pool.empty()) {
            throw LedgerError(Errc::ParseError, "tag map line " + std::to_string(line_no) + ": empty field", line_no);
        }
        if (!section->emplace(key, pool).second) {
            throw LedgerError(Errc::DuplicateTag, "tag map line " + std::to_string(line_no) + ": duplicate " + key,
                              line_no);
        }
    }
    return map;
}

PoolTagMap PoolTagMap::load(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw LedgerError(Errc::Io, "cannot open " + path.string());
    return parse(in);
}

std::string attribute_miner(const Bytes& coinbase_script, const std::vector<TxIo>& outputs, const PoolTagMap& tags)
{
    std::string_view script(reinterpret_cast<const char*>(coinbase_script.data()), coinbase_script.size());
    const std::pair<const std::string, std::string>* best = nullptr;
    for (const auto& entry : tags.coinbase_tags) {
        if (script.find(entry.first) == std::string_view::npos) continue;
        // Map iteration is lexicographic, so only a strictly longer tag replaces.
        if (!best || entry.first.size() > best->first.size()) best = &entry;
    }
    if (best) return best->second;
    for (const auto& out : outputs) {
        auto it = tags.payout_addresses.find(out.address);
        if (it != tags.payout_addresses.end()) return it->second;
    }
    return std::string(kUnknownPool);
}

std::vector<PoolShare> mining_shares(const std::vector<LedgerTx>& txs, const PoolTagMap& tags,
                                     const Bucketing& bucketing)
{
    if (bucketing.kind == BucketKind::blocks && bucketing.blocks <= 0) {
        throw std::invalid_argument("mining_shares: bucket size must be positive");
    }
    std::map<std::pair<std::int64_t, std::string>, std::map<std::string, std::size_t>> buckets;
    for (const auto& tx : txs) {
        if (!tx.is_coinbase) continue;
        std::int64_t key = 0;
        char label[48];
        switch (bucketing.kind) {
        case BucketKind::month: {
            auto tm = utc(tx.timestamp);
            key = (tm.tm_year + 1900LL) * 12 + tm.tm_mon;
            std::snprintf(label, sizeof(label), "%04d-%02d", tm.tm_year + 1900, tm.tm_mon + 1);
            break;
        }
        case BucketKind::day: {
            auto tm = utc(tx.timestamp);
            key = tx.timestamp >= 0 ? tx.timestamp / 86400 : (tx.timestamp - 86399) / 86400;
            std::snprintf(label, sizeof(label), "%04d-%02d-%02d", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday);
            break;
        }
        case BucketKind::blocks: {
            key = tx.height >= 0 ? tx.height / bucketing.blocks : (tx.height - bucketing.blocks + 1) / bucketing.blocks;
            std::snprintf(label, sizeof(label), "%lld-%lld", static_cast<long long>(key * bucketing.blocks),
                          static_cast<long long>((key + 1) * bucketing.blocks - 1));
            break;
        }
        }
        ++buckets[{key, label}][attribute_miner(tx.coinbase_script, tx.outputs, tags)];
    }

    std::vector<PoolShare> out;
    for (const auto& [bucket, pools] : buckets) {
        std::size_t total = 0;
        for (const auto& [_, n] : pools) total += n;
        std::vector<std::pair<std::string, std::size_t>> ordered(pools.begin(), pools.end());
        std::sort(ordered.begin(), ordered.end(),
                  [](const auto& a, const auto& b) { return a.second != b.second ? a.second > b.second : a.first < b.first; });
        for (const auto& [pool, n] : ordered) {
            out.push_back({bucket.second, pool, n, static_cast<double>(n) / static_cast<double>(total)});
        }
    }
    return out;
}

void write_balances_csv(std::ostream& out, const std::vector<EntityBalance>& balances)
{
    csv::write_row(out, {"entity", "address_count", "balance_sat"});
    for (const auto& b : balances) {
        csv::write_row(out, {b.label, std::to_string(b.address_count), std::to_string(b.balance)});
    }
}

std::vector<EntityBalance> read_balances_csv(std::istream& in)
{
    std::vector<EntityBalance> out;
    std::string line;
    std::vector<std::string> fields;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty() || trim(line).front() == '#') continue;
        if (!csv::split_line(line, fields) || fields.size() != 3) {
            throw LedgerError(Errc::ParseError, "balances line " + std::to_string(line_no) + ": expected 3 fields",
                              line_no);
        }
        if (fields[0] == "entity") continue;
        EntityBalance b;
        b.root = static_cast<EntityPartition::Id>(out.size());
        b.label = fields[0];
        if (!parse_int(std::string_view(fields[1]), b.address_count) || !parse_int(std::string_view(fields[2]), b.balance) ||
            b.balance < 0) {
            throw LedgerError(Errc::ParseError, "balances line " + std::to_string(line_no) + ": bad number", line_no);
        }
        out.push_back(std::move(b));
    }
    return out;
}

void write_partition_csv(std::ostream& out, const EntityPartition& partition)
{
    csv::write_row(out, {"entity", "address"});
    for (const auto& members : partition.entities()) {
        for (const auto& a : members) csv::write_row(out, {members.front(), a});
    }
}

void write_top_csv(std::ostream& out, const std::vector<HolderRow>& rows)
{
    csv::write_row(out, {"rank", "entity", "address_count", "balance_sat", "cumulative_share"});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        csv::write_row(out, {std::to_string(i + 1), r.entity, std::to_string(r.address_count), std::to_string(r.balance),
                             csv::format_double(r.cumulative_share)});
    }
}

void write_lorenz_csv(std::ostream& out, const std::vector<std::pair<double, double>>& points)
{
    csv::write_row(out, {"population_share", "wealth_share"});
    for (const auto& [p, w] : points) csv::write_row(out, {csv::format_double(p), csv::format_double(w)});
}

void write_mining_csv(std::ostream& out, const std::vector<PoolShare>& shares)
{
    csv::write_row(out, {"bucket", "pool", "blocks", "share"});
    for (const auto& s : shares) {
        csv::write_row(out, {s.bucket, s.pool, std::to_string(s.blocks), csv::format_double(s.share)});
    }
}

} // namespace chainobs::ledger
