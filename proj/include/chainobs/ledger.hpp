#pragma once

// Ledger analytics: multiple-input address clustering with a CoinJoin
// filter, entity balances, coin-distribution statistics and coinbase miner
// attribution.

#include "chainobs/bytes.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace chainobs::ledger {

using Satoshi = std::int64_t;
inline constexpr Satoshi kCoin = 100'000'000;

enum class Errc { ParseError, NegativeBalance, AllZero, Empty, DuplicateTag, Io };

class LedgerError : public std::runtime_error {
public:
    LedgerError(Errc code, const std::string& what, std::size_t line = 0)
        : std::runtime_error(what), code_(code), line_(line)
    {
    }
    Errc code() const { return code_; }
    std::size_t line() const { return line_; }

private:
    Errc code_;
    std::size_t line_;
};

struct TxIo {
    std::string address;
    Satoshi value = 0;
    bool operator==(const TxIo&) const = default;
};

struct LedgerTx {
    std::array<std::uint8_t, 32> txid{};
    std::int64_t height = 0;
    std::int64_t timestamp = 0;
    bool is_coinbase = false;
    std::vector<TxIo> inputs; ///< resolved previous outputs
    std::vector<TxIo> outputs;
    Bytes coinbase_script;

    Satoshi input_total() const;
    Satoshi output_total() const;
    bool operator==(const LedgerTx&) const = default;
};

/// One tx per line:
/// `txid,height,timestamp,coinbase(0|1),script_hex,inputs,outputs` where
/// inputs/outputs are `addr:value;addr:value` in satoshi (may be empty).
/// `#` starts a comment line. Checks coinbase/input consistency and that
/// inputs cover outputs.
std::vector<LedgerTx> parse_ledger(std::istream& in);
std::vector<LedgerTx> load_ledger(const std::filesystem::path& path);
void write_ledger(std::ostream& out, const std::vector<LedgerTx>& txs);

struct CoinJoinParams {
    std::size_t min_inputs = 2;
    std::size_t equal_outputs = 3;
};

/// Throws std::invalid_argument for a coinbase tx.
bool is_coinjoin(const LedgerTx& tx, const CoinJoinParams& params = {});

/// Union-find over address strings with path halving and union by size.
class EntityPartition {
public:
    using Id = std::uint32_t;

    Id add(std::string_view address);
    std::optional<Id> id_of(std::string_view address) const;
    const std::string& address(Id id) const { return addresses_[id]; }
    std::size_t address_count() const { return addresses_.size(); }

    Id find(Id id) const;
    void unite(Id a, Id b);
    bool same(std::string_view a, std::string_view b) const;

    std::size_t entity_count() const { return entity_count_; }
    std::size_t entity_size(Id id) const { return size_[find(id)]; }

    /// Entities as sorted address lists, ordered by their smallest address.
    std::vector<std::vector<std::string>> entities() const;

    /// Order-independent label of an entity: its lexicographically smallest
    /// address.
    std::string entity_label(Id id) const;

private:
    std::vector<std::string> addresses_;
    std::unordered_map<std::string, Id> ids_;
    mutable std::vector<Id> parent_;
    std::vector<std::uint32_t> size_;
    std::vector<Id> min_member_;
    std::size_t entity_count_ = 0;
};

struct PartitionStats {
    std::size_t coinjoin_filtered = 0;
    std::size_t coinbase = 0;
};

/// Registers every address seen in inputs or outputs and unites the inputs of
/// each non-coinbase, non-CoinJoin tx. `threads` > 1 builds per-chunk forests
/// in parallel and merges them.
EntityPartition build_partition(const std::vector<LedgerTx>& txs, const CoinJoinParams& params = {},
                                unsigned threads = 1, PartitionStats* stats = nullptr);

struct EntityBalance {
    EntityPartition::Id root = 0;
    std::string label;
    std::size_t address_count = 0;
    Satoshi balance = 0;
};

/// One entry per entity (zero balances included), ordered by label. Throws
/// NegativeBalance naming the offending entity.
std::vector<EntityBalance> entity_balances(const std::vector<LedgerTx>& txs, const EntityPartition& partition);

/// Ascending-sorted index form: G = sum((2i - n - 1) x_i) / (n sum x).
/// Throws Empty or AllZero.
double gini(std::vector<Satoshi> balances);

/// (0,0) followed by (j/n, cumulative share) after ascending sort.
std::vector<std::pair<double, double>> lorenz_points(std::vector<Satoshi> balances);

struct HolderRow {
    std::string entity;
    std::size_t address_count = 0;
    Satoshi balance = 0;
    double cumulative_share = 0;
};

/// Descending by balance, ties by entity label.
std::vector<HolderRow> top_holders(const std::vector<EntityBalance>& balances, std::size_t k);

struct DistributionStats {
    std::vector<Satoshi> balances; ///< non-zero, ascending
    std::vector<std::pair<double, double>> lorenz;
    double gini = 0;
    std::vector<HolderRow> top;
    std::size_t entity_count = 0;
    std::size_t zero_balance_entities = 0;
    Satoshi total = 0;
};

DistributionStats distribution_stats(const std::vector<EntityBalance>& balances, std::size_t k);

struct PoolTagMap {
    std::map<std::string, std::string> coinbase_tags;
    std::map<std::string, std::string> payout_addresses;

    /// Sections `[coinbase_tags]` and `[payout_addresses]`, each line
    /// `key<TAB>pool`. Lines before any section are coinbase tags. Throws
    /// DuplicateTag / ParseError.
    static PoolTagMap parse(std::istream& in);
    static PoolTagMap load(const std::filesystem::path& path);
};

inline constexpr std::string_view kUnknownPool = "Unknown";

std::string attribute_miner(const Bytes& coinbase_script, const std::vector<TxIo>& outputs, const PoolTagMap& tags);

enum class BucketKind { month, day, blocks };

struct Bucketing {
    BucketKind kind = BucketKind::month;
    std::int64_t blocks = 2016;
};

struct PoolShare {
    std::string bucket;
    std::string pool;
    std::size_t blocks = 0;
    double share = 0;
};

/// Per-bucket block shares for every coinbase tx; buckets ordered by time,
/// pools by descending count then name. Non-coinbase txs are ignored.
std::vector<PoolShare> mining_shares(const std::vector<LedgerTx>& txs, const PoolTagMap& tags,
                                     const Bucketing& bucketing = {});

void write_balances_csv(std::ostream& out, const std::vector<EntityBalance>& balances);
std::vector<EntityBalance> read_balances_csv(std::istream& in);
void write_partition_csv(std::ostream& out, const EntityPartition& partition);
void write_top_csv(std::ostream& out, const std::vector<HolderRow>& rows);
void write_lorenz_csv(std::ostream& out, const std::vector<std::pair<double, double>>& points);
void write_mining_csv(std::ostream& out, const std::vector<PoolShare>& shares);

} // namespace chainobs::ledger
