#pragma once

// Snapshot persistence as newline-delimited key:value records and set
// algebra between consecutive snapshots.
//
// Line 1 is the header:
//   schema:1<TAB>started_at:<unix><TAB>finished_at:<unix><TAB>seed_count:<n>
//   <TAB>digest:<hex><TAB>partial:<0|1><TAB>seeds:<ep>,<ep>,...
// followed by one record per peer, sorted by canonical address string:
//   addr:<ip><TAB>port:<p><TAB>net:<ipv4|ipv6|tor><TAB>status:<...><TAB>
//   services:<u64><TAB>pver:<i32><TAB>ua:<escaped><TAB>height:<i32><TAB>
//   minrtt:<ms, omitted when absent><TAB>first_seen:<unix><TAB>last_seen:<unix>
//   [<TAB>naddr:<n>][<TAB>note:<escaped>][<TAB>cc:..<TAB>asn:..<TAB>org:..]
// Unknown keys are ignored when reading.

#include "chainobs/snapshot.hpp"

#include <filesystem>
#include <istream>
#include <ostream>
#include <set>
#include <stdexcept>
#include <vector>

namespace chainobs::store {

inline constexpr int kSchemaVersion = 1;
inline constexpr std::string_view kSnapshotExtension = ".snap.ndrec";

enum class Errc { SchemaVersionUnsupported, CorruptRecord, OutOfOrder, Io };

class StoreError : public std::runtime_error {
public:
    StoreError(Errc code, const std::string& what, std::size_t line = 0)
        : std::runtime_error(what), code_(code), line_(line)
    {
    }
    Errc code() const { return code_; }
    /// 1-based line of a CorruptRecord, 0 otherwise.
    std::size_t line() const { return line_; }

private:
    Errc code_;
    std::size_t line_;
};

void write_snapshot(const Snapshot& snapshot, std::ostream& out);
void write_snapshot(const Snapshot& snapshot, const std::filesystem::path& path);
Snapshot read_snapshot(std::istream& in);
Snapshot read_snapshot(const std::filesystem::path& path);

/// Every `*.snap.ndrec` file in `dir`, ordered by started_at.
std::vector<Snapshot> read_snapshot_series(const std::filesystem::path& dir);

/// UTC file name for a snapshot started at `unix_seconds`,
/// e.g. "20190507T120000Z.snap.ndrec".
std::string timestamped_name(std::int64_t unix_seconds);

struct SnapshotDiff {
    std::set<Endpoint> joined;
    std::set<Endpoint> left;
    std::set<Endpoint> stayed;
};

/// Set algebra over active addresses. Throws OutOfOrder when
/// a.started_at > b.started_at.
SnapshotDiff diff(const Snapshot& a, const Snapshot& b);

/// Escaping used for free-text fields (user agent, note, org).
std::string escape_field(std::string_view raw);
std::string unescape_field(std::string_view escaped);

} // namespace chainobs::store
