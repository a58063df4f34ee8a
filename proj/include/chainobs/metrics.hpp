#pragma once

// Churn metrics over snapshot series and the BTC Node Index (BNI): ten
// node-to-network sub-metrics in [0,1], scaled to a score in [0,10].

#include "chainobs/snapshot.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace chainobs::metrics {

enum class Errc { NeverActive, NotActive, EmptySeries, BadInterval };

class MetricsError : public std::runtime_error {
public:
    MetricsError(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
    Errc code() const { return code_; }

private:
    Errc code_;
};

inline constexpr std::int64_t kSecondsPerDay = 86400;
inline constexpr std::int64_t kSecondsPerWeek = 7 * kSecondsPerDay;

struct ActivityTimeline {
    Endpoint address;
    std::int64_t interval_seconds = 1800;
    std::vector<bool> activity;

    std::int64_t observation_window_seconds() const
    {
        return static_cast<std::int64_t>(activity.size()) * interval_seconds;
    }
};

/// One min-RTT measurement at an active grid slot.
struct RttSample {
    std::size_t slot = 0;
    double rtt_ms = 0;
};
using RttSeries = std::vector<RttSample>;

struct NodeHistory {
    ActivityTimeline timeline;
    RttSeries rtt;
};

struct TimelineSet {
    std::int64_t start = 0; ///< started_at of slot 0
    std::int64_t interval_seconds = 0;
    std::size_t slot_count = 0;
    std::vector<std::size_t> missing_slots; ///< imputed as inactive for every node
    std::map<Endpoint, NodeHistory> nodes;  ///< every endpoint active at least once
};

/// Places snapshots on a uniform grid starting at the first snapshot; a
/// snapshot lands in slot round((started_at - start) / interval). Empty slots
/// are imputed inactive and listed in missing_slots.
TimelineSet build_timelines(const std::vector<Snapshot>& series, std::int64_t interval_seconds);

/// Lengths of maximal runs of consecutive active slots.
std::vector<std::size_t> sessions(const ActivityTimeline& timeline);

/// Mean session length in seconds. Throws NeverActive.
double mean_connection_time(const ActivityTimeline& timeline);

/// Reactivations after the first session: max(0, sessions - 1).
std::size_t flapping_events(const ActivityTimeline& timeline);

struct SizePoint {
    std::int64_t started_at = 0;
    std::size_t ipv4 = 0;
    std::size_t ipv6 = 0;
    std::size_t tor = 0;
    std::size_t total = 0;
};

std::vector<SizePoint> network_size_series(const std::vector<Snapshot>& series);

/// Network-wide reference values derived from the active nodes of one
/// snapshot, shared by the per-node sub-metrics.
struct NetworkProfile {
    std::size_t active_nodes = 0;
    std::map<std::int32_t, std::size_t> version_counts;
    std::uint64_t modal_services = 0;
    double median_height = 0;
    std::map<std::uint32_t, std::size_t> asn_counts;

    static NetworkProfile from_snapshot(const Snapshot& snapshot);

    /// Competition rank: 1 + number of versions strictly more popular.
    std::size_t version_rank(std::int32_t version) const;
};

struct BniParams {
    double tau = 0.5;    ///< excursion threshold over the moving average
    double alpha = 0.3;  ///< EWMA smoothing factor
    double height_tolerance = 144;
};

inline constexpr std::uint16_t kDefaultBitcoinPort = 8333;

double version_index(std::int32_t version, const NetworkProfile& profile);
/// ln(N/n) / ln(N) clamped to [0,1]. For N < 2 returns 0.
double asn_index(std::size_t same_as_nodes, std::size_t network_size);
double port_index(std::uint16_t port);
/// Jaccard similarity of service-flag bit sets; 1 when both are empty.
double service_index(std::uint64_t services, std::uint64_t modal_services);
double height_index(std::int64_t height, double median_height, double tolerance);

struct LatencyUptime {
    double daily_latency_stability = 0;
    double weekly_latency_stability = 0;
    double latency_trend = 0;
    double uptime_index = 0;
    double availability_index = 0;
    std::size_t excursions = 0;
    bool no_rtt_samples = false;
};

/// Flags the samples whose min RTT exceeds (1 + tau) x the EWMA of the
/// samples before it. The first sample is never an excursion.
std::vector<bool> latency_excursions(const std::vector<double>& rtt_ms, double tau, double alpha);

/// Without RTT samples the three latency metrics are 0 and no_rtt_samples is
/// set. Throws NeverActive.
LatencyUptime latency_and_uptime_metrics(const ActivityTimeline& timeline, const RttSeries& rtt,
                                         const BniParams& params);

inline constexpr std::size_t kSubMetricCount = 10;
inline constexpr std::array<std::string_view, kSubMetricCount> kSubMetricNames{
    "version_index",
    "service_index",
    "port_index",
    "height_index",
    "asn_index",
    "daily_latency_stability",
    "weekly_latency_stability",
    "latency_trend",
    "uptime_index",
    "availability_index",
};

struct BniScore {
    Endpoint address;
    std::array<double, kSubMetricCount> sub_metrics{};
    double bni = 0;
    bool asn_unknown = false;
    bool no_rtt_samples = false;
};

/// 10 x arithmetic mean of the sub-metrics.
double bni_from_sub_metrics(const std::array<double, kSubMetricCount>& sub_metrics);

/// `node` must be active in the snapshot `profile` was built from
/// (NotActive otherwise). Propagates NeverActive from the history.
BniScore bni(const PeerRecord& node, const NetworkProfile& profile, const NodeHistory& history,
             const BniParams& params);

/// Scores every node active in the last snapshot of the series.
std::vector<BniScore> bni_report(const std::vector<Snapshot>& series, std::int64_t interval_seconds,
                                 const BniParams& params);

void write_bni_csv(std::ostream& out, const std::vector<BniScore>& scores);
void write_churn_csv(std::ostream& out, const TimelineSet& timelines);
void write_size_csv(std::ostream& out, const std::vector<SizePoint>& series);

} // namespace chainobs::metrics
