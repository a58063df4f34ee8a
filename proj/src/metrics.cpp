#include "chainobs/metrics.hpp"

#include "chainobs/csv.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <set>

namespace chainobs::metrics {

namespace {

std::size_t slot_of(std::int64_t t, std::int64_t start, std::int64_t interval)
{
    double slot = std::round(static_cast<double>(t - start) / static_cast<double>(interval));
    return slot < 0 ? 0 : static_cast<std::size_t>(slot);
}

double clamp01(double x)
{
    return std::clamp(x, 0.0, 1.0);
}

// 1 - (buckets holding an excursion) / (buckets holding a sample).
double bucket_stability(const RttSeries& rtt, const std::vector<bool>& excursion, std::int64_t interval,
                        std::int64_t bucket_seconds)
{
    std::set<std::int64_t> observed, flagged;
    for (std::size_t i = 0; i < rtt.size(); ++i) {
        auto bucket = static_cast<std::int64_t>(rtt[i].slot) * interval / bucket_seconds;
        observed.insert(bucket);
        if (excursion[i]) flagged.insert(bucket);
    }
    return 1.0 - static_cast<double>(flagged.size()) / static_cast<double>(observed.size());
}

} // namespace

TimelineSet build_timelines(const std::vector<Snapshot>& series, std::int64_t interval_seconds)
{
    if (interval_seconds <= 0) throw MetricsError(Errc::BadInterval, "snapshot interval must be positive");
    if (series.empty()) throw MetricsError(Errc::EmptySeries, "no snapshots");

    std::vector<const Snapshot*> ordered;
    for (const auto& s : series) ordered.push_back(&s);
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const Snapshot* a, const Snapshot* b) { return a->started_at < b->started_at; });

    TimelineSet set;
    set.start = ordered.front()->started_at;
    set.interval_seconds = interval_seconds;
    set.slot_count = slot_of(ordered.back()->started_at, set.start, interval_seconds) + 1;

    std::vector<bool> filled(set.slot_count, false);
    for (const auto* snap : ordered) {
        auto slot = slot_of(snap->started_at, set.start, interval_seconds);
        filled[slot] = true;
        for (const auto* rec : snap->active_records()) {
            auto [it, inserted] = set.nodes.try_emplace(rec->address);
            auto& history = it->second;
            if (inserted) {
                history.timeline.address = rec->address;
                history.timeline.interval_seconds = interval_seconds;
                history.timeline.activity.assign(set.slot_count, false);
            }
            bool already = history.timeline.activity[slot];
            history.timeline.activity[slot] = true;
            if (rec->min_rtt_ms && !already) history.rtt.push_back({slot, *rec->min_rtt_ms});
        }
    }
    for (std::size_t i = 0; i < set.slot_count; ++i) {
        if (!filled[i]) set.missing_slots.push_back(i);
    }
    for (auto& [_, history] : set.nodes) {
        std::stable_sort(history.rtt.begin(), history.rtt.end(),
                         [](const RttSample& a, const RttSample& b) { return a.slot < b.slot; });
    }
    return set;
}

std::vector<std::size_t> sessions(const ActivityTimeline& timeline)
{
    std::vector<std::size_t> out;
    std::size_t run = 0;
    for (bool active : timeline.activity) {
        if (active) {
            ++run;
        } else if (run) {
            out.push_back(run);
            run = 0;
        }
    }
    if (run) out.push_back(run);
    return out;
}

double mean_connection_time(const ActivityTimeline& timeline)
{
    auto runs = sessions(timeline);
    if (runs.empty()) throw MetricsError(Errc::NeverActive, "node never active: " + timeline.address.to_string());
    std::size_t total = 0;
    for (auto r : runs) total += r;
    return static_cast<double>(total) * static_cast<double>(timeline.interval_seconds) /
           static_cast<double>(runs.size());
}

std::size_t flapping_events(const ActivityTimeline& timeline)
{
    auto n = sessions(timeline).size();
    return n == 0 ? 0 : n - 1;
}

std::vector<SizePoint> network_size_series(const std::vector<Snapshot>& series)
{
    std::vector<SizePoint> out;
    for (const auto& snap : series) {
        SizePoint p;
        p.started_at = snap.started_at;
        for (const auto* rec : snap.active_records()) {
            switch (rec->net) {
            case NetType::ipv4: ++p.ipv4; break;
            case NetType::ipv6: ++p.ipv6; break;
            case NetType::tor: ++p.tor; break;
            }
            ++p.total;
        }
        out.push_back(p);
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const SizePoint& a, const SizePoint& b) { return a.started_at < b.started_at; });
    return out;
}

NetworkProfile NetworkProfile::from_snapshot(const Snapshot& snapshot)
{
    NetworkProfile p;
    std::map<std::uint64_t, std::size_t> services;
    std::vector<std::int64_t> heights;
    for (const auto* rec : snapshot.active_records()) {
        ++p.active_nodes;
        ++p.version_counts[rec->protocol_version];
        ++services[rec->services];
        heights.push_back(rec->start_height);
        if (rec->geo) ++p.asn_counts[rec->geo->asn];
    }
    std::size_t best = 0;
    for (const auto& [value, count] : services) {
        if (count > best) {
            best = count;
            p.modal_services = value;
        }
    }
    if (!heights.empty()) {
        std::sort(heights.begin(), heights.end());
        auto mid = heights.size() / 2;
        p.median_height = heights.size() % 2 ? static_cast<double>(heights[mid])
                                             : (static_cast<double>(heights[mid - 1]) + static_cast<double>(heights[mid])) / 2.0;
    }
    return p;
}

std::size_t NetworkProfile::version_rank(std::int32_t version) const
{
    auto it = version_counts.find(version);
    std::size_t own = it == version_counts.end() ? 0 : it->second;
    std::size_t rank = 1;
    for (const auto& [v, count] : version_counts) {
        if (count > own) ++rank;
    }
    return rank;
}

double version_index(std::int32_t version, const NetworkProfile& profile)
{
    return 1.0 / static_cast<double>(profile.version_rank(version));
}

double asn_index(std::size_t same_as_nodes, std::size_t network_size)
{
    if (network_size < 2 || same_as_nodes == 0) return 0.0;
    // log10 keeps ratios of exact powers of ten exact (ln(1000)/ln(10000) is 0.7499...).
    double n = static_cast<double>(same_as_nodes);
    double N = static_cast<double>(network_size);
    return clamp01(std::log10(N / n) / std::log10(N));
}

double port_index(std::uint16_t port)
{
    return port == kDefaultBitcoinPort ? 1.0 : 0.0;
}

double service_index(std::uint64_t services, std::uint64_t modal_services)
{
    auto uni = std::popcount(services | modal_services);
    if (uni == 0) return 1.0;
    return static_cast<double>(std::popcount(services & modal_services)) / static_cast<double>(uni);
}

double height_index(std::int64_t height, double median_height, double tolerance)
{
    if (tolerance <= 0) return static_cast<double>(height) == median_height ? 1.0 : 0.0;
    return std::max(0.0, 1.0 - std::abs(static_cast<double>(height) - median_height) / tolerance);
}

std::vector<bool> latency_excursions(const std::vector<double>& rtt_ms, double tau, double alpha)
{
    std::vector<bool> out(rtt_ms.size(), false);
    double ewma = 0;
    for (std::size_t i = 0; i < rtt_ms.size(); ++i) {
        if (i == 0) {
            ewma = rtt_ms[0];
            continue;
        }
        out[i] = rtt_ms[i] > (1.0 + tau) * ewma;
        ewma = alpha * rtt_ms[i] + (1.0 - alpha) * ewma;
    }
    return out;
}

LatencyUptime latency_and_uptime_metrics(const ActivityTimeline& timeline, const RttSeries& rtt,
                                         const BniParams& params)
{
    LatencyUptime m;
    double mean_session = mean_connection_time(timeline);
    auto window = static_cast<double>(timeline.observation_window_seconds());
    m.uptime_index = clamp01(mean_session / window);
    auto active = static_cast<double>(std::count(timeline.activity.begin(), timeline.activity.end(), true));
    m.availability_index = clamp01(active / static_cast<double>(timeline.activity.size()));

    if (rtt.empty()) {
        m.no_rtt_samples = true;
        return m;
    }
    std::vector<double> values;
    for (const auto& s : rtt) values.push_back(s.rtt_ms);
    auto excursion = latency_excursions(values, params.tau, params.alpha);
    m.excursions = static_cast<std::size_t>(std::count(excursion.begin(), excursion.end(), true));
    m.latency_trend = 1.0 - static_cast<double>(m.excursions) / static_cast<double>(values.size());
    m.daily_latency_stability = bucket_stability(rtt, excursion, timeline.interval_seconds, kSecondsPerDay);
    m.weekly_latency_stability = bucket_stability(rtt, excursion, timeline.interval_seconds, kSecondsPerWeek);
    return m;
}

double bni_from_sub_metrics(const std::array<double, kSubMetricCount>& sub_metrics)
{
    double sum = 0;
    for (double v : sub_metrics) sum += v;
    return 10.0 * (sum / static_cast<double>(kSubMetricCount));
}

BniScore bni(const PeerRecord& node, const NetworkProfile& profile, const NodeHistory& history,
             const BniParams& params)
{
    if (!node.active()) throw MetricsError(Errc::NotActive, "node not active: " + node.address.to_string());
    BniScore score;
    score.address = node.address;

    double asn = 0;
    if (node.geo) {
        auto it = profile.asn_counts.find(node.geo->asn);
        asn = asn_index(it == profile.asn_counts.end() ? 0 : it->second, profile.active_nodes);
    } else {
        score.asn_unknown = true;
    }
    auto lu = latency_and_uptime_metrics(history.timeline, history.rtt, params);
    score.no_rtt_samples = lu.no_rtt_samples;

    score.sub_metrics = {
        version_index(node.protocol_version, profile),
        service_index(node.services, profile.modal_services),
        port_index(node.address.port()),
        height_index(node.start_height, profile.median_height, params.height_tolerance),
        asn,
        lu.daily_latency_stability,
        lu.weekly_latency_stability,
        lu.latency_trend,
        lu.uptime_index,
        lu.availability_index,
    };
    score.bni = bni_from_sub_metrics(score.sub_metrics);
    return score;
}

std::vector<BniScore> bni_report(const std::vector<Snapshot>& series, std::int64_t interval_seconds,
                                 const BniParams& params)
{
    auto timelines = build_timelines(series, interval_seconds);
    const Snapshot* latest = &series.front();
    for (const auto& s : series) {
        if (s.started_at >= latest->started_at) latest = &s;
    }
    auto profile = NetworkProfile::from_snapshot(*latest);
    std::vector<BniScore> out;
    for (const auto* rec : latest->active_records()) {
        out.push_back(bni(*rec, profile, timelines.nodes.at(rec->address), params));
    }
    return out;
}

void write_bni_csv(std::ostream& out, const std::vector<BniScore>& scores)
{
    std::vector<std::string> row{"address"};
    for (auto name : kSubMetricNames) row.emplace_back(name);
    row.emplace_back("bni");
    row.emplace_back("flags");
    csv::write_row(out, row);
    for (const auto& s : scores) {
        row.clear();
        row.push_back(s.address.to_string());
        for (double v : s.sub_metrics) row.push_back(csv::format_double(v));
        row.push_back(csv::format_double(s.bni));
        std::string flags;
        if (s.asn_unknown) flags += "asn_unknown";
        if (s.no_rtt_samples) flags += flags.empty() ? "no_rtt" : ";no_rtt";
        row.push_back(flags);
        csv::write_row(out, row);
    }
}

void write_churn_csv(std::ostream& out, const TimelineSet& timelines)
{
    csv::write_row(out, {"address", "sessions", "mean_connection_s", "flaps", "availability"});
    for (const auto& [ep, history] : timelines.nodes) {
        const auto& t = history.timeline;
        auto active = std::count(t.activity.begin(), t.activity.end(), true);
        csv::write_row(out, {
                                ep.to_string(),
                                std::to_string(sessions(t).size()),
                                csv::format_double(mean_connection_time(t)),
                                std::to_string(flapping_events(t)),
                                csv::format_double(static_cast<double>(active) / static_cast<double>(t.activity.size())),
                            });
    }
}

void write_size_csv(std::ostream& out, const std::vector<SizePoint>& series)
{
    csv::write_row(out, {"started_at", "ipv4", "ipv6", "tor", "total"});
    for (const auto& p : series) {
        csv::write_row(out, {std::to_string(p.started_at), std::to_string(p.ipv4), std::to_string(p.ipv6),
                             std::to_string(p.tor), std::to_string(p.total)});
    }
}

} // namespace chainobs::metrics
