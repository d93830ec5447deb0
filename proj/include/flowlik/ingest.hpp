#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "error.hpp"
#include "flow.hpp"
#include "flow_size.hpp"
#include "traffic_model.hpp"

namespace flowlik {

struct TraceRecord {
    std::string flow_id;
    std::uint64_t timestamp_ns = 0;
};

inline std::vector<long> default_size_grid() {
    std::vector<long> g;
    for (int k = 0; k <= 5; ++k)
        for (double j : {1.0, 2.5, 5.0}) g.push_back(static_cast<long>(std::ceil(j * std::pow(10.0, k))));
    return g;
}

struct IngestConfig {
    double zero_gap_replacement = 1e-7; // seconds
    long min_flow_size = 2;
    std::vector<long> size_grid = default_size_grid();
    // Lead gap of the first flow is measured from here; defaults to its first packet.
    std::optional<std::uint64_t> origin_ns;

    void validate() const {
        if (!(zero_gap_replacement > 0.0)) throw ConfigError("ingest: zero_gap_replacement must be > 0");
        if (min_flow_size < 1) throw ConfigError("ingest: min_flow_size must be >= 1");
    }
};

struct TraceData {
    std::vector<Flow> all_flows; // every flow, ordered by first packet
    std::vector<Flow> flows;     // flows with at least min_flow_size packets
    std::vector<std::string> ids;
    long trivial = 0;
    long clamped_gaps = 0;
};

inline std::vector<TraceRecord> read_trace_records(std::istream& is, const std::string& source = "<stream>") {
    std::string line;
    if (!std::getline(is, line)) throw ConfigError(source + ": empty trace CSV");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "flow_id,timestamp_ns") throw ConfigError(source + ": expected header 'flow_id,timestamp_ns'");
    std::vector<TraceRecord> out;
    long lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto comma = line.rfind(',');
        if (comma == std::string::npos || comma == 0)
            throw ConfigError(source + ":" + std::to_string(lineno) + ": malformed row '" + line + "'");
        TraceRecord r;
        r.flow_id = line.substr(0, comma);
        const char* p = line.data() + comma + 1;
        const char* end = line.data() + line.size();
        auto res = std::from_chars(p, end, r.timestamp_ns);
        if (res.ec != std::errc() || res.ptr != end || p == end)
            throw ConfigError(source + ":" + std::to_string(lineno) + ": bad timestamp in '" + line + "'");
        out.push_back(std::move(r));
    }
    return out;
}

// Groups records into flows. Gaps are in seconds; the lead gap of a flow is
// measured from the previous flow's first packet.
inline TraceData assemble_flows(const std::vector<TraceRecord>& records, const IngestConfig& cfg = {}) {
    cfg.validate();
    TraceData data;
    if (records.empty()) return data;
    std::unordered_map<std::string, std::size_t> index;
    std::vector<std::vector<std::uint64_t>> stamps;
    for (const auto& r : records) {
        auto [it, fresh] = index.emplace(r.flow_id, stamps.size());
        if (fresh) {
            stamps.emplace_back();
            data.ids.push_back(r.flow_id);
        }
        stamps[it->second].push_back(r.timestamp_ns);
    }
    for (auto& s : stamps) std::stable_sort(s.begin(), s.end());
    std::vector<std::size_t> order(stamps.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return stamps[a].front() < stamps[b].front(); });

    std::vector<std::string> ids;
    const std::uint64_t origin = cfg.origin_ns.value_or(stamps[order.front()].front());
    std::uint64_t prev = origin;
    for (auto fi : order) {
        const auto& s = stamps[fi];
        Flow f;
        f.anchor = static_cast<double>(prev - origin) / 1e9;
        f.gaps.reserve(s.size());
        if (s.front() < prev) throw ConfigError("trace: packets precede the origin");
        f.gaps.push_back(static_cast<double>(s.front() - prev) / 1e9);
        for (std::size_t i = 1; i < s.size(); ++i) {
            double g = static_cast<double>(s[i] - s[i - 1]) / 1e9;
            if (g == 0.0) {
                g = cfg.zero_gap_replacement;
                ++data.clamped_gaps;
            }
            f.gaps.push_back(g);
        }
        prev = s.front();
        ids.push_back(data.ids[fi]);
        if (static_cast<long>(f.size()) >= cfg.min_flow_size)
            data.flows.push_back(f);
        else
            ++data.trivial;
        data.all_flows.push_back(std::move(f));
    }
    data.ids = std::move(ids);
    return data;
}

inline TraceData read_trace(std::istream& is, const IngestConfig& cfg = {}, const std::string& source = "<stream>") {
    return assemble_flows(read_trace_records(is, source), cfg);
}

inline TraceData read_trace(const std::string& path, const IngestConfig& cfg = {}) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    return read_trace(in, cfg, path);
}

// Writes flows as a trace with integer nanosecond timestamps; flow i gets id
// "f<i>" and starts at origin + anchor + lead gap. Times are rounded to whole
// nanoseconds, so flows read from a trace come back unchanged when read with
// the same origin.
inline void write_trace(std::ostream& os, const std::vector<Flow>& flows, std::uint64_t origin_ns = 0) {
    os << "flow_id,timestamp_ns\n";
    auto ns_of = [](double g) { return static_cast<std::uint64_t>(std::llround(g * 1e9)); };
    for (std::size_t i = 0; i < flows.size(); ++i) {
        const auto& f = flows[i];
        if (f.empty()) continue;
        std::uint64_t t = origin_ns + ns_of(f.anchor) + ns_of(f.gaps.front());
        for (std::size_t j = 0; j < f.gaps.size(); ++j) {
            if (j > 0) t += ns_of(f.gaps[j]);
            os << 'f' << i << ',' << t << '\n';
        }
    }
}

inline long round_to_grid(long size, const std::vector<long>& grid) {
    if (grid.empty()) throw ConfigError("empty size grid");
    auto it = std::lower_bound(grid.begin(), grid.end(), size);
    if (it == grid.end()) return grid.back();
    if (*it == size || it == grid.begin()) return *it;
    long hi = *it, lo = *(it - 1);
    return size - lo <= hi - size ? lo : hi;
}

// Each size goes to the nearest grid value (ties to the smaller one); masses
// are the rounded-count proportions.
inline FlowSizePmf empirical_flow_size_pmf(const std::vector<long>& sizes, std::vector<long> grid = default_size_grid()) {
    if (sizes.empty()) throw DomainError("empirical_flow_size_pmf: no sizes");
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    std::vector<long> counts(grid.size(), 0);
    for (long s : sizes) {
        long g = round_to_grid(s, grid);
        counts[static_cast<std::size_t>(std::lower_bound(grid.begin(), grid.end(), g) - grid.begin())]++;
    }
    std::vector<long> sup;
    std::vector<double> mass;
    for (std::size_t i = 0; i < grid.size(); ++i)
        if (counts[i] > 0) {
            sup.push_back(grid[i]);
            mass.push_back(static_cast<double>(counts[i]) / static_cast<double>(sizes.size()));
        }
    return FlowSizePmf::empirical(sup, mass);
}

struct SurvivalPoint {
    double x;
    double s_empirical;
    double s_model; // NaN without a model
};

// Empirical survival P(X > x) on a log-spaced grid from min/2 to 2*max.
inline std::vector<SurvivalPoint> survival_curve(std::vector<double> values, int n_points,
                                                 const std::optional<PacketModel>& model = std::nullopt) {
    if (values.empty()) throw DomainError("survival_curve: no values");
    if (n_points < 2) throw DomainError("survival_curve: need at least 2 points");
    for (double v : values)
        if (!(v > 0.0)) throw DomainError("survival_curve: values must be > 0");
    std::sort(values.begin(), values.end());
    const double lo = std::log(values.front() / 2.0), hi = std::log(values.back() * 2.0);
    const double n = static_cast<double>(values.size());
    std::vector<SurvivalPoint> out;
    out.reserve(static_cast<std::size_t>(n_points));
    for (int i = 0; i < n_points; ++i) {
        double x = std::exp(lo + (hi - lo) * i / (n_points - 1));
        auto above = values.end() - std::upper_bound(values.begin(), values.end(), x);
        double sm = model ? survival(*model, x) : std::numeric_limits<double>::quiet_NaN();
        out.push_back({x, static_cast<double>(above) / n, sm});
    }
    return out;
}

inline void write_survival_csv(std::ostream& os, const std::vector<SurvivalPoint>& pts) {
    os << "x,s_empirical,s_model\n";
    char buf[96];
    for (const auto& p : pts) {
        int n = std::isnan(p.s_model) ? std::snprintf(buf, sizeof buf, "%.9g,%.9g,\n", p.x, p.s_empirical)
                                      : std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g\n", p.x, p.s_empirical, p.s_model);
        os.write(buf, n);
    }
}

} // namespace flowlik
