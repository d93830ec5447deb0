#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"
#include "flow.hpp"
#include "math.hpp"

namespace flowlik {

struct NetFlow {
    double s_f = 0.0; // gap from the previous flow start to the first packet
    double s_d = 0.0; // duration, first to last packet
    long size = 1;    // packets in the flow

    long inter_renewals() const { return size - 1; }
    bool operator==(const NetFlow&) const = default;
};

// NetFlow of a thinned flow; size is the retained packet count.
struct SampledNetFlow {
    double s_f = 0.0;
    double s_d = 0.0;
    long size = 0;

    bool operator==(const SampledNetFlow&) const = default;
};

struct SessionNetFlow {
    double total_duration = 0.0;
    long total_packets = 0;
    long n_flows = 0;
};

inline NetFlow aggregate(const Flow& flow) {
    if (flow.empty()) throw DomainError("aggregate: empty flow");
    NetFlow nf;
    nf.s_f = flow.gaps.front();
    double d = 0.0;
    for (std::size_t i = 1; i < flow.gaps.size(); ++i) d += flow.gaps[i];
    nf.s_d = d;
    nf.size = static_cast<long>(flow.gaps.size());
    return nf;
}

// Returns nullopt (a trivial sampled NetFlow) when at most one packet was
// retained. The lead gap is measured from prev_flow_anchor.
inline std::optional<SampledNetFlow> aggregate_sampled(const Flow& thinned, double prev_flow_anchor) {
    if (thinned.size() <= 1) return std::nullopt;
    SampledNetFlow s;
    s.s_f = thinned.anchor + thinned.gaps.front() - prev_flow_anchor;
    if (thinned.anchor == prev_flow_anchor) s.s_f = thinned.gaps.front();
    double d = 0.0;
    for (std::size_t i = 1; i < thinned.gaps.size(); ++i) d += thinned.gaps[i];
    s.s_d = d;
    s.size = static_cast<long>(thinned.size());
    return s;
}

inline std::optional<SampledNetFlow> aggregate_sampled(const Flow& thinned) {
    return aggregate_sampled(thinned, thinned.anchor);
}

inline SessionNetFlow session_netflow(const std::vector<NetFlow>& netflows) {
    if (netflows.empty()) throw DomainError("session_netflow: empty list");
    SessionNetFlow s;
    CompensatedSum d;
    for (const auto& nf : netflows) {
        d.add(nf.s_d);
        s.total_packets += nf.size;
    }
    s.total_duration = d.value();
    s.n_flows = static_cast<long>(netflows.size());
    return s;
}

inline std::vector<NetFlow> aggregate_all(const std::vector<Flow>& flows) {
    std::vector<NetFlow> out;
    out.reserve(flows.size());
    for (const auto& f : flows) out.push_back(aggregate(f));
    return out;
}

// Sampled NetFlows of the non-trivial thinned flows; `trivial` receives the
// number of discarded ones.
inline std::vector<SampledNetFlow> aggregate_sampled_all(const std::vector<Flow>& thinned, long* trivial = nullptr) {
    std::vector<SampledNetFlow> out;
    long n_trivial = 0;
    for (const auto& f : thinned) {
        if (auto s = aggregate_sampled(f))
            out.push_back(*s);
        else
            ++n_trivial;
    }
    if (trivial) *trivial = n_trivial;
    return out;
}

// CSV: header `s_f,s_d,size`, seconds printed with 9 significant digits.

namespace detail {

inline void write_netflow_rows(std::ostream& os, const auto& rows) {
    os << "s_f,s_d,size\n";
    char buf[96];
    for (const auto& r : rows) {
        int n = std::snprintf(buf, sizeof buf, "%.9g,%.9g,%ld\n", r.s_f, r.s_d, r.size);
        os.write(buf, n);
    }
}

template <class Row>
std::vector<Row> read_netflow_rows(std::istream& is, const std::string& source) {
    std::string line;
    if (!std::getline(is, line)) throw ConfigError(source + ": empty NetFlow CSV");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "s_f,s_d,size") throw ConfigError(source + ": expected header 's_f,s_d,size'");
    std::vector<Row> rows;
    long lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        Row r;
        const char* p = line.data();
        const char* end = p + line.size();
        auto fail = [&] { return ConfigError(source + ":" + std::to_string(lineno) + ": malformed row '" + line + "'"); };
        auto r1 = std::from_chars(p, end, r.s_f);
        if (r1.ec != std::errc() || r1.ptr == end || *r1.ptr != ',') throw fail();
        auto r2 = std::from_chars(r1.ptr + 1, end, r.s_d);
        if (r2.ec != std::errc() || r2.ptr == end || *r2.ptr != ',') throw fail();
        auto r3 = std::from_chars(r2.ptr + 1, end, r.size);
        if (r3.ec != std::errc() || r3.ptr != end) throw fail();
        if (r.s_f < 0.0 || r.s_d < 0.0 || r.size < 0) throw fail();
        rows.push_back(r);
    }
    return rows;
}

} // namespace detail

inline void write_netflow_csv(std::ostream& os, const std::vector<NetFlow>& rows) { detail::write_netflow_rows(os, rows); }
inline void write_netflow_csv(std::ostream& os, const std::vector<SampledNetFlow>& rows) {
    detail::write_netflow_rows(os, rows);
}

inline std::string netflow_csv_string(const auto& rows) {
    std::ostringstream os;
    detail::write_netflow_rows(os, rows);
    return os.str();
}

inline std::vector<NetFlow> read_netflow_csv(std::istream& is, const std::string& source = "<stream>") {
    auto rows = detail::read_netflow_rows<NetFlow>(is, source);
    for (std::size_t i = 0; i < rows.size(); ++i)
        if (rows[i].size < 1) throw ConfigError(source + ": row " + std::to_string(i + 2) + " has size < 1");
    return rows;
}

inline std::vector<NetFlow> read_netflow_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    return read_netflow_csv(in, path);
}

inline std::vector<SampledNetFlow> read_sampled_netflow_csv(std::istream& is, const std::string& source = "<stream>") {
    return detail::read_netflow_rows<SampledNetFlow>(is, source);
}

inline std::vector<SampledNetFlow> read_sampled_netflow_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    return read_sampled_netflow_csv(in, path);
}

} // namespace flowlik
