#pragma once

#include <vector>

namespace flowlik {

// One flow as a sequence of inter-renewals. gaps[0] is the lead gap measured
// from `anchor` (the start time of the previous flow); gaps[1..] are the
// packet inter-renewals inside the flow. A thinned flow may be empty.
struct Flow {
    double anchor = 0.0;
    std::vector<double> gaps;

    std::size_t size() const { return gaps.size(); }
    bool empty() const { return gaps.empty(); }

    double start() const { return gaps.empty() ? anchor : anchor + gaps.front(); }

    std::vector<double> arrivals() const {
        std::vector<double> out;
        out.reserve(gaps.size());
        double t = anchor;
        for (double g : gaps) out.push_back(t += g);
        return out;
    }

    // Packet inter-renewals only (without the lead gap).
    std::vector<double> inter_renewals() const {
        if (gaps.size() < 2) return {};
        return {gaps.begin() + 1, gaps.end()};
    }
};

} // namespace flowlik
