#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "error.hpp"
#include "flow.hpp"
#include "flow_size.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "traffic_model.hpp"

namespace flowlik {

struct SessionConfig {
    double flow_rate = 1.0; // flows per second
    PacketModel packet_model = PacketModel::gamma(0.6, 526.32);
    FlowSizePmf flow_size_pmf = FlowSizePmf::zeta(2.012085);
    long n_flows = 1;
    double thinning_q = 1.0;
    std::uint64_t seed = 1;

    void validate() const {
        if (!(flow_rate > 0.0)) throw ConfigError("session: flow_rate must be > 0");
        if (n_flows < 1) throw ConfigError("session: n_flows must be >= 1");
        if (!(thinning_q > 0.0 && thinning_q <= 1.0)) throw ConfigError("session: thinning_q must lie in (0, 1]");
        packet_model.validate();
    }
};

// Stream salts keep the simulation, thinning and bootstrap draws independent.
inline constexpr std::uint64_t kSaltFlows = 1;
inline constexpr std::uint64_t kSaltThin = 2;

// A flow of `size` packets: lead gap from Exp(flow_rate) (0 when flow_rate is
// not positive, for duration-only studies) followed by size-1 inter-renewals.
inline Flow generate_flow(const PacketModel& model, long size, Rng& rng, double flow_rate = 0.0) {
    if (size < 1) throw DomainError("generate_flow: size must be >= 1");
    Flow f;
    f.gaps.resize(static_cast<std::size_t>(size));
    f.gaps[0] = flow_rate > 0.0 ? std::exponential_distribution<double>(flow_rate)(rng) : 0.0;
    for (long i = 1; i < size; ++i) f.gaps[static_cast<std::size_t>(i)] = sample(model, rng);
    return f;
}

// Flow i draws its size, lead gap and packet gaps from its own stream, so the
// session is identical for any thread count.
inline std::vector<Flow> generate_session(const SessionConfig& cfg, unsigned threads = 1) {
    cfg.validate();
    std::vector<Flow> flows(static_cast<std::size_t>(cfg.n_flows));
    parallel_for(flows.size(), threads, [&](std::size_t i) {
        Rng rng = derive_stream(cfg.seed, i, kSaltFlows);
        long size = cfg.flow_size_pmf.sample(rng);
        flows[i] = generate_flow(cfg.packet_model, size, rng, cfg.flow_rate);
    });
    double t = 0.0;
    for (auto& f : flows) {
        f.anchor = t;
        t += f.gaps[0];
    }
    return flows;
}

// Bernoulli retention: indices of the kept packets, ascending.
inline std::vector<std::size_t> thin_indices(std::size_t size, double q, Rng& rng) {
    if (!(q > 0.0 && q <= 1.0)) throw DomainError("thinning probability must lie in (0, 1]");
    std::vector<std::size_t> idx;
    if (q == 1.0) {
        idx.resize(size);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        return idx;
    }
    for (std::size_t i = 0; i < size; ++i)
        if (rng.uniform() < q) idx.push_back(i);
    return idx;
}

// Binomial count, then a uniformly random subset of that size.
inline std::vector<std::size_t> thin_indices_fast(std::size_t size, double q, Rng& rng) {
    if (!(q > 0.0 && q <= 1.0)) throw DomainError("thinning probability must lie in (0, 1]");
    std::vector<std::size_t> idx;
    if (q == 1.0) {
        idx.resize(size);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        return idx;
    }
    const std::size_t r = static_cast<std::size_t>(std::binomial_distribution<long>(static_cast<long>(size), q)(rng));
    if (r == 0) return idx;
    // Floyd's subset sampling.
    std::vector<char> taken(size, 0);
    idx.reserve(r);
    for (std::size_t j = size - r; j < size; ++j) {
        std::size_t t = std::uniform_int_distribution<std::size_t>(0, j)(rng);
        std::size_t pick = taken[t] ? j : t;
        taken[pick] = 1;
        idx.push_back(pick);
    }
    std::sort(idx.begin(), idx.end());
    return idx;
}

// Keeps the packets at `idx` (ascending). Gaps of the result are sums of the
// parent's gaps, so timestamps are preserved.
inline Flow apply_retention(const Flow& flow, const std::vector<std::size_t>& idx) {
    Flow out;
    out.anchor = flow.anchor;
    out.gaps.reserve(idx.size());
    std::size_t next = 0;
    for (std::size_t i : idx) {
        if (i >= flow.gaps.size()) throw DomainError("apply_retention: index out of range");
        double s = 0.0;
        for (; next <= i; ++next) s += flow.gaps[next];
        out.gaps.push_back(s);
    }
    return out;
}

inline Flow thin_flow(const Flow& flow, double q, Rng& rng) {
    if (q == 1.0) return flow;
    return apply_retention(flow, thin_indices(flow.size(), q, rng));
}

inline Flow thin_flow_fast(const Flow& flow, double q, Rng& rng) {
    if (q == 1.0) return flow;
    return apply_retention(flow, thin_indices_fast(flow.size(), q, rng));
}

// Thins every flow of a session with per-flow streams.
inline std::vector<Flow> thin_session(const std::vector<Flow>& flows, double q, std::uint64_t seed, bool fast = true,
                                      unsigned threads = 1) {
    std::vector<Flow> out(flows.size());
    parallel_for(flows.size(), threads, [&](std::size_t i) {
        Rng rng = derive_stream(seed, i, kSaltThin);
        out[i] = fast ? thin_flow_fast(flows[i], q, rng) : thin_flow(flows[i], q, rng);
    });
    return out;
}

} // namespace flowlik
