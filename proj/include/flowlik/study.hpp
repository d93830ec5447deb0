#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <map>
#include <mutex>
#include <ostream>
#include <string>
#include <vector>

#include "error.hpp"
#include "estimators.hpp"
#include "flow.hpp"
#include "likelihood.hpp"
#include "math.hpp"
#include "netflow.hpp"
#include "parallel.hpp"
#include "simulator.hpp"

namespace flowlik {

// One replicate session. With q = 1 it holds n flows as generated (single
// packet flows included, their NetFlows are still observed). With q < 1 it
// holds n flows that stay non-trivial after thinning (two or more retained
// packets), since only those yield a sampled duration.
struct StudySession {
    std::vector<Flow> flows;   // complete flows
    std::vector<Flow> thinned; // same flows after thinning (== flows when q = 1)
    long generated = 0;        // flows drawn, trivial ones included
};

inline constexpr std::uint64_t kSaltReplicate = 5;

// Flow i uses its own streams, so the result does not depend on how the
// caller parallelises.
inline StudySession simulate_study_session(const SessionConfig& cfg, long n, std::uint64_t seed, bool fast = true,
                                             long max_draws = 0) {
    cfg.validate();
    if (n < 1) throw ConfigError("simulate_study_session: n must be >= 1");
    if (max_draws <= 0) max_draws = 1000 * n + 1000000;
    StudySession s;
    double t = 0.0;
    for (std::uint64_t i = 0; static_cast<long>(s.flows.size()) < n; ++i) {
        if (static_cast<long>(i) >= max_draws)
            throw NumericalError("simulate_study_session: too few non-trivial flows after " + std::to_string(max_draws) +
                                 " draws");
        Rng rng = derive_stream(seed, i, kSaltFlows);
        long size = cfg.flow_size_pmf.sample(rng);
        Flow f = generate_flow(cfg.packet_model, size, rng, cfg.flow_rate);
        f.anchor = t;
        t += f.gaps[0];
        ++s.generated;
        if (cfg.thinning_q == 1.0) {
            s.thinned.push_back(f);
            s.flows.push_back(std::move(f));
            continue;
        }
        Rng thin_rng = derive_stream(seed, i, kSaltThin);
        Flow th = fast ? thin_flow_fast(f, cfg.thinning_q, thin_rng) : thin_flow(f, cfg.thinning_q, thin_rng);
        if (th.size() < 2) continue;
        s.flows.push_back(std::move(f));
        s.thinned.push_back(std::move(th));
    }
    return s;
}

inline std::vector<double> pooled_inter_renewals(const std::vector<Flow>& flows) {
    std::vector<double> x;
    for (const auto& f : flows)
        for (std::size_t i = 1; i < f.gaps.size(); ++i) x.push_back(f.gaps[i]);
    return x;
}

struct StudyConfig {
    SessionConfig session;
    Family family = Family::Gamma;
    // mle-standard, mle, mle-sampled, mom, mom-netflow, lognormal-two-step
    std::vector<std::string> estimators{"mle"};
    std::vector<long> n_grid{100};
    long replicates = 10;
    std::uint64_t seed = 1;
    bool fast_thinning = true;
    double truncation = 1e-10;
    OptimizerConfig optimizer{};
    unsigned threads = 1;

    void validate() const {
        session.validate();
        if (replicates < 1) throw ConfigError("study: replicates must be >= 1");
        if (n_grid.empty()) throw ConfigError("study: empty n_grid");
        for (long n : n_grid)
            if (n < 1) throw ConfigError("study: session sizes must be >= 1");
        for (const auto& e : estimators)
            if (e != "mle-standard" && e != "mle" && e != "mle-sampled" && e != "mom" && e != "mom-netflow" &&
                e != "lognormal-two-step")
                throw ConfigError("study: unknown estimator '" + e + "'");
    }
};

struct StudyCell {
    std::string estimator;
    long n = 0;
    std::string parameter;
    std::vector<double> values; // per replicate, in replicate order (failures omitted)
    std::vector<double> time_ms;
    std::vector<double> bytes;
    long failures = 0;

    double mean() const { return flowlik::mean(values); }
    double se() const {
        return values.size() < 2 ? std::numeric_limits<double>::quiet_NaN()
                                 : stddev(values) / std::sqrt(static_cast<double>(values.size()));
    }
    double median() const { return flowlik::median(values); }
};

struct StudyResult {
    std::vector<StudyCell> cells;

    const StudyCell& cell(const std::string& estimator, long n, const std::string& parameter) const {
        for (const auto& c : cells)
            if (c.estimator == estimator && c.n == n && c.parameter == parameter) return c;
        throw ConfigError("study: no cell " + estimator + "/" + std::to_string(n) + "/" + parameter);
    }
};

struct EstimateRecord {
    std::vector<std::pair<std::string, double>> params;
    double time_ms = 0.0;
    long bytes = 0;
};

// Runs one estimator on one simulated session.
inline EstimateRecord run_estimator(const std::string& est, const StudySession& s, const StudyConfig& cfg) {
    using clock = std::chrono::steady_clock;
    EstimateRecord rec;
    const double q = cfg.session.thinning_q;
    auto from_fit = [&](const FitResult& fr) {
        for (std::size_t i = 0; i < fr.names.size(); ++i) rec.params.push_back({fr.names[i], fr.params[i]});
        rec.time_ms = fr.wall_time * 1e3;
        rec.bytes = fr.data_bytes;
    };
    auto sampled_fit = [&](Family fam) {
        std::vector<SampledNetFlow> sampled;
        for (const auto& f : s.thinned)
            if (auto x = aggregate_sampled(f)) sampled.push_back(*x);
        LikelihoodConfig lc;
        lc.pmf = cfg.session.flow_size_pmf;
        lc.q = q;
        lc.truncation = cfg.truncation;
        lc.restricted = true;
        auto fr = mle_sampled_netflow(sampled, fam, lc, cfg.optimizer);
        return fr;
    };
    if (est == "mle-standard") {
        auto x = pooled_inter_renewals(s.flows);
        from_fit(mle_standard(x, cfg.family));
    } else if (est == "mle") {
        if (q == 1.0) {
            auto t0 = clock::now();
            auto nf = aggregate_all(s.flows);
            auto fr = mle_netflow(nf, cfg.family, cfg.session.flow_size_pmf, cfg.optimizer, cfg.session.flow_rate);
            fr.wall_time = std::chrono::duration<double>(clock::now() - t0).count();
            from_fit(fr);
        } else {
            from_fit(sampled_fit(cfg.family));
        }
    } else if (est == "mle-sampled") {
        from_fit(sampled_fit(cfg.family));
    } else if (est == "lognormal-two-step") {
        if (q == 1.0) {
            auto fr = two_step_lognormal_mle(session_netflow(aggregate_all(s.flows)), cfg.optimizer);
            from_fit(fr);
        } else {
            auto fr = sampled_fit(Family::LogNormal);
            from_fit(fr);
        }
    } else if (est == "mom") {
        auto x = pooled_inter_renewals(s.flows);
        auto t0 = clock::now();
        auto r = mom_hohn(s.flows);
        rec.time_ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
        rec.bytes = serialized_bytes(x);
        rec.params = {{"alpha", r.alpha}, {"beta", r.beta}, {"beta_star", r.beta_star}};
    } else if (est == "mom-netflow") {
        auto nf = aggregate_all(s.flows);
        auto t0 = clock::now();
        auto r = mom_netflow(nf);
        rec.time_ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
        rec.bytes = serialized_bytes(nf);
        rec.params = {{"alpha", r.alpha}, {"beta", r.beta}, {"beta_star", r.beta_star}};
    } else {
        throw ConfigError("unknown estimator '" + est + "'");
    }
    return rec;
}

inline std::uint64_t replicate_seed(std::uint64_t seed, long n, long rep) {
    return SplitMix64(seed ^ (static_cast<std::uint64_t>(n) * 0x9e3779b97f4a7c15ULL) ^
                      (static_cast<std::uint64_t>(rep) << 32) ^ kSaltReplicate)
        .next();
}

// Replicates run in parallel; each has its own seed, so results do not depend
// on the thread count.
inline StudyResult run_study(const StudyConfig& cfg) {
    cfg.validate();
    StudyResult out;
    std::map<std::tuple<std::string, long, std::string>, std::size_t> where;
    for (long n : cfg.n_grid) {
        std::vector<std::vector<std::optional<EstimateRecord>>> recs(
            static_cast<std::size_t>(cfg.replicates), std::vector<std::optional<EstimateRecord>>(cfg.estimators.size()));
        parallel_for(static_cast<std::size_t>(cfg.replicates), cfg.threads, [&](std::size_t r) {
            auto sess = simulate_study_session(cfg.session, n, replicate_seed(cfg.seed, n, static_cast<long>(r)),
                                            cfg.fast_thinning);
            for (std::size_t e = 0; e < cfg.estimators.size(); ++e) {
                try {
                    recs[r][e] = run_estimator(cfg.estimators[e], sess, cfg);
                } catch (const DomainError&) {
                } catch (const ConvergenceError&) {
                } catch (const NumericalError&) {
                }
            }
        });
        for (std::size_t e = 0; e < cfg.estimators.size(); ++e) {
            std::vector<std::string> names;
            for (std::size_t r = 0; r < recs.size(); ++r)
                if (recs[r][e]) {
                    for (const auto& [name, v] : recs[r][e]->params) names.push_back(name);
                    break;
                }
            if (names.empty()) names = cfg.estimators[e].rfind("mom", 0) == 0
                                           ? std::vector<std::string>{"alpha", "beta", "beta_star"}
                                           : PacketModel::param_names_of(cfg.family);
            for (const auto& name : names) {
                StudyCell c;
                c.estimator = cfg.estimators[e];
                c.n = n;
                c.parameter = name;
                for (std::size_t r = 0; r < recs.size(); ++r) {
                    if (!recs[r][e]) {
                        ++c.failures;
                        continue;
                    }
                    for (const auto& [pn, v] : recs[r][e]->params)
                        if (pn == name) c.values.push_back(v);
                    c.time_ms.push_back(recs[r][e]->time_ms);
                    c.bytes.push_back(static_cast<double>(recs[r][e]->bytes));
                }
                out.cells.push_back(std::move(c));
            }
        }
    }
    return out;
}

inline void write_study_csv(std::ostream& os, const StudyResult& res) {
    os << "estimator,n,parameter,mean,se,median,time_ms,data_bytes,replicates,failures\n";
    char buf[256];
    for (const auto& c : res.cells) {
        const bool any = !c.values.empty();
        const double nan = std::numeric_limits<double>::quiet_NaN();
        int len = std::snprintf(buf, sizeof buf, "%s,%ld,%s,%.9g,%.9g,%.9g,%.6g,%.9g,%zu,%ld\n", c.estimator.c_str(), c.n,
                                c.parameter.c_str(), any ? c.mean() : nan, c.se(), any ? c.median() : nan,
                                c.time_ms.empty() ? nan : mean(c.time_ms), c.bytes.empty() ? nan : mean(c.bytes),
                                c.values.size(), c.failures);
        os.write(buf, len);
    }
}

} // namespace flowlik
