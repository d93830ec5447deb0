// Acceptance checks. Usage: flowlik_acceptance c1 [c2 ...] | all
// Each check prints its numbers and one PASS/FAIL line; exit status is
// non-zero when any requested check fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "flowlik.hpp"

using namespace flowlik;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

unsigned workers() { return std::max(1u, std::thread::hardware_concurrency()); }

bool report(const std::string& id, bool ok, const std::string& what, double secs) {
    std::printf("%s %s: %s (%.1f s)\n", ok ? "PASS" : "FAIL", id.c_str(), what.c_str(), secs);
    std::fflush(stdout);
    return ok;
}

std::string fmt(const char* f, double a) {
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

bool in_range(double x, double lo, double hi) { return x >= lo && x <= hi; }

std::uint64_t rep_seed(std::uint64_t base, long rep) { return replicate_seed(base, 0, rep); }

const PacketModel kGamma = PacketModel::gamma(0.6, 526.32);
const PacketModel kFlowModel = PacketModel::exponential(1.0);

FlowSizePmf ex1_pmf() { return FlowSizePmf::zeta(2.012085); }
FlowSizePmf ex2_pmf() { return FlowSizePmf::zipf(1.0, {11, 101, 1001}); }

// ---------------------------------------------------------------------------

bool c1() {
    auto t0 = Clock::now();
    std::mt19937_64 g(101);
    std::uniform_real_distribution<double> u(0.05, 4.0);
    double worst = 0.0;
    long cases = 0;
    for (const auto& pm : {PacketModel::exponential(2.5), PacketModel::gamma(0.6, 1.7)}) {
        for (double q : {0.1, 0.5, 0.9}) {
            for (long L = 3; L <= 7; ++L) {
                LikelihoodConfig cfg;
                cfg.pmf = FlowSizePmf::point(L);
                cfg.q = q;
                cfg.truncation = 0.0;
                for (long m = 2; m <= L; ++m) {
                    for (int rep = 0; rep < 3; ++rep) {
                        SampledNetFlow s{u(g), u(g), m};
                        for (bool restricted : {false, true}) {
                            cfg.restricted = restricted;
                            double got = sampled_netflow_loglik(s, kFlowModel, pm, cfg);
                            double want = brute_force_sampled_loglik(L, s, kFlowModel, pm, q, restricted).loglik;
                            worst = std::max(worst, std::abs(got - want) / std::abs(want));
                            ++cases;
                        }
                    }
                }
            }
        }
    }
    const double secs = seconds_since(t0);
    std::printf("c1: %ld cases, max relative error %.3g\n", cases, worst);
    return report("c1", worst <= 1e-10 && secs < 60, "sampled likelihood vs pattern enumeration, max rel err " +
                                                        fmt("%.3g", worst),
                  secs);
}

// ---------------------------------------------------------------------------

bool c2() {
    auto t0 = Clock::now();
    double worst = 0.0;
    for (long r = 0; r < 100; ++r) {
        std::mt19937_64 g(rep_seed(202, r));
        SessionConfig cfg;
        cfg.packet_model = PacketModel::exponential(std::uniform_real_distribution<double>(10.0, 1000.0)(g));
        cfg.flow_size_pmf = ex1_pmf();
        cfg.n_flows = std::uniform_int_distribution<long>(50, 2000)(g);
        cfg.seed = g();
        auto nf = aggregate_all(generate_session(cfg));
        auto fr = mle_netflow(nf, Family::Exponential, cfg.flow_size_pmf);
        double n = 0.0;
        CompensatedSum sx;
        for (const auto& f : nf) {
            n += static_cast<double>(f.size - 1);
            sx.add(f.s_d);
        }
        const double closed = n / sx.value();
        worst = std::max(worst, std::abs(fr.params[0] - closed) / closed);
    }
    const double secs = seconds_since(t0);
    std::printf("c2: 100 sessions, max relative deviation from N/sum(x) %.3g\n", worst);
    return report("c2", worst <= 1e-10, "Exponential NetFlow MLE equals N/sum(x), max rel err " + fmt("%.3g", worst),
                  secs);
}

// ---------------------------------------------------------------------------

struct Ex1Rep {
    double a_s = NAN, b_s = NAN, a_c = NAN, b_c_star = NAN, b_mom = NAN, a_mom = NAN, b_mom_star = NAN;
};

bool c3() {
    auto t0 = Clock::now();
    const long T = 50, n = 10000;
    std::vector<Ex1Rep> reps(T);
    parallel_for(static_cast<std::size_t>(T), workers(), [&](std::size_t r) {
        SessionConfig cfg;
        cfg.packet_model = kGamma;
        cfg.flow_size_pmf = ex1_pmf();
        cfg.n_flows = n;
        cfg.seed = rep_seed(303, static_cast<long>(r));
        auto flows = generate_session(cfg);
        auto nf = aggregate_all(flows);
        auto fr = mle_netflow(nf, Family::Gamma, cfg.flow_size_pmf);
        auto mc = mom_netflow(nf);
        auto mh = mom_hohn(flows);
        reps[r] = {fr.params[0], fr.params[1], mc.alpha, mc.beta_star, mh.beta, mh.alpha, mh.beta_star};
    });
    std::vector<double> a_s, b_s, a_c, b_c, b_m, a_m, b_ms;
    long big = 0;
    for (const auto& r : reps) {
        a_s.push_back(r.a_s);
        b_s.push_back(r.b_s);
        a_c.push_back(r.a_c);
        b_c.push_back(r.b_c_star);
        b_m.push_back(r.b_mom);
        a_m.push_back(r.a_mom);
        b_ms.push_back(r.b_mom_star);
        if (r.b_mom > 5000.0) ++big;
    }
    auto se = [](const std::vector<double>& v) { return stddev(v) / std::sqrt(static_cast<double>(v.size())); };
    std::printf("c3: Ex.1 network, n=%ld, T=%ld\n", n, T);
    std::printf("    estimator              mean         se\n");
    std::printf("    mle alpha_S      %10.4f %10.4f\n", mean(a_s), se(a_s));
    std::printf("    mle beta_S       %10.2f %10.2f\n", mean(b_s), se(b_s));
    std::printf("    mom-netflow alpha%10.4f %10.4f\n", mean(a_c), se(a_c));
    std::printf("    mom-netflow beta*%10.2f %10.2f\n", mean(b_c), se(b_c));
    std::printf("    mom alpha        %10.4f %10.4f\n", mean(a_m), se(a_m));
    std::printf("    mom beta         %10.4g %10.4g  (median %.4g, %ld of %ld above 5000)\n", mean(b_m), se(b_m),
                median(b_m), big, T);
    std::printf("    mom beta*        %10.2f %10.2f\n", mean(b_ms), se(b_ms));
    const bool ok_mle = in_range(mean(a_s), 0.58, 0.62) && in_range(mean(b_s), 522, 533);
    const bool ok_mc = in_range(mean(a_c), 0.58, 0.62) && in_range(mean(b_c), 522, 534);
    const bool ok_div = static_cast<double>(big) >= 0.9 * static_cast<double>(T);
    const double secs = seconds_since(t0);
    report("c3a", ok_mle, "NetFlow MLE mean (" + fmt("%.4f", mean(a_s)) + ", " + fmt("%.2f", mean(b_s)) + ")", secs);
    report("c3b", ok_mc, "NetFlow MoM mean (" + fmt("%.4f", mean(a_c)) + ", " + fmt("%.2f", mean(b_c)) + ")", secs);
    report("c3c", ok_div, "MoM beta above 5000 in " + std::to_string(big) + "/" + std::to_string(T) + " replicates", secs);
    return report("c3", ok_mle && ok_mc && ok_div && secs <= 1800, "Ex.1 desk-scale reproduction", secs);
}

// ---------------------------------------------------------------------------

// Restricted sampled MLE on n non-trivial thinned flows of the Ex.2 network.
FitResult ex2_sampled_fit(double q, long n, std::uint64_t seed) {
    SessionConfig cfg;
    cfg.packet_model = kGamma;
    cfg.flow_size_pmf = ex2_pmf();
    cfg.thinning_q = q;
    auto s = simulate_study_session(cfg, n, seed);
    LikelihoodConfig lc;
    lc.pmf = cfg.flow_size_pmf;
    lc.q = q;
    lc.restricted = true;
    return mle_sampled_netflow(aggregate_sampled_all(s.thinned), Family::Gamma, lc);
}

FitResult ex2_full_fit(long n, std::uint64_t seed) {
    SessionConfig cfg;
    cfg.packet_model = kGamma;
    cfg.flow_size_pmf = ex2_pmf();
    cfg.n_flows = n;
    cfg.seed = seed;
    return mle_netflow(aggregate_all(generate_session(cfg)), Family::Gamma, cfg.flow_size_pmf);
}

bool c4() {
    auto t0 = Clock::now();
    const long T = 20, n = 1000;
    std::vector<double> a(T), b(T);
    parallel_for(static_cast<std::size_t>(T), workers(), [&](std::size_t r) {
        auto fr = ex2_sampled_fit(0.1, n, rep_seed(404, static_cast<long>(r)));
        a[r] = fr.params[0];
        b[r] = fr.params[1];
    });
    const double secs = seconds_since(t0);
    const double sa = stddev(a) / std::sqrt(double(T)), sb = stddev(b) / std::sqrt(double(T));
    std::printf("c4: Ex.2 network, q=0.1, n=%ld, T=%ld: alpha %.4f (%.4f), beta %.2f (%.2f)\n", n, T, mean(a), sa,
                mean(b), sb);
    const bool ok = in_range(mean(a), 0.57, 0.63) && in_range(mean(b), 515, 545);
    return report("c4", ok && secs <= 3600,
                  "sampled MLE mean (" + fmt("%.4f", mean(a)) + ", " + fmt("%.2f", mean(b)) + ")", secs);
}

// ---------------------------------------------------------------------------

bool c5() {
    auto t0 = Clock::now();
    const std::vector<double> qs{1.0, 0.1, 0.01, 0.001, 0.0001};
    const std::vector<double> target{81, 106, 551, 5065, 6507};
    const std::vector<double> tol{0.25, 0.25, 0.25, 0.40, 0.40};
    EfficiencyRequest req;
    req.epsilon = 0.1;
    req.eta = 0.1;
    req.mc_samples = 100000;
    req.seed = 505;
    req.threads = workers();
    bool ok = true;
    std::vector<long> got;
    std::printf("c5: q, n_min, target, |H|/|I|, log E[exp(Mbar)], upper, joint\n");
    for (std::size_t i = 0; i < qs.size(); ++i) {
        LikelihoodConfig lc;
        lc.pmf = ex2_pmf();
        lc.q = qs[i];
        auto info = info_summary(kGamma, lc, req);
        auto b = n_min_bounds(req, info);
        got.push_back(b.n_min);
        const bool within = std::abs(static_cast<double>(b.n_min) - target[i]) <= tol[i] * target[i];
        ok = ok && within;
        std::printf("    %-7g %6ld %6.0f %12.5g %10.5g %12.5g %s%s\n", qs[i], b.n_min, target[i], info.det_ratio,
                    info.log_mgf_plus, b.upper, b.joint_condition ? "yes" : "no", within ? "" : "  <- outside tolerance");
    }
    for (std::size_t i = 1; i < got.size(); ++i)
        if (got[i] < got[i - 1]) {
            ok = false;
            std::printf("    n_min decreases between q=%g and q=%g\n", qs[i - 1], qs[i]);
        }
    const double secs = seconds_since(t0);
    return report("c5", ok && secs <= 1200, "n_min within tolerance and non-increasing in q", secs);
}

// ---------------------------------------------------------------------------

bool c6() {
    auto t0 = Clock::now();
    const long T = 20, n = 10000;
    auto run = [&](const PacketModel& pm, const FlowSizePmf& pmf, std::uint64_t base) {
        std::vector<double> b(T);
        parallel_for(static_cast<std::size_t>(T), workers(), [&](std::size_t r) {
            SessionConfig cfg;
            cfg.packet_model = pm;
            cfg.flow_size_pmf = pmf;
            cfg.n_flows = n;
            cfg.seed = rep_seed(base, static_cast<long>(r));
            b[r] = mom_hohn(generate_session(cfg)).beta;
        });
        return b;
    };
    auto b1 = run(PacketModel::gamma(1.2, 526.32), ex1_pmf(), 601);
    auto b2 = run(kGamma, FlowSizePmf::zeta(2.012085, 3), 602);
    const double m1 = mean(b1), m2 = mean(b2);
    const bool all_above = std::all_of(b1.begin(), b1.end(), [](double v) { return v > 526.32; });
    std::printf("c6: network (1) mean beta %.2f (se %.2f, min %.2f); network (2) mean beta %.2f (se %.2f)\n", m1,
                stddev(b1) / std::sqrt(double(T)), *std::min_element(b1.begin(), b1.end()), m2,
                stddev(b2) / std::sqrt(double(T)));
    const bool ok = in_range(m1, 600, 650) && all_above && in_range(m2, 595, 635);
    const double secs = seconds_since(t0);
    return report("c6", ok && secs <= 1800,
                  "MoM beta means " + fmt("%.2f", m1) + " and " + fmt("%.2f", m2) +
                      (all_above ? ", all replicates above beta0" : ", some replicate at or below beta0"),
                  secs);
}

// ---------------------------------------------------------------------------

bool c7() {
    auto t0 = Clock::now();
    // closed form vs quadrature
    double worst = 0.0;
    for (long k : {2L, 5L, 10L, 16L}) {
        const double ka = 0.6 * static_cast<double>(k), b = 526.32;
        const double mu = ka / b, sd = std::sqrt(ka) / b;
        for (double z : {-1.5, -0.5, 0.0, 1.0, 2.5, 4.0}) {
            const double x = std::max(mu + z * sd, 0.02 * mu);
            const double cf = kfold_log_density(kGamma, k, x);
            const double nq = numeric_kfold_log_density(kGamma, k, x);
            worst = std::max(worst, std::abs(std::expm1(nq - cf)));
        }
    }
    std::printf("c7: Gamma k-fold closed form vs quadrature, max rel density error %.3g\n", worst);
    const bool ok_conv = worst <= 1e-8;

    // FW mean and tail
    double worst_mean = 0.0;
    bool ok_tail = true;
    boost::math::normal_distribution<double> nd;
    const double zq = boost::math::quantile(nd, 0.999);
    const long N = 200000;
    for (long k : {10L, 1000L}) {
        for (double sigma : {0.5, 2.0}) {
            const double mu = -8.1;
            auto fw = fenton_wilkinson_params(k, mu, sigma);
            const double exact = static_cast<double>(k) * std::exp(mu + 0.5 * sigma * sigma);
            const double fw_mean = std::exp(fw.mu_star + 0.5 * fw.sigma_star * fw.sigma_star);
            worst_mean = std::max(worst_mean, std::abs(fw_mean - exact) / exact);
            const double x = std::exp(fw.mu_star + fw.sigma_star * zq);
            std::vector<long> above(workers(), 0);
            const std::size_t chunks = 64;
            std::vector<long> hits(chunks, 0);
            parallel_for(chunks, workers(), [&](std::size_t c) {
                Rng rng = derive_stream(707, c + 100 * static_cast<std::size_t>(k) + static_cast<std::size_t>(sigma * 10));
                std::lognormal_distribution<double> ln(mu, sigma);
                const long per = N / static_cast<long>(chunks);
                for (long i = 0; i < per; ++i) {
                    double s = 0.0;
                    for (long j = 0; j < k; ++j) s += ln(rng);
                    if (s > x) ++hits[c];
                }
            });
            long h = 0;
            for (long v : hits) h += v;
            const double n_eff = static_cast<double>((N / static_cast<long>(chunks)) * static_cast<long>(chunks));
            const double p_mc = static_cast<double>(h) / n_eff;
            const double se = std::sqrt(0.001 * 0.999 / n_eff);
            const bool within = std::abs(p_mc - 0.001) <= 3 * se;
            ok_tail = ok_tail && within;
            std::printf("    k=%-5ld sigma=%-4g FW 99.9%% point %.4g: MC survival %.5f vs 0.00100 (3 SE = %.5f)%s\n", k,
                        sigma, x, p_mc, 3 * se, within ? "" : "  <- outside");
        }
    }
    std::printf("    FW mean max rel error %.3g\n", worst_mean);
    const bool ok_mean = worst_mean <= 1e-12;
    const double secs = seconds_since(t0);
    report("c7a", ok_conv, "Gamma convolution vs quadrature " + fmt("%.3g", worst), secs);
    report("c7b", ok_mean, "FW mean preservation " + fmt("%.3g", worst_mean), secs);
    report("c7c", ok_tail, "FW survival at the 99.9th percentile vs Monte Carlo", secs);
    return report("c7", ok_conv && ok_mean && ok_tail, "convolution correctness", secs);
}

// ---------------------------------------------------------------------------

bool c8() {
    auto t0 = Clock::now();
    const double mu0 = -8.1, sigma0 = 4.5, q = 0.001;
    const long n = 10000;
    const PacketModel pm = PacketModel::lognormal(mu0, sigma0);
    // flow sizes log-uniform on [10, 10^4]
    std::vector<Flow> flows(static_cast<std::size_t>(n));
    std::vector<long> sizes(flows.size());
    parallel_for(flows.size(), workers(), [&](std::size_t i) {
        Rng rng = derive_stream(808, i, kSaltFlows);
        const double u = std::uniform_real_distribution<double>(std::log(10.0), std::log(1e4))(rng);
        sizes[i] = std::lround(std::exp(u));
        flows[i] = generate_flow(pm, sizes[i], rng, 1.0);
    });
    double t = 0.0;
    for (auto& f : flows) {
        f.anchor = t;
        t += f.gaps[0];
    }
    auto thinned = thin_session(flows, q, 808, true, workers());
    long trivial = 0;
    auto sampled = aggregate_sampled_all(thinned, &trivial);
    auto grid_pmf = empirical_flow_size_pmf(sizes);

    struct Row {
        std::string name;
        FitResult fr;
    };
    std::vector<Row> rows;
    rows.push_back({"standard MLE (all inter-renewals)", mle_standard(pooled_inter_renewals(flows), Family::LogNormal)});
    {
        auto nf = aggregate_all(flows);
        auto t1 = Clock::now();
        auto fr = two_step_lognormal_mle(session_netflow(nf));
        fr.wall_time = seconds_since(t1);
        fr.data_bytes = serialized_bytes(nf);
        rows.push_back({"two-step NetFlow MLE, q=1", fr});
        auto t2 = Clock::now();
        auto pf = lognormal_per_flow_fw(nf, {}, NAN, workers());
        pf.wall_time = seconds_since(t2);
        rows.push_back({"per-flow FW fallback, q=1", pf});
    }
    LikelihoodConfig lc;
    lc.pmf = grid_pmf;
    lc.q = q;
    lc.restricted = true;
    FitResult sampled_fit;
    bool ok = false;
    try {
        sampled_fit = two_step_lognormal_mle(sampled, lc, {}, workers());
        rows.push_back({"two-step sampled NetFlow MLE, q=0.001", sampled_fit});
        ok = std::abs(sampled_fit.params[0] - mu0) <= 0.5 && std::abs(sampled_fit.params[1] - sigma0) <= 0.6;
    } catch (const std::exception& e) {
        std::printf("c8: sampled fit failed: %s\n", e.what());
    }
    std::printf("c8: LN(%.1f, %.1f), %ld flows, q=%g, %zu non-trivial sampled NetFlows (%ld trivial), grid pmf on %zu "
                "sizes\n",
                mu0, sigma0, n, q, sampled.size(), trivial, grid_pmf.support().size());
    std::printf("    %-40s %9s %9s %9s %9s %12s %10s\n", "estimator", "mu", "se", "sigma", "se", "info (MB)", "time (ms)");
    for (const auto& r : rows) {
        auto se = [&](std::size_t i) { return i < r.fr.stderrs.size() ? r.fr.stderrs[i] : NAN; };
        std::printf("    %-40s %9.4f %9.4f %9.4f %9.4f %12.6f %10.2f\n", r.name.c_str(), r.fr.params[0], se(0),
                    r.fr.params[1], se(1), static_cast<double>(r.fr.data_bytes) / 1e6, r.fr.wall_time * 1e3);
    }
    const double secs = seconds_since(t0);
    const bool has_meta = !rows.empty() && rows.back().fr.data_bytes > 0 && rows.back().fr.wall_time > 0.0;
    return report("c8", ok && has_meta && secs <= 1800,
                  ok ? "sampled two-step fit recovers (mu, sigma)"
                     : "sampled two-step fit (" + fmt("%.3f", sampled_fit.params.empty() ? NAN : sampled_fit.params[0]) +
                           ", " + fmt("%.3f", sampled_fit.params.empty() ? NAN : sampled_fit.params[1]) +
                           ") outside the tolerance",
                  secs);
}

// ---------------------------------------------------------------------------

bool c9() {
    auto t0 = Clock::now();
    const long T = 20;
    bool ok = true;
    for (double q : {1.0, 0.1}) {
        std::map<long, double> med;
        for (long n : {100L, 10000L}) {
            std::vector<double> err(T);
            parallel_for(static_cast<std::size_t>(T), workers(), [&](std::size_t r) {
                const std::uint64_t seed = replicate_seed(909, n, static_cast<long>(r));
                auto fr = q == 1.0 ? ex2_full_fit(n, seed) : ex2_sampled_fit(q, n, seed);
                err[r] = std::abs(fr.params[0] - 0.6);
            });
            med[n] = median(err);
        }
        std::printf("c9: q=%g median |alpha - 0.6|: n=100 %.5f, n=10000 %.5f\n", q, med[100], med[10000]);
        ok = ok && med[10000] < med[100];
    }
    return report("c9", ok, "median error shrinks from n=100 to n=10000 for q in {1, 0.1}", seconds_since(t0));
}

} // namespace

int main(int argc, char** argv) {
    const std::map<std::string, std::function<bool()>> checks{{"c1", c1}, {"c2", c2}, {"c3", c3}, {"c4", c4}, {"c5", c5},
                                                              {"c6", c6}, {"c7", c7}, {"c8", c8}, {"c9", c9}};
    std::vector<std::string> wanted;
    for (int i = 1; i < argc; ++i) {
        std::string a = argv[i];
        if (a == "all")
            for (const auto& [k, v] : checks) wanted.push_back(k);
        else
            wanted.push_back(a);
    }
    if (wanted.empty()) {
        std::fprintf(stderr, "usage: flowlik_acceptance c1..c9 | all\n");
        return 2;
    }
    bool all_ok = true;
    for (const auto& id : wanted) {
        auto it = checks.find(id);
        if (it == checks.end()) {
            std::fprintf(stderr, "unknown check %s\n", id.c_str());
            return 2;
        }
        try {
            all_ok = it->second() && all_ok;
        } catch (const std::exception& e) {
            report(id, false, std::string("error: ") + e.what(), 0.0);
            all_ok = false;
        }
    }
    return all_ok ? 0 : 1;
}
