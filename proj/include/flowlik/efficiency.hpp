#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "flow_size.hpp"
#include "likelihood.hpp"
#include "math.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "traffic_model.hpp"

namespace flowlik {

struct EfficiencyRequest {
    double epsilon = 0.1;
    double eta = 0.1;
    long k_flows = 1; // flows behind the standard MLE
    int dim = 0;      // 0: dimension of the packet model
    long mc_samples = 100000;
    double fd_step = 1e-4;
    std::uint64_t seed = 7;
    unsigned threads = 1;

    void validate() const {
        if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("efficiency: epsilon must lie in (0, 1)");
        if (!(eta > 0.0 && eta < 1.0)) throw ConfigError("efficiency: eta must lie in (0, 1)");
        if (k_flows < 1) throw ConfigError("efficiency: k_flows must be >= 1");
        if (dim < 0) throw ConfigError("efficiency: dim must be >= 0");
        if (mc_samples < 1) throw ConfigError("efficiency: mc_samples must be >= 1");
        if (!(fd_step > 0.0 && fd_step < 0.1)) throw ConfigError("efficiency: fd_step must lie in (0, 0.1)");
    }
};

struct InfoSummary {
    Eigen::MatrixXd H; // per inter-renewal information of the packet model
    Eigen::MatrixXd I; // information of the (sampled) duration of a non-trivial flow
    double det_ratio = 0.0;
    // log E[exp(+-Mbar)], Monte-Carlo over k-flow averages of inter-renewal counts
    double log_mgf_plus = 0.0;
    double log_mgf_minus = 0.0;
    // exact values from the pmf (k = 1 only, NaN otherwise)
    double log_mgf_plus_exact = std::numeric_limits<double>::quiet_NaN();
    double log_mgf_minus_exact = std::numeric_limits<double>::quiet_NaN();
    double q = 1.0;
    long samples = 0;
    bool richardson_used = false;
};

struct NMinResult {
    long n_min = 0;
    double lower = 0.0;
    double upper = 0.0;
    bool joint_condition = false;
    std::vector<std::string> warnings;
};

inline constexpr std::uint64_t kSaltDurations = 3;
inline constexpr std::uint64_t kSaltMgf = 4;

namespace detail {

// Span (last - first) of a uniform m-subset of {0..L-1}.
inline long subset_span(long L, long m, Rng& rng) {
    long lo = L, hi = -1;
    if (m * m <= 4 * L) {
        std::vector<long> picked;
        picked.reserve(static_cast<std::size_t>(m));
        for (long j = L - m; j < L; ++j) {
            long t = std::uniform_int_distribution<long>(0, j)(rng);
            long pick = std::find(picked.begin(), picked.end(), t) != picked.end() ? j : t;
            picked.push_back(pick);
            lo = std::min(lo, pick);
            hi = std::max(hi, pick);
        }
    } else {
        std::vector<char> taken(static_cast<std::size_t>(L), 0);
        for (long j = L - m; j < L; ++j) {
            long t = std::uniform_int_distribution<long>(0, j)(rng);
            long pick = taken[static_cast<std::size_t>(t)] ? j : t;
            taken[static_cast<std::size_t>(pick)] = 1;
            lo = std::min(lo, pick);
            hi = std::max(hi, pick);
        }
    }
    return hi - lo;
}

inline double sum_of_gaps(const PacketModel& m, long k, Rng& rng) {
    switch (m.family) {
    case Family::Gamma:
        return std::gamma_distribution<double>(static_cast<double>(k) * m.params[0], 1.0 / m.params[1])(rng);
    case Family::Exponential:
        return std::gamma_distribution<double>(static_cast<double>(k), 1.0 / m.params[0])(rng);
    case Family::LogNormal: {
        double s = 0.0;
        for (long i = 0; i < k; ++i) s += sample(m, rng);
        return s;
    }
    }
    return 0.0;
}

// Draws durations of non-trivial (sampled) flows from the generative model:
// latent size, retained count given at least two, retained positions, gaps.
class DurationSampler {
  public:
    DurationSampler(const FlowSizePmf& pmf, double q) : q_(q) {
        if (!pmf.bounded()) throw ConfigError("duration sampling needs a bounded flow size pmf");
        const auto& sup = pmf.support();
        std::vector<double> lw;
        for (std::size_t i = 0; i < sup.size(); ++i) {
            const long L = sup[i];
            if (L < 2) continue;
            Entry e;
            e.L = L;
            double lt = kNegInf;
            if (q == 1.0) {
                e.m_values = {L};
                e.cdf = {1.0};
                lt = 0.0;
            } else {
                std::vector<double> lm;
                const double lq = std::log(q), l1q = std::log1p(-q);
                double peak = kNegInf;
                for (long m = 2; m <= L; ++m) {
                    double v = log_binomial(static_cast<double>(L), static_cast<double>(m)) + m * lq + (L - m) * l1q;
                    if (v < peak + std::log(1e-17) && m > q * L) break;
                    peak = std::max(peak, v);
                    e.m_values.push_back(m);
                    lm.push_back(v);
                }
                lt = log_sum_exp(lm);
                double c = 0.0;
                for (double v : lm) {
                    c += std::exp(v - lt);
                    e.cdf.push_back(c);
                }
                e.cdf.back() = 1.0;
            }
            if (lt == kNegInf) continue;
            lw.push_back(std::log(pmf.mass()[i]) + lt);
            entries_.push_back(std::move(e));
        }
        if (entries_.empty()) throw ConfigError("duration sampling: no flow can retain two packets");
        const double tot = log_sum_exp(lw);
        double c = 0.0;
        for (double v : lw) {
            c += std::exp(v - tot);
            size_cdf_.push_back(c);
        }
        size_cdf_.back() = 1.0;
    }

    // Inter-renewal count spanned by the retained packets.
    long draw_span(Rng& rng) const {
        const auto& e = entries_[pick(size_cdf_, rng.uniform())];
        const long m = e.m_values[pick(e.cdf, rng.uniform())];
        if (m == e.L) return e.L - 1;
        return subset_span(e.L, m, rng);
    }

  private:
    struct Entry {
        long L = 0;
        std::vector<long> m_values;
        std::vector<double> cdf;
    };
    static std::size_t pick(const std::vector<double>& cdf, double u) {
        auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
        return static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - cdf.begin(), static_cast<std::ptrdiff_t>(cdf.size()) - 1));
    }
    double q_;
    std::vector<Entry> entries_;
    std::vector<double> size_cdf_;
};

inline PacketModel shifted(const PacketModel& m, std::size_t i, double di, std::size_t j, double dj) {
    PacketModel out = m;
    out.params[static_cast<Eigen::Index>(i)] += di;
    out.params[static_cast<Eigen::Index>(j)] += dj;
    return out;
}

} // namespace detail

inline std::vector<double> sample_marginal_durations(const PacketModel& packet_model, const LikelihoodConfig& cfg,
                                                     long n, std::uint64_t seed, unsigned threads = 1) {
    detail::DurationSampler sampler(cfg.pmf, cfg.q);
    std::vector<double> out(static_cast<std::size_t>(n));
    parallel_for(out.size(), threads, [&](std::size_t i) {
        Rng rng = derive_stream(seed, i, kSaltDurations);
        long k = sampler.draw_span(rng);
        out[i] = detail::sum_of_gaps(packet_model, k, rng);
    });
    return out;
}

struct MarginalInfo {
    Eigen::MatrixXd I;
    bool richardson_used = false;
};

// Observed information of the marginal duration density averaged over
// simulated durations, by central differences at steps h and h/2.
inline MarginalInfo marginal_fisher_info_detail(const PacketModel& packet_model, const LikelihoodConfig& cfg,
                                                const EfficiencyRequest& req) {
    req.validate();
    cfg.validate();
    packet_model.validate();
    MarginalDurationDensity dens(cfg.pmf, cfg.q, cfg.truncation);
    auto xs = sample_marginal_durations(packet_model, cfg, req.mc_samples, req.seed, req.threads);
    std::vector<double> log_xs(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) log_xs[i] = std::log(xs[i]);

    const std::size_t d = packet_model.dim();
    auto mean_loglik = [&](const PacketModel& m) {
        KfoldTable table(m, cfg.policy);
        table.reserve(dens.kmax());
        std::vector<double> v(xs.size());
        parallel_for(xs.size(), req.threads, [&](std::size_t i) {
            LogSumExp acc;
            for (const auto& [k, lw] : dens.log_weights()) acc.add(lw + table.eval(k, xs[i], log_xs[i]));
            v[i] = acc.value();
        });
        CompensatedSum s;
        for (double t : v) s.add(t);
        return s.value() / static_cast<double>(v.size());
    };

    auto hessian = [&](double rel) {
        std::vector<double> h(d);
        for (std::size_t i = 0; i < d; ++i)
            h[i] = rel * std::max(std::abs(packet_model.params[static_cast<Eigen::Index>(i)]), 1e-3);
        const double f0 = mean_loglik(packet_model);
        Eigen::MatrixXd out(d, d);
        for (std::size_t i = 0; i < d; ++i) {
            double fp = mean_loglik(detail::shifted(packet_model, i, h[i], i, 0.0));
            double fm = mean_loglik(detail::shifted(packet_model, i, -h[i], i, 0.0));
            out(i, i) = -(fp - 2.0 * f0 + fm) / (h[i] * h[i]);
            for (std::size_t j = i + 1; j < d; ++j) {
                double v = mean_loglik(detail::shifted(packet_model, i, h[i], j, h[j])) -
                           mean_loglik(detail::shifted(packet_model, i, h[i], j, -h[j])) -
                           mean_loglik(detail::shifted(packet_model, i, -h[i], j, h[j])) +
                           mean_loglik(detail::shifted(packet_model, i, -h[i], j, -h[j]));
                out(i, j) = out(j, i) = -v / (4.0 * h[i] * h[j]);
            }
        }
        return out;
    };

    MarginalInfo res;
    Eigen::MatrixXd a = hessian(req.fd_step);
    Eigen::MatrixXd b = hessian(0.5 * req.fd_step);
    double diff = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            double scale = std::sqrt(std::abs(a(i, i) * a(j, j)));
            diff = std::max(diff, std::abs(a(i, j) - b(i, j)) / (scale > 0.0 ? scale : 1.0));
        }
    if (diff > 0.05) {
        res.I = (4.0 * b - a) / 3.0;
        res.richardson_used = true;
    } else {
        res.I = a;
    }
    res.I = 0.5 * (res.I + res.I.transpose());
    if (!res.I.allFinite()) throw NumericalError("marginal_fisher_info: non-finite estimate");
    Eigen::LLT<Eigen::MatrixXd> llt(res.I);
    if (llt.info() != Eigen::Success)
        throw NumericalError("marginal_fisher_info: estimate is not positive definite; increase mc_samples (currently " +
                             std::to_string(req.mc_samples) + ")");
    return res;
}

inline Eigen::MatrixXd marginal_fisher_info(const PacketModel& packet_model, const LikelihoodConfig& cfg,
                                            const EfficiencyRequest& req) {
    return marginal_fisher_info_detail(packet_model, cfg, req).I;
}

// log E[exp(+Mbar)] and log E[exp(-Mbar)], Mbar the mean inter-renewal count
// of k flows drawn from the pmf.
inline std::pair<double, double> mbar_log_mgf(const FlowSizePmf& pmf, long k_flows, long n, std::uint64_t seed,
                                              unsigned threads = 1) {
    if (!pmf.bounded()) throw ConfigError("E[exp(Mbar)] needs a bounded flow size pmf");
    std::vector<double> mbar(static_cast<std::size_t>(n));
    parallel_for(mbar.size(), threads, [&](std::size_t i) {
        Rng rng = derive_stream(seed, i, kSaltMgf);
        double s = 0.0;
        for (long j = 0; j < k_flows; ++j) s += static_cast<double>(pmf.sample(rng) - 1);
        mbar[i] = s / static_cast<double>(k_flows);
    });
    LogSumExp plus, minus;
    for (double m : mbar) {
        plus.add(m);
        minus.add(-m);
    }
    const double ln = std::log(static_cast<double>(n));
    double lp = plus.value() - ln, lm = minus.value() - ln;
    if (!std::isfinite(lp) || !std::isfinite(lm))
        throw NumericalError("E[exp(Mbar)] is not finite; largest support point " + std::to_string(pmf.max_size()));
    return {lp, lm};
}

inline InfoSummary info_summary(const PacketModel& packet_model, const LikelihoodConfig& cfg,
                                const EfficiencyRequest& req) {
    req.validate();
    if (!cfg.pmf.bounded())
        throw ConfigError("n_min needs a bounded flow size pmf (E[exp(Mbar)] is infinite for unbounded sizes)");
    InfoSummary s;
    s.q = cfg.q;
    s.samples = req.mc_samples;
    s.H = fisher_information(packet_model);
    auto mi = marginal_fisher_info_detail(packet_model, cfg, req);
    s.I = mi.I;
    s.richardson_used = mi.richardson_used;
    s.det_ratio = s.H.determinant() / s.I.determinant();
    auto [lp, lm] = mbar_log_mgf(cfg.pmf, req.k_flows, req.mc_samples, req.seed, req.threads);
    s.log_mgf_plus = lp;
    s.log_mgf_minus = lm;
    if (req.k_flows == 1) {
        LogSumExp p, m;
        for (std::size_t i = 0; i < cfg.pmf.support().size(); ++i) {
            double lw = std::log(cfg.pmf.mass()[i]);
            double mm = static_cast<double>(cfg.pmf.support()[i] - 1);
            p.add(lw + mm);
            m.add(lw - mm);
        }
        s.log_mgf_plus_exact = p.value();
        s.log_mgf_minus_exact = m.value();
    }
    return s;
}

inline NMinResult n_min_bounds(const EfficiencyRequest& req, const InfoSummary& info) {
    req.validate();
    const int d = req.dim > 0 ? req.dim : static_cast<int>(info.H.rows());
    if (!(info.det_ratio > 0.0) || !std::isfinite(info.det_ratio))
        throw NumericalError("n_min: determinant ratio must be positive and finite");
    if (!std::isfinite(info.log_mgf_plus) || !std::isfinite(info.log_mgf_minus))
        throw NumericalError("n_min: E[exp(Mbar)] estimate is not finite");
    NMinResult r;
    const double k = static_cast<double>(req.k_flows);
    const double e = req.epsilon, l2 = std::log(2.0 / req.eta);
    r.lower = k * std::pow(info.det_ratio / ((1.0 + e) * (1.0 + e)), 1.0 / d) * (l2 + info.log_mgf_plus);
    r.upper = -k * std::pow(info.det_ratio / ((1.0 - e) * (1.0 - e)), 1.0 / d) * (l2 + info.log_mgf_minus);
    const double A = std::pow((1.0 + e) / (1.0 - e), 2.0 / d);
    r.joint_condition = info.log_mgf_plus + A * info.log_mgf_minus < (A + 1.0) * std::log(req.eta / 2.0);
    r.n_min = static_cast<long>(std::ceil(r.lower));
    if (!(r.upper > r.lower))
        r.warnings.push_back("bound interval is empty (upper " + std::to_string(r.upper) + " <= lower " +
                             std::to_string(r.lower) + ")");
    if (!r.joint_condition) r.warnings.push_back("joint bound condition does not hold");
    return r;
}

inline long n_min(const EfficiencyRequest& req, const InfoSummary& info) { return n_min_bounds(req, info).n_min; }

} // namespace flowlik
