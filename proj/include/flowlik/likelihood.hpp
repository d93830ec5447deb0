#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include "error.hpp"
#include "flow_size.hpp"
#include "math.hpp"
#include "netflow.hpp"
#include "parallel.hpp"
#include "quadrature.hpp"
#include "traffic_model.hpp"

namespace flowlik {

struct LikelihoodConfig {
    FlowSizePmf pmf = FlowSizePmf::point(2);
    double q = 1.0;
    // Latent sizes and mixture cells are dropped, smallest first, while the
    // dropped mass stays below this fraction of the total.
    double truncation = 1e-10;
    bool restricted = false;
    ConvolutionPolicy policy{};

    void validate() const {
        if (!(q > 0.0 && q <= 1.0)) throw ConfigError("likelihood: q must lie in (0, 1]");
        if (!(truncation >= 0.0 && truncation < 1.0)) throw ConfigError("likelihood: truncation must lie in [0, 1)");
    }
};

struct MixtureCell {
    long j; // index of the first retained packet (1-based); 0 when marginalised
    long k; // latent inter-renewals between first and last retained packet
    double log_weight;
};

// Weights p_M(m+1) * tau * upsilon of the sampled likelihood for one sampled
// size, summed over latent sizes (and over j in restricted mode).
struct MixtureWeights {
    long m_sampled = 0;
    double q = 1.0;
    bool restricted = false;
    std::vector<MixtureCell> cells;
    double log_normalizer = kNegInf; // log P(M~ = m_sampled)
    long kmax = 0;
    long jmax = 0;
    long latent_min = 0;
    long latent_max = 0;

    // Sum of the retained weights relative to the sampled-size marginal.
    double normalized_total() const {
        LogSumExp s;
        for (const auto& c : cells) s.add(c.log_weight);
        return std::exp(s.value() - log_normalizer);
    }
};

namespace detail {

inline double log_add(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

struct LatentTerm {
    long size;
    double log_p;     // log p_M(size)
    double log_joint; // log p_M(size) + log tau_{size-1}(m~; q)
};

// Latent sizes L >= m_tilde with their p_M * tau contributions. Returns the
// log of the full (unpruned) sum through log_total.
inline std::vector<LatentTerm> latent_terms(const FlowSizePmf& pmf, long m_tilde, double q, double& log_total) {
    std::vector<LatentTerm> out;
    const double lq = std::log(q);
    const double l1q = q < 1.0 ? std::log1p(-q) : kNegInf;
    auto joint = [&](long L, double lp) {
        if (q == 1.0) return L == m_tilde ? lp : kNegInf;
        return lp + log_binomial(static_cast<double>(L), static_cast<double>(m_tilde)) + m_tilde * lq +
               static_cast<double>(L - m_tilde) * l1q;
    };
    LogSumExp total;
    if (pmf.kind() == PmfKind::Zeta) {
        long L = pmf.next_support(m_tilde);
        double prev = kNegInf;
        for (; L > 0 && L <= pmf.max_size(); ++L) {
            double lp = pmf.log_pmf(L);
            double lj = joint(L, lp);
            if (lj != kNegInf) {
                out.push_back({L, lp, lj});
                total.add(lj);
            }
            if (q == 1.0) break;
            // Past the mode the terms shrink geometrically; stop once the
            // bounded tail is negligible.
            if (prev != kNegInf && lj < prev) {
                double r = std::exp(lj - prev);
                double tail = lj + std::log(r) - std::log1p(-r);
                if (tail < total.value() + std::log(1e-18)) break;
            }
            prev = lj;
        }
    } else {
        const auto& sup = pmf.support();
        for (std::size_t i = 0; i < sup.size(); ++i) {
            if (sup[i] < m_tilde) continue;
            double lp = pmf.log_pmf(sup[i]);
            double lj = joint(sup[i], lp);
            if (lj == kNegInf) continue;
            out.push_back({sup[i], lp, lj});
            total.add(lj);
        }
    }
    log_total = total.value();
    return out;
}

// Indices of entries to keep: drop the smallest while their accumulated mass
// stays within tol of the total.
inline std::vector<std::size_t> prune_small(const std::vector<double>& log_w, double log_total, double tol) {
    std::vector<std::size_t> order(log_w.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (tol <= 0.0 || log_w.empty()) return order;
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return log_w[a] < log_w[b]; });
    const double budget = log_total + std::log(tol);
    double dropped = kNegInf;
    std::size_t cut = 0;
    while (cut < order.size()) {
        double next = log_add(dropped, log_w[order[cut]]);
        if (next > budget) break;
        dropped = next;
        ++cut;
    }
    std::vector<std::size_t> keep(order.begin() + static_cast<std::ptrdiff_t>(cut), order.end());
    std::sort(keep.begin(), keep.end());
    return keep;
}

} // namespace detail

inline MixtureWeights mixture_weights(long m_tilde, const LikelihoodConfig& cfg) {
    cfg.validate();
    if (m_tilde < 2) throw DomainError("mixture_weights: sampled size must be >= 2");
    MixtureWeights w;
    w.m_sampled = m_tilde;
    w.q = cfg.q;
    w.restricted = cfg.restricted;

    double log_total = kNegInf;
    auto latent = detail::latent_terms(cfg.pmf, m_tilde, cfg.q, log_total);
    if (latent.empty() || log_total == kNegInf)
        throw DomainError("mixture_weights: no latent flow size >= " + std::to_string(m_tilde) + " in the pmf support");
    w.log_normalizer = log_total;
    {
        std::vector<double> lj(latent.size());
        for (std::size_t i = 0; i < latent.size(); ++i) lj[i] = latent[i].log_joint;
        auto keep = detail::prune_small(lj, log_total, 0.5 * cfg.truncation);
        std::vector<detail::LatentTerm> kept;
        kept.reserve(keep.size());
        for (auto i : keep) kept.push_back(latent[i]);
        latent.swap(kept);
    }
    if (latent.empty()) throw ConfigError("mixture_weights: truncation left an empty latent support");
    w.latent_min = latent.front().size;
    w.latent_max = latent.back().size;

    // b_L = p_L (1-q)^(L - m~), so that tau * upsilon * p_L = C(k-1, m~-2) q^m~ b_L.
    const long Lmax = latent.back().size;
    const double l1q = cfg.q < 1.0 ? std::log1p(-cfg.q) : 0.0;
    std::vector<double> log_b(static_cast<std::size_t>(Lmax + 2), kNegInf);
    for (const auto& t : latent)
        log_b[static_cast<std::size_t>(t.size)] =
            cfg.q < 1.0 ? t.log_p + static_cast<double>(t.size - m_tilde) * l1q : t.log_p;
    const double mlq = static_cast<double>(m_tilde) * std::log(cfg.q);

    // S(a) = sum_{L > a} b_L and, for the restricted form,
    // T(k) = sum_{L > k} b_L (L - k), built from the top down.
    std::vector<double> log_S(static_cast<std::size_t>(Lmax + 2), kNegInf);
    for (long a = Lmax - 1; a >= 0; --a)
        log_S[static_cast<std::size_t>(a)] = detail::log_add(log_S[static_cast<std::size_t>(a + 1)],
                                                             log_b[static_cast<std::size_t>(a + 1)]);

    std::vector<MixtureCell> cells;
    if (cfg.restricted) {
        double log_T = kNegInf;
        std::vector<double> T(static_cast<std::size_t>(Lmax + 1), kNegInf);
        for (long k = Lmax - 1; k >= m_tilde - 1; --k) {
            log_T = detail::log_add(log_T, log_S[static_cast<std::size_t>(k)]);
            T[static_cast<std::size_t>(k)] = log_T;
        }
        for (long k = m_tilde - 1; k <= Lmax - 1; ++k) {
            double lt = T[static_cast<std::size_t>(k)];
            if (lt == kNegInf) continue;
            double lw = log_binomial(static_cast<double>(k - 1), static_cast<double>(m_tilde - 2)) + mlq + lt;
            cells.push_back({0, k, lw});
        }
    } else {
        for (long j = 1; j <= Lmax + 1 - m_tilde; ++j) {
            for (long k = m_tilde - 1; k <= Lmax - j; ++k) {
                double ls = log_S[static_cast<std::size_t>(j + k - 1)];
                if (ls == kNegInf) continue;
                double lw = log_binomial(static_cast<double>(k - 1), static_cast<double>(m_tilde - 2)) + mlq + ls;
                cells.push_back({j, k, lw});
            }
        }
    }
    std::vector<double> lw(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) lw[i] = cells[i].log_weight;
    auto keep = detail::prune_small(lw, log_sum_exp(lw), 0.5 * cfg.truncation);
    w.cells.reserve(keep.size());
    for (auto i : keep) {
        w.cells.push_back(cells[i]);
        w.kmax = std::max(w.kmax, cells[i].k);
        w.jmax = std::max(w.jmax, cells[i].j);
    }
    if (w.cells.empty()) throw ConfigError("mixture_weights: no admissible cells");
    return w;
}

namespace detail {

inline double flow_term(const PacketModel& flow_model, double s_f) {
    if (flow_model.family != Family::Exponential)
        throw ConfigError("flow-level model must be exponential (Poisson flow arrivals)");
    const double lam = flow_model.params[0];
    if (!(lam > 0.0)) throw ConfigError("flow rate must be > 0");
    if (!(s_f >= 0.0) || !std::isfinite(s_f)) throw DomainError("flow gap s_f must be >= 0");
    return std::log(lam) - lam * s_f;
}

} // namespace detail

inline double netflow_loglik(const NetFlow& s, const PacketModel& flow_model, const PacketModel& packet_model,
                             const FlowSizePmf& pmf, const ConvolutionPolicy& policy = {}) {
    if (s.size < 1) throw DomainError("netflow_loglik: size must be >= 1");
    const double lp = pmf.log_pmf(s.size);
    const double head = lp + detail::flow_term(flow_model, s.s_f);
    if (s.size == 1) return head;
    if (!(s.s_d > 0.0)) throw DomainError("netflow_loglik: duration must be > 0 for flows of size >= 2");
    return head + kfold_log_density(packet_model, s.size - 1, s.s_d, policy);
}

// Sum over cells using precomputed weights; j-dependent lead-gap terms are
// computed once per distinct j.
inline double sampled_netflow_loglik(const SampledNetFlow& s, const PacketModel& flow_model,
                                     const PacketModel& packet_model, const MixtureWeights& w,
                                     const ConvolutionPolicy& policy = {}) {
    if (s.size != w.m_sampled) throw DomainError("sampled_netflow_loglik: weights computed for another sampled size");
    if (!(s.s_d > 0.0)) throw DomainError("sampled_netflow_loglik: duration must be > 0");
    std::vector<double> dur(static_cast<std::size_t>(w.kmax + 1), kNegInf);
    std::vector<char> have_dur(dur.size(), 0);
    std::vector<double> lead(static_cast<std::size_t>(w.jmax + 1), kNegInf);
    std::vector<char> have_lead(lead.size(), 0);
    const double lam = flow_model.params.at(0);
    LogSumExp acc;
    for (const auto& c : w.cells) {
        auto ku = static_cast<std::size_t>(c.k);
        if (!have_dur[ku]) {
            dur[ku] = kfold_log_density(packet_model, c.k, s.s_d, policy);
            have_dur[ku] = 1;
        }
        double term = c.log_weight + dur[ku];
        if (!w.restricted) {
            auto ju = static_cast<std::size_t>(c.j);
            if (!have_lead[ju]) {
                lead[ju] = c.j == 1 ? detail::flow_term(flow_model, s.s_f)
                                    : lead_gap_log_density(lam, packet_model, c.j - 1, s.s_f, policy);
                have_lead[ju] = 1;
            }
            term = c.log_weight + lead[ju] + dur[ku];
        }
        acc.add(term);
    }
    return acc.value();
}

inline double restricted_sampled_loglik(double s_d, long m_tilde, const PacketModel& packet_model,
                                        const LikelihoodConfig& cfg) {
    if (m_tilde < 2) throw DomainError("restricted_sampled_loglik: sampled size must be >= 2");
    if (!(s_d > 0.0)) throw DomainError("restricted_sampled_loglik: duration must be > 0");
    LikelihoodConfig rc = cfg;
    rc.restricted = true;
    auto w = mixture_weights(m_tilde, rc);
    return sampled_netflow_loglik(SampledNetFlow{0.0, s_d, m_tilde}, PacketModel::exponential(1.0), packet_model, w,
                                  cfg.policy);
}

inline double sampled_netflow_loglik(const SampledNetFlow& s, const PacketModel& flow_model,
                                     const PacketModel& packet_model, const LikelihoodConfig& cfg) {
    if (s.size < 2) throw DomainError("sampled_netflow_loglik: sampled size must be >= 2");
    if (cfg.restricted) return restricted_sampled_loglik(s.s_d, s.size, packet_model, cfg);
    return sampled_netflow_loglik(s, flow_model, packet_model, mixture_weights(s.size, cfg), cfg.policy);
}

namespace detail {

template <class Fn>
double mean_of_terms(std::size_t n, unsigned threads, Fn&& term) {
    if (n == 0) throw DomainError("session_loglik: empty collection");
    std::vector<double> terms(n);
    parallel_for(n, threads, [&](std::size_t i) {
        try {
            terms[i] = term(i);
        } catch (const DomainError& e) {
            throw DomainError("flow " + std::to_string(i) + ": " + e.what());
        }
    });
    CompensatedSum s;
    for (double t : terms) s.add(t);
    return s.value() / static_cast<double>(n);
}

} // namespace detail

inline double session_loglik(const std::vector<NetFlow>& netflows, const PacketModel& flow_model,
                             const PacketModel& packet_model, const FlowSizePmf& pmf, unsigned threads = 1) {
    return detail::mean_of_terms(netflows.size(), threads, [&](std::size_t i) {
        return netflow_loglik(netflows[i], flow_model, packet_model, pmf);
    });
}

inline double session_loglik(const std::vector<SampledNetFlow>& sampled, const PacketModel& flow_model,
                             const PacketModel& packet_model, const LikelihoodConfig& cfg, unsigned threads = 1) {
    std::map<long, MixtureWeights> cache;
    for (const auto& s : sampled) {
        if (s.size < 2) continue;
        if (!cache.count(s.size)) cache.emplace(s.size, mixture_weights(s.size, cfg));
    }
    return detail::mean_of_terms(sampled.size(), threads, [&](std::size_t i) {
        const auto& s = sampled[i];
        if (s.size < 2) throw DomainError("trivial sampled NetFlow (size < 2)");
        return sampled_netflow_loglik(s, flow_model, packet_model, cache.at(s.size), cfg.policy);
    });
}

// Density of the (sampled) duration of a non-trivial flow, marginal over the
// sampled and latent sizes. Requires a bounded flow size pmf.
class MarginalDurationDensity {
  public:
    MarginalDurationDensity(const FlowSizePmf& pmf, double q, double truncation = 1e-10) : q_(q) {
        if (!(q > 0.0 && q <= 1.0)) throw ConfigError("marginal duration: q must lie in (0, 1]");
        if (!pmf.bounded()) throw ConfigError("marginal duration density needs a bounded flow size pmf");
        const long Lmax = pmf.max_size();
        std::vector<std::pair<long, double>> raw;
        if (q == 1.0) {
            for (std::size_t i = 0; i < pmf.support().size(); ++i) {
                long L = pmf.support()[i];
                if (L >= 2) raw.push_back({L - 1, std::log(pmf.mass()[i])});
            }
        } else {
            // W_k = q^2 (1-q)^(-k) sum_{L>k} p_L (1-q)^(L-1) (L - k)
            const double l1q = std::log1p(-q);
            std::vector<double> log_b(static_cast<std::size_t>(Lmax + 1), kNegInf);
            for (std::size_t i = 0; i < pmf.support().size(); ++i) {
                long L = pmf.support()[i];
                log_b[static_cast<std::size_t>(L)] = std::log(pmf.mass()[i]) + static_cast<double>(L - 1) * l1q;
            }
            double log_S = kNegInf, log_T = kNegInf;
            for (long k = Lmax - 1; k >= 1; --k) {
                log_S = detail::log_add(log_S, log_b[static_cast<std::size_t>(k + 1)]);
                log_T = detail::log_add(log_T, log_S);
                if (log_T == kNegInf) continue;
                raw.push_back({k, 2.0 * std::log(q) - static_cast<double>(k) * l1q + log_T});
            }
            std::reverse(raw.begin(), raw.end());
        }
        if (raw.empty()) throw ConfigError("marginal duration: pmf has no flow of size >= 2");
        std::vector<double> lw(raw.size());
        for (std::size_t i = 0; i < raw.size(); ++i) lw[i] = raw[i].second;
        log_nontrivial_ = log_sum_exp(lw);
        for (auto i : detail::prune_small(lw, log_nontrivial_, truncation))
            weights_.push_back({raw[i].first, raw[i].second - log_nontrivial_});
        kmax_ = weights_.back().first;
    }

    // (k, log weight) pairs normalised over non-trivial flows.
    const std::vector<std::pair<long, double>>& log_weights() const { return weights_; }
    double nontrivial_probability() const { return std::exp(log_nontrivial_); }
    long kmax() const { return kmax_; }
    double q() const { return q_; }

    double log_density(const KfoldTable& table, double s) const {
        if (!(s > 0.0)) throw DomainError("marginal duration density: duration must be > 0");
        LogSumExp acc;
        for (const auto& [k, lw] : weights_) acc.add(lw + table(k, s));
        return acc.value();
    }

    double log_density(const PacketModel& m, double s, const ConvolutionPolicy& policy = {}) const {
        KfoldTable t(m, policy);
        t.reserve(kmax_);
        return log_density(t, s);
    }

  private:
    double q_;
    double log_nontrivial_ = 0.0;
    long kmax_ = 0;
    std::vector<std::pair<long, double>> weights_;
};

inline double marginal_duration_logdensity(double s_d, const PacketModel& packet_model, const LikelihoodConfig& cfg) {
    MarginalDurationDensity d(cfg.pmf, cfg.q, cfg.truncation);
    return d.log_density(packet_model, s_d, cfg.policy);
}

struct BruteForceResult {
    double loglik;       // log of the summed pattern likelihoods
    double pattern_mass; // probability of retaining at least two packets
};

// Enumerates every retention pattern of a flow with `flow_size` packets. The
// lead-gap density is integrated numerically so that it does not share code
// with the closed forms used by the likelihood.
inline BruteForceResult brute_force_sampled_loglik(long flow_size, const SampledNetFlow& s,
                                                   const PacketModel& flow_model, const PacketModel& packet_model,
                                                   double q, bool restricted = false) {
    if (flow_size < 1 || flow_size > 12) throw DomainError("brute_force_sampled_loglik: flow size must be in 1..12");
    if (!(q > 0.0 && q <= 1.0)) throw DomainError("brute_force_sampled_loglik: q must lie in (0, 1]");
    const double lam = flow_model.params.at(0);
    TanhSinhRule rule(128);
    auto lead_numeric = [&](long n_gaps) {
        if (n_gaps == 0) return std::log(lam) - lam * s.s_f;
        LogSumExp acc;
        for (const auto& nd : rule.nodes()) {
            double t = s.s_f * nd.u; // packet part
            double rest = s.s_f * nd.v;
            acc.add(std::log(nd.w) + kfold_log_density(packet_model, n_gaps, t) + std::log(lam) - lam * rest);
        }
        return std::log(s.s_f) + acc.value();
    };
    const unsigned n = static_cast<unsigned>(flow_size);
    LogSumExp lik;
    double mass = 0.0;
    for (unsigned mask = 0; mask < (1u << n); ++mask) {
        const int r = std::popcount(mask);
        if (r < 2) continue;
        const double lp = r * std::log(q) + (static_cast<long>(n) - r) * (q < 1.0 ? std::log1p(-q) : 0.0);
        if (q == 1.0 && r != static_cast<int>(n)) continue;
        mass += std::exp(lp);
        if (r != s.size) continue;
        const long first = std::countr_zero(mask);               // 0-based
        const long last = 31 - std::countl_zero(mask);           // 0-based
        const long k = last - first;
        double term = lp + kfold_log_density(packet_model, k, s.s_d);
        if (!restricted) term += lead_numeric(first);
        lik.add(term);
    }
    return {lik.value(), mass};
}

} // namespace flowlik
