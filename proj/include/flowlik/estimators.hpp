#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include "error.hpp"
#include "flow.hpp"
#include "likelihood.hpp"
#include "math.hpp"
#include "netflow.hpp"
#include "optimizer.hpp"
#include "parallel.hpp"
#include "traffic_model.hpp"

namespace flowlik {

struct FitResult {
    std::string estimator;
    Family family = Family::Gamma;
    std::vector<std::string> names;
    std::vector<double> params;
    double loglik = 0.0;         // mean log-likelihood per observation
    std::vector<double> stderrs; // empty when unavailable
    long n_evals = 0;
    double wall_time = 0.0; // seconds
    long data_bytes = 0;
    long n_obs = 0;
    bool converged = true;
    std::vector<std::string> warnings;

    PacketModel model() const { return {family, params}; }
    double param(const std::string& name) const {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return params[i];
        throw ConfigError("FitResult has no parameter '" + name + "'");
    }
};

// Bytes of the CSV text the estimator consumed, measured by serialising it.
inline long serialized_bytes(const std::vector<double>& values) {
    long n = 0;
    char buf[64];
    for (double v : values) n += std::snprintf(buf, sizeof buf, "%.9g\n", v);
    return n;
}

inline long serialized_bytes(const std::vector<NetFlow>& rows) { return static_cast<long>(netflow_csv_string(rows).size()); }
inline long serialized_bytes(const std::vector<SampledNetFlow>& rows) {
    return static_cast<long>(netflow_csv_string(rows).size());
}

// ---------------------------------------------------------------------------
// Session objectives (mean log-likelihood per flow).

struct ObjectiveDerivs {
    double value;
    ParamVec grad;
    ParamMat hess;
};

class SessionObjective {
  public:
    virtual ~SessionObjective() = default;
    virtual double value(const PacketModel& m) const = 0;
    virtual bool has_derivs(Family) const { return false; }
    virtual ObjectiveDerivs derivs(const PacketModel&) const { throw ConfigError("no analytic derivatives"); }
    virtual std::vector<double> terms(const PacketModel& m) const = 0;
    virtual std::size_t n() const = 0;
};

// Complete-data NetFlow likelihood. Gamma and Exponential reduce to sums over
// distinct flow sizes; Log-Normal goes through the per-k FW table. A null pmf
// drops the (parameter-free) flow size term.
class NetFlowObjective : public SessionObjective {
  public:
    NetFlowObjective(std::vector<NetFlow> flows, const FlowSizePmf* pmf, PacketModel flow_model,
                     ConvolutionPolicy policy = {}, unsigned threads = 1)
        : flows_(std::move(flows)), policy_(policy), threads_(threads) {
        CompensatedSum c, a, b, s;
        for (const auto& f : flows_) {
            if (f.size < 2) throw DomainError("NetFlow objective: flows must have at least two packets");
            if (!(f.s_d > 0.0)) throw DomainError("NetFlow objective: flow duration must be > 0");
            const long k = f.size - 1;
            const double ls = std::log(f.s_d);
            const double lp = pmf ? pmf->log_pmf(f.size) : 0.0;
            if (lp == kNegInf)
                throw DomainError("flow size " + std::to_string(f.size) + " has zero probability under the pmf");
            const double ci = lp + detail::flow_term(flow_model, f.s_f);
            consts_.push_back(ci);
            log_sd_.push_back(ls);
            c.add(ci);
            a.add(static_cast<double>(k) * ls);
            b.add(ls);
            s.add(f.s_d);
            counts_[k] += 1;
            K_ += static_cast<double>(k);
            kmax_ = std::max(kmax_, k);
        }
        C_ = c.value();
        A_ = a.value();
        B_ = b.value();
        S_ = s.value();
    }

    std::size_t n() const override { return flows_.size(); }
    bool has_derivs(Family f) const override { return f != Family::LogNormal; }

    double value(const PacketModel& m) const override {
        if (m.family == Family::LogNormal) {
            auto t = terms(m);
            CompensatedSum s;
            for (double v : t) s.add(v);
            return s.value() / static_cast<double>(n());
        }
        return derivs_impl(m, false).value;
    }

    ObjectiveDerivs derivs(const PacketModel& m) const override { return derivs_impl(m, true); }

    std::vector<double> terms(const PacketModel& m) const override {
        KfoldTable table(m, policy_);
        table.reserve(kmax_);
        std::vector<double> out(flows_.size());
        parallel_for(flows_.size(), threads_, [&](std::size_t i) {
            out[i] = consts_[i] + table.eval(flows_[i].size - 1, flows_[i].s_d, log_sd_[i]);
        });
        return out;
    }

  private:
    ObjectiveDerivs derivs_impl(const PacketModel& m, bool want) const {
        const bool gamma = m.family == Family::Gamma;
        const double a = gamma ? m.params[0] : 1.0;
        const double b = m.params.back();
        const double lb = std::log(b);
        CompensatedSum lg, dg, tg;
        for (const auto& [k, cnt] : counts_) {
            const double kd = static_cast<double>(k), ka = kd * a, w = static_cast<double>(cnt);
            lg.add(w * log_gamma(ka));
            if (want && gamma) {
                dg.add(w * kd * boost::math::digamma(ka));
                tg.add(w * kd * kd * boost::math::trigamma(ka));
            }
        }
        const double nn = static_cast<double>(n());
        ObjectiveDerivs d;
        d.value = (C_ + a * lb * K_ - lg.value() + a * A_ - B_ - b * S_) / nn;
        if (!want) return d;
        if (gamma) {
            d.grad.resize(2);
            d.hess.resize(2, 2);
            d.grad << (K_ * lb - dg.value() + A_) / nn, (a * K_ / b - S_) / nn;
            d.hess << -tg.value() / nn, K_ / b / nn, K_ / b / nn, -a * K_ / (b * b) / nn;
        } else {
            d.grad.resize(1);
            d.hess.resize(1, 1);
            d.grad << (K_ / b - S_) / nn;
            d.hess << -K_ / (b * b) / nn;
        }
        return d;
    }

    std::vector<NetFlow> flows_;
    ConvolutionPolicy policy_;
    unsigned threads_;
    std::vector<double> consts_, log_sd_;
    std::map<long, long> counts_;
    double C_ = 0, A_ = 0, B_ = 0, S_ = 0, K_ = 0;
    long kmax_ = 1;
};

// Restricted (duration-only) sampled NetFlow likelihood; mixture weights are
// computed once per distinct sampled size.
class SampledObjective : public SessionObjective {
  public:
    SampledObjective(std::vector<SampledNetFlow> flows, const LikelihoodConfig& cfg, unsigned threads = 1)
        : flows_(std::move(flows)), cfg_(cfg), threads_(threads) {
        cfg_.restricted = true;
        cfg_.validate();
        for (const auto& f : flows_) {
            if (f.size < 2) throw DomainError("sampled objective: sampled sizes must be >= 2");
            if (!(f.s_d > 0.0)) throw DomainError("sampled objective: durations must be > 0");
            if (!weights_.count(f.size)) {
                auto w = std::make_shared<MixtureWeights>(mixture_weights(f.size, cfg_));
                kmax_ = std::max(kmax_, w->kmax);
                weights_.emplace(f.size, std::move(w));
            }
            log_sd_.push_back(std::log(f.s_d));
        }
        for (const auto& f : flows_) wptr_.push_back(weights_.at(f.size).get());
    }

    std::size_t n() const override { return flows_.size(); }
    bool has_derivs(Family f) const override { return f != Family::LogNormal; }
    const std::map<long, std::shared_ptr<MixtureWeights>>& weights() const { return weights_; }

    double value(const PacketModel& m) const override {
        auto t = terms(m);
        CompensatedSum s;
        for (double v : t) s.add(v);
        return s.value() / static_cast<double>(n());
    }

    std::vector<double> terms(const PacketModel& m) const override {
        KfoldTable table(m, cfg_.policy);
        table.reserve(kmax_);
        std::vector<double> out(flows_.size());
        parallel_for(flows_.size(), threads_, [&](std::size_t i) {
            const double s = flows_[i].s_d, ls = log_sd_[i];
            double mx = kNegInf;
            const auto& cells = wptr_[i]->cells;
            thread_local std::vector<double> buf;
            buf.resize(cells.size());
            for (std::size_t c = 0; c < cells.size(); ++c) {
                buf[c] = cells[c].log_weight + table.eval(cells[c].k, s, ls);
                mx = std::max(mx, buf[c]);
            }
            double acc = 0.0;
            for (double v : buf) acc += std::exp(v - mx);
            out[i] = mx + std::log(acc);
        });
        return out;
    }

    ObjectiveDerivs derivs(const PacketModel& m) const override {
        const bool gamma = m.family == Family::Gamma;
        const std::size_t d = m.dim();
        const double a = gamma ? m.params[0] : 1.0, b = m.params.back(), lb = std::log(b);
        // Per-k quantities.
        std::vector<double> ka(static_cast<std::size_t>(kmax_ + 1)), lnorm(ka.size()), psi(ka.size()), tri(ka.size());
        for (long k = 1; k <= kmax_; ++k) {
            auto ku = static_cast<std::size_t>(k);
            ka[ku] = static_cast<double>(k) * a;
            lnorm[ku] = ka[ku] * lb - log_gamma(ka[ku]);
            if (gamma) {
                psi[ku] = boost::math::digamma(ka[ku]);
                tri[ku] = boost::math::trigamma(ka[ku]);
            }
        }
        struct Acc {
            double v;
            double g[2];
            double h[3];
        };
        std::vector<Acc> per(flows_.size());
        parallel_for(flows_.size(), threads_, [&](std::size_t i) {
            const double s = flows_[i].s_d, ls = log_sd_[i];
            const auto& cells = wptr_[i]->cells;
            thread_local std::vector<double> lv;
            lv.resize(cells.size());
            double mx = kNegInf;
            for (std::size_t c = 0; c < cells.size(); ++c) {
                auto ku = static_cast<std::size_t>(cells[c].k);
                lv[c] = cells[c].log_weight + lnorm[ku] + (ka[ku] - 1.0) * ls - b * s;
                mx = std::max(mx, lv[c]);
            }
            double tot = 0.0, g0 = 0, g1 = 0, h00 = 0, h01 = 0, h11 = 0;
            for (std::size_t c = 0; c < cells.size(); ++c) {
                const double w = std::exp(lv[c] - mx);
                const auto ku = static_cast<std::size_t>(cells[c].k);
                const double kd = static_cast<double>(cells[c].k);
                tot += w;
                if (gamma) {
                    const double ga = kd * (lb - psi[ku] + ls), gb = ka[ku] / b - s;
                    g0 += w * ga;
                    g1 += w * gb;
                    h00 += w * (-kd * kd * tri[ku] + ga * ga);
                    h01 += w * (kd / b + ga * gb);
                    h11 += w * (-ka[ku] / (b * b) + gb * gb);
                } else {
                    const double gb = kd / b - s;
                    g0 += w * gb;
                    h00 += w * (-kd / (b * b) + gb * gb);
                }
            }
            g0 /= tot;
            g1 /= tot;
            h00 = h00 / tot - g0 * g0;
            h01 = h01 / tot - g0 * g1;
            h11 = h11 / tot - g1 * g1;
            per[i] = {mx + std::log(tot), {g0, g1}, {h00, h01, h11}};
        });
        CompensatedSum v, g0, g1, h00, h01, h11;
        for (const auto& p : per) {
            v.add(p.v);
            g0.add(p.g[0]);
            g1.add(p.g[1]);
            h00.add(p.h[0]);
            h01.add(p.h[1]);
            h11.add(p.h[2]);
        }
        const double nn = static_cast<double>(n());
        ObjectiveDerivs out;
        out.value = v.value() / nn;
        out.grad.resize(static_cast<Eigen::Index>(d));
        out.hess.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
        if (gamma) {
            out.grad << g0.value() / nn, g1.value() / nn;
            out.hess << h00.value() / nn, h01.value() / nn, h01.value() / nn, h11.value() / nn;
        } else {
            out.grad << g0.value() / nn;
            out.hess << h00.value() / nn;
        }
        return out;
    }

  private:
    std::vector<SampledNetFlow> flows_;
    LikelihoodConfig cfg_;
    unsigned threads_;
    std::map<long, std::shared_ptr<MixtureWeights>> weights_;
    std::vector<const MixtureWeights*> wptr_;
    std::vector<double> log_sd_;
    long kmax_ = 1;
};

// Single session NetFlow: FW density of the total duration given the total
// number of inter-renewals. One observation for two parameters, so the
// maximiser lies on a ridge.
class SessionFwObjective : public SessionObjective {
  public:
    explicit SessionFwObjective(SessionNetFlow s, ConvolutionPolicy policy = {}) : s_(s), policy_(policy) {
        if (s_.total_packets - s_.n_flows < 1) throw DomainError("session NetFlow has no inter-renewals");
        if (!(s_.total_duration > 0.0)) throw DomainError("session NetFlow duration must be > 0");
    }
    std::size_t n() const override { return 1; }
    double value(const PacketModel& m) const override {
        return kfold_log_density(m, s_.total_packets - s_.n_flows, s_.total_duration, policy_);
    }
    std::vector<double> terms(const PacketModel& m) const override { return {value(m)}; }

  private:
    SessionNetFlow s_;
    ConvolutionPolicy policy_;
};

// ---------------------------------------------------------------------------
// Generic maximisation over a session objective.

namespace detail {

inline PacketModel model_from_phi(Family fam, const std::vector<double>& phi) {
    auto mask = PacketModel::positive_mask(fam);
    PacketModel m{fam, phi};
    for (std::size_t i = 0; i < phi.size(); ++i)
        if (mask[i]) m.params[i] = std::exp(phi[i]);
    return m;
}

inline std::vector<double> phi_from_params(Family fam, const std::vector<double>& theta) {
    auto mask = PacketModel::positive_mask(fam);
    std::vector<double> phi = theta;
    for (std::size_t i = 0; i < phi.size(); ++i)
        if (mask[i]) phi[i] = std::log(theta[i]);
    return phi;
}

// Largest |log-parameter| the optimiser may visit (about 1e34).
inline constexpr double kPhiBound = 80.0;

} // namespace detail

inline FitResult maximize_objective(const SessionObjective& obj, Family fam, const std::vector<double>& theta0,
                                    const OptimizerConfig& opt, const std::string& estimator) {
    auto t0 = std::chrono::steady_clock::now();
    FitResult fr;
    fr.estimator = estimator;
    fr.family = fam;
    fr.names = PacketModel::param_names_of(fam);
    fr.n_obs = static_cast<long>(obj.n());
    const auto mask = PacketModel::positive_mask(fam);
    const auto phi0 = detail::phi_from_params(fam, theta0);

    long evals = 0;
    auto negll = [&](const std::vector<double>& phi) {
        ++evals;
        for (std::size_t i = 0; i < phi.size(); ++i)
            if (!std::isfinite(phi[i]) || (mask[i] && std::abs(phi[i]) > detail::kPhiBound))
                return std::numeric_limits<double>::infinity();
        try {
            double v = obj.value(detail::model_from_phi(fam, phi));
            return std::isfinite(v) ? -v : std::numeric_limits<double>::infinity();
        } catch (const DomainError&) {
            return std::numeric_limits<double>::infinity();
        }
    };

    OptimResult nm = nelder_mead(negll, phi0, opt);
    std::vector<double> phi = nm.x;
    double best = -nm.f;
    bool converged = nm.converged;

    // Newton refinement in phi coordinates.
    if (opt.polish && obj.has_derivs(fam) && std::isfinite(best)) {
        for (int it = 0; it < 100; ++it) {
            PacketModel m = detail::model_from_phi(fam, phi);
            ObjectiveDerivs d;
            try {
                d = obj.derivs(m);
            } catch (const std::exception&) {
                break;
            }
            ++evals;
            const auto n = static_cast<Eigen::Index>(phi.size());
            Eigen::VectorXd g(n);
            Eigen::MatrixXd H(n, n);
            for (Eigen::Index i = 0; i < n; ++i) {
                const double ti = mask[static_cast<std::size_t>(i)] ? m.params[static_cast<std::size_t>(i)] : 1.0;
                g(i) = ti * d.grad(i);
                for (Eigen::Index j = 0; j < n; ++j) {
                    const double tj = mask[static_cast<std::size_t>(j)] ? m.params[static_cast<std::size_t>(j)] : 1.0;
                    H(i, j) = ti * tj * d.hess(i, j);
                }
                if (mask[static_cast<std::size_t>(i)]) H(i, i) += ti * d.grad(i);
            }
            Eigen::LLT<Eigen::MatrixXd> llt(-H);
            if (llt.info() != Eigen::Success || !g.allFinite()) break;
            Eigen::VectorXd step = llt.solve(g);
            double t = 1.0;
            bool moved = false;
            for (int ls = 0; ls < 40; ++ls, t *= 0.5) {
                std::vector<double> trial = phi;
                for (Eigen::Index i = 0; i < n; ++i) trial[static_cast<std::size_t>(i)] += t * step(i);
                double v = -negll(trial);
                // near the optimum the objective is flat to rounding, so a
                // full Newton step may lose a few ulps and still be better
                const bool flat = ls == 0 && std::isfinite(v) && v >= best - 1e-13 * (1.0 + std::abs(best));
                if (v >= best || flat) {
                    moved = v > best || trial != phi;
                    phi = trial;
                    best = v;
                    break;
                }
            }
            if (!moved || step.norm() * t < 1e-14 * (1.0 + Eigen::Map<Eigen::VectorXd>(phi.data(), n).norm())) {
                if (g.norm() < 1e-6) converged = true;
                break;
            }
        }
    }

    fr.params = detail::model_from_phi(fam, phi).params;
    fr.loglik = best;
    fr.n_evals = evals;

    bool diverged = false;
    for (std::size_t i = 0; i < phi.size(); ++i)
        if (mask[i] && std::abs(phi[i] - phi0[i]) > std::log(1e6)) diverged = true;
    if (diverged) fr.warnings.push_back("divergent estimate: parameters moved more than six orders of magnitude");
    if (!std::isfinite(best)) throw ConvergenceError(estimator + ": objective is not finite at any visited point",
                                                     fr.params, best);
    if (!converged && !diverged)
        throw ConvergenceError(estimator + ": optimiser did not converge after restarts", fr.params, best);
    fr.converged = converged && !diverged;

    // Standard errors from the observed information n * (-Hessian of the mean).
    Eigen::MatrixXd H;
    const PacketModel mhat = fr.model();
    if (obj.has_derivs(fam)) {
        auto d = obj.derivs(mhat);
        H = d.hess;
    } else {
        auto f = [&](const std::vector<double>& th) {
            try {
                return obj.value(PacketModel{fam, th});
            } catch (const std::exception&) {
                return std::numeric_limits<double>::quiet_NaN();
            }
        };
        H = numerical_hessian(f, fr.params);
    }
    Eigen::MatrixXd info = -static_cast<double>(obj.n()) * H;
    Eigen::LLT<Eigen::MatrixXd> llt(info);
    if (info.allFinite() && llt.info() == Eigen::Success) {
        Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(info.rows(), info.cols()));
        for (Eigen::Index i = 0; i < cov.rows(); ++i) fr.stderrs.push_back(std::sqrt(cov(i, i)));
    } else {
        fr.warnings.push_back("observed information is not positive definite; no standard errors");
    }
    fr.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return fr;
}

// ---------------------------------------------------------------------------
// Method-of-moments estimators.

struct MomResult {
    double alpha = 0.0;
    double beta = 0.0;
    double beta_star = 0.0;
    long n_used = 0;
    std::vector<std::string> warnings;
};

// Coefficient of variation of the pooled inter-renewals and a size-weighted
// average of per-flow packet intensities.
inline MomResult mom_hohn(const std::vector<Flow>& flows) {
    std::vector<double> x;
    CompensatedSum sum_m, weighted;
    MomResult r;
    long zero_duration = 0;
    for (const auto& f : flows) {
        if (f.size() < 2) continue;
        double sd = 0.0;
        for (std::size_t i = 1; i < f.gaps.size(); ++i) {
            x.push_back(f.gaps[i]);
            sd += f.gaps[i];
        }
        const double m = static_cast<double>(f.size() - 1);
        if (!(sd > 0.0)) {
            ++zero_duration;
            continue;
        }
        sum_m.add(m);
        weighted.add(m * (m / sd));
        ++r.n_used;
    }
    if (x.size() < 2) throw DomainError("mom_hohn: need at least two pooled inter-renewals");
    const double xbar = mean(x), sx = stddev(x);
    if (!(sx > 0.0)) throw DomainError("mom_hohn: inter-renewals have zero variance");
    if (zero_duration > 0)
        r.warnings.push_back("excluded " + std::to_string(zero_duration) + " flows with zero duration");
    r.alpha = (xbar / sx) * (xbar / sx);
    r.beta = r.alpha * weighted.value() / sum_m.value();
    r.beta_star = r.alpha / xbar;
    return r;
}

inline MomResult mom_netflow(const std::vector<NetFlow>& netflows) {
    std::vector<double> y, inv_m;
    CompensatedSum sum_m, sum_d, weighted;
    MomResult r;
    for (const auto& nf : netflows) {
        if (nf.size < 2) continue;
        if (!(nf.s_d > 0.0)) {
            r.warnings.push_back("excluded a flow with zero duration");
            continue;
        }
        const double m = static_cast<double>(nf.size - 1);
        y.push_back(nf.s_d / m);
        inv_m.push_back(1.0 / m);
        sum_m.add(m);
        sum_d.add(nf.s_d);
        weighted.add(m * (m / nf.s_d));
    }
    if (y.size() < 2) throw DomainError("mom_netflow: needs at least two non-trivial NetFlows");
    const double ybar = mean(y), sy = stddev(y);
    if (!(sy > 0.0)) throw DomainError("mom_netflow: per-flow mean gaps have zero variance");
    r.n_used = static_cast<long>(y.size());
    r.alpha = (ybar / sy) * (ybar / sy) * mean(inv_m);
    r.beta = r.alpha * weighted.value() / sum_m.value();
    const double zbar = sum_d.value() / sum_m.value();
    r.beta_star = r.alpha / zbar;
    return r;
}

// ---------------------------------------------------------------------------
// Maximum likelihood.

inline FitResult mle_standard(const std::vector<double>& x, Family family) {
    auto t0 = std::chrono::steady_clock::now();
    if (x.size() < 2) throw DomainError("mle_standard: need at least two inter-renewals");
    for (double v : x)
        if (!(v > 0.0)) throw DomainError("mle_standard: inter-renewals must be > 0");
    FitResult fr;
    fr.estimator = "mle-standard";
    fr.family = family;
    fr.names = PacketModel::param_names_of(family);
    fr.n_obs = static_cast<long>(x.size());
    const double n = static_cast<double>(x.size());
    CompensatedSum sx, slx;
    for (double v : x) {
        sx.add(v);
        slx.add(std::log(v));
    }
    switch (family) {
    case Family::Exponential: {
        const double lam = n / sx.value();
        fr.params = {lam};
        fr.stderrs = {lam / std::sqrt(n)};
        break;
    }
    case Family::LogNormal: {
        const double mu = slx.value() / n;
        CompensatedSum ss;
        for (double v : x) {
            double d = std::log(v) - mu;
            ss.add(d * d);
        }
        const double sigma = std::sqrt(ss.value() / n);
        fr.params = {mu, sigma};
        if (!(sigma > 0.0)) {
            fr.warnings.push_back("degenerate data: sigma estimate is zero");
            fr.converged = false;
            fr.stderrs.clear();
        } else {
            fr.stderrs = {sigma / std::sqrt(n), sigma / std::sqrt(2.0 * n)};
        }
        break;
    }
    case Family::Gamma: {
        const double xbar = sx.value() / n;
        const double s = std::log(xbar) - slx.value() / n;
        if (!(s > 0.0)) throw DomainError("mle_standard: degenerate data (all inter-renewals equal)");
        double a = (3.0 - s + std::sqrt((s - 3.0) * (s - 3.0) + 24.0 * s)) / (12.0 * s);
        for (int it = 0; it < 100; ++it) {
            const double f = std::log(a) - boost::math::digamma(a) - s;
            const double fp = 1.0 / a - boost::math::trigamma(a);
            double an = a - f / fp;
            if (!(an > 0.0)) an = 0.5 * a;
            ++fr.n_evals;
            const bool done = std::abs(an - a) <= 1e-15 * a;
            a = an;
            if (done) break;
        }
        const double b = a / xbar;
        fr.params = {a, b};
        Eigen::MatrixXd info = n * fisher_information(PacketModel::gamma(a, b));
        Eigen::MatrixXd cov = info.inverse();
        fr.stderrs = {std::sqrt(cov(0, 0)), std::sqrt(cov(1, 1))};
        break;
    }
    }
    if (fr.converged || family != Family::LogNormal) {
        const PacketModel m = fr.model();
        CompensatedSum ll;
        for (double v : x) ll.add(log_density(m, v));
        fr.loglik = ll.value() / n;
    }
    fr.data_bytes = serialized_bytes(x);
    fr.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return fr;
}

namespace detail {

inline std::vector<NetFlow> informative(const std::vector<NetFlow>& netflows, std::vector<std::string>& warnings) {
    std::vector<NetFlow> out;
    long dropped = 0;
    for (const auto& nf : netflows) {
        if (nf.size >= 2)
            out.push_back(nf);
        else
            ++dropped;
    }
    if (dropped > 0) warnings.push_back("ignored " + std::to_string(dropped) + " single-packet flows");
    if (out.empty()) throw DomainError("no NetFlow with at least two packets");
    return out;
}

} // namespace detail

// NetFlow MLE. Starts at the NetFlow moments estimate when it is computable.
// A null pmf drops the size term, which does not depend on the packet model.
inline FitResult mle_netflow(const std::vector<NetFlow>& netflows, Family family, const FlowSizePmf* pmf,
                             const OptimizerConfig& opt = {}, double flow_rate = 1.0, unsigned threads = 1,
                             ConvolutionPolicy policy = {}) {
    std::vector<std::string> warnings;
    auto flows = detail::informative(netflows, warnings);
    NetFlowObjective obj(flows, pmf, PacketModel::exponential(flow_rate), policy, threads);

    CompensatedSum sy;
    for (const auto& f : flows) sy.add(f.s_d / static_cast<double>(f.size - 1));
    const double ybar = sy.value() / static_cast<double>(flows.size());
    std::vector<double> theta0;
    switch (family) {
    case Family::Gamma: {
        theta0 = {1.0, 1.0 / ybar};
        if (flows.size() >= 2) {
            try {
                auto mom = mom_netflow(flows);
                if (std::isfinite(mom.alpha) && mom.alpha > 0 && std::isfinite(mom.beta_star) && mom.beta_star > 0)
                    theta0 = {mom.alpha, mom.beta_star};
            } catch (const DomainError&) {
            }
        }
        break;
    }
    case Family::Exponential: theta0 = {1.0 / ybar}; break;
    case Family::LogNormal: theta0 = {std::log(ybar) - 0.5, 1.0}; break;
    }
    auto fr = maximize_objective(obj, family, theta0, opt, "mle");
    fr.warnings.insert(fr.warnings.begin(), warnings.begin(), warnings.end());
    fr.data_bytes = serialized_bytes(netflows);
    return fr;
}

inline FitResult mle_netflow(const std::vector<NetFlow>& netflows, Family family, const FlowSizePmf& pmf,
                             const OptimizerConfig& opt = {}, double flow_rate = 1.0, unsigned threads = 1,
                             ConvolutionPolicy policy = {}) {
    return mle_netflow(netflows, family, &pmf, opt, flow_rate, threads, policy);
}

// Sampled NetFlow MLE through the restricted (duration-only) likelihood.
inline FitResult mle_sampled_netflow(const std::vector<SampledNetFlow>& sampled, Family family,
                                     const LikelihoodConfig& cfg, const OptimizerConfig& opt = {},
                                     unsigned threads = 1) {
    std::vector<SampledNetFlow> flows;
    long trivial = 0;
    for (const auto& s : sampled) {
        if (s.size >= 2)
            flows.push_back(s);
        else
            ++trivial;
    }
    if (flows.empty()) throw DomainError("mle_sampled_netflow: no non-trivial sampled NetFlows");
    auto t0 = std::chrono::steady_clock::now();
    SampledObjective obj(flows, cfg, threads);
    CompensatedSum sd, sm;
    for (const auto& f : flows) {
        sd.add(f.s_d);
        sm.add(static_cast<double>(f.size - 1));
    }
    // Thinned gaps span about 1/q original gaps.
    const double gap = cfg.q * sd.value() / sm.value();
    std::vector<double> theta0;
    switch (family) {
    case Family::Gamma: theta0 = {1.0, 1.0 / gap}; break;
    case Family::Exponential: theta0 = {1.0 / gap}; break;
    case Family::LogNormal: theta0 = {std::log(gap) - 1.0, 1.5}; break;
    }
    auto fr = maximize_objective(obj, family, theta0, opt, "mle-sampled");
    if (trivial > 0) fr.warnings.insert(fr.warnings.begin(), "ignored " + std::to_string(trivial) + " trivial sampled NetFlows");
    fr.data_bytes = serialized_bytes(sampled);
    fr.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return fr;
}

// Log-Normal fit of a single session NetFlow through the FW density.
inline FitResult two_step_lognormal_mle(const SessionNetFlow& session, const OptimizerConfig& opt = {},
                                        ConvolutionPolicy policy = {}) {
    if (session.total_packets < 2) throw DomainError("two_step_lognormal_mle: need at least two packets");
    SessionFwObjective obj(session, policy);
    const long k = session.total_packets - session.n_flows;
    const double gap = session.total_duration / static_cast<double>(k);
    auto fr = maximize_objective(obj, Family::LogNormal, {std::log(gap) - 0.5, 1.0}, opt, "lognormal-two-step");
    fr.warnings.push_back("single aggregated observation: the two-parameter objective is flat along a ridge");
    return fr;
}

// Fallback: FW density per flow, over flows whose duration reaches the FW
// threshold at the starting point.
inline FitResult lognormal_per_flow_fw(const std::vector<NetFlow>& netflows, const OptimizerConfig& opt = {},
                                       double fw_min_total = std::numeric_limits<double>::quiet_NaN(),
                                       unsigned threads = 1) {
    std::vector<std::string> warnings;
    auto flows = detail::informative(netflows, warnings);
    CompensatedSum sy;
    for (const auto& f : flows) sy.add(f.s_d / static_cast<double>(f.size - 1));
    const double mu0 = std::log(sy.value() / static_cast<double>(flows.size())) - 0.5;
    std::vector<NetFlow> kept;
    for (const auto& f : flows) {
        double thr = std::isnan(fw_min_total) ? fw_default_min_total(f.size - 1, mu0) : fw_min_total;
        if (f.s_d >= thr) kept.push_back(f);
    }
    if (kept.empty()) throw DomainError("lognormal_per_flow_fw: no flow reaches the FW threshold");
    NetFlowObjective obj(kept, nullptr, PacketModel::exponential(1.0), {}, threads);
    auto fr = maximize_objective(obj, Family::LogNormal, {mu0, 1.0}, opt, "lognormal-per-flow");
    fr.warnings = warnings;
    fr.warnings.push_back("kept " + std::to_string(kept.size()) + " of " + std::to_string(flows.size()) +
                          " flows above the FW threshold");
    fr.data_bytes = serialized_bytes(netflows);
    return fr;
}

// Thinned case: restricted sampled likelihood with FW convolutions.
inline FitResult two_step_lognormal_mle(const std::vector<SampledNetFlow>& sampled, const LikelihoodConfig& cfg,
                                        const OptimizerConfig& opt = {}, unsigned threads = 1) {
    auto fr = mle_sampled_netflow(sampled, Family::LogNormal, cfg, opt, threads);
    fr.estimator = "lognormal-two-step";
    return fr;
}

} // namespace flowlik
