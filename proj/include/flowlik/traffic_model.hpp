#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/special_functions/hypergeometric_1F1.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include "error.hpp"
#include "math.hpp"
#include "quadrature.hpp"
#include "rng.hpp"

namespace flowlik {

enum class Family { Gamma, Exponential, LogNormal };

inline std::string to_string(Family f) {
    switch (f) {
    case Family::Gamma: return "gamma";
    case Family::Exponential: return "exponential";
    case Family::LogNormal: return "lognormal";
    }
    return "?";
}

inline Family family_from_string(const std::string& s) {
    if (s == "gamma") return Family::Gamma;
    if (s == "exponential" || s == "exp") return Family::Exponential;
    if (s == "lognormal" || s == "log-normal" || s == "ln") return Family::LogNormal;
    throw ConfigError("unknown packet model family '" + s + "'");
}

// Small fixed-capacity vectors; the largest model has two parameters.
using ParamVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 2, 1>;
using ParamMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 2, 2>;

struct PacketModel {
    Family family = Family::Exponential;
    // Gamma: (shape, rate); Exponential: (rate); LogNormal: (mu, sigma).
    std::vector<double> params{1.0};

    static PacketModel gamma(double shape, double rate) { return {Family::Gamma, {shape, rate}}; }
    static PacketModel exponential(double rate) { return {Family::Exponential, {rate}}; }
    static PacketModel lognormal(double mu, double sigma) { return {Family::LogNormal, {mu, sigma}}; }

    static std::size_t dim_of(Family f) { return f == Family::Exponential ? 1 : 2; }
    std::size_t dim() const { return dim_of(family); }

    static std::vector<std::string> param_names_of(Family f) {
        switch (f) {
        case Family::Gamma: return {"alpha", "beta"};
        case Family::Exponential: return {"lambda"};
        case Family::LogNormal: return {"mu", "sigma"};
        }
        return {};
    }
    std::vector<std::string> param_names() const { return param_names_of(family); }

    // Which parameters must be strictly positive.
    static std::vector<bool> positive_mask(Family f) {
        if (f == Family::LogNormal) return {false, true};
        return std::vector<bool>(dim_of(f), true);
    }

    void validate() const {
        if (params.size() != dim())
            throw ConfigError(to_string(family) + " model needs " + std::to_string(dim()) + " parameters");
        auto mask = positive_mask(family);
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (!std::isfinite(params[i])) throw ConfigError("non-finite model parameter");
            if (mask[i] && !(params[i] > 0.0))
                throw ConfigError(to_string(family) + " parameter '" + param_names()[i] + "' must be > 0");
        }
    }

    double mean() const {
        switch (family) {
        case Family::Gamma: return params[0] / params[1];
        case Family::Exponential: return 1.0 / params[0];
        case Family::LogNormal: return std::exp(params[0] + 0.5 * params[1] * params[1]);
        }
        return 0.0;
    }

    bool operator==(const PacketModel&) const = default;
};

enum class ConvolutionMode { ClosedForm, FentonWilkinson, NumericQuadrature };

// Counters shared by evaluations that want to surface soft warnings.
struct Diagnostics {
    std::atomic<std::uint64_t> fw_below_min_total{0};
    std::atomic<std::uint64_t> non_finite_terms{0};
};

struct ConvolutionPolicy {
    ConvolutionMode mode = ConvolutionMode::ClosedForm;
    int quadrature_points = 64;
    int max_quadrature_k = 16;
    // Durations below this flag the FW approximation as unreliable.
    // NaN selects the default k * exp(mu).
    double fw_min_total = std::numeric_limits<double>::quiet_NaN();
    Diagnostics* diagnostics = nullptr;

    static ConvolutionPolicy quadrature(int points = 64) {
        ConvolutionPolicy p;
        p.mode = ConvolutionMode::NumericQuadrature;
        p.quadrature_points = points;
        return p;
    }
};

namespace detail {

inline void require_positive(double x, const char* what) {
    if (!(x > 0.0) || !std::isfinite(x))
        throw DomainError(std::string(what) + ": argument must be a positive finite real, got " + std::to_string(x));
}

inline double gamma_log_pdf(double shape, double rate, double x) {
    return shape * std::log(rate) - log_gamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

inline double lognormal_log_pdf(double mu, double sigma, double x) {
    double lx = std::log(x);
    double z = (lx - mu) / sigma;
    return -lx - std::log(sigma) - 0.5 * std::log(2.0 * std::numbers::pi) - 0.5 * z * z;
}

} // namespace detail

inline double log_density(const PacketModel& m, double x) {
    detail::require_positive(x, "log_density");
    switch (m.family) {
    case Family::Gamma: return detail::gamma_log_pdf(m.params[0], m.params[1], x);
    case Family::Exponential: return std::log(m.params[0]) - m.params[0] * x;
    case Family::LogNormal: return detail::lognormal_log_pdf(m.params[0], m.params[1], x);
    }
    return kNegInf;
}

struct FwParams {
    double mu_star;
    double sigma_star;
};

// Single Log-Normal matched to the first two moments of a sum of k iid
// LogNormal(mu, sigma). The location is chosen so the mean is preserved.
inline FwParams fenton_wilkinson_params(long k, double mu, double sigma) {
    if (k < 1) throw DomainError("fenton_wilkinson_params: k must be >= 1");
    if (!(sigma > 0.0)) throw DomainError("fenton_wilkinson_params: sigma must be > 0");
    if (k == 1) return {mu, sigma};
    const double s2 = sigma * sigma;
    const double lk = std::log(static_cast<double>(k));
    double s2_star;
    if (s2 <= 30.0)
        s2_star = std::log1p(std::expm1(s2) / static_cast<double>(k));
    else
        s2_star = s2 - lk + std::log1p(static_cast<double>(k - 1) * std::exp(-s2));
    return {lk + mu + 0.5 * (s2 - s2_star), std::sqrt(s2_star)};
}

inline double fw_default_min_total(long k, double mu) { return static_cast<double>(k) * std::exp(mu); }

inline double numeric_kfold_log_density(const PacketModel& m, long k, double x, int points = 64);

inline double kfold_log_density(const PacketModel& m, long k, double x, const ConvolutionPolicy& policy = {}) {
    if (k < 1) throw DomainError("kfold_log_density: k must be >= 1");
    detail::require_positive(x, "kfold_log_density");
    if (policy.mode == ConvolutionMode::NumericQuadrature) {
        if (k > policy.max_quadrature_k)
            throw ConfigError("kfold_log_density: NumericQuadrature limited to k <= " +
                              std::to_string(policy.max_quadrature_k));
        return numeric_kfold_log_density(m, k, x, policy.quadrature_points);
    }
    if (k == 1) return log_density(m, x);
    switch (m.family) {
    case Family::Gamma: return detail::gamma_log_pdf(static_cast<double>(k) * m.params[0], m.params[1], x);
    case Family::Exponential: return detail::gamma_log_pdf(static_cast<double>(k), m.params[0], x);
    case Family::LogNormal: {
        auto fw = fenton_wilkinson_params(k, m.params[0], m.params[1]);
        if (policy.diagnostics) {
            double thr = std::isnan(policy.fw_min_total) ? fw_default_min_total(k, m.params[0]) : policy.fw_min_total;
            if (x < thr) policy.diagnostics->fw_below_min_total.fetch_add(1, std::memory_order_relaxed);
        }
        return detail::lognormal_log_pdf(fw.mu_star, fw.sigma_star, x);
    }
    }
    return kNegInf;
}

namespace detail {

// log of (h_a * h_b)(x) by tanh-sinh on the substitution t = x u; h_a and h_b
// are evaluated recursively by splitting k in halves.
inline double numeric_kfold_rec(const PacketModel& m, long k, double x, const TanhSinhRule& rule) {
    if (k == 1) return log_density(m, x);
    const long a = k / 2, b = k - a;
    const auto& nodes = rule.nodes();
    const std::size_t n = nodes.size();
    std::vector<double> la(n), lb(n);
    for (std::size_t i = 0; i < n; ++i) la[i] = numeric_kfold_rec(m, a, x * nodes[i].u, rule);
    if (a == b) {
        // Symmetric nodes: x * v_i == x * u_{n-1-i}.
        for (std::size_t i = 0; i < n; ++i) lb[i] = la[n - 1 - i];
    } else {
        for (std::size_t i = 0; i < n; ++i) lb[i] = numeric_kfold_rec(m, b, x * nodes[i].v, rule);
    }
    LogSumExp acc;
    for (std::size_t i = 0; i < n; ++i) acc.add(std::log(nodes[i].w) + la[i] + lb[i]);
    return std::log(x) + acc.value();
}

} // namespace detail

// Direct numerical self-convolution; cost grows like points^ceil(log2 k), so
// this is meant for verification with small k.
inline double numeric_kfold_log_density(const PacketModel& m, long k, double x, int points) {
    if (k < 1) throw DomainError("numeric_kfold_log_density: k must be >= 1");
    detail::require_positive(x, "numeric_kfold_log_density");
    if (points < 64) throw ConfigError("quadrature_points must be >= 64");
    TanhSinhRule rule(points);
    return detail::numeric_kfold_rec(m, k, x, rule);
}

// Log-density, gradient and Hessian of the k-fold density with respect to
// the model parameters (Gamma and Exponential only).
struct KfoldDerivs {
    double value;
    ParamVec grad;
    ParamMat hess;
};

inline KfoldDerivs kfold_log_density_derivs(const PacketModel& m, long k, double x) {
    detail::require_positive(x, "kfold_log_density_derivs");
    const double kd = static_cast<double>(k);
    const double lx = std::log(x);
    KfoldDerivs d;
    if (m.family == Family::Gamma) {
        const double a = m.params[0], b = m.params[1], ka = kd * a;
        const double lb = std::log(b);
        d.value = ka * lb - log_gamma(ka) + (ka - 1.0) * lx - b * x;
        d.grad.resize(2);
        d.hess.resize(2, 2);
        d.grad << kd * (lb - boost::math::digamma(ka) + lx), ka / b - x;
        d.hess << -kd * kd * boost::math::trigamma(ka), kd / b, kd / b, -ka / (b * b);
    } else if (m.family == Family::Exponential) {
        const double l = m.params[0];
        d.value = kd * std::log(l) - log_gamma(kd) + (kd - 1.0) * lx - l * x;
        d.grad.resize(1);
        d.hess.resize(1, 1);
        d.grad << kd / l - x;
        d.hess << -kd / (l * l);
    } else {
        throw ConfigError("analytic derivatives are available for gamma and exponential models only");
    }
    return d;
}

// Per-k cache of the parameter-only part of the k-fold log-density, used in
// likelihood loops where the same k recurs across many flows. Not thread-safe
// while growing; call reserve() before sharing read-only across workers.
class KfoldTable {
  public:
    KfoldTable(PacketModel model, ConvolutionPolicy policy = {}) : model_(std::move(model)), policy_(policy) {
        model_.validate();
        if (model_.family != Family::LogNormal) log_rate_ = std::log(model_.params.back());
    }

    const PacketModel& model() const { return model_; }

    void reserve(long kmax) {
        if (static_cast<long>(consts_.size()) > kmax) return;
        long start = static_cast<long>(consts_.size());
        consts_.resize(static_cast<std::size_t>(kmax + 1));
        for (long k = std::max(start, 1L); k <= kmax; ++k) consts_[static_cast<std::size_t>(k)] = make_const(k);
    }

    double operator()(long k, double x) const {
        if (!(x > 0.0)) detail::require_positive(x, "kfold_log_density");
        return eval(k, x, std::log(x));
    }

    // Same as operator() with log(x) supplied by the caller.
    double eval(long k, double x, double log_x) const {
        if (policy_.mode == ConvolutionMode::NumericQuadrature || k == 1 ||
            k >= static_cast<long>(consts_.size()))
            return kfold_log_density(model_, k, x, policy_);
        const auto& c = consts_[static_cast<std::size_t>(k)];
        if (model_.family == Family::LogNormal) {
            if (policy_.diagnostics && x < c.fw_min)
                policy_.diagnostics->fw_below_min_total.fetch_add(1, std::memory_order_relaxed);
            double z = (log_x - c.shape) / c.rate;
            return c.log_norm - log_x - 0.5 * z * z;
        }
        return c.log_norm + (c.shape - 1.0) * log_x - c.rate * x;
    }

  private:
    // Gamma-type: (shape, rate). LogNormal: (mu*, sigma*).
    struct Const {
        double shape = 0, rate = 0, log_norm = 0, fw_min = 0;
    };
    Const make_const(long k) const {
        if (model_.family == Family::LogNormal) {
            auto fw = fenton_wilkinson_params(k, model_.params[0], model_.params[1]);
            double thr = std::isnan(policy_.fw_min_total) ? fw_default_min_total(k, model_.params[0])
                                                          : policy_.fw_min_total;
            return {fw.mu_star, fw.sigma_star, -std::log(fw.sigma_star) - 0.5 * std::log(2.0 * std::numbers::pi), thr};
        }
        double shape = model_.family == Family::Gamma ? static_cast<double>(k) * model_.params[0] : static_cast<double>(k);
        double rate = model_.params.back();
        return {shape, rate, shape * log_rate_ - log_gamma(shape), 0.0};
    }

    PacketModel model_;
    ConvolutionPolicy policy_;
    double log_rate_ = 0.0;
    std::vector<Const> consts_;
};

// Density at s of E + Y where E ~ Exp(flow_rate) is the gap from the previous
// flow start and Y is the sum of n_gaps packet inter-renewals.
inline double lead_gap_log_density(double flow_rate, const PacketModel& m, long n_gaps, double s,
                                   const ConvolutionPolicy& policy = {}) {
    detail::require_positive(s, "lead_gap_log_density");
    if (!(flow_rate > 0.0)) throw DomainError("lead_gap_log_density: flow rate must be > 0");
    const double lam = flow_rate;
    if (n_gaps == 0) return std::log(lam) - lam * s;
    if (m.family == Family::LogNormal || policy.mode == ConvolutionMode::NumericQuadrature) {
        // peaked packet densities need more nodes than the k-fold oracle; 64 loses ~1e-6
        TanhSinhRule rule(std::max(policy.quadrature_points, 256));
        LogSumExp acc;
        for (const auto& nd : rule.nodes()) {
            // t = s*u is the packet part, s - t = s*v the flow-level gap.
            double lk = kfold_log_density(m, n_gaps, s * nd.u, policy);
            acc.add(std::log(nd.w) + lk + std::log(lam) - lam * s * nd.v);
        }
        return std::log(s) + acc.value();
    }
    const double a = m.family == Family::Gamma ? static_cast<double>(n_gaps) * m.params[0] : static_cast<double>(n_gaps);
    const double b = m.params.back();
    if (b > lam) {
        const double c = b - lam;
        return std::log(lam) - lam * s + a * (std::log(b) - std::log(c)) + log_gamma_p(a, c * s);
    }
    if (b == lam) return detail::gamma_log_pdf(a + 1.0, b, s);
    const double d = lam - b;
    const double m1 = boost::math::hypergeometric_1F1(1.0, a + 1.0, -d * s);
    return std::log(lam) + a * std::log(b) + a * std::log(s) - b * s - log_gamma(a + 1.0) + std::log(m1);
}

inline Eigen::MatrixXd fisher_information(const PacketModel& m) {
    m.validate();
    Eigen::MatrixXd h;
    switch (m.family) {
    case Family::Gamma: {
        const double a = m.params[0], b = m.params[1];
        h.resize(2, 2);
        h << boost::math::trigamma(a), -1.0 / b, -1.0 / b, a / (b * b);
        break;
    }
    case Family::Exponential:
        h.resize(1, 1);
        h << 1.0 / (m.params[0] * m.params[0]);
        break;
    case Family::LogNormal: {
        const double s = m.params[1];
        h = Eigen::MatrixXd::Zero(2, 2);
        h(0, 0) = 1.0 / (s * s);
        h(1, 1) = 2.0 / (s * s);
        break;
    }
    }
    if (!h.allFinite()) throw NumericalError("fisher_information: non-finite entries for " + to_string(m.family));
    return h;
}

inline double sample(const PacketModel& m, Rng& rng) {
    double x = 0.0;
    do {
        switch (m.family) {
        case Family::Gamma: x = std::gamma_distribution<double>(m.params[0], 1.0 / m.params[1])(rng); break;
        case Family::Exponential: x = std::exponential_distribution<double>(m.params[0])(rng); break;
        case Family::LogNormal: x = std::lognormal_distribution<double>(m.params[0], m.params[1])(rng); break;
        }
    } while (!(x > 0.0));
    return x;
}

inline double survival(const PacketModel& m, double x) {
    if (x <= 0.0) return 1.0;
    switch (m.family) {
    case Family::Gamma: return boost::math::gamma_q(m.params[0], m.params[1] * x);
    case Family::Exponential: return std::exp(-m.params[0] * x);
    case Family::LogNormal:
        return 0.5 * boost::math::erfc((std::log(x) - m.params[0]) / (m.params[1] * std::numbers::sqrt2));
    }
    return 0.0;
}

} // namespace flowlik
