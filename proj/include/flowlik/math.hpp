#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "error.hpp"

namespace flowlik {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Thread-safe log-gamma (std::lgamma writes signgam).
inline double log_gamma(double x) { return boost::math::lgamma(x); }

// log C(n, k) for real-valued n, k via log-gamma. Returns -inf outside 0 <= k <= n.
inline double log_binomial(double n, double k) {
    if (k < 0.0 || k > n || n < 0.0) return kNegInf;
    if (k == 0.0 || k == n) return 0.0;
    return log_gamma(n + 1.0) - log_gamma(k + 1.0) - log_gamma(n - k + 1.0);
}

// Neumaier compensated summation.
class CompensatedSum {
  public:
    void add(double v) {
        double t = sum_ + v;
        if (std::abs(sum_) >= std::abs(v))
            comp_ += (sum_ - t) + v;
        else
            comp_ += (v - t) + sum_;
        sum_ = t;
    }
    double value() const { return sum_ + comp_; }

  private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

// Streaming log-sum-exp with a running max shift.
class LogSumExp {
  public:
    void add(double log_term) {
        if (log_term == kNegInf) return;
        if (log_term <= max_) {
            acc_ += std::exp(log_term - max_);
        } else {
            acc_ = acc_ * std::exp(max_ - log_term) + 1.0;
            max_ = log_term;
        }
    }
    double value() const {
        if (max_ == kNegInf) return kNegInf;
        return max_ + std::log(acc_);
    }
    double max() const { return max_; }

  private:
    double max_ = kNegInf;
    double acc_ = 0.0;
};

inline double log_sum_exp(std::span<const double> xs) {
    double m = kNegInf;
    for (double x : xs) m = std::max(m, x);
    if (m == kNegInf) return kNegInf;
    if (std::isinf(m)) return m;
    double acc = 0.0;
    for (double x : xs) acc += std::exp(x - m);
    return m + std::log(acc);
}

// log(1 - exp(x)) for x < 0.
inline double log1mexp(double x) {
    if (x > -0.6931471805599453) return std::log(-std::expm1(x));
    return std::log1p(-std::exp(x));
}

// log of the regularized lower incomplete gamma P(a, x). The series is used
// where it converges quickly so that very small P values keep full precision.
inline double log_gamma_p(double a, double x) {
    if (x <= 0.0) return kNegInf;
    if (x < a + 1.0) {
        // P(a,x) = x^a e^-x / Gamma(a+1) * sum_n x^n / ((a+1)...(a+n))
        double term = 1.0, sum = 1.0;
        for (int n = 1; n < 100000; ++n) {
            term *= x / (a + n);
            sum += term;
            if (term < sum * 1e-17) break;
        }
        return a * std::log(x) - x - log_gamma(a + 1.0) + std::log(sum);
    }
    double q = boost::math::gamma_q(a, x);
    return std::log1p(-q);
}

// Hurwitz zeta sum_{n>=0} (n + a)^-s for s > 1, a >= 1, via Euler-Maclaurin.
inline double hurwitz_zeta(double s, double a) {
    if (!(s > 1.0) || !(a > 0.0)) throw DomainError("hurwitz_zeta: need s > 1 and a > 0");
    constexpr int N = 10;
    double sum = 0.0;
    for (int n = 0; n < N; ++n) sum += std::pow(a + n, -s);
    double b = a + N;
    sum += std::pow(b, 1.0 - s) / (s - 1.0) + 0.5 * std::pow(b, -s);
    // Bernoulli B_{2j}/(2j)!
    static constexpr double c[] = {1.0 / 12.0, -1.0 / 720.0, 1.0 / 30240.0,
                                   -1.0 / 1209600.0, 1.0 / 47900160.0,
                                   -691.0 / 1307674368000.0};
    double fact = s * std::pow(b, -s - 1.0); // s(s+1)...(s+2j-2) b^{-s-2j+1}
    for (int j = 0; j < 6; ++j) {
        sum += c[j] * fact;
        double k = 2.0 * j + 1.0;
        fact *= (s + k) * (s + k + 1.0) / (b * b);
    }
    return sum;
}

inline double mean(std::span<const double> xs) {
    CompensatedSum s;
    for (double x : xs) s.add(x);
    return s.value() / static_cast<double>(xs.size());
}

// Sample standard deviation with divisor n - ddof.
inline double stddev(std::span<const double> xs, int ddof = 1) {
    double m = mean(xs);
    CompensatedSum s;
    for (double x : xs) s.add((x - m) * (x - m));
    return std::sqrt(s.value() / static_cast<double>(xs.size() - ddof));
}

inline double median(std::vector<double> xs) {
    if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
    auto mid = xs.begin() + static_cast<std::ptrdiff_t>(xs.size() / 2);
    std::nth_element(xs.begin(), mid, xs.end());
    double hi = *mid;
    if (xs.size() % 2 == 1) return hi;
    double lo = *std::max_element(xs.begin(), mid);
    return 0.5 * (lo + hi);
}

inline bool rel_close(double a, double b, double tol) {
    if (a == b) return true;
    return std::abs(a - b) <= tol * std::max(std::abs(a), std::abs(b));
}

} // namespace flowlik
