#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "error.hpp"
#include "math.hpp"
#include "rng.hpp"

namespace flowlik {

enum class PmfKind { Zeta, Zipf, Empirical };

inline std::string to_string(PmfKind k) {
    switch (k) {
    case PmfKind::Zeta: return "zeta";
    case PmfKind::Zipf: return "zipf";
    case PmfKind::Empirical: return "empirical";
    }
    return "?";
}

// Distribution of the flow size M+1 (packets per flow).
//
// Zeta: p(L) proportional to L^-shape for L >= min_size, truncated at the
// smallest Lmax keeping at least truncation_mass of the probability and
// renormalised. The support is never materialised; the CDF is tabulated up to
// a moderate size and the tail is inverted through the Hurwitz zeta function.
//
// Zipf: finite support with mass proportional to rank^-shape.
// Empirical: explicit support and masses.
class FlowSizePmf {
  public:
    static FlowSizePmf zeta(double shape, long min_size = 1, double truncation_mass = 1.0 - 1e-8) {
        if (!(shape > 1.0)) throw ConfigError("zeta pmf: shape must be > 1");
        if (min_size < 1) throw ConfigError("zeta pmf: min_size must be >= 1");
        if (!(truncation_mass > 0.0 && truncation_mass <= 1.0))
            throw ConfigError("zeta pmf: truncation_mass must lie in (0, 1]");
        FlowSizePmf p;
        p.kind_ = PmfKind::Zeta;
        p.shape_ = shape;
        p.min_ = min_size;
        p.truncation_mass_ = truncation_mass;
        p.init_zeta();
        return p;
    }

    static FlowSizePmf zipf(double shape, std::vector<long> support) {
        std::vector<double> mass(support.size());
        for (std::size_t i = 0; i < mass.size(); ++i) mass[i] = std::pow(static_cast<double>(i + 1), -shape);
        FlowSizePmf p = explicit_pmf(std::move(support), std::move(mass));
        p.kind_ = PmfKind::Zipf;
        p.shape_ = shape;
        return p;
    }

    // Masses are renormalised to sum to one.
    static FlowSizePmf empirical(std::vector<long> support, std::vector<double> mass) {
        return explicit_pmf(std::move(support), std::move(mass));
    }

    static FlowSizePmf point(long size) { return empirical({size}, {1.0}); }

    PmfKind kind() const { return kind_; }
    double shape() const { return shape_; }
    double truncation_mass() const { return truncation_mass_; }
    long min_size() const { return kind_ == PmfKind::Zeta ? min_ : support_.front(); }
    long max_size() const { return kind_ == PmfKind::Zeta ? lmax_ : support_.back(); }
    bool bounded() const { return kind_ != PmfKind::Zeta; }

    // Explicit support (empty for Zeta).
    const std::vector<long>& support() const { return support_; }
    const std::vector<double>& mass() const { return mass_; }

    double log_pmf(long size) const {
        if (kind_ == PmfKind::Zeta) {
            if (size < min_ || size > lmax_) return kNegInf;
            return -shape_ * std::log(static_cast<double>(size)) - log_norm_;
        }
        auto it = std::lower_bound(support_.begin(), support_.end(), size);
        if (it == support_.end() || *it != size) return kNegInf;
        return log_mass_[static_cast<std::size_t>(it - support_.begin())];
    }
    double pmf(long size) const { return std::exp(log_pmf(size)); }

    // Smallest support point >= size, or -1 when none exists.
    long next_support(long size) const {
        if (kind_ == PmfKind::Zeta) {
            long s = std::max(size, min_);
            return s <= lmax_ ? s : -1;
        }
        auto it = std::lower_bound(support_.begin(), support_.end(), size);
        return it == support_.end() ? -1 : *it;
    }

    // Mean of the distribution actually sampled (after truncation).
    double mean() const {
        if (kind_ == PmfKind::Zeta) {
            const double s = shape_ - 1.0;
            double num = s > 1.0 ? hurwitz_zeta(s, static_cast<double>(min_)) -
                                       hurwitz_zeta(s, static_cast<double>(lmax_ + 1))
                                 : partial_power_sum(s, min_, lmax_);
            return num / std::exp(log_norm_);
        }
        double m = 0.0;
        for (std::size_t i = 0; i < support_.size(); ++i) m += mass_[i] * static_cast<double>(support_[i]);
        return m;
    }

    // Mean of the untruncated Zeta law (infinite when shape <= 2).
    double untruncated_mean() const {
        if (kind_ != PmfKind::Zeta) return mean();
        if (shape_ <= 2.0) return std::numeric_limits<double>::infinity();
        return hurwitz_zeta(shape_ - 1.0, static_cast<double>(min_)) / hurwitz_zeta(shape_, static_cast<double>(min_));
    }

    long sample(Rng& rng) const {
        const double u = rng.uniform();
        if (kind_ != PmfKind::Zeta) {
            auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
            std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()), support_.size() - 1);
            return support_[i];
        }
        if (u <= cdf_.back() || table_max_ == lmax_) {
            auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
            std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()), cdf_.size() - 1);
            return min_ + static_cast<long>(i);
        }
        // Tail: find the smallest L with P(X > L) < 1 - u.
        const double target = (1.0 - u) * std::exp(log_norm_);
        long lo = table_max_, hi = lmax_;
        while (hi - lo > 1) {
            long mid = lo + (hi - lo) / 2;
            if (tail_sum(mid + 1) < target)
                hi = mid;
            else
                lo = mid;
        }
        return hi;
    }

    // Summary used by JSON output.
    std::size_t table_size() const { return kind_ == PmfKind::Zeta ? cdf_.size() : support_.size(); }

  private:
    static FlowSizePmf explicit_pmf(std::vector<long> support, std::vector<double> mass) {
        if (support.empty()) throw ConfigError("flow size pmf: empty support");
        if (support.size() != mass.size()) throw ConfigError("flow size pmf: support and mass lengths differ");
        std::vector<std::size_t> order(support.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](auto a, auto b) { return support[a] < support[b]; });
        FlowSizePmf p;
        p.kind_ = PmfKind::Empirical;
        CompensatedSum total;
        for (double m : mass) {
            if (!(m >= 0.0) || !std::isfinite(m)) throw ConfigError("flow size pmf: masses must be finite and >= 0");
            total.add(m);
        }
        if (!(total.value() > 0.0)) throw ConfigError("flow size pmf: total mass is zero");
        for (auto i : order) {
            if (support[i] < 1) throw ConfigError("flow size pmf: sizes must be >= 1");
            if (mass[i] == 0.0) continue;
            if (!p.support_.empty() && p.support_.back() == support[i])
                throw ConfigError("flow size pmf: duplicate support point " + std::to_string(support[i]));
            p.support_.push_back(support[i]);
            p.mass_.push_back(mass[i] / total.value());
        }
        p.log_mass_.resize(p.mass_.size());
        double c = 0.0;
        for (std::size_t i = 0; i < p.mass_.size(); ++i) {
            p.log_mass_[i] = std::log(p.mass_[i]);
            c += p.mass_[i];
            p.cdf_.push_back(c);
        }
        return p;
    }

    // sum_{L >= a, L <= lmax} L^-shape
    double tail_sum(long a) const {
        return hurwitz_zeta(shape_, static_cast<double>(a)) - hurwitz_zeta(shape_, static_cast<double>(lmax_ + 1));
    }

    // sum_{L=a}^{b} L^-s by Euler-Maclaurin for large ranges.
    static double partial_power_sum(double s, long a, long b) {
        constexpr long direct = 2000;
        double sum = 0.0;
        long L = a;
        for (; L <= b && L < a + direct; ++L) sum += std::pow(static_cast<double>(L), -s);
        if (L > b) return sum;
        auto F = [s](double x) { return s == 1.0 ? std::log(x) : std::pow(x, 1.0 - s) / (1.0 - s); };
        const double xa = static_cast<double>(L), xb = static_cast<double>(b);
        auto f = [s](double x) { return std::pow(x, -s); };
        auto f1 = [s](double x) { return -s * std::pow(x, -s - 1.0); };
        sum += F(xb) - F(xa) + 0.5 * (f(xa) + f(xb)) + (f1(xb) - f1(xa)) / 12.0;
        return sum;
    }

    void init_zeta() {
        const double full = hurwitz_zeta(shape_, static_cast<double>(min_));
        const double allowed_tail = (1.0 - truncation_mass_) * full;
        // Smallest lmax with sum_{L > lmax} <= allowed_tail.
        long lo = min_ - 1, hi = min_;
        while (hurwitz_zeta(shape_, static_cast<double>(hi + 1)) > allowed_tail) {
            lo = hi;
            if (hi > (1L << 52)) throw ConfigError("zeta pmf: truncation point too large; lower truncation_mass");
            hi = hi * 2 + 1;
        }
        while (hi - lo > 1) {
            long mid = lo + (hi - lo) / 2;
            if (hurwitz_zeta(shape_, static_cast<double>(mid + 1)) > allowed_tail)
                lo = mid;
            else
                hi = mid;
        }
        lmax_ = std::max(hi, min_);
        const double norm = full - hurwitz_zeta(shape_, static_cast<double>(lmax_ + 1));
        log_norm_ = std::log(norm);
        table_max_ = std::min<long>(lmax_, min_ + 100000);
        cdf_.clear();
        double c = 0.0;
        for (long L = min_; L <= table_max_; ++L) {
            c += std::pow(static_cast<double>(L), -shape_) / norm;
            cdf_.push_back(c);
        }
        if (table_max_ == lmax_) cdf_.back() = 1.0;
    }

    PmfKind kind_ = PmfKind::Empirical;
    double shape_ = 0.0;
    long min_ = 1;
    double truncation_mass_ = 1.0;
    long lmax_ = 0;
    long table_max_ = 0;
    double log_norm_ = 0.0;
    std::vector<long> support_;
    std::vector<double> mass_;
    std::vector<double> log_mass_;
    std::vector<double> cdf_;
};

} // namespace flowlik
