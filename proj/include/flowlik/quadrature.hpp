#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "error.hpp"

namespace flowlik {

// Fixed-node tanh-sinh rule on (0, 1). Both u and 1 - u are stored so that
// integrands with singularities at either end keep full relative precision.
class TanhSinhRule {
  public:
    struct Node {
        double u;
        double v; // 1 - u
        double w;
    };

    explicit TanhSinhRule(int n_points = 64, double half_width = 4.5) {
        if (n_points < 3) throw ConfigError("TanhSinhRule: need at least 3 points");
        nodes_.reserve(static_cast<std::size_t>(n_points));
        const double h = 2.0 * half_width / (n_points - 1);
        for (int i = 0; i < n_points; ++i) {
            double t = -half_width + i * h;
            double s = std::numbers::pi * std::sinh(t);
            double u = 1.0 / (1.0 + std::exp(-s));
            double v = 1.0 / (1.0 + std::exp(s));
            double w = h * std::numbers::pi * std::cosh(t) * u * v;
            nodes_.push_back({u, v, w});
        }
    }

    const std::vector<Node>& nodes() const { return nodes_; }
    std::size_t size() const { return nodes_.size(); }

    // Integral of f over (0, x).
    template <class F>
    double integrate(F&& f, double x) const {
        double acc = 0.0;
        for (const auto& n : nodes_) acc += n.w * f(x * n.u);
        return x * acc;
    }

  private:
    std::vector<Node> nodes_;
};

} // namespace flowlik
