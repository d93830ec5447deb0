#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "rng.hpp"

namespace flowlik {

struct OptimizerConfig {
    double tol = 1e-8; // relative spread of objective values over the simplex
    int max_iters = 2000;
    int restarts = 3;
    double initial_step = 0.2; // simplex edge in the (log-)parameter space
    double jitter = 0.1;
    std::uint64_t seed = 0x0be5;
    bool polish = true; // Newton refinement when analytic derivatives exist
};

struct OptimResult {
    std::vector<double> x;
    double f = std::numeric_limits<double>::infinity();
    long n_evals = 0;
    long iterations = 0;
    bool converged = false;
};

namespace detail {

// One Nelder-Mead run (standard coefficients) minimising f from x0.
inline OptimResult nelder_mead_run(const std::function<double(const std::vector<double>&)>& f,
                                   const std::vector<double>& x0, const std::vector<double>& step, double tol,
                                   int max_iters) {
    const std::size_t n = x0.size();
    OptimResult res;
    auto eval = [&](const std::vector<double>& x) {
        ++res.n_evals;
        double v = f(x);
        return std::isnan(v) ? std::numeric_limits<double>::infinity() : v;
    };
    std::vector<std::vector<double>> pts(n + 1, x0);
    for (std::size_t i = 0; i < n; ++i) pts[i + 1][i] += step[i];
    std::vector<double> vals(n + 1);
    for (std::size_t i = 0; i <= n; ++i) vals[i] = eval(pts[i]);

    std::vector<std::size_t> order(n + 1);
    auto sort_simplex = [&] {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return vals[a] < vals[b]; });
        std::vector<std::vector<double>> p2;
        std::vector<double> v2;
        for (auto i : order) {
            p2.push_back(pts[i]);
            v2.push_back(vals[i]);
        }
        pts.swap(p2);
        vals.swap(v2);
    };

    for (res.iterations = 0; res.iterations < max_iters; ++res.iterations) {
        sort_simplex();
        const double spread = std::abs(vals[n] - vals[0]);
        if (std::isfinite(vals[0]) && spread <= tol * (std::abs(vals[0]) + tol)) {
            res.converged = true;
            break;
        }
        std::vector<double> c(n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t d = 0; d < n; ++d) c[d] += pts[i][d] / static_cast<double>(n);
        auto along = [&](double t) {
            std::vector<double> x(n);
            for (std::size_t d = 0; d < n; ++d) x[d] = c[d] + t * (pts[n][d] - c[d]);
            return x;
        };
        auto xr = along(-1.0);
        double fr = eval(xr);
        if (fr < vals[0]) {
            auto xe = along(-2.0);
            double fe = eval(xe);
            if (fe < fr) {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
        } else if (fr < vals[n - 1]) {
            pts[n] = xr;
            vals[n] = fr;
        } else {
            bool outside = fr < vals[n];
            auto xc = along(outside ? -0.5 : 0.5);
            double fc = eval(xc);
            if (fc < (outside ? fr : vals[n])) {
                pts[n] = xc;
                vals[n] = fc;
            } else {
                for (std::size_t i = 1; i <= n; ++i) {
                    for (std::size_t d = 0; d < n; ++d) pts[i][d] = pts[0][d] + 0.5 * (pts[i][d] - pts[0][d]);
                    vals[i] = eval(pts[i]);
                }
            }
        }
    }
    sort_simplex();
    res.x = pts[0];
    res.f = vals[0];
    return res;
}

} // namespace detail

// Nelder-Mead with restarts: the first run starts at x0, each restart starts
// from the best point so far with a jittered simplex. Minimises f.
inline OptimResult nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                               const std::vector<double>& x0, const OptimizerConfig& cfg = {}) {
    Rng rng(cfg.seed);
    std::vector<double> step(x0.size(), cfg.initial_step);
    OptimResult best = detail::nelder_mead_run(f, x0, step, cfg.tol, cfg.max_iters);
    long evals = best.n_evals, iters = best.iterations;
    for (int r = 0; r < cfg.restarts; ++r) {
        std::vector<double> start = best.x;
        std::vector<double> st(x0.size());
        for (std::size_t d = 0; d < start.size(); ++d) {
            start[d] += cfg.jitter * (2.0 * rng.uniform() - 1.0);
            st[d] = cfg.initial_step * (0.5 + rng.uniform());
        }
        auto run = detail::nelder_mead_run(f, start, st, cfg.tol, cfg.max_iters);
        evals += run.n_evals;
        iters += run.iterations;
        if (run.f < best.f || (run.f == best.f && run.converged)) {
            best.x = run.x;
            best.f = run.f;
            best.converged = run.converged;
        } else if (run.converged && std::abs(run.f - best.f) <= cfg.tol * (std::abs(best.f) + cfg.tol)) {
            best.converged = true;
        }
    }
    best.n_evals = evals;
    best.iterations = iters;
    return best;
}

// Central-difference Hessian of f at x with relative steps.
inline Eigen::MatrixXd numerical_hessian(const std::function<double(const std::vector<double>&)>& f,
                                         const std::vector<double>& x, double rel_step = 1e-4) {
    const std::size_t n = x.size();
    Eigen::MatrixXd H(n, n);
    std::vector<double> h(n);
    for (std::size_t i = 0; i < n; ++i) h[i] = rel_step * std::max(std::abs(x[i]), 1e-3);
    const double f0 = f(x);
    auto at = [&](std::size_t i, double di, std::size_t j, double dj) {
        auto y = x;
        y[i] += di;
        y[j] += dj;
        return f(y);
    };
    for (std::size_t i = 0; i < n; ++i) {
        H(i, i) = (at(i, h[i], i, 0.0) - 2.0 * f0 + at(i, -h[i], i, 0.0)) / (h[i] * h[i]);
        for (std::size_t j = i + 1; j < n; ++j) {
            double v = (at(i, h[i], j, h[j]) - at(i, h[i], j, -h[j]) - at(i, -h[i], j, h[j]) + at(i, -h[i], j, -h[j])) /
                       (4.0 * h[i] * h[j]);
            H(i, j) = H(j, i) = v;
        }
    }
    return H;
}

} // namespace flowlik
