#include <gtest/gtest.h>

#include <bit>
#include <cmath>

#include "flowlik/efficiency.hpp"

using namespace flowlik;

namespace {

LikelihoodConfig lcfg(FlowSizePmf pmf, double q) {
    LikelihoodConfig c;
    c.pmf = std::move(pmf);
    c.q = q;
    return c;
}

EfficiencyRequest small_req(long mc = 20000) {
    EfficiencyRequest r;
    r.mc_samples = mc;
    return r;
}

} // namespace

TEST(Efficiency, RequestValidation) {
    EfficiencyRequest r;
    r.epsilon = 0.0;
    EXPECT_THROW(r.validate(), ConfigError);
    r = {};
    r.eta = 1.0;
    EXPECT_THROW(r.validate(), ConfigError);
    r = {};
    r.mc_samples = 0;
    EXPECT_THROW(r.validate(), ConfigError);
}

TEST(Efficiency, SubsetSpanMatchesEnumeration) {
    const long L = 6, m = 3;
    std::vector<double> want(static_cast<std::size_t>(L), 0.0);
    double n = 0;
    for (unsigned mask = 0; mask < (1u << L); ++mask) {
        if (std::popcount(mask) != m) continue;
        want[static_cast<std::size_t>(31 - std::countl_zero(mask) - std::countr_zero(mask))] += 1;
        n += 1;
    }
    Rng rng(3);
    std::vector<double> got(static_cast<std::size_t>(L), 0.0);
    const int draws = 200000;
    for (int i = 0; i < draws; ++i) got[static_cast<std::size_t>(detail::subset_span(L, m, rng))] += 1;
    for (long k = 0; k < L; ++k) {
        const double p = want[static_cast<std::size_t>(k)] / n;
        EXPECT_NEAR(got[static_cast<std::size_t>(k)] / draws, p, 5 * std::sqrt(p * (1 - p) / draws) + 1e-12) << k;
    }
}

TEST(Efficiency, PointMassFullRetentionGivesPacketInformation) {
    auto pm = PacketModel::gamma(0.6, 526.32);
    auto I = marginal_fisher_info(pm, lcfg(FlowSizePmf::point(2), 1.0), small_req(2000));
    Eigen::MatrixXd H = fisher_information(pm);
    // the Gamma observed information does not depend on the data
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) EXPECT_NEAR(I(i, j), H(i, j), 1e-4 * std::abs(H(i, j))) << i << j;
}

TEST(Efficiency, LogNormalPointMassWithinMonteCarloError) {
    auto pm = PacketModel::lognormal(-8.1, 1.5);
    auto I = marginal_fisher_info(pm, lcfg(FlowSizePmf::point(2), 1.0), small_req(200000));
    Eigen::MatrixXd H = fisher_information(pm);
    EXPECT_NEAR(I(0, 0), H(0, 0), 1e-4 * H(0, 0));
    EXPECT_NEAR(I(1, 1), H(1, 1), 0.02 * H(1, 1));
    EXPECT_NEAR(I(0, 1), 0.0, 0.02 * H(0, 0));
}

TEST(Efficiency, ThinnedInformationIsPositiveDefinite) {
    auto pm = PacketModel::gamma(0.6, 526.32);
    auto I = marginal_fisher_info(pm, lcfg(FlowSizePmf::zipf(1.0, {11, 101, 1001}), 0.1), small_req());
    EXPECT_NEAR(I(0, 1), I(1, 0), 1e-12 * std::abs(I(0, 1)));
    EXPECT_GT(I(0, 0), 0.0);
    EXPECT_GT(I.determinant(), 0.0);
}

TEST(Efficiency, RepeatableAndThreadIndependent) {
    auto pm = PacketModel::gamma(0.6, 526.32);
    auto cfg = lcfg(FlowSizePmf::zipf(1.0, {11, 101, 1001}), 0.1);
    auto a = small_req(5000), b = small_req(5000);
    b.threads = 4;
    EXPECT_EQ(marginal_fisher_info(pm, cfg, a), marginal_fisher_info(pm, cfg, a));
    EXPECT_EQ(marginal_fisher_info(pm, cfg, a), marginal_fisher_info(pm, cfg, b));
}

TEST(Efficiency, MarginalSamplesMatchSpanWeights) {
    auto pm = PacketModel::exponential(10.0);
    auto cfg = lcfg(FlowSizePmf::zipf(1.0, {3, 5, 7}), 0.4);
    auto xs = sample_marginal_durations(pm, cfg, 200000, 9);
    MarginalDurationDensity d(cfg.pmf, cfg.q, 0.0);
    double want = 0.0; // E[S] = sum_k W_k k / rate
    for (const auto& [k, lw] : d.log_weights()) want += std::exp(lw) * static_cast<double>(k) / 10.0;
    double sum = 0.0, sq = 0.0;
    for (double x : xs) {
        sum += x;
        sq += x * x;
    }
    const double m = sum / xs.size(), sd = std::sqrt(sq / xs.size() - m * m);
    EXPECT_NEAR(m, want, 5 * sd / std::sqrt(static_cast<double>(xs.size())));
}

TEST(Efficiency, MgfExactForSingleFlow) {
    auto pmf = FlowSizePmf::zipf(1.0, {11, 101, 1001});
    auto [lp, lm] = mbar_log_mgf(FlowSizePmf::point(3), 1, 100, 1);
    EXPECT_NEAR(lp, 2.0, 1e-12);
    EXPECT_NEAR(lm, -2.0, 1e-12);
    auto s = info_summary(PacketModel::gamma(0.6, 526.32), lcfg(pmf, 1.0), small_req(20000));
    // log(6/11 e^10 + 3/11 e^100 + 2/11 e^1000), factored to avoid overflow
    const double exact = 1000.0 + std::log(2.0 / 11 + 3.0 / 11 * std::exp(-900.0) + 6.0 / 11 * std::exp(-990.0));
    EXPECT_NEAR(s.log_mgf_plus_exact, exact, 1e-9);
    EXPECT_NEAR(s.log_mgf_plus, exact, 0.05);
    EXPECT_THROW(mbar_log_mgf(FlowSizePmf::zeta(2.0), 1, 10, 1), ConfigError);
}

TEST(Efficiency, UnboundedPmfRejected) {
    EXPECT_THROW(info_summary(PacketModel::gamma(0.6, 526.32), lcfg(FlowSizePmf::zeta(2.012085), 1.0), small_req()),
                 ConfigError);
}

TEST(NMin, FormulaOnHandBuiltSummary) {
    InfoSummary s;
    s.H = Eigen::MatrixXd::Identity(2, 2) * 4.0;
    s.I = Eigen::MatrixXd::Identity(2, 2);
    s.det_ratio = 16.0;
    s.log_mgf_plus = 3.0;
    s.log_mgf_minus = -3.0;
    EfficiencyRequest r;
    auto b = n_min_bounds(r, s);
    const double lower = std::sqrt(16.0 / (1.1 * 1.1)) * (std::log(20.0) + 3.0);
    const double upper = -std::sqrt(16.0 / (0.9 * 0.9)) * (std::log(20.0) - 3.0);
    EXPECT_NEAR(b.lower, lower, 1e-12);
    EXPECT_NEAR(b.upper, upper, 1e-12);
    EXPECT_EQ(b.n_min, static_cast<long>(std::ceil(lower)));
    const double A = 1.1 * 1.1 / (0.9 * 0.9);
    EXPECT_EQ(b.joint_condition, 3.0 - 3.0 * A < (A + 1) * std::log(0.05));
}

TEST(NMin, MonotoneInEtaAndEpsilon) {
    InfoSummary s;
    s.H = Eigen::MatrixXd::Identity(2, 2) * 3.0;
    s.I = Eigen::MatrixXd::Identity(2, 2);
    s.det_ratio = 9.0;
    s.log_mgf_plus = 10.0;
    s.log_mgf_minus = -10.0;
    long prev = 0;
    for (double eta : {0.5, 0.2, 0.1, 0.01}) {
        EfficiencyRequest r;
        r.eta = eta;
        long n = n_min(r, s);
        EXPECT_GE(n, prev);
        prev = n;
    }
    prev = std::numeric_limits<long>::max();
    for (double eps : {0.01, 0.1, 0.3, 0.6}) {
        EfficiencyRequest r;
        r.epsilon = eps;
        long n = n_min(r, s);
        EXPECT_LE(n, prev);
        prev = n;
    }
}

TEST(NMin, BadSummaryRejected) {
    InfoSummary s;
    s.H = Eigen::MatrixXd::Identity(2, 2);
    s.det_ratio = -1.0;
    EXPECT_THROW(n_min(EfficiencyRequest{}, s), NumericalError);
}
