#include <gtest/gtest.h>

#include <random>

#include "feel/analysis.hpp"

namespace {

TEST(Analysis, OneStepBoundTrivialCases) {
  const double l = 4.0;
  EXPECT_DOUBLE_EQ(feel::lemma2_rhs(2.0, 1.0 / l, l, 3.0, 0.0), 2.0 - 3.0 / (2.0 * l));
  EXPECT_DOUBLE_EQ(feel::lemma2_rhs(2.0, 0.1, l, 0.0, 0.0), 2.0);
}

TEST(Analysis, OneStepBoundMatchesDirectExpansion) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.01, 2.0);
  for (int i = 0; i < 100; ++i) {
    const double gap = u(rng), eta = u(rng), l = u(rng), g2 = u(rng), v = u(rng);
    // L(w - eta g_hat) <= L(w) - eta g'E[g_hat] + (l/2) eta^2 E||g_hat||^2,
    // with E[g_hat] = g and E||g_hat||^2 = ||g||^2 + V.
    const double direct = gap - eta * g2 + l / 2.0 * eta * eta * (g2 + v);
    EXPECT_NEAR(feel::lemma2_rhs(gap, eta, l, g2, v), direct, 1e-12 * std::max(1.0, std::abs(direct)));
  }
}

TEST(Analysis, CumulativeBoundFirstRoundAndLimits) {
  const feel::ConvexityParams params{3.0, 0.5, feel::ConvexityParams::Source::kAnalytic};
  const auto one = feel::theorem2_bound(2.0, {0.4}, {5.0}, params);
  EXPECT_DOUBLE_EQ(one.bound[0], (1.0 - 2.0 * 0.5 * 0.4) * 2.0 + 1.5 * 0.16 * 5.0);

  // Two rounds: A^1 = (1 - 2 mu eta^2), A^2 = 1.
  const auto two = feel::theorem2_bound(2.0, {0.4, 0.2}, {5.0, 7.0}, params);
  const double expected = 0.6 * 0.8 * 2.0 + 1.5 * (0.8 * 0.16 * 5.0 + 0.04 * 7.0);
  EXPECT_NEAR(two.bound[1], expected, 1e-14);

  std::vector<double> etas(200, 0.5);
  std::vector<double> zeros(200, 0.0);
  const auto decay = feel::theorem2_bound(1.0, etas, zeros, params);
  EXPECT_LT(decay.bound.back(), 1e-30);

  EXPECT_THROW(feel::theorem2_bound(1.0, {1.5}, {1.0}, params), feel::InvalidInput);
}

TEST(Analysis, ZetaTakesLargerTerm) {
  const feel::ConvexityParams params{2.0, 1.0, feel::ConvexityParams::Source::kAnalytic};
  // chi = 1, nu = 1: drift = 2 G^2 / 2 = G^2.
  EXPECT_DOUBLE_EQ(feel::corollary1_zeta(params, 0.1, 1.0, 1.0, 3.0), 6.0);
  EXPECT_DOUBLE_EQ(feel::corollary1_zeta(params, 10.0, 1.0, 1.0, 3.0), 100.0);
  EXPECT_THROW(feel::corollary1_zeta(params, 1.0, 0.5, 1.0, 1.0), feel::InvalidInput);
}

TEST(Analysis, GridOracle) {
  const std::vector<std::int64_t> n = {2, 2, 2};
  const std::vector<double> norms = {1, 1, 1};
  const std::vector<double> upload = {0.5, 0.5, 0.5};
  const feel::SchedulingInputs<double> in{n, norms, upload};
  const auto grid = feel::simplex_grid_oracle(in, 0.5, 0.01);
  // 1/3 is not on the grid; the best points sit one cell from it.
  EXPECT_LT((grid.p.array() - 1.0 / 3.0).abs().maxCoeff(), 0.01);
  EXPECT_EQ(grid.points, 101 * 102 / 2);

  const std::vector<std::int64_t> n4 = {1, 1, 1, 1};
  const std::vector<double> norms4 = {1, 1, 1, 1};
  const std::vector<double> upload4 = {1, 1, 1, 1};
  const auto uniform = feel::simplex_grid_oracle({n4, norms4, upload4}, 0.5, 0.01);
  EXPECT_NEAR((uniform.p.array() - 0.25).abs().maxCoeff(), 0.0, 1e-12);

  const std::vector<std::int64_t> n5(5, 1);
  const std::vector<double> ones5(5, 1.0);
  EXPECT_THROW(feel::simplex_grid_oracle({n5, ones5, ones5}, 0.5, 0.01), feel::InvalidInput);
  EXPECT_THROW(feel::simplex_grid_oracle({n4, norms4, upload4}, 0.5, 0.05), feel::InvalidInput);
}

TEST(Analysis, GridApproachesImportanceWeightsNearRhoOne) {
  const std::vector<std::int64_t> n = {1, 2, 1};
  const std::vector<double> norms = {3, 1, 2};
  const std::vector<double> upload = {0.2, 2.0, 0.7};
  const auto grid = feel::simplex_grid_oracle({n, norms, upload}, 0.9999, 0.001);
  const Eigen::Vector3d target = Eigen::Vector3d(3, 2, 2) / 7.0;
  EXPECT_LT((grid.p - target).lpNorm<Eigen::Infinity>(), 0.005);
}

TEST(Analysis, ClosedFormMatchesGridWithinACell) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.1, 3.0);
  std::uniform_int_distribution<std::int64_t> sizes(5, 50);
  for (double rho : {0.1, 0.5, 0.9}) {
    const std::vector<std::int64_t> n = {sizes(rng), sizes(rng), sizes(rng)};
    const std::vector<double> norms = {u(rng), u(rng), u(rng)};
    const std::vector<double> upload = {u(rng), u(rng), u(rng)};
    const feel::SchedulingInputs<double> in{n, norms, upload};
    const auto closed = feel::solve_optimal_distribution(in, rho);
    const auto grid = feel::simplex_grid_oracle(in, rho, 0.001);
    EXPECT_LE((closed.p - grid.p).lpNorm<Eigen::Infinity>(), 0.001);
    EXPECT_LE(feel::scheduling_objective(in, closed.p, rho), grid.objective);
  }
}

TEST(Analysis, AnalyticConvexityBoundsRandomPairs) {
  feel::FleetDatasets fleet;
  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int k = 0; k < 3; ++k) {
    feel::Dataset<double> d;
    d.features = Eigen::MatrixXd::NullaryExpr(10, 3, [&] { return normal(rng); });
    d.labels = Eigen::VectorXd::NullaryExpr(10, [&] { return normal(rng); });
    fleet.per_device.push_back(d);
    fleet.sizes.push_back(10);
    fleet.total += 10;
  }
  const auto params = feel::analytic_convexity(fleet);
  ASSERT_GT(params.strong_convexity, 0.0);
  ASSERT_GE(params.lipschitz, params.strong_convexity);
  const auto w_star = feel::least_squares_optimum(fleet);
  EXPECT_LT(feel::local_gradient<double>(w_star, fleet.pooled(), feel::LinearRegression{}).norm(),
            1e-12);
  for (int i = 0; i < 200; ++i) {
    const Eigen::Vector3d a = Eigen::Vector3d::NullaryExpr([&] { return normal(rng); });
    const Eigen::Vector3d b = Eigen::Vector3d::NullaryExpr([&] { return normal(rng); });
    const auto pooled = fleet.pooled();
    const Eigen::VectorXd diff =
        feel::local_gradient<double>(a, pooled, feel::LinearRegression{}).values() -
        feel::local_gradient<double>(b, pooled, feel::LinearRegression{}).values();
    EXPECT_LE(diff.norm(), params.lipschitz * (a - b).norm() * (1 + 1e-12));
    EXPECT_GE(diff.dot(a - b), params.strong_convexity * (a - b).squaredNorm() * (1 - 1e-12));
  }
}

TEST(Analysis, VerificationReportJson) {
  const auto report = feel::run_verification("bandwidth");
  EXPECT_TRUE(report.passed());
  EXPECT_EQ(report.checks.size(), 4u);
  const auto json = report.to_json();
  EXPECT_NE(json.find("minimax_oracle_relative"), std::string::npos);
  EXPECT_THROW(feel::run_verification("nonsense"), std::exception);
}

}  // namespace
