#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "feel/data.hpp"
#include "feel/latency.hpp"
#include "feel/learners.hpp"
#include "feel/random.hpp"
#include "feel/scheduler.hpp"
#include "feel/trainer.hpp"

namespace feel {

struct ConvexityParams {
  enum class Source { kAnalytic, kEstimated };
  double lipschitz = 0.0;         // l
  double strong_convexity = 0.0;  // mu
  Source source = Source::kAnalytic;
};

/// Extreme eigenvalues of the pooled Hessian (1/n) X'X. Linear regression only.
ConvexityParams analytic_convexity(const FleetDatasets& fleet);

/// Gradient-difference ratios over random pairs in a ball of `radius`.
ConvexityParams estimate_convexity(const FleetDatasets& fleet, const LearnerKind& learner,
                                   double radius, int pairs, Rng& rng);

/// Minimizer of the pooled squared loss.
ModelParams<double> least_squares_optimum(const FleetDatasets& fleet);

double lemma2_rhs(double gap, double eta, double lipschitz, double grad_squared_norm,
                  double variance);

/// Cumulative bound for rounds 1..t given per-round steps and E||g_hat^i||^2:
///   prod_i (1 - 2 mu eta^i) gap^1 + (l/2) sum_i A^i (eta^i)^2 E||g_hat^i||^2,
/// A^i = prod_{j>i} (1 - 2 mu eta^j). Entry t-1 bounds the gap after round t.
/// Throws when some eta^i exceeds 1/(2 mu).
struct Theorem2Terms {
  std::vector<double> contraction;   // prod_{i<=t} (1 - 2 mu eta^i)
  std::vector<double> weighted_sum;  // sum_{i<=t} A^i (eta^i)^2 E||g_hat^i||^2
  std::vector<double> bound;
};
Theorem2Terms theorem2_bound(double initial_gap, const std::vector<double>& etas,
                             const std::vector<double>& second_moments,
                             const ConvexityParams& params);

/// zeta = max{ l G^2 chi^2 / (2 (2 mu chi - 1)), (1 + nu) gap^1 }. Needs chi > 1/(2 mu).
double corollary1_zeta(const ConvexityParams& params, double max_update_norm, double chi,
                       double nu, double initial_gap);

/// Per-seed bound quantities from one training run.
struct BoundTrace {
  std::vector<double> gap;         // L(w^t) - L*, t = 1..T+1
  std::vector<double> lemma2;      // bound on gap[t] from round t's state, t = 1..T
  Theorem2Terms theorem2;
  std::vector<double> envelope;    // zeta / (t + nu), t = 1..T+1
  std::vector<double> lemma5_slack;  // ||g^t||^2 - 2 mu gap^t
  double max_update_norm = 0.0;    // G
  double zeta = 0.0;
};

/// Needs reports from the trade-off policy with M = 1 so the closed-form
/// second moment is recorded, and a diminishing step chi / (t + nu).
BoundTrace bound_trace(const std::vector<RoundReport>& rounds, double optimum_loss,
                       const ConvexityParams& params, double chi, double nu,
                       double max_update_norm);

struct GridOptimum {
  Eigen::VectorXd p;
  double objective = 0.0;
  std::int64_t points = 0;
};

/// Exhaustive search of the scheduling objective over the simplex grid with
/// spacing `step`. Refuses K > 4 or step > 0.01.
GridOptimum simplex_grid_oracle(const SchedulingInputs<double>& inputs, double rho, double step);

/// Min-max bandwidth split found by bisection on the common latency, with
/// each device's bandwidth demand inverted by its own bisection.
Eigen::VectorXd minimax_bandwidth_oracle(std::span<const double> reference_snr,
                                         double reference_bandwidth_hz, double total_bandwidth_hz,
                                         double payload_bits, SnrMode mode);

struct CheckResult {
  std::string suite;
  std::string name;
  double value = 0.0;   // observed quantity
  double limit = 0.0;   // threshold it is compared against
  bool passed = false;
  bool gated = true;
  std::string detail;
};

struct VerificationReport {
  std::vector<CheckResult> checks;
  double host_seconds = 0.0;

  bool passed() const;  // every gated check
  std::string to_json() const;
};

/// Suites: unbiasedness, optimality, bandwidth, bounds, all.
VerificationReport run_verification(const std::string& suite, std::uint64_t seed = 2024);

std::vector<std::string> verification_suites();

// Building blocks shared by the suites and the acceptance driver.

struct BoundsExperiment {
  int devices = 10;
  int dim = 20;
  std::int64_t samples_per_device = 50;
  int rounds = 200;
  int seeds = 100;
  double rho = 0.5;
  std::uint64_t data_seed = 11;
};

struct BoundsSummary {
  ConvexityParams params;
  int rounds_checked = 0;
  // Largest (mean gap - mean bound) / SE over rounds; a bound holds at <= 3.
  double worst_lemma2_z = 0.0;
  double worst_theorem2_z = 0.0;
  double worst_envelope_z = 0.0;
  double min_lemma5_slack = 0.0;   // relative to ||g||^2
  double zeta = 0.0;
  double max_update_norm = 0.0;
  bool lemma2_holds = false;
  bool theorem2_holds = false;
  bool envelope_holds = false;
  bool lemma5_holds = false;
};

/// Monte Carlo over scheduling and fading randomness on one fixed quadratic
/// fleet; checks mean gaps against the three bounds with 3-SE tolerance.
BoundsSummary run_bounds_experiment(const BoundsExperiment& experiment);

/// Every ordered M-sequence with its probability prod_m q_m and estimate.
struct EnumeratedMean {
  Eigen::VectorXd mean;
  double total_probability = 0.0;
  std::int64_t sequences = 0;
};
EnumeratedMean enumerate_without_replacement(const Eigen::VectorXd& p, std::size_t picks,
                                             std::span<const Gradient> gradients,
                                             std::span<const std::int64_t> sizes,
                                             AggregationRule rule);

}  // namespace feel
