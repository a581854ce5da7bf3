#include "feel/analysis.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "feel/experiment.hpp"

namespace feel {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Gradient pooled_gradient(const ModelParams<double>& model, const FleetDatasets& fleet,
                         const LearnerKind& learner) {
  std::vector<Gradient> local;
  for (const auto& d : fleet.per_device) {
    local.push_back(local_gradient(model, d, learner));
  }
  return ground_truth_global_gradient<double>(local, fleet.sizes);
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

MeanSe mean_se(const std::vector<double>& xs) {
  MeanSe out;
  const auto count = static_cast<double>(xs.size());
  out.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / count;
  double ss = 0.0;
  for (double x : xs) {
    ss += (x - out.mean) * (x - out.mean);
  }
  out.se = xs.size() > 1 ? std::sqrt(ss / (count - 1.0) / count) : 0.0;
  return out;
}

// Shortfall of a nonnegative-in-expectation slack sample, in SE units.
double shortfall_z(const std::vector<double>& slack, double scale) {
  const auto s = mean_se(slack);
  const double floor = 1e-12 * std::max(scale, 1e-300);
  return -s.mean / std::max(s.se, floor);
}

}  // namespace

ConvexityParams analytic_convexity(const FleetDatasets& fleet) {
  const auto pooled = fleet.pooled();
  if (pooled.empty()) {
    throw InvalidInput("analytic_convexity: empty fleet");
  }
  const Eigen::MatrixXd hessian =
      pooled.features.transpose() * pooled.features / static_cast<double>(pooled.size());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(hessian, Eigen::EigenvaluesOnly);
  ConvexityParams out;
  out.lipschitz = solver.eigenvalues().maxCoeff();
  out.strong_convexity = solver.eigenvalues().minCoeff();
  if (!(out.strong_convexity > 0.0)) {
    throw InvalidInput("analytic_convexity: Hessian is singular; loss is not strongly convex");
  }
  return out;
}

ConvexityParams estimate_convexity(const FleetDatasets& fleet, const LearnerKind& learner,
                                   double radius, int pairs, Rng& rng) {
  if (pairs < 1 || !(radius > 0.0)) {
    throw InvalidInput("estimate_convexity: need pairs >= 1 and radius > 0");
  }
  const auto size = parameter_count(learner, fleet.per_device.front().dim());
  std::normal_distribution<double> normal(0.0, radius);
  const auto draw = [&] {
    ModelParams<double> w(size);
    for (Eigen::Index i = 0; i < size; ++i) {
      w(i) = normal(rng);
    }
    return w;
  };
  ConvexityParams out;
  out.source = ConvexityParams::Source::kEstimated;
  out.strong_convexity = kInf;
  for (int i = 0; i < pairs; ++i) {
    const auto u = draw();
    const auto v = draw();
    const Eigen::VectorXd du = u - v;
    const Eigen::VectorXd dg =
        pooled_gradient(u, fleet, learner).values() - pooled_gradient(v, fleet, learner).values();
    const double sq = du.squaredNorm();
    out.lipschitz = std::max(out.lipschitz, dg.norm() / std::sqrt(sq));
    out.strong_convexity = std::min(out.strong_convexity, dg.dot(du) / sq);
  }
  return out;
}

ModelParams<double> least_squares_optimum(const FleetDatasets& fleet) {
  const auto pooled = fleet.pooled();
  return pooled.features.colPivHouseholderQr().solve(pooled.labels);
}

double lemma2_rhs(double gap, double eta, double lipschitz, double grad_squared_norm,
                  double variance) {
  if (!(eta > 0.0)) {
    throw InvalidInput("lemma2_rhs: step size must be positive");
  }
  return gap - eta * (1.0 - eta * lipschitz / 2.0) * grad_squared_norm +
         lipschitz / 2.0 * eta * eta * variance;
}

Theorem2Terms theorem2_bound(double initial_gap, const std::vector<double>& etas,
                             const std::vector<double>& second_moments,
                             const ConvexityParams& params) {
  if (etas.size() != second_moments.size()) {
    throw InvalidInput("theorem2_bound: one second moment per step required");
  }
  const double mu = params.strong_convexity;
  const double limit = 1.0 / (2.0 * mu);
  Theorem2Terms out;
  double contraction = 1.0;
  double weighted = 0.0;
  for (std::size_t i = 0; i < etas.size(); ++i) {
    // Equality keeps the factor at zero, which the recursion still admits.
    if (!(etas[i] > 0.0) || etas[i] > limit * (1.0 + 1e-12)) {
      throw InvalidInput("theorem2_bound: step " + std::to_string(i + 1) + " is " +
                         std::to_string(etas[i]) + ", above 1/(2 mu) = " + std::to_string(limit));
    }
    const double factor = std::max(0.0, 1.0 - 2.0 * mu * etas[i]);
    // Each new factor multiplies every earlier A^i.
    contraction *= factor;
    weighted = factor * weighted + etas[i] * etas[i] * second_moments[i];
    out.contraction.push_back(contraction);
    out.weighted_sum.push_back(weighted);
    out.bound.push_back(contraction * initial_gap + params.lipschitz / 2.0 * weighted);
  }
  return out;
}

double corollary1_zeta(const ConvexityParams& params, double max_update_norm, double chi,
                       double nu, double initial_gap) {
  const double mu = params.strong_convexity;
  if (!(chi > 1.0 / (2.0 * mu))) {
    throw InvalidInput("corollary1_zeta: chi must exceed 1/(2 mu)");
  }
  const double drift = params.lipschitz * max_update_norm * max_update_norm * chi * chi /
                       (2.0 * (2.0 * mu * chi - 1.0));
  return std::max(drift, (1.0 + nu) * initial_gap);
}

BoundTrace bound_trace(const std::vector<RoundReport>& rounds, double optimum_loss,
                       const ConvexityParams& params, double chi, double nu,
                       double max_update_norm) {
  if (rounds.empty()) {
    throw InvalidInput("bound_trace: no rounds");
  }
  BoundTrace trace;
  trace.max_update_norm = max_update_norm;
  trace.gap.push_back(rounds.front().loss_before - optimum_loss);
  std::vector<double> etas;
  std::vector<double> moments;
  for (const auto& r : rounds) {
    const double gap = trace.gap.back();
    const double grad_sq = r.truth_norm * r.truth_norm;
    trace.lemma2.push_back(
        lemma2_rhs(gap, r.learning_rate, params.lipschitz, grad_sq, r.second_moment - grad_sq));
    trace.lemma5_slack.push_back(grad_sq - 2.0 * params.strong_convexity * gap);
    trace.gap.push_back(r.loss - optimum_loss);
    etas.push_back(r.learning_rate);
    moments.push_back(std::isnan(r.closed_form_second_moment) ? r.second_moment
                                                              : r.closed_form_second_moment);
  }
  trace.theorem2 = theorem2_bound(trace.gap.front(), etas, moments, params);
  trace.zeta = corollary1_zeta(params, max_update_norm, chi, nu, trace.gap.front());
  for (std::size_t t = 1; t <= trace.gap.size(); ++t) {
    trace.envelope.push_back(trace.zeta / (static_cast<double>(t) + nu));
  }
  return trace;
}

GridOptimum simplex_grid_oracle(const SchedulingInputs<double>& inputs, double rho, double step) {
  inputs.validate();
  const auto count = inputs.device_count();
  if (count > 4) {
    throw InvalidInput("simplex_grid_oracle: K = " + std::to_string(count) +
                       " is too large for exhaustive search; use K <= 4");
  }
  if (!(step > 0.0) || step > 0.01) {
    throw InvalidInput("simplex_grid_oracle: step must lie in (0, 0.01]");
  }
  const auto cells = static_cast<int>(std::llround(1.0 / step));
  if (std::abs(cells * step - 1.0) > 1e-9) {
    throw InvalidInput("simplex_grid_oracle: 1/step must be an integer");
  }
  GridOptimum best;
  best.objective = kInf;
  Eigen::VectorXd p(static_cast<Eigen::Index>(count));
  std::vector<int> units(count, 0);
  const std::function<void(std::size_t, int)> walk = [&](std::size_t k, int left) {
    if (k + 1 == count) {
      units[k] = left;
      for (std::size_t j = 0; j < count; ++j) {
        p(static_cast<Eigen::Index>(j)) = units[j] * step;
      }
      ++best.points;
      const double value = scheduling_objective(inputs, p, rho);
      if (value < best.objective) {
        best.objective = value;
        best.p = p;
      }
      return;
    }
    for (int u = 0; u <= left; ++u) {
      units[k] = u;
      walk(k + 1, left - u);
    }
  };
  walk(0, cells);
  return best;
}

Eigen::VectorXd minimax_bandwidth_oracle(std::span<const double> reference_snr,
                                         double reference_bandwidth_hz, double total_bandwidth_hz,
                                         double payload_bits, SnrMode mode) {
  if (reference_snr.empty() || !(total_bandwidth_hz > 0.0) || !(payload_bits > 0.0)) {
    throw InvalidInput("minimax_bandwidth_oracle: bad inputs");
  }
  const auto rate = [&](double snr, double band) {
    return uplink_rate(band, snr_at_bandwidth(snr, reference_bandwidth_hz, band, mode));
  };
  // Smallest band that uploads within `latency`; +inf if even the full band is too slow.
  const auto demand = [&](double snr, double latency) {
    const double needed = payload_bits / latency;
    if (rate(snr, total_bandwidth_hz) < needed) {
      return kInf;
    }
    double lo = 0.0;
    double hi = total_bandwidth_hz;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      (rate(snr, mid) >= needed ? hi : lo) = mid;
    }
    return hi;
  };
  const auto total_demand = [&](double latency) {
    double sum = 0.0;
    for (double snr : reference_snr) {
      sum += demand(snr, latency);
    }
    return sum;
  };
  const auto share = total_bandwidth_hz / static_cast<double>(reference_snr.size());
  double lo = 0.0;
  double hi = 0.0;
  for (double snr : reference_snr) {
    lo = std::max(lo, payload_bits / rate(snr, total_bandwidth_hz));
    hi = std::max(hi, payload_bits / rate(snr, share));
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (total_demand(mid) <= total_bandwidth_hz ? hi : lo) = mid;
  }
  Eigen::VectorXd out(static_cast<Eigen::Index>(reference_snr.size()));
  for (std::size_t m = 0; m < reference_snr.size(); ++m) {
    out(static_cast<Eigen::Index>(m)) = demand(reference_snr[m], hi);
  }
  return out;
}

EnumeratedMean enumerate_without_replacement(const Eigen::VectorXd& p, std::size_t picks,
                                             std::span<const Gradient> gradients,
                                             std::span<const std::int64_t> sizes,
                                             AggregationRule rule) {
  const auto count = static_cast<std::size_t>(p.size());
  if (picks == 0 || picks > count) {
    throw InvalidInput("enumerate_without_replacement: need 1 <= M <= K");
  }
  EnumeratedMean out;
  out.mean = Eigen::VectorXd::Zero(gradients.front().size());
  ScheduleDecision<double> decision;
  std::vector<bool> used(count, false);
  const std::function<void(double)> walk = [&](double probability) {
    if (decision.sequence.size() == picks) {
      out.mean += probability * aggregate_multi<double>(decision, gradients, sizes, rule).values();
      out.total_probability += probability;
      ++out.sequences;
      return;
    }
    double remaining = 0.0;
    for (std::size_t k = 0; k < count; ++k) {
      remaining += used[k] ? 0.0 : p(static_cast<Eigen::Index>(k));
    }
    for (std::size_t k = 0; k < count; ++k) {
      if (used[k] || !(p(static_cast<Eigen::Index>(k)) > 0.0)) {
        continue;
      }
      const double q = p(static_cast<Eigen::Index>(k)) / remaining;
      used[k] = true;
      decision.sequence.push_back(k);
      decision.conditional.push_back(q);
      walk(probability * q);
      decision.sequence.pop_back();
      decision.conditional.pop_back();
      used[k] = false;
    }
  };
  walk(1.0);
  return out;
}

BoundsSummary run_bounds_experiment(const BoundsExperiment& experiment) {
  ExperimentConfig config;
  config.fleet.devices = experiment.devices;
  config.fleet.samples_per_device = experiment.samples_per_device;
  config.data.task = "regression";
  config.data.learner = "linreg";
  config.data.dim = experiment.dim;
  config.data.noise_sd = 0.5;
  config.data.partition = "iid_uniform";
  config.data.test_fraction = 0.0;
  config.scheduler.policy = Policy::kImportanceChannel;
  config.scheduler.devices_per_round = 1;
  config.scheduler.rho = experiment.rho;
  config.trainer.rounds = experiment.rounds;
  config.trainer.eval_every = experiment.rounds;

  auto sim = build_simulation(config, experiment.data_seed);
  BoundsSummary summary;
  summary.params = analytic_convexity(sim.train);
  const double chi = 1.0 / summary.params.strong_convexity;
  const double nu = 1.0;
  sim.trainer.learning_rate = {LearningRate::Kind::kDiminishing, 0.0, chi, nu};

  const auto optimum = least_squares_optimum(sim.train);
  const double optimum_loss = global_loss<double>(optimum, sim.train.per_device, sim.learner);
  const ModelParams<double> start = ModelParams<double>::Zero(optimum.size());

  // Besides the realized gap, each round records E{L(w^{t+1}) | w^t}, summed
  // over the K possible picks; the one-step bound is checked against that.
  sim.scheduler.record_distribution = true;
  const auto n = static_cast<double>(sim.train.total);
  std::vector<std::vector<RoundReport>> runs;
  std::vector<std::vector<double>> expected_next_gap;
  for (int s = 0; s < experiment.seeds; ++s) {
    auto state = initial_state(sim, start, mix_seed(experiment.data_seed, 1000 + s));
    std::vector<RoundReport> reports;
    std::vector<double> expected;
    for (int t = 1; t <= experiment.rounds; ++t) {
      const ModelParams<double> before = state.model;
      reports.push_back(run_round(state, sim));
      const auto& r = reports.back();
      double next = 0.0;
      for (std::size_t k = 0; k < sim.train.device_count(); ++k) {
        const double pk = r.distribution[k];
        if (pk <= 0.0) {
          continue;
        }
        const auto gk = local_gradient(before, sim.train.per_device[k], sim.learner);
        const ModelParams<double> w =
            before - r.learning_rate * double(sim.train.sizes[k]) / (n * pk) * gk.values();
        next += pk * global_loss<double>(w, sim.train.per_device, sim.learner);
      }
      expected.push_back(next - optimum_loss);
    }
    runs.push_back(std::move(reports));
    expected_next_gap.push_back(std::move(expected));
  }
  for (const auto& run : runs) {
    for (const auto& r : run) {
      summary.max_update_norm = std::max(summary.max_update_norm, r.estimate_norm);
    }
  }
  std::vector<BoundTrace> traces;
  for (const auto& run : runs) {
    traces.push_back(
        bound_trace(run, optimum_loss, summary.params, chi, nu, summary.max_update_norm));
  }
  summary.zeta = traces.front().zeta;
  summary.rounds_checked = experiment.rounds;

  summary.worst_lemma2_z = -kInf;
  summary.worst_theorem2_z = -kInf;
  summary.worst_envelope_z = -kInf;
  summary.min_lemma5_slack = kInf;
  const double scale = traces.front().gap.front();
  for (int t = 0; t <= experiment.rounds; ++t) {
    std::vector<double> envelope_slack;
    for (const auto& tr : traces) {
      envelope_slack.push_back(tr.envelope[static_cast<std::size_t>(t)] -
                               tr.gap[static_cast<std::size_t>(t)]);
    }
    summary.worst_envelope_z = std::max(summary.worst_envelope_z, shortfall_z(envelope_slack, scale));
    if (t == experiment.rounds) {
      break;
    }
    std::vector<double> lemma2_slack;
    std::vector<double> theorem2_slack;
    for (std::size_t s = 0; s < traces.size(); ++s) {
      const auto& tr = traces[s];
      const auto i = static_cast<std::size_t>(t);
      lemma2_slack.push_back(tr.lemma2[i] - expected_next_gap[s][i]);
      theorem2_slack.push_back(tr.theorem2.bound[i] - tr.gap[i + 1]);
      const double grad_sq = runs[s][i].truth_norm * runs[s][i].truth_norm;
      if (grad_sq > 0.0) {
        summary.min_lemma5_slack = std::min(summary.min_lemma5_slack, tr.lemma5_slack[i] / grad_sq);
      }
    }
    summary.worst_lemma2_z = std::max(summary.worst_lemma2_z, shortfall_z(lemma2_slack, scale));
    summary.worst_theorem2_z =
        std::max(summary.worst_theorem2_z, shortfall_z(theorem2_slack, scale));
  }
  summary.lemma2_holds = summary.worst_lemma2_z <= 3.0;
  summary.theorem2_holds = summary.worst_theorem2_z <= 3.0;
  summary.envelope_holds = summary.worst_envelope_z <= 3.0;
  summary.lemma5_holds = summary.min_lemma5_slack >= -1e-9;
  return summary;
}

// ---------------------------------------------------------------------------
// Verification suites

namespace {

struct Instance {
  std::vector<std::int64_t> sizes;
  std::vector<Gradient> gradients;
  std::vector<double> norms;
  std::vector<double> upload;
  Gradient truth;

  SchedulingInputs<double> inputs() const { return {sizes, norms, upload}; }
};

Instance random_instance(std::size_t count, Eigen::Index dim, Rng& rng) {
  std::uniform_int_distribution<std::int64_t> size_dist(10, 100);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> upload_dist(0.05, 2.0);
  Instance out;
  for (std::size_t k = 0; k < count; ++k) {
    out.sizes.push_back(size_dist(rng));
    Eigen::VectorXd g(dim);
    for (Eigen::Index i = 0; i < dim; ++i) {
      g(i) = normal(rng);
    }
    g *= std::exp(normal(rng));
    out.gradients.emplace_back(g);
    out.norms.push_back(out.gradients.back().norm());
    out.upload.push_back(upload_dist(rng));
  }
  out.truth = ground_truth_global_gradient<double>(out.gradients, out.sizes);
  return out;
}

Eigen::VectorXd random_positive_distribution(std::size_t count, Rng& rng) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Eigen::VectorXd p(static_cast<Eigen::Index>(count));
  for (auto& x : p) {
    x = u(rng);
  }
  return p / p.sum();
}

Eigen::VectorXd random_unit(Eigen::Index dim, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd u(dim);
  for (auto& x : u) {
    x = normal(rng);
  }
  return u.normalized();
}

CheckResult at_most(std::string suite, std::string name, double value, double limit, bool gated,
                    std::string detail = {}) {
  return {std::move(suite), std::move(name), value, limit, value <= limit, gated, std::move(detail)};
}

void unbiasedness_suite(std::vector<CheckResult>& out, Rng& rng) {
  const std::string suite = "unbiasedness";
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto count = static_cast<std::size_t>(2 + trial % 9);
    const auto inst = random_instance(count, 5, rng);
    const auto p = random_positive_distribution(count, rng);
    const auto n = std::accumulate(inst.sizes.begin(), inst.sizes.end(), std::int64_t{0});
    Eigen::VectorXd expectation = Eigen::VectorXd::Zero(5);
    for (std::size_t k = 0; k < count; ++k) {
      const double pk = p(static_cast<Eigen::Index>(k));
      expectation += pk * aggregate_single(inst.gradients[k], inst.sizes[k], n, pk).values();
    }
    worst = std::max(worst, (expectation - inst.truth.values()).lpNorm<Eigen::Infinity>());
  }
  out.push_back(at_most(suite, "single_device_expectation_max_norm", worst, 1e-12, true,
                        "100 fleets, K <= 10"));

  double enum_worst = 0.0;
  double literal_gap = 0.0;
  int cases = 0;
  for (std::size_t count = 2; count <= 5; ++count) {
    for (std::size_t picks = 1; picks <= std::min<std::size_t>(3, count); ++picks) {
      for (int rep = 0; rep < 3; ++rep) {
        const auto inst = random_instance(count, 4, rng);
        const auto p = random_positive_distribution(count, rng);
        const auto e = enumerate_without_replacement(p, picks, inst.gradients, inst.sizes,
                                                     AggregationRule::kSequentialUnbiased);
        enum_worst = std::max(enum_worst, (e.mean - inst.truth.values()).lpNorm<Eigen::Infinity>());
        if (picks > 1) {
          const auto lit = enumerate_without_replacement(p, picks, inst.gradients, inst.sizes,
                                                         AggregationRule::kLiteral);
          literal_gap = std::max(literal_gap,
                                 (lit.mean - inst.truth.values()).lpNorm<Eigen::Infinity>());
        }
        ++cases;
      }
    }
  }
  out.push_back(at_most(suite, "sequential_enumeration_max_norm", enum_worst, 1e-12, true,
                        std::to_string(cases) + " instances, K <= 5, M <= 3"));
  out.push_back({suite, "literal_rule_bias_max_norm", literal_gap, 0.0, true, false,
                 "reported only: the per-pick q_k rescaling is biased once M > 1"});

  double z_worst = 0.0;
  for (int rep = 0; rep < 4; ++rep) {
    const std::size_t count = 5;
    const std::size_t picks = 1 + static_cast<std::size_t>(rep % 3);
    const auto inst = random_instance(count, 4, rng);
    const auto p = random_positive_distribution(count, rng);
    const auto dir = random_unit(4, rng);
    std::vector<double> proj;
    proj.reserve(100000);
    for (int draw = 0; draw < 100000; ++draw) {
      const auto decision = sample_without_replacement(p, picks, rng);
      proj.push_back(dir.dot(aggregate_multi<double>(decision, inst.gradients, inst.sizes).values()));
    }
    const auto s = mean_se(proj);
    z_worst = std::max(z_worst, std::abs(s.mean - dir.dot(inst.truth.values())) / s.se);
  }
  out.push_back(at_most(suite, "sequential_monte_carlo_z", z_worst, 3.0, true,
                        "1e5 draws per instance, projected on a random direction"));
}

void optimality_suite(std::vector<CheckResult>& out, Rng& rng) {
  const std::string suite = "optimality";
  const double rhos[] = {0.1, 0.5, 0.9};
  double rel_worst = 0.0;
  double sum_worst = 0.0;
  double below_grid = 0.0;
  double cell_worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto inst = random_instance(3, 4, rng);
    const double rho = rhos[trial % 3];
    const auto in = inst.inputs();
    const auto dist = solve_optimal_distribution(in, rho);
    const auto grid = simplex_grid_oracle(in, rho, 0.001);
    const double closed = scheduling_objective(in, dist.p, rho);
    rel_worst = std::max(rel_worst, std::abs(closed - grid.objective) / grid.objective);
    cell_worst = std::max(cell_worst, (dist.p - grid.p).lpNorm<Eigen::Infinity>());
    below_grid = std::max(below_grid, (closed - grid.objective) / grid.objective);
    sum_worst = std::max(sum_worst, std::abs(dist.p.sum() - 1.0));
  }
  // The grid minimum itself sits O(step^2) above the true minimum, about 1e-6
  // relative at step 0.001, so this one is reported rather than gated.
  out.push_back(at_most(suite, "closed_form_vs_grid_relative", rel_worst, 1e-6, false,
                        "50 K=3 instances, grid step 0.001"));
  out.push_back(at_most(suite, "grid_argmin_distance", cell_worst, 0.001, true,
                        "grid optimum within one cell of the closed form"));
  out.push_back(at_most(suite, "closed_form_not_above_grid", below_grid, 1e-12, true,
                        "closed form must be no worse than any grid point"));
  out.push_back(at_most(suite, "probability_sum_error", sum_worst, 1e-10, true));

  double z_worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto count = static_cast<std::size_t>(2 + trial % 7);
    const auto inst = random_instance(count, 4, rng);
    const auto in = inst.inputs();
    const auto p = trial % 2 == 0 ? solve_optimal_distribution(in, 0.5).p
                                  : random_positive_distribution(count, rng);
    const double closed = aggregation_variance(in, p, inst.truth.squared_norm());
    const auto n = std::accumulate(inst.sizes.begin(), inst.sizes.end(), std::int64_t{0});
    std::vector<double> dev;
    dev.reserve(100000);
    for (int draw = 0; draw < 100000; ++draw) {
      const auto k = sample_one(p, rng);
      const auto est =
          aggregate_single(inst.gradients[k], inst.sizes[k], n, p(static_cast<Eigen::Index>(k)));
      dev.push_back((est.values() - inst.truth.values()).squaredNorm());
    }
    const auto s = mean_se(dev);
    z_worst = std::max(z_worst, std::abs(s.mean - closed) / s.se);
  }
  out.push_back(at_most(suite, "variance_identity_monte_carlo_z", z_worst, 3.0, true,
                        "20 instances, 1e5 draws each"));
}

void bandwidth_suite(std::vector<CheckResult>& out, Rng& rng) {
  const std::string suite = "bandwidth";
  const ChannelConfig channel;
  std::uniform_real_distribution<double> dist_km(0.01, 0.5);
  std::exponential_distribution<double> fading(1.0);
  std::uniform_int_distribution<int> count_dist(1, 8);
  std::uniform_int_distribution<std::int64_t> params_dist(1000, 100000);
  double sum_err = 0.0;
  double spread = 0.0;
  double oracle_err = 0.0;
  double scaled_err = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto count = static_cast<std::size_t>(count_dist(rng));
    std::vector<double> snr;
    for (std::size_t m = 0; m < count; ++m) {
      snr.push_back(link_snr(channel.device_tx_power_dbm, dist_km(rng), fading(rng),
                             channel.bandwidth_hz, channel));
    }
    const double bits = 16.0 * static_cast<double>(params_dist(rng));
    const double band = channel.bandwidth_hz;
    const auto alloc = allocate_bandwidth<double>(snr, band);
    sum_err = std::max(sum_err, std::abs(alloc.sum() - band) / band);
    double lo = kInf;
    double hi = 0.0;
    for (std::size_t m = 0; m < count; ++m) {
      const double t = bits / uplink_rate(alloc(static_cast<Eigen::Index>(m)), snr[m]);
      lo = std::min(lo, t);
      hi = std::max(hi, t);
    }
    spread = std::max(spread, (hi - lo) / lo);
    const auto oracle = minimax_bandwidth_oracle(snr, band, band, bits, SnrMode::kFixed);
    oracle_err =
        std::max(oracle_err, ((alloc - oracle).array().abs() / oracle.array()).maxCoeff());
    if (trial % 4 == 0) {
      const auto scaled = allocate_bandwidth_scaled_noise(snr, band, band, bits);
      const auto scaled_oracle = minimax_bandwidth_oracle(snr, band, band, bits, SnrMode::kScaledNoise);
      scaled_err = std::max(
          scaled_err, ((scaled - scaled_oracle).array().abs() / scaled_oracle.array()).maxCoeff());
    }
  }
  out.push_back(at_most(suite, "allocation_sum_relative", sum_err, 1e-9, true, "100 sets, M <= 8"));
  out.push_back(at_most(suite, "latency_equalization_relative", spread, 1e-9, true));
  out.push_back(at_most(suite, "minimax_oracle_relative", oracle_err, 1e-6, true));
  out.push_back(at_most(suite, "scaled_noise_oracle_relative", scaled_err, 1e-6, true,
                        "noise power follows the allocated band"));
}

void bounds_suite(std::vector<CheckResult>& out, Rng& rng) {
  const std::string suite = "bounds";
  const auto summary = run_bounds_experiment({});
  out.push_back(at_most(suite, "one_step_bound_z", summary.worst_lemma2_z, 3.0, true,
                        "mean gap minus mean bound, in standard errors"));
  out.push_back(at_most(suite, "cumulative_bound_z", summary.worst_theorem2_z, 3.0, true));
  out.push_back(at_most(suite, "envelope_z", summary.worst_envelope_z, 3.0, true));
  out.push_back(at_most(suite, "gradient_gap_relative_shortfall", -summary.min_lemma5_slack, 1e-9, true,
                        "||g||^2 >= 2 mu gap on every round"));

  // Smoothness and strong convexity on random pairs for the same quadratic fleet.
  ExperimentConfig config;
  config.fleet.devices = 10;
  config.fleet.samples_per_device = 50;
  config.data.task = "regression";
  config.data.learner = "linreg";
  config.data.dim = 20;
  config.data.partition = "iid_uniform";
  config.data.test_fraction = 0.0;
  const auto sim = build_simulation(config, 11);
  const auto params = analytic_convexity(sim.train);
  std::normal_distribution<double> normal(0.0, 1.0);
  double lipschitz_excess = -kInf;
  double convexity_excess = -kInf;
  for (int i = 0; i < 10000; ++i) {
    Eigen::VectorXd u(20);
    Eigen::VectorXd v(20);
    for (Eigen::Index j = 0; j < 20; ++j) {
      u(j) = normal(rng);
      v(j) = normal(rng);
    }
    const auto gu = pooled_gradient(u, sim.train, sim.learner);
    const auto gv = pooled_gradient(v, sim.train, sim.learner);
    const double d = (u - v).norm();
    lipschitz_excess = std::max(lipschitz_excess,
                                (gu.values() - gv.values()).norm() / (params.lipschitz * d) - 1.0);
    const double lu = global_loss<double>(u, sim.train.per_device, sim.learner);
    const double lv = global_loss<double>(v, sim.train.per_device, sim.learner);
    const double lower = lv + gv.values().dot(u - v) + params.strong_convexity / 2.0 * d * d;
    convexity_excess = std::max(convexity_excess, (lower - lu) / std::max(std::abs(lu), 1.0));
  }
  out.push_back(at_most(suite, "lipschitz_pairs_relative_excess", lipschitz_excess, 1e-9, true,
                        "1e4 random pairs"));
  out.push_back(at_most(suite, "strong_convexity_pairs_excess", convexity_excess, 1e-9, true,
                        "1e4 random pairs"));

  ExperimentConfig svm;
  svm.fleet.devices = 10;
  svm.fleet.samples_per_device = 30;
  svm.data.svm_reg = 0.01;
  const auto svm_sim = build_simulation(svm, 11);
  const auto estimated = estimate_convexity(svm_sim.train, svm_sim.learner, 1.0, 500, rng);
  out.push_back({suite, "svm_estimated_mu_over_l", estimated.strong_convexity / estimated.lipschitz,
                 1.0, estimated.strong_convexity <= estimated.lipschitz, false,
                 "estimated parameters; reported, not gated"});
}

}  // namespace

bool VerificationReport::passed() const {
  return std::all_of(checks.begin(), checks.end(),
                     [](const CheckResult& c) { return c.passed || !c.gated; });
}

std::string VerificationReport::to_json() const {
  nlohmann::ordered_json j;
  j["passed"] = passed();
  j["host_seconds"] = host_seconds;
  j["checks"] = nlohmann::ordered_json::array();
  for (const auto& c : checks) {
    j["checks"].push_back({{"suite", c.suite},
                           {"name", c.name},
                           {"value", c.value},
                           {"limit", c.limit},
                           {"margin", c.limit - c.value},
                           {"passed", c.passed},
                           {"gated", c.gated},
                           {"detail", c.detail}});
  }
  return j.dump(2);
}

std::vector<std::string> verification_suites() {
  return {"unbiasedness", "optimality", "bandwidth", "bounds", "all"};
}

VerificationReport run_verification(const std::string& suite, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  VerificationReport report;
  const bool all = suite == "all";
  bool known = all;
  const auto maybe = [&](const std::string& name, auto&& body, Stream stream) {
    if (all || suite == name) {
      known = true;
      Rng rng = make_stream(seed, stream);
      body(report.checks, rng);
    }
  };
  maybe("unbiasedness", unbiasedness_suite, Stream::kScheduler);
  maybe("optimality", optimality_suite, Stream::kData);
  maybe("bandwidth", bandwidth_suite, Stream::kFading);
  maybe("bounds", bounds_suite, Stream::kModelInit);
  if (!known) {
    throw InvalidInput("unknown verification suite '" + suite +
                       "'; expected unbiasedness|optimality|bandwidth|bounds|all");
  }
  report.host_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace feel
