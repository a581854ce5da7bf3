#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "feel/random.hpp"
#include "feel/types.hpp"

namespace feel {

enum class Policy {
  kImportanceChannel,  // closed-form trade-off between update norm and upload latency
  kChannelAware,       // deterministic minimum-latency choice
  kImportanceAware,    // p_k proportional to n_k ||g_k||
  kUniformRandom,
};

enum class AggregationRule {
  kSequentialUnbiased,  // running-total estimator; exactly unbiased for any M
  kLiteral,             // (1/(M n)) sum n_Y g_Y / q_Y; biased once M > 1
};

template <typename Scalar>
struct SchedulingDistribution {
  VectorX<Scalar> p;
  Scalar lambda_star = Scalar(0);
  bool uniform_fallback = false;  // every gradient was zero
  int evaluations = 0;            // sum-of-probabilities evaluations spent on lambda
};

/// Per-device scalars the server sees when it schedules a round.
template <typename Scalar>
struct SchedulingInputs {
  std::span<const std::int64_t> sizes;  // n_k
  std::span<const Scalar> grad_norms;   // ||g_k||
  std::span<const Scalar> upload_s;     // T_k^U with the full band; +inf when unreachable

  std::size_t device_count() const { return sizes.size(); }

  void validate() const {
    if (sizes.empty() || sizes.size() != grad_norms.size() || sizes.size() != upload_s.size()) {
      throw InvalidInput("scheduling inputs have mismatched or zero lengths");
    }
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      if (sizes[k] <= 0 || !(grad_norms[k] >= Scalar(0)) || !(upload_s[k] > Scalar(0))) {
        throw InvalidInput("scheduling inputs: device " + std::to_string(k + 1) +
                           " needs n_k > 0, ||g_k|| >= 0 and T_k^U > 0");
      }
    }
  }

  Scalar total() const {
    return Scalar(std::accumulate(sizes.begin(), sizes.end(), std::int64_t{0}));
  }

  // (n_k / n) ||g_k||
  VectorX<Scalar> importance() const {
    const Scalar n = total();
    VectorX<Scalar> out(static_cast<Eigen::Index>(sizes.size()));
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      out(static_cast<Eigen::Index>(k)) = Scalar(sizes[k]) / n * grad_norms[k];
    }
    return out;
  }
};

template <typename Scalar>
SchedulingDistribution<Scalar> uniform_distribution(std::size_t device_count) {
  SchedulingDistribution<Scalar> out;
  out.p = VectorX<Scalar>::Constant(static_cast<Eigen::Index>(device_count),
                                    Scalar(1) / Scalar(device_count));
  return out;
}

/// ||(n_k / (n p_k)) g_k - g||^2.
template <typename Scalar>
Scalar importance_indicator(const GradientVector<Scalar>& local, std::int64_t local_size,
                            std::int64_t total_size, Scalar probability,
                            const GradientVector<Scalar>& truth) {
  if (!(probability > Scalar(0))) {
    throw InvalidInput("importance_indicator: probability must be positive");
  }
  if (local.size() != truth.size()) {
    throw InvalidInput("importance_indicator: gradient length mismatch");
  }
  const Scalar scale = Scalar(local_size) / (Scalar(total_size) * probability);
  return (scale * local.values() - truth.values()).squaredNorm();
}

/// Scheduling objective with the decision-independent terms dropped:
/// sum_k rho (n_k/n)^2 ||g_k||^2 / p_k + (1 - rho) p_k T_k^U.
/// A zero probability costs nothing for a zero gradient and +inf otherwise.
template <typename Scalar>
Scalar scheduling_objective(const SchedulingInputs<Scalar>& in, const VectorX<Scalar>& p,
                            Scalar rho) {
  const VectorX<Scalar> a = in.importance();
  Scalar value = 0;
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    const Scalar upload = in.upload_s[static_cast<std::size_t>(k)];
    if (p(k) > Scalar(0)) {
      value += rho * a(k) * a(k) / p(k) + (Scalar(1) - rho) * p(k) * upload;
    } else if (a(k) > Scalar(0)) {
      return std::numeric_limits<Scalar>::infinity();
    }
  }
  return value;
}

/// E||g_hat - g||^2 for single-device probabilistic scheduling:
/// sum_k (n_k/n)^2 ||g_k||^2 / p_k - ||g||^2.
template <typename Scalar>
Scalar aggregation_variance(const SchedulingInputs<Scalar>& in, const VectorX<Scalar>& p,
                            Scalar truth_squared_norm) {
  const VectorX<Scalar> a = in.importance();
  Scalar second_moment = 0;
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    if (a(k) == Scalar(0)) {
      continue;
    }
    if (!(p(k) > Scalar(0))) {
      return std::numeric_limits<Scalar>::infinity();
    }
    second_moment += a(k) * a(k) / p(k);
  }
  return second_moment - truth_squared_norm;
}

/// Optimal single-device distribution for rho in (0, 1):
///   p_k = (n_k/n) ||g_k|| sqrt(rho / ((1 - rho) T_k^U + lambda)),
/// with lambda found by bisection so that the probabilities sum to one.
/// The sum is strictly decreasing in lambda on (-min_k (1-rho) T_k^U, inf).
template <typename Scalar>
SchedulingDistribution<Scalar> solve_optimal_distribution(const SchedulingInputs<Scalar>& in,
                                                          Scalar rho, Scalar tolerance = 1e-10) {
  in.validate();
  if (!(rho > Scalar(0) && rho < Scalar(1))) {
    throw InvalidInput("solve_optimal_distribution: rho must lie in (0, 1); use a baseline policy");
  }
  if (!(tolerance > Scalar(0))) {
    throw InvalidInput("solve_optimal_distribution: tolerance must be positive");
  }
  const auto count = static_cast<Eigen::Index>(in.device_count());
  const VectorX<Scalar> a = in.importance();

  std::vector<Eigen::Index> eligible;
  Scalar floor_offset = std::numeric_limits<Scalar>::infinity();
  Scalar scale = 0;
  for (Eigen::Index k = 0; k < count; ++k) {
    const Scalar upload = in.upload_s[static_cast<std::size_t>(k)];
    if (a(k) > Scalar(0) && std::isfinite(upload)) {
      eligible.push_back(k);
      floor_offset = std::min(floor_offset, (Scalar(1) - rho) * upload);
      scale = std::max(scale, (Scalar(1) - rho) * upload);
    }
  }
  if (eligible.empty()) {
    bool any_gradient = (a.array() > Scalar(0)).any();
    if (any_gradient) {
      throw InvalidInput("solve_optimal_distribution: no device with a nonzero gradient is reachable");
    }
    auto out = uniform_distribution<Scalar>(in.device_count());
    out.uniform_fallback = true;
    return out;
  }

  SchedulingDistribution<Scalar> out;
  const auto probabilities = [&](Scalar lambda) {
    ++out.evaluations;
    VectorX<Scalar> p = VectorX<Scalar>::Zero(count);
    for (auto k : eligible) {
      const Scalar upload = in.upload_s[static_cast<std::size_t>(k)];
      p(k) = a(k) * std::sqrt(rho / ((Scalar(1) - rho) * upload + lambda));
    }
    return p;
  };
  const auto mass = [&](Scalar lambda) { return probabilities(lambda).sum(); };

  // Lower end: just above the pole of the smallest radicand.
  Scalar delta = Scalar(1e-12) * scale;
  Scalar lower = -floor_offset + delta;
  for (int shrink = 0; shrink < 64 && mass(lower) < Scalar(1); ++shrink) {
    delta *= Scalar(1e-3);
    const Scalar next = -floor_offset + delta;
    if (next == lower) {
      break;
    }
    lower = next;
  }
  Scalar step = scale;
  Scalar upper = lower + step;
  while (mass(upper) >= Scalar(1)) {
    step *= Scalar(2);
    upper = lower + step;
  }

  Scalar lambda = upper;
  Scalar current = mass(upper);
  for (int it = 0; it < 4096 && std::abs(current - Scalar(1)) > tolerance; ++it) {
    const Scalar mid = lower + (upper - lower) / Scalar(2);
    if (mid == lower || mid == upper) {
      break;
    }
    current = mass(mid);
    lambda = mid;
    (current > Scalar(1) ? lower : upper) = mid;
  }

  out.lambda_star = lambda;
  out.p = probabilities(lambda);
  out.p /= out.p.sum();
  return out;
}

/// Equal weights on the two terms of the scheduling objective at round one,
/// evaluated under uniform scheduling: rho * E{I} = (1 - rho) * E{T}.
template <typename Scalar>
Scalar balanced_rho(const SchedulingInputs<Scalar>& in, std::span<const Scalar> round_total_s,
                    Scalar truth_squared_norm) {
  const auto count = static_cast<Scalar>(in.device_count());
  const VectorX<Scalar> a = in.importance();
  const Scalar divergence = count * a.squaredNorm() - truth_squared_norm;
  Scalar latency = 0;
  for (Scalar t : round_total_s) {
    latency += t;
  }
  latency /= count;
  if (!(divergence > Scalar(0)) || !(latency > Scalar(0)) || !std::isfinite(latency)) {
    throw InvalidInput("balanced_rho: both objective terms must be positive and finite");
  }
  return latency / (divergence + latency);
}

/// p_k proportional to n_k ||g_k||; uniform with a flag when every gradient is zero.
template <typename Scalar>
SchedulingDistribution<Scalar> importance_aware_distribution(const SchedulingInputs<Scalar>& in) {
  in.validate();
  const VectorX<Scalar> a = in.importance();
  if (!(a.sum() > Scalar(0))) {
    auto out = uniform_distribution<Scalar>(in.device_count());
    out.uniform_fallback = true;
    return out;
  }
  SchedulingDistribution<Scalar> out;
  out.p = a / a.sum();
  return out;
}

/// The `count` devices with the smallest full-band upload latency, fastest
/// first; ties go to the lower device id.
template <typename Scalar>
std::vector<std::size_t> channel_aware_selection(std::span<const Scalar> upload_s,
                                                 std::size_t count) {
  if (count == 0 || count > upload_s.size()) {
    throw InvalidInput("channel_aware_selection: need 1 <= M <= K");
  }
  std::vector<std::size_t> order(upload_s.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return upload_s[x] < upload_s[y]; });
  order.resize(count);
  return order;
}

/// Distribution for a baseline policy. The channel-aware policy is returned
/// as the point mass on its minimum-latency device.
template <typename Scalar>
SchedulingDistribution<Scalar> baseline_distribution(Policy policy,
                                                     const SchedulingInputs<Scalar>& in) {
  in.validate();
  switch (policy) {
    case Policy::kChannelAware: {
      SchedulingDistribution<Scalar> out;
      out.p = VectorX<Scalar>::Zero(static_cast<Eigen::Index>(in.device_count()));
      out.p(static_cast<Eigen::Index>(channel_aware_selection(in.upload_s, 1).front())) = 1;
      return out;
    }
    case Policy::kImportanceAware:
      return importance_aware_distribution(in);
    case Policy::kUniformRandom:
      return uniform_distribution<Scalar>(in.device_count());
    case Policy::kImportanceChannel:
      break;
  }
  throw InvalidInput("baseline_distribution: not a baseline policy");
}

/// Inverse-CDF draw in ascending device order. Returns a zero-based index.
template <typename Scalar>
std::size_t sample_one(const VectorX<Scalar>& p, Rng& rng) {
  const Scalar total = p.sum();
  if (!(total > Scalar(0)) || (p.array() < Scalar(0)).any()) {
    throw InvalidInput("sample_one: probabilities must be nonnegative with positive mass");
  }
  const Scalar u = Scalar(uniform01(rng)) * total;
  Scalar cumulative = 0;
  std::size_t last_positive = 0;
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    if (p(k) <= Scalar(0)) {
      continue;
    }
    last_positive = static_cast<std::size_t>(k);
    cumulative += p(k);
    if (u < cumulative) {
      return static_cast<std::size_t>(k);
    }
  }
  return last_positive;
}

template <typename Scalar>
struct ScheduleDecision {
  std::vector<std::size_t> sequence;       // zero-based ids in selection order
  std::vector<Scalar> conditional;         // q of each pick under its step's distribution
  std::vector<VectorX<Scalar>> step_distributions;
  bool padded = false;                     // ran out of positive-probability devices
};

/// Sequential sampling without replacement: after each pick the chosen
/// device is zeroed and the rest renormalized, q_k = p_k / sum_{unpicked} p_j.
/// When positive mass runs out, remaining picks are uniform over the unpicked
/// devices and the decision is flagged.
template <typename Scalar>
ScheduleDecision<Scalar> sample_without_replacement(const VectorX<Scalar>& p, std::size_t count,
                                                    Rng& rng) {
  const auto device_count = static_cast<std::size_t>(p.size());
  if (count == 0 || count > device_count) {
    throw InvalidInput("sample_without_replacement: need 1 <= M <= K");
  }
  if ((p.array() < Scalar(0)).any()) {
    throw InvalidInput("sample_without_replacement: negative probability");
  }
  ScheduleDecision<Scalar> decision;
  std::vector<bool> picked(device_count, false);
  for (std::size_t m = 0; m < count; ++m) {
    VectorX<Scalar> q = VectorX<Scalar>::Zero(p.size());
    Scalar remaining = 0;
    for (std::size_t k = 0; k < device_count; ++k) {
      if (!picked[k]) {
        remaining += p(static_cast<Eigen::Index>(k));
      }
    }
    if (remaining > Scalar(0)) {
      for (std::size_t k = 0; k < device_count; ++k) {
        if (!picked[k]) {
          q(static_cast<Eigen::Index>(k)) = p(static_cast<Eigen::Index>(k)) / remaining;
        }
      }
    } else {
      decision.padded = true;
      const auto left = static_cast<Scalar>(device_count - m);
      for (std::size_t k = 0; k < device_count; ++k) {
        if (!picked[k]) {
          q(static_cast<Eigen::Index>(k)) = Scalar(1) / left;
        }
      }
    }
    const std::size_t choice = sample_one(q, rng);
    picked[choice] = true;
    decision.sequence.push_back(choice);
    decision.conditional.push_back(q(static_cast<Eigen::Index>(choice)));
    decision.step_distributions.push_back(std::move(q));
  }
  return decision;
}

/// (n_X / (n p_X)) g_X.
template <typename Scalar>
GradientVector<Scalar> aggregate_single(const GradientVector<Scalar>& selected,
                                        std::int64_t selected_size, std::int64_t total_size,
                                        Scalar probability) {
  if (!(probability > Scalar(0))) {
    throw InvalidInput("aggregate_single: probability must be positive");
  }
  return GradientVector<Scalar>(Scalar(selected_size) / (Scalar(total_size) * probability) *
                                selected.values());
}

/// Global gradient from a without-replacement decision. `gradients` and
/// `sizes` are indexed by device.
///
/// kSequentialUnbiased averages, over the picks m, the estimates
///   (1/n) [ sum_{j<m} n_{Y_j} g_{Y_j} + n_{Y_m} g_{Y_m} / q_{Y_m} ],
/// each of which is unbiased given the earlier picks. With M = 1 both rules
/// reduce to aggregate_single; with M = K the sequential rule returns g.
template <typename Scalar>
GradientVector<Scalar> aggregate_multi(const ScheduleDecision<Scalar>& decision,
                                       std::span<const GradientVector<Scalar>> gradients,
                                       std::span<const std::int64_t> sizes,
                                       AggregationRule rule = AggregationRule::kSequentialUnbiased) {
  if (decision.sequence.empty() || decision.sequence.size() != decision.conditional.size()) {
    throw InvalidInput("aggregate_multi: malformed decision");
  }
  if (gradients.size() != sizes.size()) {
    throw InvalidInput("aggregate_multi: gradient/size count mismatch");
  }
  for (auto k : decision.sequence) {
    if (k >= gradients.size() || gradients[k].size() == 0) {
      throw InvalidInput("aggregate_multi: missing gradient for device " + std::to_string(k + 1));
    }
  }
  const Scalar n = Scalar(std::accumulate(sizes.begin(), sizes.end(), std::int64_t{0}));
  const auto dim = gradients[decision.sequence.front()].size();
  const auto picks = Scalar(decision.sequence.size());

  // Every device observed: averaging the sequential estimate over orderings
  // leaves the exact weighted mean.
  if (rule == AggregationRule::kSequentialUnbiased && decision.sequence.size() == sizes.size()) {
    VectorX<Scalar> total = VectorX<Scalar>::Zero(dim);
    for (auto k : decision.sequence) {
      total += Scalar(sizes[k]) * gradients[k].values();
    }
    return GradientVector<Scalar>(total / n);
  }

  VectorX<Scalar> estimate = VectorX<Scalar>::Zero(dim);
  VectorX<Scalar> running = VectorX<Scalar>::Zero(dim);
  for (std::size_t m = 0; m < decision.sequence.size(); ++m) {
    const auto k = decision.sequence[m];
    const Scalar q = decision.conditional[m];
    if (!(q > Scalar(0))) {
      throw InvalidInput("aggregate_multi: conditional probability must be positive");
    }
    const VectorX<Scalar> weighted = Scalar(sizes[k]) * gradients[k].values();
    if (rule == AggregationRule::kSequentialUnbiased) {
      estimate += running + weighted / q;
      running += weighted;
    } else {
      estimate += weighted / q;
    }
  }
  return GradientVector<Scalar>(estimate / (picks * n));
}

/// sum_{k in S} n_k g_k / sum_{k in S} n_k.
template <typename Scalar>
GradientVector<Scalar> classical_subset_average(std::span<const std::size_t> selected,
                                                std::span<const GradientVector<Scalar>> gradients,
                                                std::span<const std::int64_t> sizes) {
  if (selected.empty()) {
    throw InvalidInput("classical_subset_average: empty selection");
  }
  VectorX<Scalar> acc;
  std::int64_t total = 0;
  for (auto k : selected) {
    if (k >= gradients.size() || k >= sizes.size()) {
      throw InvalidInput("classical_subset_average: device index out of range");
    }
    if (acc.size() == 0) {
      acc = VectorX<Scalar>::Zero(gradients[k].size());
    }
    acc += Scalar(sizes[k]) * gradients[k].values();
    total += sizes[k];
  }
  return GradientVector<Scalar>(acc / Scalar(total));
}

}  // namespace feel
