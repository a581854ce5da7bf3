#include "feel/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace feel {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

std::string policy_name(Policy policy) {
  switch (policy) {
    case Policy::kImportanceChannel:
      return "importance_channel";
    case Policy::kChannelAware:
      return "channel_aware";
    case Policy::kImportanceAware:
      return "importance_aware";
    case Policy::kUniformRandom:
      return "uniform_random";
  }
  return "unknown";
}

std::optional<Policy> parse_policy(const std::string& name) {
  for (auto p : {Policy::kImportanceChannel, Policy::kChannelAware, Policy::kImportanceAware,
                 Policy::kUniformRandom}) {
    if (policy_name(p) == name) {
      return p;
    }
  }
  return std::nullopt;
}

TrainerState initial_state(const Simulation& sim, const ModelParams<double>& model,
                           std::uint64_t seed) {
  const auto expected = parameter_count(sim.learner, sim.train.per_device.front().dim());
  if (model.size() != expected) {
    throw InvalidInput("initial model has " + std::to_string(model.size()) +
                       " parameters, expected " + std::to_string(expected));
  }
  TrainerState state{model, 1, 0.0, std::nullopt, make_stream(seed, Stream::kFading),
                     make_stream(seed, Stream::kScheduler)};
  return state;
}

RoundReport run_round(TrainerState& state, const Simulation& sim) {
  const auto device_count = sim.profiles.size();
  const auto& fleet = sim.train;
  if (fleet.device_count() != device_count) {
    throw InvalidInput("run_round: fleet and device profiles disagree on K");
  }
  const auto picks = static_cast<std::size_t>(sim.scheduler.devices_per_round);
  if (picks == 0 || picks > device_count) {
    throw InvalidInput("run_round: devices_per_round must lie in [1, K]");
  }

  RoundReport report;
  report.round = state.round;

  // Step 1: broadcast w^t.
  const auto snapshot = draw_snapshot(sim.profiles, sim.channel, state.round, state.channel_rng);
  const double broadcast = broadcast_latency(sim.payload, sim.channel, snapshot);

  // Step 2: full-dataset local gradients.
  std::vector<Gradient> gradients;
  gradients.reserve(device_count);
  std::vector<double> norms;
  std::vector<double> compute;
  for (std::size_t k = 0; k < device_count; ++k) {
    gradients.push_back(local_gradient(state.model, fleet.per_device[k], sim.learner));
    norms.push_back(gradients.back().norm());
    compute.push_back(compute_latency(sim.profiles[k], sim.payload));
  }
  const Gradient truth = ground_truth_global_gradient<double>(gradients, fleet.sizes);
  report.truth_norm = truth.norm();
  report.grad_norm_mean = std::accumulate(norms.begin(), norms.end(), 0.0) / double(device_count);
  report.grad_norm_max = *std::max_element(norms.begin(), norms.end());
  report.loss_before = global_loss<double>(state.model, fleet.per_device, sim.learner);

  // Step 3 reports n_k ||g_k||; the server pairs it with full-band upload latency.
  std::vector<Latency> full_band_upload;
  std::vector<double> upload_seconds;
  for (std::size_t k = 0; k < device_count; ++k) {
    full_band_upload.push_back(
        upload_latency(sim.payload, sim.channel.bandwidth_hz, snapshot.uplink_snr[k]));
    upload_seconds.push_back(full_band_upload.back().finite()
                                 ? full_band_upload.back().seconds()
                                 : std::numeric_limits<double>::infinity());
  }
  const SchedulingInputs<double> inputs{fleet.sizes, norms, upload_seconds};

  // Step 4: distribution and selection.
  const auto& cfg = sim.scheduler;
  report.second_moment = kNaN;
  report.closed_form_second_moment = kNaN;
  std::vector<std::size_t> selected;
  Gradient estimate;

  if (cfg.policy == Policy::kChannelAware) {
    selected = channel_aware_selection<double>(upload_seconds, picks);
    estimate = classical_subset_average<double>(selected, gradients, fleet.sizes);
    report.conditional.assign(selected.size(), 1.0);
    if (cfg.record_distribution) {
      report.distribution.assign(device_count, 0.0);
      for (auto k : selected) {
        report.distribution[k] = 1.0;
      }
    }
  } else {
    SchedulingDistribution<double> dist;
    if (cfg.policy == Policy::kImportanceChannel) {
      if (!state.rho) {
        if (cfg.auto_rho) {
          const auto prelim = round_latency(broadcast, compute, full_band_upload, {},
                                            Latency(0.0), sim.trainer.compute_scope);
          std::vector<double> totals;
          for (const auto& t : prelim.round_total_s) {
            totals.push_back(t.finite() ? t.seconds() : std::numeric_limits<double>::infinity());
          }
          const double base = balanced_rho<double>(inputs, totals, truth.squared_norm());
          const double odds = cfg.rho_scale * base / (1.0 - base);
          state.rho = odds / (1.0 + odds);
        } else {
          state.rho = cfg.rho;
        }
      }
      report.rho = *state.rho;
      dist = solve_optimal_distribution<double>(inputs, *state.rho, cfg.lambda_tolerance);
    } else {
      dist = baseline_distribution<double>(cfg.policy, inputs);
    }
    report.lambda_star = dist.lambda_star;
    report.uniform_fallback = dist.uniform_fallback;
    if (cfg.record_distribution) {
      report.distribution.assign(dist.p.data(), dist.p.data() + dist.p.size());
    }

    if (picks == 1) {
      const auto choice = sample_one(dist.p, state.scheduler_rng);
      selected = {choice};
      report.conditional = {dist.p(static_cast<Eigen::Index>(choice))};
      estimate = aggregate_single(gradients[choice], fleet.sizes[choice], fleet.total,
                                  dist.p(static_cast<Eigen::Index>(choice)));
      report.second_moment =
          aggregation_variance(inputs, dist.p, 0.0);  // E||g_hat||^2 = V + ||g||^2
      if (cfg.policy == Policy::kImportanceChannel && !dist.uniform_fallback) {
        const double rho = *state.rho;
        double sum = 0.0;
        for (std::size_t k = 0; k < device_count; ++k) {
          if (norms[k] > 0.0 && std::isfinite(upload_seconds[k])) {
            sum += double(fleet.sizes[k]) * norms[k] *
                   std::sqrt(((1.0 - rho) * upload_seconds[k] + dist.lambda_star) / rho);
          }
        }
        report.closed_form_second_moment = sum / double(fleet.total);
      }
    } else {
      const auto decision = sample_without_replacement(dist.p, picks, state.scheduler_rng);
      selected = decision.sequence;
      report.conditional = decision.conditional;
      report.padded = decision.padded;
      estimate = aggregate_multi<double>(decision, gradients, fleet.sizes, cfg.aggregation);
    }
  }
  for (auto k : selected) {
    report.scheduled.push_back(static_cast<int>(k) + 1);
  }

  // Step 5: bandwidth allocation and upload.
  const auto plan = plan_upload(sim.payload, sim.channel, snapshot, selected);
  const auto breakdown = round_latency(broadcast, compute, full_band_upload, selected,
                                       plan.round_upload, sim.trainer.compute_scope);
  if (!breakdown.round_s.finite()) {
    throw InvalidInput("run_round: a scheduled device cannot upload");
  }

  // Step 6: update.
  report.learning_rate = sim.trainer.learning_rate.at(state.round);
  report.estimate_norm = estimate.norm();
  state.model -= report.learning_rate * estimate.values();
  if (!state.model.allFinite()) {
    throw InvalidInput("run_round: model diverged at round " + std::to_string(state.round));
  }

  report.broadcast_s = breakdown.broadcast_s;
  report.compute_s = breakdown.compute_term_s;
  report.upload_s = breakdown.round_upload_s.seconds();
  report.round_s = breakdown.round_s.seconds();
  state.clock_s += report.round_s;
  report.sim_seconds = state.clock_s;

  // Measurement, outside simulated time.
  report.loss = global_loss<double>(state.model, fleet.per_device, sim.learner);
  const int every = std::max(sim.trainer.eval_every, 1);
  report.accuracy = (state.round % every == 0 || state.round == sim.trainer.rounds) &&
                            !sim.test.empty()
                        ? accuracy(state.model, sim.test, sim.learner)
                        : kNaN;
  ++state.round;
  return report;
}

std::vector<RoundReport> run_training(const Simulation& sim, const ModelParams<double>& initial,
                                      std::uint64_t seed) {
  auto state = initial_state(sim, initial, seed);
  std::vector<RoundReport> reports;
  reports.reserve(static_cast<std::size_t>(sim.trainer.rounds));
  int streak = 0;
  const int needed = std::max(sim.trainer.eval_every, 1);
  for (int t = 1; t <= sim.trainer.rounds; ++t) {
    reports.push_back(run_round(state, sim));
    const double acc = reports.back().accuracy;
    if (sim.trainer.target_accuracy && !std::isnan(acc)) {
      streak = acc >= *sim.trainer.target_accuracy ? streak + 1 : 0;
      if (streak >= needed) {
        break;
      }
    }
  }
  return reports;
}

}  // namespace feel
