#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "feel/channel.hpp"
#include "feel/data.hpp"
#include "feel/latency.hpp"
#include "feel/learners.hpp"
#include "feel/random.hpp"
#include "feel/scheduler.hpp"

namespace feel {

struct LearningRate {
  enum class Kind { kConstant, kDiminishing };
  Kind kind = Kind::kConstant;
  double eta = 0.01;  // constant step
  double chi = 1.0;   // diminishing: chi / (t + nu)
  double nu = 1.0;

  double at(int round) const {
    return kind == Kind::kConstant ? eta : chi / (static_cast<double>(round) + nu);
  }
};

struct SchedulerConfig {
  Policy policy = Policy::kImportanceChannel;
  int devices_per_round = 1;  // M
  double rho = 0.5;
  bool auto_rho = false;      // balance the objective terms on round one
  double rho_scale = 1.0;     // multiplies the odds rho/(1-rho) chosen by auto_rho
  double lambda_tolerance = 1e-10;
  AggregationRule aggregation = AggregationRule::kSequentialUnbiased;
  bool record_distribution = false;
};

struct TrainerConfig {
  int rounds = 100;
  LearningRate learning_rate;
  std::optional<double> target_accuracy;
  int eval_every = 1;
  ComputeScope compute_scope = ComputeScope::kFleet;
};

/// Everything a run needs, fully materialized from config and seed.
struct Simulation {
  LearnerKind learner = LinearRegression{};
  FleetDatasets train;
  Dataset<double> test;
  std::vector<DeviceProfile> profiles;
  ChannelConfig channel;
  PayloadSpec payload;
  SchedulerConfig scheduler;
  TrainerConfig trainer;
};

struct TrainerState {
  ModelParams<double> model;
  int round = 1;             // index of the next round to run
  double clock_s = 0.0;      // simulated seconds so far
  std::optional<double> rho;  // resolved weight for the trade-off policy
  Rng channel_rng;
  Rng scheduler_rng;
};

TrainerState initial_state(const Simulation& sim, const ModelParams<double>& model,
                           std::uint64_t seed);

struct RoundReport {
  int round = 0;
  std::vector<int> scheduled;       // one-based device ids, in selection order
  std::vector<double> conditional;  // q (or p) used for each pick
  std::vector<double> distribution;  // full p, only when recorded
  double lambda_star = 0.0;
  double rho = 0.0;
  bool uniform_fallback = false;
  bool padded = false;

  double learning_rate = 0.0;
  double broadcast_s = 0.0;
  double compute_s = 0.0;      // compute term charged this round
  double upload_s = 0.0;       // upload term charged this round
  double round_s = 0.0;
  double sim_seconds = 0.0;    // cumulative, after this round

  double loss_before = 0.0;    // L(w^t) on the training fleet
  double loss = 0.0;           // L(w^{t+1})
  double accuracy = 0.0;       // held-out, after the update; NaN when not evaluated
  double truth_norm = 0.0;     // ||g^t||
  double estimate_norm = 0.0;  // ||g_hat^t||
  double grad_norm_mean = 0.0;  // mean and max of ||g_k^t||
  double grad_norm_max = 0.0;
  // Single-device probabilistic rounds: E||g_hat||^2 under the distribution
  // used, and the (1/n) sum n_k ||g_k|| sqrt(((1-rho) T_k^U + lambda)/rho)
  // form of the same quantity for the trade-off policy. NaN otherwise.
  double second_moment = 0.0;
  double closed_form_second_moment = 0.0;
};

/// One communication round: broadcast, local gradients, importance report,
/// scheduling, upload, aggregation and update.
RoundReport run_round(TrainerState& state, const Simulation& sim);

/// Runs until the round budget is spent, or until the target accuracy holds
/// for `eval_every` consecutive evaluations.
std::vector<RoundReport> run_training(const Simulation& sim, const ModelParams<double>& initial,
                                      std::uint64_t seed);

std::string policy_name(Policy policy);
std::optional<Policy> parse_policy(const std::string& name);

}  // namespace feel
