#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "feel/config.hpp"
#include "feel/trainer.hpp"

namespace feel {

/// Data, placement and compute draws for one seed.
Simulation build_simulation(const ExperimentConfig& config, std::uint64_t seed);

ModelParams<double> initial_model(const Simulation& sim, double init_scale, std::uint64_t seed);

struct RunResult {
  std::uint64_t seed = 0;
  std::vector<RoundReport> rounds;
  double host_seconds = 0.0;

  double final_accuracy() const;
  /// Simulated time of the first evaluation at or above `target`.
  std::optional<double> time_to_accuracy(double target) const;
};

RunResult run_experiment(const ExperimentConfig& config, std::uint64_t seed);

/// Runs every seed on a worker pool capped by FEEL_SCHED_THREADS (or the
/// explicit `threads`). Results come back in seed-list order.
std::vector<RunResult> run_seeds(const ExperimentConfig& config,
                                 const std::vector<std::uint64_t>& seeds, int threads = 0);

int worker_count(int requested);

// Header: round,sim_seconds,loss,accuracy,scheduled,lambda_star
std::string rounds_csv(const std::vector<RoundReport>& rounds);
std::string rounds_detail_jsonl(const std::vector<RoundReport>& rounds);

/// Writes run_<seed>.csv per run (and .jsonl detail when enabled) plus summary.json.
void write_outputs(const ExperimentConfig& config, const std::vector<RunResult>& runs,
                   const std::filesystem::path& dir, const std::vector<std::string>& overrides);

double median(std::vector<double> values);  // +inf entries sort last

}  // namespace feel
