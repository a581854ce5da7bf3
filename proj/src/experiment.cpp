#include "feel/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <limits>
#include <numeric>
#include <thread>

#include <nlohmann/json.hpp>

namespace feel {

namespace {

std::string num(double v) {
  if (std::isnan(v)) {
    return "nan";
  }
  if (std::isinf(v)) {
    return v > 0 ? "inf" : "-inf";
  }
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

LearnerKind make_learner(const DataConfig& data) {
  if (data.learner == "svm") {
    return LeastSquaresSvm{data.svm_reg};
  }
  if (data.learner == "linreg") {
    return LinearRegression{};
  }
  if (data.learner == "logistic") {
    return MultinomialLogistic{data.classes};
  }
  throw ConfigError("field data.learner: expected svm|linreg|logistic, got '" + data.learner + "'");
}

PartitionScheme make_scheme(const DataConfig& data, int devices) {
  if (data.partition == "iid_uniform") {
    return IidUniform{};
  }
  if (data.partition == "two_class_split") {
    return TwoClassSplit{};
  }
  if (data.partition == "label_sorted_shards") {
    return LabelSortedShards{devices * data.shards_per_device, data.shards_per_device};
  }
  throw ConfigError("field data.partition: expected iid_uniform|label_sorted_shards|two_class_split");
}

void check_pairing(const DataConfig& data) {
  const bool ok = (data.learner == "svm" && data.task == "binary_margin") ||
                  (data.learner == "linreg" && data.task == "regression") ||
                  (data.learner == "logistic" && (data.task == "multiclass" || data.task == "idx"));
  if (!ok) {
    throw ConfigError("data.learner '" + data.learner + "' cannot train on data.task '" + data.task +
                      "'");
  }
}

}  // namespace

Simulation build_simulation(const ExperimentConfig& config, std::uint64_t seed) {
  const auto& fleet_cfg = config.fleet;
  const auto& data_cfg = config.data;
  if (fleet_cfg.devices < 1) {
    throw ConfigError("field fleet.devices: must be >= 1");
  }
  if (!(data_cfg.test_fraction >= 0.0 && data_cfg.test_fraction < 1.0)) {
    throw ConfigError("field data.test_fraction: must lie in [0, 1)");
  }
  if (!(fleet_cfg.flops_min > 0.0 && fleet_cfg.flops_max >= fleet_cfg.flops_min)) {
    throw ConfigError("fleet.flops_min/flops_max: need 0 < min <= max");
  }
  check_pairing(data_cfg);
  if (fleet_cfg.placement_seed < 0 || data_cfg.seed < 0) {
    throw ConfigError("fleet.placement_seed and data.seed must be >= 0");
  }
  const auto data_seed = data_cfg.seed > 0 ? static_cast<std::uint64_t>(data_cfg.seed) : seed;
  const auto placement_seed =
      fleet_cfg.placement_seed > 0 ? static_cast<std::uint64_t>(fleet_cfg.placement_seed) : seed;

  Simulation sim;
  sim.learner = make_learner(data_cfg);
  sim.channel = config.channel;
  sim.scheduler = config.scheduler;
  sim.trainer = config.trainer;

  std::vector<std::int64_t> sizes = fleet_cfg.sizes;
  if (!sizes.empty() && static_cast<int>(sizes.size()) != fleet_cfg.devices) {
    throw ConfigError("field fleet.sizes: needs one entry per device");
  }

  SampleList samples;
  std::int64_t train_count = 0;
  if (data_cfg.task == "idx") {
    samples = load_idx(data_cfg.idx_images, data_cfg.idx_labels, data_cfg.idx_subsample, data_seed);
    Rng rng = make_stream(data_seed, Stream::kData);
    std::shuffle(samples.begin(), samples.end(), rng);
    const auto total = static_cast<std::int64_t>(samples.size());
    train_count = total - static_cast<std::int64_t>(std::llround(total * data_cfg.test_fraction));
  } else {
    if (sizes.empty()) {
      sizes.assign(static_cast<std::size_t>(fleet_cfg.devices), fleet_cfg.samples_per_device);
    }
    train_count = std::accumulate(sizes.begin(), sizes.end(), std::int64_t{0});
    const auto test_count = static_cast<std::int64_t>(
        std::llround(double(train_count) * data_cfg.test_fraction / (1.0 - data_cfg.test_fraction)));
    SyntheticTask task;
    if (data_cfg.task == "regression") {
      task = RegressionTask{data_cfg.dim, data_cfg.noise_sd, data_seed};
    } else if (data_cfg.task == "binary_margin") {
      task = BinaryMarginTask{data_cfg.dim, data_cfg.separation, data_cfg.offset, data_cfg.bias};
    } else if (data_cfg.task == "multiclass") {
      task = MulticlassTask{data_cfg.dim, data_cfg.classes, data_cfg.separation, data_cfg.bias};
    } else {
      throw ConfigError("field data.task: expected binary_margin|regression|multiclass|idx");
    }
    samples = generate_synthetic(task, train_count + test_count, data_seed);
  }

  SampleList train(samples.begin(), samples.begin() + train_count);
  SampleList test(samples.begin() + train_count, samples.end());
  PartitionSpec spec{make_scheme(data_cfg, fleet_cfg.devices), data_seed,
                     data_cfg.task == "idx" ? fleet_cfg.sizes : sizes};
  if (std::holds_alternative<LabelSortedShards>(spec.scheme)) {
    spec.sizes.clear();
  }
  sim.train = partition(train, fleet_cfg.devices, spec);
  sim.test = Dataset<double>::from_samples(test);

  Rng placement = make_stream(placement_seed, Stream::kPlacement);
  const auto distances = place_devices(fleet_cfg.devices, sim.channel, placement);
  Rng compute = make_stream(placement_seed, Stream::kCompute);
  for (int k = 0; k < fleet_cfg.devices; ++k) {
    DeviceProfile profile;
    profile.id = k + 1;
    profile.samples = sim.train.sizes[static_cast<std::size_t>(k)];
    profile.flops =
        fleet_cfg.flops_min + uniform01(compute) * (fleet_cfg.flops_max - fleet_cfg.flops_min);
    profile.distance_km = distances[static_cast<std::size_t>(k)];
    profile.tx_power_dbm = sim.channel.device_tx_power_dbm;
    sim.profiles.push_back(profile);
  }

  const auto model_params = parameter_count(sim.learner, sim.train.per_device.front().dim());
  sim.payload.params = config.payload.params > 0 ? config.payload.params : model_params;
  sim.payload.bits_per_param = config.payload.bits;
  sim.payload.flops_per_sample = config.payload.flops_per_sample > 0.0
                                     ? config.payload.flops_per_sample
                                     : 2.0 * static_cast<double>(model_params);
  if (sim.payload.bits_per_param < 1) {
    throw ConfigError("field payload.bits: must be >= 1");
  }
  return sim;
}

ModelParams<double> initial_model(const Simulation& sim, double init_scale, std::uint64_t seed) {
  const auto size = parameter_count(sim.learner, sim.train.per_device.front().dim());
  ModelParams<double> model = ModelParams<double>::Zero(size);
  if (init_scale > 0.0) {
    Rng rng = make_stream(seed, Stream::kModelInit);
    std::normal_distribution<double> normal(0.0, init_scale);
    for (Eigen::Index i = 0; i < size; ++i) {
      model(i) = normal(rng);
    }
  }
  return model;
}

double RunResult::final_accuracy() const {
  for (auto it = rounds.rbegin(); it != rounds.rend(); ++it) {
    if (!std::isnan(it->accuracy)) {
      return it->accuracy;
    }
  }
  return std::numeric_limits<double>::quiet_NaN();
}

std::optional<double> RunResult::time_to_accuracy(double target) const {
  for (const auto& r : rounds) {
    if (!std::isnan(r.accuracy) && r.accuracy >= target) {
      return r.sim_seconds;
    }
  }
  return std::nullopt;
}

RunResult run_experiment(const ExperimentConfig& config, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  const auto sim = build_simulation(config, seed);
  RunResult result;
  result.seed = seed;
  result.rounds = run_training(sim, initial_model(sim, config.model_init_scale, seed), seed);
  result.host_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

int worker_count(int requested) {
  int workers = requested > 0 ? requested : static_cast<int>(std::thread::hardware_concurrency());
  if (const char* cap = std::getenv("FEEL_SCHED_THREADS")) {
    const int limit = std::atoi(cap);
    if (limit > 0) {
      workers = std::min(workers, limit);
    }
  }
  return std::max(workers, 1);
}

std::vector<RunResult> run_seeds(const ExperimentConfig& config,
                                 const std::vector<std::uint64_t>& seeds, int threads) {
  std::vector<RunResult> results(seeds.size());
  std::vector<std::exception_ptr> errors(seeds.size());
  std::atomic<std::size_t> next{0};
  const auto work = [&] {
    for (std::size_t i = next++; i < seeds.size(); i = next++) {
      try {
        results[i] = run_experiment(config, seeds[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto workers =
      std::min<std::size_t>(static_cast<std::size_t>(worker_count(threads)), seeds.size());
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back(work);
    }
  }
  for (const auto& e : errors) {
    if (e) {
      std::rethrow_exception(e);
    }
  }
  return results;
}

std::string rounds_csv(const std::vector<RoundReport>& rounds) {
  std::string out = "round,sim_seconds,loss,accuracy,scheduled,lambda_star\n";
  for (const auto& r : rounds) {
    std::string ids;
    for (std::size_t i = 0; i < r.scheduled.size(); ++i) {
      ids += (i ? ";" : "") + std::to_string(r.scheduled[i]);
    }
    out += std::to_string(r.round) + "," + num(r.sim_seconds) + "," + num(r.loss) + "," +
           num(r.accuracy) + "," + ids + "," + num(r.lambda_star) + "\n";
  }
  return out;
}

std::string rounds_detail_jsonl(const std::vector<RoundReport>& rounds) {
  std::string out;
  for (const auto& r : rounds) {
    nlohmann::ordered_json j;
    j["round"] = r.round;
    j["scheduled"] = r.scheduled;
    j["conditional"] = r.conditional;
    if (!r.distribution.empty()) {
      j["distribution"] = r.distribution;
    }
    j["lambda_star"] = r.lambda_star;
    j["rho"] = r.rho;
    j["uniform_fallback"] = r.uniform_fallback;
    j["padded"] = r.padded;
    j["learning_rate"] = r.learning_rate;
    j["broadcast_s"] = r.broadcast_s;
    j["compute_s"] = r.compute_s;
    j["upload_s"] = r.upload_s;
    j["round_s"] = r.round_s;
    j["sim_seconds"] = r.sim_seconds;
    j["loss"] = r.loss;
    j["accuracy"] = std::isnan(r.accuracy) ? nlohmann::ordered_json(nullptr)
                                           : nlohmann::ordered_json(r.accuracy);
    j["truth_norm"] = r.truth_norm;
    j["estimate_norm"] = r.estimate_norm;
    j["grad_norm_mean"] = r.grad_norm_mean;
    j["grad_norm_max"] = r.grad_norm_max;
    out += j.dump() + "\n";
  }
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  std::sort(values.begin(), values.end());
  const auto mid = values.size() / 2;
  if (values.size() % 2 == 1) {
    return values[mid];
  }
  return 0.5 * (values[mid - 1] + values[mid]);
}

void write_outputs(const ExperimentConfig& config, const std::vector<RunResult>& runs,
                   const std::filesystem::path& dir, const std::vector<std::string>& overrides) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json summary;
  char hash[17];
  std::snprintf(hash, sizeof(hash), "%016llx",
                static_cast<unsigned long long>(config_hash(config)));
  summary["config_hash"] = hash;
  summary["config"] = nlohmann::ordered_json::parse(to_config_json(config));
  summary["overrides"] = overrides;
  summary["seeds"] = nlohmann::ordered_json::array();
  summary["evaluation"] = {{"held_out_fraction", config.data.test_fraction},
                           {"eval_every", config.trainer.eval_every}};
  summary["runs"] = nlohmann::ordered_json::array();
  for (const auto& run : runs) {
    summary["seeds"].push_back(run.seed);
    const auto csv_name = "run_" + std::to_string(run.seed) + ".csv";
    std::ofstream(dir / csv_name, std::ios::binary) << rounds_csv(run.rounds);
    if (config.output.detail) {
      std::ofstream(dir / ("run_" + std::to_string(run.seed) + ".jsonl"), std::ios::binary)
          << rounds_detail_jsonl(run.rounds);
    }
    nlohmann::ordered_json entry;
    entry["seed"] = run.seed;
    entry["csv"] = csv_name;
    entry["rounds"] = run.rounds.size();
    entry["sim_seconds"] = run.rounds.empty() ? 0.0 : run.rounds.back().sim_seconds;
    entry["final_loss"] = run.rounds.empty() ? 0.0 : run.rounds.back().loss;
    const double acc = run.final_accuracy();
    entry["final_accuracy"] = std::isnan(acc) ? nlohmann::ordered_json(nullptr)
                                              : nlohmann::ordered_json(acc);
    if (config.trainer.target_accuracy) {
      const auto t = run.time_to_accuracy(*config.trainer.target_accuracy);
      entry["time_to_target_s"] = t ? nlohmann::ordered_json(*t) : nlohmann::ordered_json(nullptr);
    }
    entry["host_seconds"] = run.host_seconds;
    summary["runs"].push_back(entry);
  }
  std::ofstream(dir / "summary.json", std::ios::binary) << summary.dump(2) << "\n";
}

}  // namespace feel
