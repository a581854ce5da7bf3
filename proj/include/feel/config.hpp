#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "feel/trainer.hpp"

namespace feel {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FleetConfig {
  int devices = 30;
  std::int64_t samples_per_device = 40;
  std::vector<std::int64_t> sizes;  // overrides samples_per_device when set
  double flops_min = 1e9;
  double flops_max = 1e9;
  std::int64_t placement_seed = 0;  // 0: the run seed
};

struct DataConfig {
  std::string task = "binary_margin";  // binary_margin | regression | multiclass | idx
  std::int64_t seed = 0;               // samples and partition; 0: the run seed
  std::string learner = "svm";         // svm | linreg | logistic
  int dim = 10;
  double noise_sd = 0.1;
  double separation = 1.0;
  double offset = 0.0;
  bool bias = true;
  int classes = 10;
  double svm_reg = 0.0;
  std::string partition = "two_class_split";  // iid_uniform | label_sorted_shards | two_class_split
  int shards_per_device = 2;
  double test_fraction = 0.2;
  std::string idx_images;
  std::string idx_labels;
  std::int64_t idx_subsample = 0;
};

struct PayloadConfig {
  std::int64_t params = 0;  // 0: the model's own parameter count
  int bits = 16;
  double flops_per_sample = 0.0;  // 0: 2 FLOPs per parameter
};

struct OutputConfig {
  std::string dir = "out";
  bool detail = false;  // per-round JSON lines with the full scheduling record
};

struct ExperimentConfig {
  FleetConfig fleet;
  ChannelConfig channel;
  PayloadConfig payload;
  SchedulerConfig scheduler;
  TrainerConfig trainer;
  DataConfig data;
  OutputConfig output;
  std::vector<std::uint64_t> seeds = {1};
  double model_init_scale = 0.0;

  bool operator==(const ExperimentConfig& other) const;
};

/// Nested key/value text:
///
///   # comment
///   [channel]
///   bandwidth_hz = 1e6
///
/// Every key is also reachable as section.key for overrides.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config_json(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

std::string to_config_text(const ExperimentConfig& config);
std::string to_config_json(const ExperimentConfig& config);

/// Applies one `section.key=value` override.
void apply_override(ExperimentConfig& config, const std::string& assignment);

std::vector<std::string> config_keys();

/// FNV-1a of the canonical text form.
std::uint64_t config_hash(const ExperimentConfig& config);

}  // namespace feel
