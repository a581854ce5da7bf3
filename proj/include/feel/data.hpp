#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "feel/learners.hpp"
#include "feel/random.hpp"

namespace feel {

using Sample = LabeledSample<double>;
using SampleList = std::vector<Sample>;

struct FleetDatasets {
  std::vector<Dataset<double>> per_device;  // device k has id k + 1
  std::vector<std::int64_t> sizes;          // n_k
  std::int64_t total = 0;                   // n

  std::size_t device_count() const { return per_device.size(); }
  Dataset<double> pooled() const;
};

// y = w_true'x + N(0, noise_sd^2), x ~ N(0, I). w_true is drawn from its own seed.
struct RegressionTask {
  int dim = 1;
  double noise_sd = 0.0;
  std::uint64_t true_w_seed = 0;
};

// Labels alternate +1, -1. Along the first free coordinate each sample sits at
// offset + y*(separation/2 + |z|), so the classes are separated by a slab
// of width `separation`. Every coordinate carries the shared `offset`; with
// `bias` a constant-1 feature is prepended so an affine separator exists.
struct BinaryMarginTask {
  int dim = 2;
  double separation = 2.0;
  double offset = 0.0;
  bool bias = false;
};

// Gaussian blobs around random centres, labels 0..classes-1.
struct MulticlassTask {
  int dim = 2;
  int classes = 10;
  double separation = 3.0;
  bool bias = false;
};

using SyntheticTask = std::variant<RegressionTask, BinaryMarginTask, MulticlassTask>;

SampleList generate_synthetic(const SyntheticTask& task, std::int64_t total_n, std::uint64_t seed);

struct IidUniform {};
struct LabelSortedShards {
  int shard_count = 60;
  int shards_per_device = 2;
};
struct TwoClassSplit {};

using PartitionScheme = std::variant<IidUniform, LabelSortedShards, TwoClassSplit>;

struct PartitionSpec {
  PartitionScheme scheme = IidUniform{};
  std::uint64_t seed = 0;
  // Optional per-device sizes; must sum to the sample count when given.
  std::vector<std::int64_t> sizes;
};

FleetDatasets partition(const SampleList& samples, int device_count, const PartitionSpec& spec);

/// Reads an IDX image/label pair (MNIST layout). Pixels are scaled to [0, 1].
/// subsample_n == 0 or >= the file count keeps every sample in file order;
/// otherwise a seeded uniform subset is returned in file order.
SampleList load_idx(const std::filesystem::path& images_path,
                    const std::filesystem::path& labels_path, std::int64_t subsample_n,
                    std::uint64_t seed);

// Writers for the same format; used to build fixtures.
void write_idx_images(const std::filesystem::path& path, int rows, int cols,
                      std::span<const std::uint8_t> pixels);
void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels);

}  // namespace feel
