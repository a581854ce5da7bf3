#include "feel/data.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <string>

namespace feel {

Dataset<double> FleetDatasets::pooled() const {
  Dataset<double> out;
  if (per_device.empty()) {
    return out;
  }
  out.features.resize(total, per_device.front().dim());
  out.labels.resize(total);
  Eigen::Index row = 0;
  for (const auto& data : per_device) {
    out.features.middleRows(row, data.size()) = data.features;
    out.labels.segment(row, data.size()) = data.labels;
    row += data.size();
  }
  return out;
}

namespace {

Eigen::VectorXd gaussian_vector(Rng& rng, Eigen::Index dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(dim);
  for (Eigen::Index i = 0; i < dim; ++i) {
    v(i) = normal(rng);
  }
  return v;
}

Eigen::VectorXd with_bias(const Eigen::VectorXd& x, bool bias) {
  if (!bias) {
    return x;
  }
  Eigen::VectorXd out(x.size() + 1);
  out << 1.0, x;
  return out;
}

struct Generator {
  std::int64_t total_n;
  Rng& rng;

  SampleList operator()(const RegressionTask& task) const {
    if (task.dim < 1) {
      throw InvalidInput("regression task needs dim >= 1");
    }
    Rng w_rng(mix_seed(task.true_w_seed, 0));
    const Eigen::VectorXd w_true = gaussian_vector(w_rng, task.dim);
    std::normal_distribution<double> noise(0.0, 1.0);
    SampleList out;
    out.reserve(static_cast<std::size_t>(total_n));
    for (std::int64_t i = 0; i < total_n; ++i) {
      Sample s{gaussian_vector(rng, task.dim), 0.0};
      s.label = w_true.dot(s.features) + task.noise_sd * noise(rng);
      out.push_back(std::move(s));
    }
    return out;
  }

  SampleList operator()(const BinaryMarginTask& task) const {
    if (task.dim < 1 || task.separation < 0) {
      throw InvalidInput("binary margin task needs dim >= 1 and separation >= 0");
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    SampleList out;
    out.reserve(static_cast<std::size_t>(total_n));
    for (std::int64_t i = 0; i < total_n; ++i) {
      const double label = i % 2 == 0 ? 1.0 : -1.0;
      Eigen::VectorXd x = gaussian_vector(rng, task.dim).array() + task.offset;
      x(0) = task.offset + label * (0.5 * task.separation + std::abs(normal(rng)));
      out.push_back({with_bias(x, task.bias), label});
    }
    return out;
  }

  SampleList operator()(const MulticlassTask& task) const {
    if (task.dim < 1 || task.classes < 2) {
      throw InvalidInput("multiclass task needs dim >= 1 and classes >= 2");
    }
    std::vector<Eigen::VectorXd> centres;
    for (int c = 0; c < task.classes; ++c) {
      centres.push_back(task.separation * gaussian_vector(rng, task.dim));
    }
    SampleList out;
    out.reserve(static_cast<std::size_t>(total_n));
    for (std::int64_t i = 0; i < total_n; ++i) {
      const auto c = static_cast<int>(i % task.classes);
      out.push_back({with_bias(centres[c] + gaussian_vector(rng, task.dim), task.bias),
                     static_cast<double>(c)});
    }
    return out;
  }
};

std::vector<std::int64_t> even_sizes(std::int64_t n, int parts) {
  std::vector<std::int64_t> sizes(static_cast<std::size_t>(parts), n / parts);
  for (std::int64_t r = 0; r < n % parts; ++r) {
    ++sizes[static_cast<std::size_t>(r)];
  }
  return sizes;
}

FleetDatasets assemble(const SampleList& samples,
                       const std::vector<std::vector<std::size_t>>& assignment) {
  FleetDatasets fleet;
  for (const auto& indices : assignment) {
    SampleList part;
    part.reserve(indices.size());
    for (auto idx : indices) {
      part.push_back(samples[idx]);
    }
    if (part.empty()) {
      throw InvalidInput("partition left a device without samples");
    }
    fleet.per_device.push_back(Dataset<double>::from_samples(part));
    fleet.sizes.push_back(static_cast<std::int64_t>(part.size()));
    fleet.total += static_cast<std::int64_t>(part.size());
  }
  return fleet;
}

std::vector<std::size_t> label_sorted_order(const SampleList& samples) {
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return samples[a].label < samples[b].label;
  });
  return order;
}

}  // namespace

SampleList generate_synthetic(const SyntheticTask& task, std::int64_t total_n, std::uint64_t seed) {
  if (total_n < 1) {
    throw InvalidInput("generate_synthetic: total_n must be >= 1");
  }
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(Stream::kData)));
  return std::visit(Generator{total_n, rng}, task);
}

FleetDatasets partition(const SampleList& samples, int device_count, const PartitionSpec& spec) {
  if (device_count < 1) {
    throw InvalidInput("partition: need at least one device");
  }
  const auto n = static_cast<std::int64_t>(samples.size());
  const auto k_count = static_cast<std::size_t>(device_count);
  if (!spec.sizes.empty()) {
    if (spec.sizes.size() != k_count) {
      throw InvalidInput("partition: sizes has " + std::to_string(spec.sizes.size()) +
                         " entries for " + std::to_string(device_count) + " devices");
    }
    if (std::any_of(spec.sizes.begin(), spec.sizes.end(), [](auto s) { return s < 1; })) {
      throw InvalidInput("partition: every device size must be >= 1");
    }
  }
  Rng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(Stream::kPartition)));
  std::vector<std::vector<std::size_t>> assignment(k_count);

  if (std::holds_alternative<IidUniform>(spec.scheme)) {
    const auto sizes = spec.sizes.empty() ? even_sizes(n, device_count) : spec.sizes;
    if (std::accumulate(sizes.begin(), sizes.end(), std::int64_t{0}) != n || n < device_count) {
      throw InvalidInput("partition: iid split needs sizes summing to the sample count (" +
                         std::to_string(n) + ")");
    }
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t cursor = 0;
    for (std::size_t k = 0; k < k_count; ++k) {
      for (std::int64_t i = 0; i < sizes[k]; ++i) {
        assignment[k].push_back(order[cursor++]);
      }
    }
    return assemble(samples, assignment);
  }

  if (const auto* shards = std::get_if<LabelSortedShards>(&spec.scheme)) {
    if (shards->shards_per_device < 1 ||
        shards->shard_count != device_count * shards->shards_per_device) {
      throw InvalidInput("partition: shard_count must equal devices * shards_per_device");
    }
    if (!spec.sizes.empty()) {
      throw InvalidInput("partition: label_sorted_shards deals equal shards; sizes not allowed");
    }
    if (n < shards->shard_count) {
      throw InvalidInput("partition: fewer samples than shards");
    }
    const auto order = label_sorted_order(samples);
    const auto shard_sizes = even_sizes(n, shards->shard_count);
    std::vector<std::vector<std::size_t>> shard_members(shard_sizes.size());
    std::size_t cursor = 0;
    for (std::size_t s = 0; s < shard_sizes.size(); ++s) {
      for (std::int64_t i = 0; i < shard_sizes[s]; ++i) {
        shard_members[s].push_back(order[cursor++]);
      }
    }
    std::vector<std::size_t> deal(shard_members.size());
    std::iota(deal.begin(), deal.end(), std::size_t{0});
    std::shuffle(deal.begin(), deal.end(), rng);
    for (std::size_t i = 0; i < deal.size(); ++i) {
      auto& target = assignment[i % k_count];
      const auto& members = shard_members[deal[i]];
      target.insert(target.end(), members.begin(), members.end());
    }
    return assemble(samples, assignment);
  }

  // Two-class split: device k holds only samples of class (k mod C), where
  // classes are taken in ascending label order.
  std::map<double, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    by_class[samples[i].label].push_back(i);
  }
  if (by_class.size() < 2) {
    throw InvalidInput("partition: two_class_split needs at least two classes");
  }
  const auto class_count = by_class.size();
  std::vector<std::vector<std::size_t>> pools;
  for (auto& [label, members] : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    pools.push_back(members);
  }
  for (std::size_t c = 0; c < class_count; ++c) {
    std::vector<std::size_t> owners;
    for (std::size_t k = c; k < k_count; k += class_count) {
      owners.push_back(k);
    }
    const auto& pool = pools[c];
    if (owners.empty()) {
      throw InvalidInput("partition: more classes than devices for two_class_split");
    }
    std::vector<std::int64_t> sizes;
    if (spec.sizes.empty()) {
      sizes = even_sizes(static_cast<std::int64_t>(pool.size()), static_cast<int>(owners.size()));
    } else {
      for (auto k : owners) {
        sizes.push_back(spec.sizes[k]);
      }
    }
    const auto wanted = std::accumulate(sizes.begin(), sizes.end(), std::int64_t{0});
    if (wanted != static_cast<std::int64_t>(pool.size())) {
      throw InvalidInput("partition: class " + std::to_string(c) + " has " +
                         std::to_string(pool.size()) + " samples but its devices need " +
                         std::to_string(wanted));
    }
    std::size_t cursor = 0;
    for (std::size_t j = 0; j < owners.size(); ++j) {
      for (std::int64_t i = 0; i < sizes[j]; ++i) {
        assignment[owners[j]].push_back(pool[cursor++]);
      }
    }
  }
  return assemble(samples, assignment);
}

namespace {

std::uint32_t read_be32(std::istream& in, const std::filesystem::path& path, const char* what) {
  std::array<unsigned char, 4> bytes{};
  if (!in.read(reinterpret_cast<char*>(bytes.data()), 4)) {
    throw FormatError(path.string() + ": truncated header (" + what + ")");
  }
  return (std::uint32_t{bytes[0]} << 24) | (std::uint32_t{bytes[1]} << 16) |
         (std::uint32_t{bytes[2]} << 8) | std::uint32_t{bytes[3]};
}

void write_be32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> bytes{static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                                  static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(bytes.data(), 4);
}

std::vector<std::uint8_t> read_payload(std::istream& in, const std::filesystem::path& path,
                                       std::size_t count) {
  std::vector<std::uint8_t> data(count);
  if (count > 0 && !in.read(reinterpret_cast<char*>(data.data()),
                            static_cast<std::streamsize>(count))) {
    throw FormatError(path.string() + ": truncated payload, expected " + std::to_string(count) +
                      " bytes");
  }
  return data;
}

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

}  // namespace

SampleList load_idx(const std::filesystem::path& images_path,
                    const std::filesystem::path& labels_path, std::int64_t subsample_n,
                    std::uint64_t seed) {
  std::ifstream images(images_path, std::ios::binary);
  if (!images) {
    throw FormatError(images_path.string() + ": cannot open");
  }
  std::ifstream labels(labels_path, std::ios::binary);
  if (!labels) {
    throw FormatError(labels_path.string() + ": cannot open");
  }

  const auto image_magic = read_be32(images, images_path, "magic");
  if (image_magic != kImagesMagic) {
    throw FormatError(images_path.string() + ": bad magic for an IDX image file");
  }
  const auto image_count = read_be32(images, images_path, "count");
  const auto rows = read_be32(images, images_path, "rows");
  const auto cols = read_be32(images, images_path, "cols");

  const auto label_magic = read_be32(labels, labels_path, "magic");
  if (label_magic != kLabelsMagic) {
    throw FormatError(labels_path.string() + ": bad magic for an IDX label file");
  }
  const auto label_count = read_be32(labels, labels_path, "count");
  if (label_count != image_count) {
    throw FormatError(labels_path.string() + ": holds " + std::to_string(label_count) +
                      " labels but " + images_path.string() + " holds " +
                      std::to_string(image_count) + " images");
  }

  const std::size_t pixels_per_image = std::size_t{rows} * cols;
  const auto pixels = read_payload(images, images_path, pixels_per_image * image_count);
  const auto label_bytes = read_payload(labels, labels_path, label_count);

  std::vector<std::size_t> keep(image_count);
  std::iota(keep.begin(), keep.end(), std::size_t{0});
  if (subsample_n > 0 && subsample_n < static_cast<std::int64_t>(image_count)) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(Stream::kData)));
    std::shuffle(keep.begin(), keep.end(), rng);
    keep.resize(static_cast<std::size_t>(subsample_n));
    std::sort(keep.begin(), keep.end());
  }

  SampleList out;
  out.reserve(keep.size());
  for (auto i : keep) {
    Eigen::VectorXd x(static_cast<Eigen::Index>(pixels_per_image));
    for (std::size_t p = 0; p < pixels_per_image; ++p) {
      x(static_cast<Eigen::Index>(p)) = pixels[i * pixels_per_image + p] / 255.0;
    }
    out.push_back({std::move(x), static_cast<double>(label_bytes[i])});
  }
  return out;
}

void write_idx_images(const std::filesystem::path& path, int rows, int cols,
                      std::span<const std::uint8_t> pixels) {
  const auto per_image = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  if (per_image == 0 || pixels.size() % per_image != 0) {
    throw InvalidInput("write_idx_images: pixel count is not a multiple of rows*cols");
  }
  std::ofstream out(path, std::ios::binary);
  write_be32(out, kImagesMagic);
  write_be32(out, static_cast<std::uint32_t>(pixels.size() / per_image));
  write_be32(out, static_cast<std::uint32_t>(rows));
  write_be32(out, static_cast<std::uint32_t>(cols));
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels) {
  std::ofstream out(path, std::ios::binary);
  write_be32(out, kLabelsMagic);
  write_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

}  // namespace feel
