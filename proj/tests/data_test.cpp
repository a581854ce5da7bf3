#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <map>
#include <set>
#include <string>

#include "feel/data.hpp"

namespace {

namespace fs = std::filesystem;

std::multiset<std::vector<double>> as_multiset(const feel::SampleList& samples) {
  std::multiset<std::vector<double>> out;
  for (const auto& s : samples) {
    std::vector<double> row(s.features.data(), s.features.data() + s.features.size());
    row.push_back(s.label);
    out.insert(row);
  }
  return out;
}

std::multiset<std::vector<double>> as_multiset(const feel::FleetDatasets& fleet) {
  std::multiset<std::vector<double>> out;
  for (const auto& d : fleet.per_device) {
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      std::vector<double> row(d.features.cols());
      for (Eigen::Index j = 0; j < d.features.cols(); ++j) {
        row[std::size_t(j)] = d.features(i, j);
      }
      row.push_back(d.labels(i));
      out.insert(row);
    }
  }
  return out;
}

std::set<double> labels_of(const feel::Dataset<double>& d) {
  return {d.labels.data(), d.labels.data() + d.labels.size()};
}

TEST(Data, IidSplitConservesSamples) {
  const auto samples = feel::generate_synthetic(feel::RegressionTask{3, 0.1, 5}, 10, 1);
  const auto fleet = feel::partition(samples, 2, {feel::IidUniform{}, 4, {}});
  ASSERT_EQ(fleet.device_count(), 2u);
  EXPECT_EQ(fleet.sizes, (std::vector<std::int64_t>{5, 5}));
  EXPECT_EQ(fleet.total, 10);
  EXPECT_EQ(as_multiset(fleet), as_multiset(samples));
}

TEST(Data, ShardsHoldAtMostTwoLabels) {
  feel::MulticlassTask task;
  task.dim = 4;
  task.classes = 10;
  const auto samples = feel::generate_synthetic(task, 600, 2);
  const auto fleet = feel::partition(samples, 30, {feel::LabelSortedShards{60, 2}, 9, {}});
  ASSERT_EQ(fleet.device_count(), 30u);
  for (const auto& d : fleet.per_device) {
    EXPECT_LE(labels_of(d).size(), 2u);
  }
  EXPECT_EQ(as_multiset(fleet), as_multiset(samples));
}

TEST(Data, TwoClassSplitGivesOneClassPerDevice) {
  feel::BinaryMarginTask task;
  task.dim = 3;
  const auto samples = feel::generate_synthetic(task, 120, 3);
  const auto fleet = feel::partition(samples, 6, {feel::TwoClassSplit{}, 1, {}});
  std::set<double> seen;
  for (const auto& d : fleet.per_device) {
    const auto labels = labels_of(d);
    ASSERT_EQ(labels.size(), 1u);
    seen.insert(*labels.begin());
  }
  EXPECT_EQ(seen, (std::set<double>{-1.0, 1.0}));
}

TEST(Data, PartitionRejectsTooFewSamples) {
  const auto samples = feel::generate_synthetic(feel::RegressionTask{2, 0.0, 1}, 3, 1);
  EXPECT_THROW(feel::partition(samples, 5, {feel::IidUniform{}, 1, {}}), feel::InvalidInput);
  EXPECT_THROW(feel::generate_synthetic(feel::RegressionTask{2, 0.0, 1}, 0, 1), feel::InvalidInput);
}

TEST(Data, NoiselessRegressionRecoversTrueWeights) {
  const feel::RegressionTask task{5, 0.0, 42};
  const auto a = feel::generate_synthetic(task, 200, 7);
  const auto b = feel::generate_synthetic(task, 50, 8);  // same w_true, other samples
  const auto da = feel::Dataset<double>::from_samples(a);
  const auto db = feel::Dataset<double>::from_samples(b);
  const Eigen::VectorXd wa = da.features.colPivHouseholderQr().solve(da.labels);
  const Eigen::VectorXd wb = db.features.colPivHouseholderQr().solve(db.labels);
  EXPECT_LT((da.features * wa - da.labels).lpNorm<Eigen::Infinity>(), 1e-8);
  EXPECT_LT((wa - wb).lpNorm<Eigen::Infinity>(), 1e-8);
}

TEST(Data, SameSeedSameSamples) {
  feel::MulticlassTask task;
  const auto a = feel::generate_synthetic(task, 64, 11);
  const auto b = feel::generate_synthetic(task, 64, 11);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].label, b[i].label);
    EXPECT_EQ(0, std::memcmp(a[i].features.data(), b[i].features.data(),
                             sizeof(double) * std::size_t(a[i].features.size())));
  }
}

TEST(Data, SeparableBinaryTaskIsLearnedExactly) {
  feel::BinaryMarginTask task;
  task.dim = 2;
  task.separation = 2.0;
  task.bias = true;
  const auto d = feel::Dataset<double>::from_samples(feel::generate_synthetic(task, 100, 5));
  Eigen::VectorXd w = Eigen::VectorXd::Zero(d.dim());
  for (int it = 0; it < 5000; ++it) {
    w -= 0.5 * feel::local_gradient<double>(w, d, feel::LeastSquaresSvm{}).values();
  }
  EXPECT_EQ(feel::accuracy<double>(w, d, feel::LeastSquaresSvm{}), 1.0);
}

class IdxFiles : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("feel_idx_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::create_directories(dir_);
    images_ = dir_ / "images.idx";
    labels_ = dir_ / "labels.idx";
  }
  void TearDown() override { fs::remove_all(dir_); }

  void write(int count, int label_count) {
    std::vector<std::uint8_t> pixels;
    for (int i = 0; i < count * 4; ++i) {
      pixels.push_back(static_cast<std::uint8_t>(i * 20));
    }
    std::vector<std::uint8_t> labels;
    for (int i = 0; i < label_count; ++i) {
      labels.push_back(static_cast<std::uint8_t>(i));
    }
    feel::write_idx_images(images_, 2, 2, pixels);
    feel::write_idx_labels(labels_, labels);
  }

  template <typename Fn>
  std::string error_of(Fn&& fn) {
    try {
      fn();
    } catch (const feel::FormatError& e) {
      return e.what();
    }
    return {};
  }

  fs::path dir_;
  fs::path images_;
  fs::path labels_;
};

TEST_F(IdxFiles, RoundTrip) {
  write(3, 3);
  const auto samples = feel::load_idx(images_, labels_, 0, 1);
  ASSERT_EQ(samples.size(), 3u);
  EXPECT_EQ(samples[2].label, 2.0);
  EXPECT_EQ(samples[0].features.size(), 4);
  EXPECT_DOUBLE_EQ(samples[1].features(0), 80.0 / 255.0);

  const auto full = feel::load_idx(images_, labels_, 3, 77);
  ASSERT_EQ(full.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(full[i].label, samples[i].label);
  }
}

TEST_F(IdxFiles, BadMagicNamesTheFile) {
  write(3, 3);
  const auto msg = error_of([&] { feel::load_idx(labels_, labels_, 0, 1); });
  EXPECT_NE(msg.find(labels_.string()), std::string::npos) << msg;
  EXPECT_NE(msg.find("magic"), std::string::npos) << msg;
}

TEST_F(IdxFiles, TruncatedPayload) {
  write(3, 3);
  fs::resize_file(images_, fs::file_size(images_) - 2);
  const auto msg = error_of([&] { feel::load_idx(images_, labels_, 0, 1); });
  EXPECT_NE(msg.find(images_.string()), std::string::npos) << msg;
  EXPECT_NE(msg.find("truncated"), std::string::npos) << msg;
}

TEST_F(IdxFiles, CountMismatch) {
  write(3, 2);
  const auto msg = error_of([&] { feel::load_idx(images_, labels_, 0, 1); });
  EXPECT_NE(msg.find(labels_.string()), std::string::npos) << msg;
}

}  // namespace
