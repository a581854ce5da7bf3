#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "feel/types.hpp"

namespace feel {

template <typename Scalar>
struct LabeledSample {
  VectorX<Scalar> features;
  Scalar label = Scalar(0);  // real target, +-1, or class index
};

/// Samples stored row-wise: features is n x d, labels has length n.
template <typename Scalar>
struct Dataset {
  MatrixX<Scalar> features;
  VectorX<Scalar> labels;

  Eigen::Index size() const { return labels.size(); }
  Eigen::Index dim() const { return features.cols(); }
  bool empty() const { return labels.size() == 0; }

  LabeledSample<Scalar> sample(Eigen::Index i) const {
    return {features.row(i).transpose(), labels(i)};
  }

  static Dataset from_samples(std::span<const LabeledSample<Scalar>> samples) {
    Dataset out;
    if (samples.empty()) {
      return out;
    }
    const auto d = samples.front().features.size();
    out.features.resize(static_cast<Eigen::Index>(samples.size()), d);
    out.labels.resize(static_cast<Eigen::Index>(samples.size()));
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (samples[i].features.size() != d) {
        throw InvalidInput("samples have inconsistent feature dimensions");
      }
      out.features.row(static_cast<Eigen::Index>(i)) = samples[i].features.transpose();
      out.labels(static_cast<Eigen::Index>(i)) = samples[i].label;
    }
    return out;
  }
};

/// Hinge loss 0.5*max(0, 1 - y w'x) + reg/2 ||w||^2. Labels are +-1.
struct LeastSquaresSvm {
  double reg = 0.0;
};

/// 0.5 (y - w'x)^2.
struct LinearRegression {};

/// Softmax cross-entropy over `classes` outputs. Stands in for the neural
/// network row of the usual loss table; labels are class indices.
struct MultinomialLogistic {
  int classes = 2;
};

using LearnerKind = std::variant<LeastSquaresSvm, LinearRegression, MultinomialLogistic>;

inline std::string learner_name(const LearnerKind& kind) {
  struct Visitor {
    std::string operator()(const LeastSquaresSvm&) const { return "svm"; }
    std::string operator()(const LinearRegression&) const { return "linreg"; }
    std::string operator()(const MultinomialLogistic&) const { return "logistic"; }
  };
  return std::visit(Visitor{}, kind);
}

inline Eigen::Index parameter_count(const LearnerKind& kind, Eigen::Index dim) {
  if (const auto* logistic = std::get_if<MultinomialLogistic>(&kind)) {
    return static_cast<Eigen::Index>(logistic->classes) * dim;
  }
  return dim;
}

namespace detail {

template <typename Scalar>
void check_dims(const ModelParams<Scalar>& model, const Dataset<Scalar>& data,
                const LearnerKind& kind) {
  if (parameter_count(kind, data.dim()) != model.size()) {
    throw InvalidInput("model has " + std::to_string(model.size()) +
                       " parameters but the data implies " +
                       std::to_string(parameter_count(kind, data.dim())));
  }
  if (data.features.rows() != data.labels.size()) {
    throw InvalidInput("feature rows and label count differ");
  }
}

template <typename Scalar>
using RowMajorMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
Eigen::Map<const RowMajorMatrix<Scalar>> as_weight_matrix(const ModelParams<Scalar>& model,
                                                          int classes, Eigen::Index dim) {
  return Eigen::Map<const RowMajorMatrix<Scalar>>(model.data(), classes, dim);
}

// Per-sample losses for every row of `data`.
template <typename Scalar>
VectorX<Scalar> per_sample_losses(const ModelParams<Scalar>& model, const Dataset<Scalar>& data,
                                  const LearnerKind& kind) {
  check_dims(model, data, kind);
  if (const auto* svm = std::get_if<LeastSquaresSvm>(&kind)) {
    const VectorX<Scalar> margins = data.labels.cwiseProduct(data.features * model);
    const Scalar reg_term = Scalar(0.5) * Scalar(svm->reg) * model.squaredNorm();
    return (Scalar(0.5) * (Scalar(1) - margins.array()).max(Scalar(0)) + reg_term).matrix();
  }
  if (std::holds_alternative<LinearRegression>(kind)) {
    const VectorX<Scalar> residual = data.labels - data.features * model;
    return (Scalar(0.5) * residual.array().square()).matrix();
  }
  const int classes = std::get<MultinomialLogistic>(kind).classes;
  const auto weights = as_weight_matrix(model, classes, data.dim());
  const MatrixX<Scalar> logits = data.features * weights.transpose();
  VectorX<Scalar> out(data.size());
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    const auto label = static_cast<Eigen::Index>(data.labels(i));
    if (label < 0 || label >= classes) {
      throw InvalidInput("class label out of range");
    }
    const Scalar top = logits.row(i).maxCoeff();
    const Scalar log_norm = top + std::log((logits.row(i).array() - top).exp().sum());
    out(i) = log_norm - logits(i, label);
  }
  return out;
}

}  // namespace detail

template <typename Scalar>
Scalar sample_loss(const ModelParams<Scalar>& model, const LabeledSample<Scalar>& sample,
                   const LearnerKind& kind) {
  Dataset<Scalar> single;
  single.features = sample.features.transpose();
  single.labels = VectorX<Scalar>::Constant(1, sample.label);
  return detail::per_sample_losses(model, single, kind)(0);
}

/// Mean sample loss over one device's dataset.
template <typename Scalar>
Scalar local_loss(const ModelParams<Scalar>& model, const Dataset<Scalar>& data,
                  const LearnerKind& kind) {
  if (data.empty()) {
    throw InvalidInput("local_loss: empty dataset");
  }
  return detail::per_sample_losses(model, data, kind).mean();
}

/// Sample-size weighted mean of the local losses.
template <typename Scalar>
Scalar global_loss(const ModelParams<Scalar>& model, std::span<const Dataset<Scalar>> fleet,
                   const LearnerKind& kind) {
  Scalar weighted = 0;
  Eigen::Index total = 0;
  for (const auto& data : fleet) {
    if (data.empty()) {
      continue;
    }
    weighted += detail::per_sample_losses(model, data, kind).sum();
    total += data.size();
  }
  if (total == 0) {
    throw InvalidInput("global_loss: every dataset is empty");
  }
  return weighted / Scalar(total);
}

/// Exact gradient of local_loss. The hinge contributes nothing at margin 1.
template <typename Scalar>
GradientVector<Scalar> local_gradient(const ModelParams<Scalar>& model,
                                      const Dataset<Scalar>& data, const LearnerKind& kind) {
  if (data.empty()) {
    throw InvalidInput("local_gradient: empty dataset");
  }
  detail::check_dims(model, data, kind);
  const auto n = Scalar(data.size());

  if (const auto* svm = std::get_if<LeastSquaresSvm>(&kind)) {
    const VectorX<Scalar> margins = data.labels.cwiseProduct(data.features * model);
    const VectorX<Scalar> active =
        (margins.array() < Scalar(1)).select(data.labels, VectorX<Scalar>::Zero(data.size()));
    return GradientVector<Scalar>(-(data.features.transpose() * active) / (Scalar(2) * n) +
                                  Scalar(svm->reg) * model);
  }
  if (std::holds_alternative<LinearRegression>(kind)) {
    const VectorX<Scalar> residual = data.labels - data.features * model;
    return GradientVector<Scalar>(-(data.features.transpose() * residual) / n);
  }

  const int classes = std::get<MultinomialLogistic>(kind).classes;
  const auto weights = detail::as_weight_matrix(model, classes, data.dim());
  MatrixX<Scalar> probs = data.features * weights.transpose();
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    const Scalar top = probs.row(i).maxCoeff();
    probs.row(i) = (probs.row(i).array() - top).exp().matrix();
    probs.row(i) /= probs.row(i).sum();
    const auto label = static_cast<Eigen::Index>(data.labels(i));
    if (label < 0 || label >= classes) {
      throw InvalidInput("class label out of range");
    }
    probs(i, label) -= Scalar(1);
  }
  detail::RowMajorMatrix<Scalar> grad = probs.transpose() * data.features / n;
  return GradientVector<Scalar>(Eigen::Map<const VectorX<Scalar>>(grad.data(), grad.size()));
}

/// (1/n) sum_k n_k g_k.
template <typename Scalar>
GradientVector<Scalar> ground_truth_global_gradient(std::span<const GradientVector<Scalar>> local,
                                                    std::span<const std::int64_t> sizes) {
  if (local.empty() || local.size() != sizes.size()) {
    throw InvalidInput("ground_truth_global_gradient: gradient/size count mismatch");
  }
  const auto dim = local.front().size();
  VectorX<Scalar> acc = VectorX<Scalar>::Zero(dim);
  std::int64_t total = 0;
  for (std::size_t k = 0; k < local.size(); ++k) {
    if (local[k].size() != dim) {
      throw InvalidInput("ground_truth_global_gradient: gradient length mismatch");
    }
    if (sizes[k] <= 0) {
      throw InvalidInput("ground_truth_global_gradient: n_k must be positive");
    }
    acc += Scalar(sizes[k]) * local[k].values();
    total += sizes[k];
  }
  return GradientVector<Scalar>(acc / Scalar(total));
}

/// Fraction of correct predictions. Regression reports the coefficient of
/// determination instead, since it has no notion of a correct label.
template <typename Scalar>
Scalar accuracy(const ModelParams<Scalar>& model, const Dataset<Scalar>& data,
                const LearnerKind& kind) {
  if (data.empty()) {
    throw InvalidInput("accuracy: empty dataset");
  }
  detail::check_dims(model, data, kind);
  if (std::holds_alternative<LeastSquaresSvm>(kind)) {
    const VectorX<Scalar> scores = data.features * model;
    Eigen::Index correct = 0;
    for (Eigen::Index i = 0; i < data.size(); ++i) {
      const Scalar predicted = scores(i) >= Scalar(0) ? Scalar(1) : Scalar(-1);
      correct += predicted == data.labels(i) ? 1 : 0;
    }
    return Scalar(correct) / Scalar(data.size());
  }
  if (std::holds_alternative<LinearRegression>(kind)) {
    const VectorX<Scalar> residual = data.labels - data.features * model;
    const Scalar centered = (data.labels.array() - data.labels.mean()).square().sum();
    if (centered == Scalar(0)) {
      return residual.squaredNorm() == Scalar(0) ? Scalar(1) : Scalar(0);
    }
    return Scalar(1) - residual.squaredNorm() / centered;
  }
  const int classes = std::get<MultinomialLogistic>(kind).classes;
  const auto weights = detail::as_weight_matrix(model, classes, data.dim());
  const MatrixX<Scalar> logits = data.features * weights.transpose();
  Eigen::Index correct = 0;
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    Eigen::Index best = 0;
    logits.row(i).maxCoeff(&best);
    correct += best == static_cast<Eigen::Index>(data.labels(i)) ? 1 : 0;
  }
  return Scalar(correct) / Scalar(data.size());
}

}  // namespace feel
