#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "jointdiff/dataset.hpp"
#include "jointdiff/model.hpp"
#include "jointdiff/schedule.hpp"

namespace jointdiff {

using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Fraction of argmax predictions equal to the labels.
double accuracy(std::span<const int> predictions, std::span<const int> labels);
double accuracy(const JointModel& model, const Dataset& data);

/// Row i = pooled representation of image i noised to t (clean at t = 0).
/// Noise for t > 0 comes from `noise_seed`, one stream per row.
FeatureMatrix extract_features(const JointModel& model, const Dataset& data, int t,
                               const NoiseSchedule& sched, std::uint64_t noise_seed, int chunk = 64);

struct ProbeConfig {
  /// Fraction of rows held out for the AUC (split is seeded and stratified).
  double holdout_fraction = 0.3;
  double learning_rate = 0.5;
  double l2 = 1e-4;
  int max_iterations = 5000;
  double tolerance = 1e-5;
  std::uint64_t seed = 0;
};

struct ProbeResult {
  int timestep = 0;
  int attribute = 0;
  double auc = 0.0;
  /// Weights on standardized features, followed by the bias.
  std::vector<double> weights;
  int iterations = 0;
  double final_grad_norm = 0.0;
};

/// Logistic regression fit by full-batch gradient descent on standardized
/// features until the gradient norm drops below the tolerance or the iteration
/// cap is reached; AUC is measured on the held-out rows.
ProbeResult fit_logistic_probe(const FeatureMatrix& features, std::span<const int> labels,
                               const ProbeConfig& config = {});

/// Probability that a random positive outranks a random negative (ties count half).
double auc_rank(std::span<const double> scores, std::span<const int> labels);
/// Area under the empirical ROC curve by the trapezoidal rule.
double auc_trapezoid(std::span<const double> scores, std::span<const int> labels);

/// Ten evenly spaced timesteps over [0, T]: round(k T / 9), k = 0..9.
std::vector<int> probe_timesteps(int steps);

/// ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2)), covariances
/// regularized by 1e-6 I; the root uses the symmetric form S_a^(1/2) S_b S_a^(1/2).
double feature_frechet(const FeatureMatrix& a, const FeatureMatrix& b);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};

/// k-nearest-neighbour manifold estimate: precision is the fraction of
/// generated points inside some real point's k-NN ball, recall the converse.
PrecisionRecall precision_recall(const FeatureMatrix& real, const FeatureMatrix& generated, int k);

struct GenMetrics {
  double feature_frechet = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  int sample_count = 0;
};

/// Builds a feature matrix from raw images (rows = images) using the model's
/// clean pooled features.
FeatureMatrix pooled_features(const JointModel& model, const Tensor& images, int chunk = 64);

}  // namespace jointdiff
