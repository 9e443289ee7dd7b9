#include "jointdiff/eval_probes.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "jointdiff/autodiff.hpp"
#include "jointdiff/sampler.hpp"

namespace jointdiff {

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size())
    throw ContractViolation("accuracy: " + std::to_string(predictions.size()) + " predictions for " +
                            std::to_string(labels.size()) + " labels");
  if (labels.empty()) throw ContractViolation("accuracy: empty label set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double accuracy(const JointModel& model, const Dataset& data) {
  if (!data.labeled()) throw ContractViolation("accuracy: dataset has no labels");
  return accuracy(model.predict(data.all_images()), data.labels);
}

namespace {

void append_rows(FeatureMatrix& out, int row0, const Tensor& pooled) {
  const int n = pooled.dim(0), d = pooled.dim(1);
  auto v = pooled.data();
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < d; ++c) out(row0 + r, c) = v[static_cast<std::size_t>(r) * d + c];
}

}  // namespace

FeatureMatrix extract_features(const JointModel& model, const Dataset& data, int t,
                               const NoiseSchedule& sched, std::uint64_t noise_seed, int chunk) {
  if (t < 0 || t > sched.steps())
    throw ContractViolation("extract_features: timestep " + std::to_string(t) + " outside [0, " +
                            std::to_string(sched.steps()) + "]");
  if (chunk < 1) throw ContractViolation("extract_features: chunk must be >= 1");
  const int n = data.size();
  FeatureMatrix out(n, model.spec().unet.pooled_length());
  NoGradScope ng;
  for (int start = 0; start < n; start += chunk) {
    const int len = std::min(chunk, n - start);
    std::vector<int> idx(static_cast<std::size_t>(len));
    std::iota(idx.begin(), idx.end(), start);
    Tensor x = data.batch(idx);
    if (t > 0) {
      Tensor eps(x.shape());
      auto e = eps.data();
      const std::size_t per = data.image_size();
      for (int r = 0; r < len; ++r) {
        auto rng = sample_stream(noise_seed, start + r);
        std::normal_distribution<float> normal(0.0f, 1.0f);
        for (std::size_t i = 0; i < per; ++i) e[r * per + i] = normal(rng);
      }
      x = forward_noise(x, t, eps, sched);
    }
    append_rows(out, start, model.encode(x, t).pooled());
  }
  return out;
}

FeatureMatrix pooled_features(const JointModel& model, const Tensor& images, int chunk) {
  if (images.rank() != 4) throw ContractViolation("pooled_features: expected [N, C, H, W]");
  const int n = images.dim(0);
  const std::size_t per = images.size() / static_cast<std::size_t>(n);
  FeatureMatrix out(n, model.spec().unet.pooled_length());
  NoGradScope ng;
  for (int start = 0; start < n; start += chunk) {
    const int len = std::min(chunk, n - start);
    Shape s = images.shape();
    s[0] = len;
    auto src = images.data().subspan(static_cast<std::size_t>(start) * per, len * per);
    append_rows(out, start, model.encode(Tensor(s, std::vector<float>(src.begin(), src.end())), 0).pooled());
  }
  return out;
}

double auc_rank(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ContractViolation("auc: score/label length mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double pos = 0, neg = 0, rank_sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i]) {
      pos += 1;
      rank_sum += rank[i];
    } else {
      neg += 1;
    }
  }
  if (pos == 0 || neg == 0) throw ContractViolation("auc: needs both positive and negative examples");
  return (rank_sum - pos * (pos + 1) / 2) / (pos * neg);
}

double auc_trapezoid(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ContractViolation("auc: score/label length mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double pos = 0, neg = 0;
  for (int y : labels) (y ? pos : neg) += 1;
  if (pos == 0 || neg == 0) throw ContractViolation("auc: needs both positive and negative examples");
  double tp = 0, fp = 0, area = 0;
  for (std::size_t i = 0; i < n;) {
    double dtp = 0, dfp = 0;
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] ? dtp : dfp) += 1;
      ++j;
    }
    area += (dfp / neg) * ((tp + tp + dtp) / (2 * pos));
    tp += dtp;
    fp += dfp;
    i = j;
  }
  return area;
}

ProbeResult fit_logistic_probe(const FeatureMatrix& features, std::span<const int> labels,
                               const ProbeConfig& config) {
  const int n = static_cast<int>(features.rows());
  const int d = static_cast<int>(features.cols());
  if (static_cast<int>(labels.size()) != n)
    throw ContractViolation("probe: " + std::to_string(labels.size()) + " labels for " +
                            std::to_string(n) + " feature rows");
  if (!(config.holdout_fraction > 0.0 && config.holdout_fraction < 1.0))
    throw ContractViolation("probe: holdout_fraction must lie in (0, 1)");
  std::vector<int> by_class[2];
  for (int i = 0; i < n; ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ContractViolation("probe: labels must be 0 or 1");
    by_class[labels[i]].push_back(i);
  }
  if (by_class[0].empty() || by_class[1].empty())
    throw ContractViolation("probe: labels contain a single class");
  if (by_class[0].size() < 2 || by_class[1].size() < 2)
    throw ContractViolation("probe: each class needs at least two examples for a held-out split");

  std::mt19937_64 rng(config.seed);
  std::vector<int> train, test;
  for (auto& cls : by_class) {
    std::shuffle(cls.begin(), cls.end(), rng);
    const int m = static_cast<int>(cls.size());
    const int hold = std::clamp(static_cast<int>(std::lround(config.holdout_fraction * m)), 1, m - 1);
    test.insert(test.end(), cls.begin(), cls.begin() + hold);
    train.insert(train.end(), cls.begin() + hold, cls.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());

  Eigen::MatrixXd xtr(train.size(), d);
  Eigen::VectorXd ytr(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    xtr.row(static_cast<Eigen::Index>(i)) = features.row(train[i]);
    ytr(static_cast<Eigen::Index>(i)) = labels[train[i]];
  }
  const Eigen::RowVectorXd mu = xtr.colwise().mean();
  Eigen::RowVectorXd sd = ((xtr.rowwise() - mu).array().square().colwise().mean()).sqrt();
  for (int c = 0; c < d; ++c)
    if (!(sd(c) > 1e-12)) sd(c) = 1.0;
  xtr = (xtr.rowwise() - mu).array().rowwise() / sd.array();

  const double m = static_cast<double>(train.size());
  Eigen::VectorXd w = Eigen::VectorXd::Zero(d);
  double bias = 0.0;
  ProbeResult r;
  for (int it = 0; it < config.max_iterations; ++it) {
    const Eigen::VectorXd z = (xtr * w).array() + bias;
    const Eigen::VectorXd p = z.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    const Eigen::VectorXd err = p - ytr;
    const Eigen::VectorXd gw = xtr.transpose() * err / m + config.l2 * w;
    const double gb = err.sum() / m;
    r.final_grad_norm = std::sqrt(gw.squaredNorm() + gb * gb);
    r.iterations = it;
    if (r.final_grad_norm < config.tolerance) break;
    w -= config.learning_rate * gw;
    bias -= config.learning_rate * gb;
    r.iterations = it + 1;
  }

  std::vector<double> scores(test.size());
  std::vector<int> ytest(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    const Eigen::RowVectorXd row = (features.row(test[i]) - mu).array() / sd.array();
    scores[i] = row.dot(w) + bias;
    ytest[i] = labels[test[i]];
  }
  r.auc = auc_rank(scores, ytest);
  r.weights.assign(w.data(), w.data() + d);
  r.weights.push_back(bias);
  return r;
}

std::vector<int> probe_timesteps(int steps) {
  if (steps < 1) throw ContractViolation("probe_timesteps: steps must be >= 1");
  std::vector<int> ts;
  for (int k = 0; k < 10; ++k) ts.push_back(static_cast<int>(std::lround(k * steps / 9.0)));
  return ts;
}

namespace {

void require_usable(const FeatureMatrix& f, std::string_view what) {
  if (f.rows() < 2) throw ContractViolation(std::string(what) + ": needs at least two rows");
  if (!f.allFinite()) throw NumericError(std::string(what) + ": non-finite feature values");
}

Eigen::MatrixXd covariance(const FeatureMatrix& f, const Eigen::RowVectorXd& mu) {
  const Eigen::MatrixXd c = f.rowwise() - mu;
  Eigen::MatrixXd cov = c.transpose() * c / static_cast<double>(f.rows() - 1);
  cov.diagonal().array() += 1e-6;
  return cov;
}

}  // namespace

double feature_frechet(const FeatureMatrix& a, const FeatureMatrix& b) {
  require_usable(a, "feature_frechet");
  require_usable(b, "feature_frechet");
  if (a.cols() != b.cols())
    throw ContractViolation("feature_frechet: feature widths differ (" + std::to_string(a.cols()) +
                            " vs " + std::to_string(b.cols()) + ")");
  const Eigen::RowVectorXd mu_a = a.colwise().mean();
  const Eigen::RowVectorXd mu_b = b.colwise().mean();
  const Eigen::MatrixXd sa = covariance(a, mu_a);
  const Eigen::MatrixXd sb = covariance(b, mu_b);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(sa);
  if (ea.info() != Eigen::Success || ea.eigenvalues().minCoeff() <= 0.0)
    throw NumericError("feature_frechet: degenerate covariance");
  const Eigen::MatrixXd root_a =
      ea.eigenvectors() * ea.eigenvalues().cwiseSqrt().asDiagonal() * ea.eigenvectors().transpose();
  Eigen::MatrixXd mid = root_a * sb * root_a;
  mid = 0.5 * (mid + mid.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(mid, Eigen::EigenvaluesOnly);
  if (em.info() != Eigen::Success) throw NumericError("feature_frechet: eigendecomposition failed");
  const double tr_root = em.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double d = (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_root;
  if (!std::isfinite(d)) throw NumericError("feature_frechet: non-finite result");
  return std::max(0.0, d);
}

namespace {

// Distance from each row to its k-th nearest other row of the same set.
std::vector<double> knn_radii(const FeatureMatrix& f, int k) {
  const Eigen::Index n = f.rows();
  std::vector<double> radii(static_cast<std::size_t>(n));
  std::vector<double> dist;
  for (Eigen::Index i = 0; i < n; ++i) {
    dist.clear();
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) dist.push_back((f.row(i) - f.row(j)).squaredNorm());
    std::nth_element(dist.begin(), dist.begin() + (k - 1), dist.end());
    radii[static_cast<std::size_t>(i)] = dist[static_cast<std::size_t>(k - 1)];
  }
  return radii;
}

double coverage(const FeatureMatrix& manifold, const std::vector<double>& radii, const FeatureMatrix& query) {
  Eigen::Index inside = 0;
  for (Eigen::Index q = 0; q < query.rows(); ++q) {
    for (Eigen::Index m = 0; m < manifold.rows(); ++m) {
      if ((query.row(q) - manifold.row(m)).squaredNorm() <= radii[static_cast<std::size_t>(m)]) {
        ++inside;
        break;
      }
    }
  }
  return static_cast<double>(inside) / static_cast<double>(query.rows());
}

}  // namespace

PrecisionRecall precision_recall(const FeatureMatrix& real, const FeatureMatrix& generated, int k) {
  if (real.cols() != generated.cols())
    throw ContractViolation("precision_recall: feature widths differ");
  const Eigen::Index smallest = std::min(real.rows(), generated.rows());
  if (k < 1 || k >= smallest)
    throw ContractViolation("precision_recall: k = " + std::to_string(k) + " must lie in [1, " +
                            std::to_string(smallest) + ")");
  PrecisionRecall pr;
  pr.precision = coverage(real, knn_radii(real, k), generated);
  pr.recall = coverage(generated, knn_radii(generated, k), real);
  return pr;
}

}  // namespace jointdiff
