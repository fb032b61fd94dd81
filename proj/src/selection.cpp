#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>

#include "advids/data.hpp"
#include "advids/error.hpp"

namespace advids {
namespace {

void check_xy(const Tensor& x, std::span<const int> labels) {
  if (x.rank() != 2 || x.dim(0) != labels.size()) {
    fail(ErrorKind::dimension, "features " + shape_string(x.shape()) + " vs " +
                                   std::to_string(labels.size()) + " labels");
  }
  if (x.dim(0) == 0) fail(ErrorKind::data, "empty training matrix");
}

Tensor select_columns(const Tensor& x, std::span<const std::size_t> keep) {
  const std::size_t n = x.dim(0), d = x.dim(1);
  Tensor out({n, keep.size()});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < keep.size(); ++j) out.at(r, j) = x[r * d + keep[j]];
  }
  return out;
}

}  // namespace

double LogisticModel::decision(std::span<const double> row) const {
  if (row.size() != weights.size()) {
    fail(ErrorKind::dimension, "logistic model has " + std::to_string(weights.size()) +
                                   " weights, row has " + std::to_string(row.size()));
  }
  double z = bias;
  for (std::size_t j = 0; j < row.size(); ++j) {
    const double v = center.empty() ? row[j] : (row[j] - center[j]) / scale[j];
    z += weights[j] * v;
  }
  return z;
}

LogisticModel fit_logistic(const Tensor& x, std::span<const int> labels,
                           const LogisticOptions& options) {
  check_xy(x, labels);
  const std::size_t n = x.dim(0), d = x.dim(1);
  LogisticModel model;
  model.weights.assign(d, 0.0);
  if (options.standardize) {
    model.center.assign(d, 0.0);
    model.scale.assign(d, 1.0);
    for (std::size_t j = 0; j < d; ++j) {
      double mean = 0.0;
      for (std::size_t r = 0; r < n; ++r) mean += x[r * d + j];
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t r = 0; r < n; ++r) var += (x[r * d + j] - mean) * (x[r * d + j] - mean);
      var /= static_cast<double>(n);
      model.center[j] = mean;
      model.scale[j] = var > 1e-24 ? std::sqrt(var) : 1.0;
    }
  }
  Eigen::MatrixXd z(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      const double v = x[r * d + j];
      z(r, j) = options.standardize ? (v - model.center[j]) / model.scale[j] : v;
    }
  }
  Eigen::VectorXd y(n);
  for (std::size_t r = 0; r < n; ++r) y(r) = labels[r];
  Eigen::VectorXd w = Eigen::VectorXd::Zero(d);
  double b = 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t it = 0; it < options.iterations; ++it) {
    Eigen::VectorXd p = ((z * w).array() + b).matrix();
    p = p.unaryExpr([](double s) { return 1.0 / (1.0 + std::exp(-s)); });
    const Eigen::VectorXd err = p - y;
    const Eigen::VectorXd gw = z.transpose() * err * inv_n + options.l2 * w;
    w -= options.learning_rate * gw;
    b -= options.learning_rate * err.sum() * inv_n;
  }
  for (std::size_t j = 0; j < d; ++j) model.weights[j] = w(j);
  model.bias = b;
  return model;
}

double logistic_accuracy(const LogisticModel& model, const Tensor& x,
                         std::span<const int> labels) {
  check_xy(x, labels);
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (model.predict(std::span(&x[r * d], d)) == labels[r]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

RfeResult rfe(const Tensor& x, std::span<const int> labels, std::size_t k,
              std::size_t max_rows) {
  check_xy(x, labels);
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (k == 0 || k > d) {
    fail(ErrorKind::parameter, "rfe k=" + std::to_string(k) + " must lie in [1, " +
                                   std::to_string(d) + "]");
  }
  if (max_rows == 0) fail(ErrorKind::parameter, "rfe max_rows must be positive");

  // Evenly spaced rows keep the cost bounded on full-size datasets.
  std::vector<std::size_t> rows;
  const std::size_t m = std::min(n, max_rows);
  rows.reserve(m);
  for (std::size_t i = 0; i < m; ++i) rows.push_back(i * n / m);
  Tensor sample({m, d});
  std::vector<int> sample_labels(m);
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(&x[rows[i] * d], d, &sample[i * d]);
    sample_labels[i] = labels[rows[i]];
  }

  std::vector<std::size_t> remaining(d);
  std::iota(remaining.begin(), remaining.end(), std::size_t{0});
  RfeResult result;
  std::vector<double> weights;
  while (true) {
    const LogisticModel model = fit_logistic(select_columns(sample, remaining), sample_labels);
    weights = model.weights;
    if (remaining.size() == k) break;
    std::size_t worst = 0;
    for (std::size_t j = 1; j < remaining.size(); ++j) {
      if (std::abs(weights[j]) < std::abs(weights[worst])) worst = j;
    }
    result.eliminated.push_back(remaining[worst]);
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(worst));
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(weights[a]) > std::abs(weights[b]);
  });
  for (std::size_t i : order) result.selected.push_back(remaining[i]);
  return result;
}

// ---- PCA ---------------------------------------------------------------------

PcaModel pca_fit(const Tensor& x, std::size_t k) {
  if (x.rank() != 2 || x.dim(0) < 2) fail(ErrorKind::data, "pca needs at least two rows");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (k == 0 || k > d) {
    fail(ErrorKind::parameter, "pca k=" + std::to_string(k) + " must lie in [1, " +
                                   std::to_string(d) + "]");
  }
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(
      x.data().data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  const Eigen::RowVectorXd mean = m.colwise().mean();
  const Eigen::MatrixXd centered = m.rowwise() - mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) fail(ErrorKind::data, "pca eigen-decomposition failed");
  const Eigen::VectorXd values = solver.eigenvalues();  // ascending
  const Eigen::MatrixXd vectors = solver.eigenvectors();
  const double total = std::max(cov.trace(), 0.0);

  PcaModel model;
  model.mean.assign(mean.data(), mean.data() + d);
  model.components = Tensor({k, d});
  for (std::size_t c = 0; c < k; ++c) {
    const Eigen::Index col = static_cast<Eigen::Index>(d - 1 - c);
    // Deterministic sign: the largest-magnitude loading is positive.
    Eigen::Index arg = 0;
    vectors.col(col).cwiseAbs().maxCoeff(&arg);
    const double sign = vectors(arg, col) < 0.0 ? -1.0 : 1.0;
    for (std::size_t j = 0; j < d; ++j) {
      model.components.at(c, j) = sign * vectors(static_cast<Eigen::Index>(j), col);
    }
    const double v = std::max(values(col), 0.0);
    model.explained_variance.push_back(total > 0.0 ? v / total : 0.0);
  }
  model.projection_scaler = fit_scaler(pca_project(model, x));
  return model;
}

Tensor pca_project(const PcaModel& model, const Tensor& x) {
  const std::size_t k = model.components.dim(0), d = model.components.dim(1);
  if (x.rank() != 2 || x.dim(1) != d) {
    fail(ErrorKind::dimension, "pca fitted on " + std::to_string(d) + " features, got " +
                                   shape_string(x.shape()));
  }
  const std::size_t n = x.dim(0);
  Tensor out({n, k});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < k; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        s += (x[r * d + j] - model.mean[j]) * model.components.at(c, j);
      }
      out.at(r, c) = s;
    }
  }
  return out;
}

Tensor pca_reconstruct(const PcaModel& model, const Tensor& projections) {
  const std::size_t k = model.components.dim(0), d = model.components.dim(1);
  if (projections.rank() != 2 || projections.dim(1) != k) {
    fail(ErrorKind::dimension, "expected projections with " + std::to_string(k) +
                                   " columns, got " + shape_string(projections.shape()));
  }
  const std::size_t n = projections.dim(0);
  Tensor out({n, d});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      double s = model.mean[j];
      for (std::size_t c = 0; c < k; ++c) s += projections.at(r, c) * model.components.at(c, j);
      out.at(r, j) = s;
    }
  }
  return out;
}

Tensor pca_transform(const PcaModel& model, const Tensor& x) {
  return apply_scaler(model.projection_scaler, pca_project(model, x));
}

SelectionMethod selection_from_string(std::string_view name) {
  if (name == "none") return SelectionMethod::none;
  if (name == "rfe") return SelectionMethod::rfe;
  if (name == "pca") return SelectionMethod::pca;
  fail(ErrorKind::parameter, "unknown feature selection '" + std::string(name) + "'");
}

std::string to_string(SelectionMethod method) {
  switch (method) {
    case SelectionMethod::none: return "none";
    case SelectionMethod::rfe: return "rfe";
    case SelectionMethod::pca: return "pca";
  }
  return "?";
}

}  // namespace advids
