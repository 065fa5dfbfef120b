#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mergepipe/error.hpp"
#include "mergepipe/random.hpp"

namespace mergepipe {

struct SmoteConfig {
  int k_neighbors = 5;
  /// Desired minority / majority count ratio after oversampling.
  double target_ratio = 1.0;
  std::uint64_t seed = 0;
};

struct Resampled {
  Eigen::MatrixXd features;
  Eigen::VectorXd labels;
  Eigen::Index n_synthetic = 0;
};

/// Indices of the k nearest rows (Euclidean, self excluded) for every row;
/// ties go to the lower row index.
inline std::vector<std::vector<Eigen::Index>> nearest_neighbours(const Eigen::MatrixXd& rows, int k) {
  const Eigen::Index n = rows.rows();
  std::vector<std::vector<Eigen::Index>> out(static_cast<std::size_t>(n));
  const Eigen::VectorXd norms = rows.rowwise().squaredNorm();
  const Eigen::MatrixXd gram = rows * rows.transpose();
  std::vector<Eigen::Index> order;
  std::vector<double> dist(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) dist[static_cast<std::size_t>(j)] = norms[i] + norms[j] - 2.0 * gram(i, j);
    order.clear();
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) order.push_back(j);
    const auto kk = std::min<std::size_t>(static_cast<std::size_t>(k), order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(kk), order.end(),
                      [&](Eigen::Index a, Eigen::Index b) {
                        const double da = dist[static_cast<std::size_t>(a)];
                        const double db = dist[static_cast<std::size_t>(b)];
                        return da < db || (da == db && a < b);
                      });
    out[static_cast<std::size_t>(i)].assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(kk));
  }
  return out;
}

/// Appends synthetic minority rows x + (y - x) u, with y one of x's k nearest
/// minority neighbours and u ~ U(0, 1), until minority / majority reaches
/// floor(target_ratio * majority). Base rows are visited round-robin.
inline Resampled smote(const Eigen::MatrixXd& features, const Eigen::VectorXd& labels, const SmoteConfig& config) {
  require(features.rows() == labels.size(), ErrorKind::LengthMismatch, "features and labels differ in length");
  require(config.k_neighbors >= 1, ErrorKind::BadConfig, "k_neighbors must be >= 1");
  require(config.target_ratio > 0.0 && config.target_ratio <= 1.0, ErrorKind::BadConfig,
          "target_ratio must lie in (0, 1]");
  std::vector<Eigen::Index> pos, neg;
  for (Eigen::Index i = 0; i < labels.size(); ++i) (labels[i] > 0.5 ? pos : neg).push_back(i);
  require(!pos.empty() && !neg.empty(), ErrorKind::SingleClass, "SMOTE needs both classes present");
  const bool minority_is_positive = pos.size() <= neg.size();
  const auto& minority = minority_is_positive ? pos : neg;
  const double majority_count = static_cast<double>(minority_is_positive ? neg.size() : pos.size());
  const double minority_label = minority_is_positive ? 1.0 : 0.0;

  const auto target = static_cast<Eigen::Index>(std::floor(config.target_ratio * majority_count + 1e-9));
  const auto current = static_cast<Eigen::Index>(minority.size());
  require(target >= current, ErrorKind::BadConfig,
          "target_ratio is below the current minority / majority ratio");

  Resampled out;
  out.n_synthetic = target - current;
  if (out.n_synthetic == 0) {
    out.features = features;
    out.labels = labels;
    return out;
  }
  require(current > config.k_neighbors, ErrorKind::TooFewMinority,
          std::to_string(current) + " minority rows cannot supply " + std::to_string(config.k_neighbors) +
              " neighbours each");

  Eigen::MatrixXd min_rows(current, features.cols());
  for (Eigen::Index r = 0; r < current; ++r) min_rows.row(r) = features.row(minority[static_cast<std::size_t>(r)]);
  const auto neighbours = nearest_neighbours(min_rows, config.k_neighbors);

  out.features.resize(features.rows() + out.n_synthetic, features.cols());
  out.labels.resize(labels.size() + out.n_synthetic);
  out.features.topRows(features.rows()) = features;
  out.labels.head(labels.size()) = labels;
  Rng rng(config.seed);
  for (Eigen::Index s = 0; s < out.n_synthetic; ++s) {
    const Eigen::Index base = s % current;
    const auto& nb = neighbours[static_cast<std::size_t>(base)];
    const Eigen::Index other = nb[rng.index(nb.size())];
    const double u = rng.uniform();
    out.features.row(features.rows() + s) = min_rows.row(base) + (min_rows.row(other) - min_rows.row(base)) * u;
    out.labels[labels.size() + s] = minority_label;
  }
  return out;
}

/// True iff every synthetic row lies, within `tolerance`, on a segment from
/// some minority row to one of its k nearest minority neighbours.
inline bool validate_smote_geometry(const Eigen::MatrixXd& minority, const Eigen::MatrixXd& synthetic, int k,
                                    double tolerance = 1e-9) {
  if (synthetic.rows() == 0) return true;
  if (minority.rows() == 0 || synthetic.cols() != minority.cols()) return false;
  const auto neighbours = nearest_neighbours(minority, k);
  for (Eigen::Index s = 0; s < synthetic.rows(); ++s) {
    const Eigen::RowVectorXd point = synthetic.row(s);
    bool found = false;
    for (Eigen::Index i = 0; i < minority.rows() && !found; ++i) {
      const Eigen::RowVectorXd x = minority.row(i);
      const double scale = std::max(1.0, std::max(x.cwiseAbs().maxCoeff(), point.cwiseAbs().maxCoeff()));
      for (Eigen::Index j : neighbours[static_cast<std::size_t>(i)]) {
        const Eigen::RowVectorXd seg = minority.row(j) - x;
        const double len2 = seg.squaredNorm();
        double t = 0.0;
        if (len2 > 0.0) t = std::clamp((point - x).dot(seg) / len2, 0.0, 1.0);
        if ((point - (x + t * seg)).norm() <= tolerance * scale) {
          found = true;
          break;
        }
      }
    }
    if (!found) return false;
  }
  return true;
}

}  // namespace mergepipe
