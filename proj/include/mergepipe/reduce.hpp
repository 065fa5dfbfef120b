#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <json.hpp>

#include "mergepipe/dataset.hpp"
#include "mergepipe/error.hpp"

namespace mergepipe {

using Eigen::Index;

/// I x J indicator matrix plus the first column of each variable's block.
struct IndicatorMatrix {
  Eigen::MatrixXd values;
  std::vector<Index> block_offsets;

  Index n_variables() const { return static_cast<Index>(block_offsets.size()); }
};

inline IndicatorMatrix one_hot_encode(const std::vector<DealRecord>& deals, const DatasetSchema& schema) {
  IndicatorMatrix out;
  Index J = 0;
  for (const auto& levels : schema.categorical_levels) {
    out.block_offsets.push_back(J);
    J += static_cast<Index>(levels.size());
  }
  out.values = Eigen::MatrixXd::Zero(static_cast<Index>(deals.size()), J);
  for (std::size_t i = 0; i < deals.size(); ++i) {
    require(deals[i].categorical.size() == schema.n_categorical(), ErrorKind::ShapeMismatch,
            "categorical width mismatch");
    for (std::size_t q = 0; q < schema.n_categorical(); ++q) {
      const auto& v = deals[i].categorical[q];
      require(v.has_value(), ErrorKind::MissingCell,
              "deal '" + deals[i].deal_id + "' is missing " + schema.categorical_names[q]);
      out.values(static_cast<Index>(i), out.block_offsets[q] + static_cast<Index>(*v)) = 1.0;
    }
  }
  return out;
}

/// Indicator matrix from integer level codes (rows x variables).
inline IndicatorMatrix indicator_from_codes(const std::vector<std::vector<int>>& codes,
                                            const std::vector<int>& level_counts) {
  IndicatorMatrix out;
  Index J = 0;
  for (int c : level_counts) {
    out.block_offsets.push_back(J);
    J += c;
  }
  out.values = Eigen::MatrixXd::Zero(static_cast<Index>(codes.size()), J);
  for (std::size_t i = 0; i < codes.size(); ++i)
    for (std::size_t q = 0; q < level_counts.size(); ++q)
      out.values(static_cast<Index>(i), out.block_offsets[q] + codes[i][q]) = 1.0;
  return out;
}

/// Column indices with at least one nonzero entry.
inline std::vector<Index> nonempty_columns(const Eigen::MatrixXd& x) {
  std::vector<Index> kept;
  for (Index j = 0; j < x.cols(); ++j)
    if (x.col(j).cwiseAbs().sum() > 0.0) kept.push_back(j);
  return kept;
}

inline IndicatorMatrix select_columns(const IndicatorMatrix& x, const std::vector<Index>& columns) {
  IndicatorMatrix out;
  out.values.resize(x.values.rows(), static_cast<Index>(columns.size()));
  for (std::size_t c = 0; c < columns.size(); ++c) out.values.col(static_cast<Index>(c)) = x.values.col(columns[c]);
  // Blocks are re-derived from the surviving columns.
  for (Index q = 0; q < x.n_variables(); ++q) {
    const auto pos = std::lower_bound(columns.begin(), columns.end(), x.block_offsets[static_cast<std::size_t>(q)]);
    out.block_offsets.push_back(static_cast<Index>(pos - columns.begin()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// PCA

struct PcaModel {
  Eigen::RowVectorXd mean;
  /// Per-column divisor applied after centring (all ones when not standardizing).
  Eigen::RowVectorXd scale;
  /// n_keep x m, orthonormal rows.
  Eigen::MatrixXd components;
  /// Variances along the kept components, nonincreasing.
  Eigen::VectorXd eigenvalues;
  /// All m eigenvalues, for explained-variance curves.
  Eigen::VectorXd spectrum;
  double total_variance = 0.0;

  Index n_keep() const { return components.rows(); }
  Index n_features() const { return components.cols(); }
};

namespace detail {

/// Flip each row so its largest-magnitude entry is positive.
inline void fix_signs_rowwise(Eigen::MatrixXd& rows) {
  for (Index r = 0; r < rows.rows(); ++r) {
    Index arg = 0;
    rows.row(r).cwiseAbs().maxCoeff(&arg);
    if (rows(r, arg) < 0.0) rows.row(r) *= -1.0;
  }
}

}  // namespace detail

/// Columns are centred and (by default) divided by their sample standard
/// deviation; components are right singular vectors of the prepared matrix.
inline PcaModel pca_fit(const Eigen::MatrixXd& x, Index n_keep, bool standardize = true) {
  const Index n = x.rows();
  const Index m = x.cols();
  require(n >= 2, ErrorKind::DegenerateData, "PCA needs at least two rows");
  require(n_keep >= 1 && n_keep <= m, ErrorKind::BadConfig,
          "n_keep = " + std::to_string(n_keep) + " outside [1, " + std::to_string(m) + "]");
  PcaModel model;
  model.mean = x.colwise().mean();
  Eigen::MatrixXd y = x.rowwise() - model.mean;
  model.scale = Eigen::RowVectorXd::Ones(m);
  if (standardize) {
    for (Index j = 0; j < m; ++j) {
      const double sd = std::sqrt(y.col(j).squaredNorm() / static_cast<double>(n - 1));
      if (sd > 0.0) model.scale[j] = sd;
    }
    y = y.array().rowwise() / model.scale.array();
  }

  Eigen::BDCSVD<Eigen::MatrixXd> svd(y, Eigen::ComputeFullV);
  const Eigen::VectorXd& sv = svd.singularValues();
  model.spectrum = Eigen::VectorXd::Zero(m);
  for (Index k = 0; k < sv.size(); ++k) model.spectrum[k] = sv[k] * sv[k] / static_cast<double>(n - 1);
  model.spectrum = model.spectrum.cwiseMax(0.0);
  model.eigenvalues = model.spectrum.head(n_keep);
  model.components = svd.matrixV().leftCols(n_keep).transpose();
  detail::fix_signs_rowwise(model.components);
  model.total_variance = y.squaredNorm() / static_cast<double>(n - 1);
  return model;
}

inline Eigen::MatrixXd pca_transform(const PcaModel& model, const Eigen::MatrixXd& x) {
  require(x.cols() == model.n_features(), ErrorKind::ShapeMismatch,
          "PCA expects " + std::to_string(model.n_features()) + " columns, got " + std::to_string(x.cols()));
  const Eigen::MatrixXd y = (x.rowwise() - model.mean).array().rowwise() / model.scale.array();
  return y * model.components.transpose();
}

// ---------------------------------------------------------------------------
// MCA

struct McaModel {
  /// c: column masses of the correspondence matrix, summing to one.
  Eigen::VectorXd column_masses;
  /// D_c^{-1/2} V restricted to the kept axes (J x n_keep).
  Eigen::MatrixXd standard_coordinates;
  /// Z = D_c^{-1/2} V Sigma restricted to the kept axes (J x n_keep).
  Eigen::MatrixXd principal_coordinates;
  Eigen::VectorXd principal_inertias;
  /// All J - Q principal inertias, for explained-inertia curves.
  Eigen::VectorXd spectrum;
  double total_inertia = 0.0;
  Index n_variables = 0;
  std::vector<Index> level_offsets;
  /// Row principal coordinates of the fit data, D_r^{-1/2} U Sigma.
  Eigen::MatrixXd fit_row_scores;

  Index n_keep() const { return principal_inertias.size(); }
  Index n_columns() const { return column_masses.size(); }
};

inline McaModel mca_fit(const IndicatorMatrix& indicator, Index n_keep) {
  const Eigen::MatrixXd& x = indicator.values;
  const Index I = x.rows();
  const Index J = x.cols();
  const Index Q = indicator.n_variables();
  require(I >= 1 && J >= 1 && Q >= 1, ErrorKind::ShapeMismatch, "empty indicator matrix");
  for (Index i = 0; i < I; ++i)
    require(std::abs(x.row(i).sum() - static_cast<double>(Q)) < 1e-9, ErrorKind::ShapeMismatch,
            "indicator row " + std::to_string(i) + " does not sum to the number of variables");
  for (Index j = 0; j < J; ++j)
    require(x.col(j).sum() > 0.0, ErrorKind::EmptyLevel,
            "indicator column " + std::to_string(j) + " is empty; drop unused levels first");
  const Index rank_cap = J - Q;
  require(n_keep >= 1 && n_keep <= rank_cap, ErrorKind::BadConfig,
          "n_keep = " + std::to_string(n_keep) + " outside [1, J - Q = " + std::to_string(rank_cap) + "]");

  const double grand_total = x.sum();
  const Eigen::MatrixXd p = x / grand_total;
  const Eigen::VectorXd r = p.rowwise().sum();
  const Eigen::VectorXd c = p.colwise().sum().transpose();
  const Eigen::VectorXd r_isqrt = r.cwiseSqrt().cwiseInverse();
  const Eigen::VectorXd c_isqrt = c.cwiseSqrt().cwiseInverse();
  const Eigen::MatrixXd residual =
      r_isqrt.asDiagonal() * (p - r * c.transpose()) * c_isqrt.asDiagonal();

  Eigen::BDCSVD<Eigen::MatrixXd> svd(residual, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd sv = svd.singularValues();
  require(n_keep <= sv.size(), ErrorKind::BadConfig,
          "n_keep = " + std::to_string(n_keep) + " exceeds min(I, J) = " + std::to_string(sv.size()));
  Eigen::MatrixXd u = svd.matrixU().leftCols(n_keep);
  Eigen::MatrixXd v = svd.matrixV().leftCols(n_keep);
  // Sign convention: largest-magnitude entry of each column axis positive.
  for (Index k = 0; k < n_keep; ++k) {
    Index arg = 0;
    v.col(k).cwiseAbs().maxCoeff(&arg);
    if (v(arg, k) < 0.0) {
      v.col(k) *= -1.0;
      u.col(k) *= -1.0;
    }
  }

  McaModel model;
  model.n_variables = Q;
  model.level_offsets = indicator.block_offsets;
  model.column_masses = c;
  model.spectrum = Eigen::VectorXd::Zero(rank_cap);
  for (Index k = 0; k < std::min(rank_cap, sv.size()); ++k) model.spectrum[k] = sv[k] * sv[k];
  model.principal_inertias = model.spectrum.head(n_keep);
  model.total_inertia = residual.squaredNorm();
  model.standard_coordinates = c_isqrt.asDiagonal() * v;
  model.principal_coordinates = model.standard_coordinates * sv.head(n_keep).asDiagonal();
  model.fit_row_scores = r_isqrt.asDiagonal() * u * sv.head(n_keep).asDiagonal();
  return model;
}

/// Supplementary-row projection: (row profile - c)^T D_c^{-1/2} V.
inline Eigen::MatrixXd mca_transform(const McaModel& model, const Eigen::MatrixXd& x) {
  require(x.cols() == model.n_columns(), ErrorKind::ShapeMismatch,
          "MCA expects " + std::to_string(model.n_columns()) + " columns, got " + std::to_string(x.cols()));
  Eigen::MatrixXd profiles(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const double total = x.row(i).sum();
    require(total > 0.0, ErrorKind::EmptyRow, "indicator row " + std::to_string(i) + " is all zero");
    profiles.row(i) = x.row(i) / total - model.column_masses.transpose();
  }
  return profiles * model.standard_coordinates;
}

// ---------------------------------------------------------------------------
// Explained variance / inertia

using ExplainedCurve = std::vector<std::pair<int, double>>;

/// Cumulative fraction of the spectrum captured by the first d dimensions.
inline ExplainedCurve explained_curve(const Eigen::VectorXd& spectrum) {
  ExplainedCurve curve;
  const double total = spectrum.sum();
  double running = 0.0;
  for (Index k = 0; k < spectrum.size(); ++k) {
    running += spectrum[k];
    const double frac = total > 0.0 ? std::min(1.0, running / total) : 1.0;
    curve.emplace_back(static_cast<int>(k + 1), frac);
  }
  if (!curve.empty()) curve.back().second = 1.0;
  return curve;
}

inline ExplainedCurve explained_curve(const PcaModel& model) { return explained_curve(model.spectrum); }
inline ExplainedCurve explained_curve(const McaModel& model) { return explained_curve(model.spectrum); }

// ---------------------------------------------------------------------------
// Serialization

namespace detail {

inline nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Index j = 0; j < m.cols(); ++j) row[static_cast<std::size_t>(j)] = m(i, j);
    rows.push_back(row);
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  const auto rows = static_cast<Index>(j.size());
  const Index cols = rows ? static_cast<Index>(j[0].size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    require(static_cast<Index>(j[static_cast<std::size_t>(i)].size()) == cols, ErrorKind::ShapeMismatch,
            "ragged matrix in JSON");
    for (Index c = 0; c < cols; ++c) m(i, c) = j[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

inline std::vector<double> vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }
inline std::vector<double> vec(const Eigen::RowVectorXd& v) { return {v.data(), v.data() + v.size()}; }

inline Eigen::VectorXd to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Index>(v.size()));
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const PcaModel& m) {
  j = nlohmann::json{{"mean", detail::vec(m.mean)},
                     {"scale", detail::vec(m.scale)},
                     {"components", detail::matrix_json(m.components)},
                     {"eigenvalues", detail::vec(m.eigenvalues)},
                     {"spectrum", detail::vec(m.spectrum)},
                     {"total_variance", m.total_variance}};
}

inline void from_json(const nlohmann::json& j, PcaModel& m) {
  m.mean = detail::to_eigen(j.at("mean").get<std::vector<double>>()).transpose();
  m.scale = detail::to_eigen(j.at("scale").get<std::vector<double>>()).transpose();
  m.components = detail::matrix_from_json(j.at("components"));
  m.eigenvalues = detail::to_eigen(j.at("eigenvalues").get<std::vector<double>>());
  m.spectrum = detail::to_eigen(j.at("spectrum").get<std::vector<double>>());
  m.total_variance = j.at("total_variance").get<double>();
}

inline void to_json(nlohmann::json& j, const McaModel& m) {
  std::vector<long long> offsets(m.level_offsets.begin(), m.level_offsets.end());
  j = nlohmann::json{{"column_masses", detail::vec(m.column_masses)},
                     {"standard_coordinates", detail::matrix_json(m.standard_coordinates)},
                     {"principal_coordinates", detail::matrix_json(m.principal_coordinates)},
                     {"principal_inertias", detail::vec(m.principal_inertias)},
                     {"spectrum", detail::vec(m.spectrum)},
                     {"total_inertia", m.total_inertia},
                     {"n_variables", m.n_variables},
                     {"level_offsets", offsets}};
}

inline void from_json(const nlohmann::json& j, McaModel& m) {
  m.column_masses = detail::to_eigen(j.at("column_masses").get<std::vector<double>>());
  m.standard_coordinates = detail::matrix_from_json(j.at("standard_coordinates"));
  m.principal_coordinates = detail::matrix_from_json(j.at("principal_coordinates"));
  m.principal_inertias = detail::to_eigen(j.at("principal_inertias").get<std::vector<double>>());
  m.spectrum = detail::to_eigen(j.at("spectrum").get<std::vector<double>>());
  m.total_inertia = j.at("total_inertia").get<double>();
  m.n_variables = j.at("n_variables").get<Index>();
  const auto offsets = j.at("level_offsets").get<std::vector<long long>>();
  m.level_offsets.assign(offsets.begin(), offsets.end());
}

}  // namespace mergepipe
