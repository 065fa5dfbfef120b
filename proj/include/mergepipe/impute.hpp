#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mergepipe/dataset.hpp"
#include "mergepipe/error.hpp"

namespace mergepipe {

/// kNN imputer fitted on training rows. Distances use only numeric columns
/// observed in both rows, divided by the column's training standard deviation
/// and rescaled by sqrt(D / d) for d jointly observed of D columns.
struct ImputerModel {
  std::size_t k = 5;
  std::size_t n_numeric = 0;
  std::vector<std::size_t> n_levels;
  /// Row-major reference values; NaN marks a missing cell.
  std::vector<double> reference_numeric;
  std::vector<std::optional<std::uint32_t>> reference_categorical;
  std::vector<double> numeric_scale;

  std::size_t n_references() const { return n_numeric ? reference_numeric.size() / n_numeric : 0; }
  double ref(std::size_t row, std::size_t col) const { return reference_numeric[row * n_numeric + col]; }
  const std::optional<std::uint32_t>& ref_cat(std::size_t row, std::size_t q) const {
    return reference_categorical[row * n_levels.size() + q];
  }
};

inline ImputerModel fit_imputer(const std::vector<DealRecord>& train, std::size_t k,
                                const std::vector<std::size_t>& n_levels) {
  require(k >= 1, ErrorKind::TooFewRows, "k must be >= 1");
  require(!train.empty(), ErrorKind::TooFewRows, "no training rows");
  ImputerModel model;
  model.k = k;
  model.n_numeric = train.front().numeric.size();
  model.n_levels = n_levels;
  const auto n = train.size();
  const auto m = model.n_numeric;
  const auto n_cat = n_levels.size();

  model.reference_numeric.assign(n * m, std::numeric_limits<double>::quiet_NaN());
  model.reference_categorical.resize(n * n_cat);
  std::size_t usable = 0;
  for (std::size_t i = 0; i < n; ++i) {
    require(train[i].numeric.size() == m && train[i].categorical.size() == n_cat, ErrorKind::ShapeMismatch,
            "training row '" + train[i].deal_id + "' does not match the schema width");
    bool any = false;
    for (std::size_t j = 0; j < m; ++j) {
      if (train[i].numeric[j]) {
        model.reference_numeric[i * m + j] = *train[i].numeric[j];
        any = true;
      }
    }
    usable += any ? 1 : 0;
    for (std::size_t q = 0; q < n_cat; ++q) model.reference_categorical[i * n_cat + q] = train[i].categorical[q];
  }
  require(usable >= k, ErrorKind::TooFewRows,
          "k = " + std::to_string(k) + " exceeds the " + std::to_string(usable) + " usable reference rows");

  model.numeric_scale.assign(m, 1.0);
  for (std::size_t j = 0; j < m; ++j) {
    double sum = 0.0, sum_sq = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = model.reference_numeric[i * m + j];
      if (std::isnan(v)) continue;
      sum += v;
      ++count;
    }
    if (count < 2) continue;
    const double mean = sum / static_cast<double>(count);
    for (std::size_t i = 0; i < n; ++i) {
      const double v = model.reference_numeric[i * m + j];
      if (!std::isnan(v)) sum_sq += (v - mean) * (v - mean);
    }
    const double sd = std::sqrt(sum_sq / static_cast<double>(count - 1));
    if (sd > 0.0) model.numeric_scale[j] = sd;
  }
  return model;
}

inline ImputerModel fit_imputer(const std::vector<DealRecord>& train, std::size_t k, const DatasetSchema& schema) {
  std::vector<std::size_t> n_levels;
  for (const auto& levels : schema.categorical_levels) n_levels.push_back(levels.size());
  return fit_imputer(train, k, n_levels);
}

namespace detail {

/// Partial distance between a query and every reference; infinity when no
/// numeric coordinate is jointly observed.
inline std::vector<double> partial_distances(const ImputerModel& model, const DealRecord& query) {
  const auto m = model.n_numeric;
  const auto n = model.n_references();
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::vector<std::pair<std::size_t, double>> observed;
  for (std::size_t j = 0; j < m; ++j)
    if (query.numeric[j]) observed.emplace_back(j, *query.numeric[j] / model.numeric_scale[j]);
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    std::size_t joint = 0;
    for (const auto& [j, qv] : observed) {
      const double rv = model.reference_numeric[i * m + j];
      if (std::isnan(rv)) continue;
      const double diff = qv - rv / model.numeric_scale[j];
      sum += diff * diff;
      ++joint;
    }
    if (joint > 0) dist[i] = std::sqrt(sum * static_cast<double>(m) / static_cast<double>(joint));
  }
  return dist;
}

}  // namespace detail

/// Fills every missing numeric cell with the mean, and every missing
/// categorical cell with the majority level, of the k nearest references that
/// observe that column. Observed cells are never touched.
inline DealRecord impute_one(const ImputerModel& model, const DealRecord& query) {
  require(query.numeric.size() == model.n_numeric && query.categorical.size() == model.n_levels.size(),
          ErrorKind::ShapeMismatch, "deal '" + query.deal_id + "' does not match the imputer schema");
  const bool any_missing =
      std::any_of(query.numeric.begin(), query.numeric.end(), [](const auto& v) { return !v; }) ||
      std::any_of(query.categorical.begin(), query.categorical.end(), [](const auto& v) { return !v; });
  if (!any_missing) return query;

  const auto dist = detail::partial_distances(model, query);
  std::vector<std::size_t> order;
  order.reserve(dist.size());
  for (std::size_t i = 0; i < dist.size(); ++i)
    if (std::isfinite(dist[i])) order.push_back(i);
  require(!order.empty(), ErrorKind::NoComparableRow,
          "deal '" + query.deal_id + "' shares no observed numeric column with any reference");
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });

  DealRecord out = query;
  for (std::size_t j = 0; j < model.n_numeric; ++j) {
    if (out.numeric[j]) continue;
    double sum = 0.0;
    std::size_t taken = 0;
    for (std::size_t i : order) {
      const double v = model.ref(i, j);
      if (std::isnan(v)) continue;
      sum += v;
      if (++taken == model.k) break;
    }
    require(taken > 0, ErrorKind::NoComparableRow,
            "no comparable reference observes numeric column " + std::to_string(j) + " for deal '" +
                query.deal_id + "'");
    out.numeric[j] = sum / static_cast<double>(taken);
  }
  for (std::size_t q = 0; q < model.n_levels.size(); ++q) {
    if (out.categorical[q]) continue;
    std::vector<std::size_t> votes(model.n_levels[q], 0);
    std::size_t taken = 0;
    for (std::size_t i : order) {
      const auto& v = model.ref_cat(i, q);
      if (!v) continue;
      ++votes[*v];
      if (++taken == model.k) break;
    }
    require(taken > 0, ErrorKind::NoComparableRow,
            "no comparable reference observes categorical " + std::to_string(q) + " for deal '" +
                query.deal_id + "'");
    // max_element returns the first maximum, so ties resolve to schema order.
    out.categorical[q] = static_cast<std::uint32_t>(std::max_element(votes.begin(), votes.end()) - votes.begin());
  }
  return out;
}

inline std::vector<DealRecord> impute(const ImputerModel& model, const std::vector<DealRecord>& deals) {
  std::vector<DealRecord> out;
  out.reserve(deals.size());
  for (const auto& d : deals) out.push_back(impute_one(model, d));
  return out;
}

}  // namespace mergepipe
