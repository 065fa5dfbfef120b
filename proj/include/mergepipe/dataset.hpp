#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mergepipe/date.hpp"
#include "mergepipe/error.hpp"
#include "mergepipe/random.hpp"

namespace mergepipe {

inline constexpr int kSentimentLength = 121;

/// One announced deal. Label 0 = completed, 1 = cancelled.
struct DealRecord {
  std::string deal_id;
  Date announce_date;
  std::vector<std::optional<double>> numeric;
  /// Level index into the schema's level list for that variable.
  std::vector<std::optional<std::uint32_t>> categorical;
  std::optional<std::vector<double>> sentiment;
  int label = 0;

  bool operator==(const DealRecord&) const = default;
};

struct DatasetSchema {
  std::vector<std::string> numeric_names;
  std::vector<std::string> categorical_names;
  std::vector<std::vector<std::string>> categorical_levels;
  int sentiment_length = kSentimentLength;

  std::size_t n_numeric() const { return numeric_names.size(); }
  std::size_t n_categorical() const { return categorical_names.size(); }

  void validate() const {
    require(categorical_levels.size() == categorical_names.size(), ErrorKind::BadConfig,
            "categorical_levels must have one entry per categorical variable");
    std::set<std::string> seen;
    for (const auto& n : numeric_names)
      require(seen.insert(n).second, ErrorKind::BadConfig, "duplicate column name '" + n + "'");
    for (std::size_t q = 0; q < categorical_names.size(); ++q) {
      require(seen.insert(categorical_names[q]).second, ErrorKind::BadConfig,
              "duplicate column name '" + categorical_names[q] + "'");
      require(!categorical_levels[q].empty(), ErrorKind::BadConfig,
              "categorical '" + categorical_names[q] + "' has no levels");
      std::set<std::string> levels(categorical_levels[q].begin(), categorical_levels[q].end());
      require(levels.size() == categorical_levels[q].size(), ErrorKind::BadConfig,
              "categorical '" + categorical_names[q] + "' has duplicate levels");
    }
    require(sentiment_length >= 0, ErrorKind::BadConfig, "sentiment_length must be >= 0");
  }

  std::vector<std::string> header() const {
    std::vector<std::string> h{"deal_id", "announce_date"};
    h.insert(h.end(), numeric_names.begin(), numeric_names.end());
    h.insert(h.end(), categorical_names.begin(), categorical_names.end());
    for (int t = 0; t < sentiment_length; ++t) h.push_back(sentiment_column(t));
    h.emplace_back("label");
    return h;
  }

  static std::string sentiment_column(int t) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "s%03d", t);
    return buf;
  }

  bool operator==(const DatasetSchema&) const = default;
};

inline void to_json(nlohmann::json& j, const DatasetSchema& s) {
  j = nlohmann::json{{"numeric_names", s.numeric_names},
                     {"categorical_names", s.categorical_names},
                     {"categorical_levels", s.categorical_levels},
                     {"sentiment_length", s.sentiment_length}};
}

inline void from_json(const nlohmann::json& j, DatasetSchema& s) {
  j.at("numeric_names").get_to(s.numeric_names);
  j.at("categorical_names").get_to(s.categorical_names);
  j.at("categorical_levels").get_to(s.categorical_levels);
  s.sentiment_length = j.value("sentiment_length", kSentimentLength);
}

/// Exactly one of the two fields governs the split.
struct SplitSpec {
  std::optional<Date> cutoff_date;
  std::optional<double> train_fraction_override;
};

// ---------------------------------------------------------------------------
// CSV

namespace csv {

inline std::vector<std::string> split_line(std::string_view line) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cell.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cell));
      cell.clear();
    } else {
      cell.push_back(c);
    }
  }
  cells.push_back(std::move(cell));
  return cells;
}

inline std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

inline std::optional<double> parse_double(std::string_view text) {
  double v = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline bool needs_quotes(std::string_view s) {
  return s.find_first_of(",\"\n\r") != std::string_view::npos;
}

inline std::string quote(std::string_view s) {
  if (!needs_quotes(s)) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

inline std::vector<std::vector<std::string>> read_rows(const std::string& path,
                                                       std::vector<std::string>& header) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::IoFailure, "cannot open '" + path + "'");
  std::string line;
  std::vector<std::vector<std::string>> rows;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!have_header) {
      header = split_line(line);
      have_header = true;
    } else {
      rows.push_back(split_line(line));
    }
  }
  require(have_header, ErrorKind::MalformedHeader, "'" + path + "' has no header row");
  return rows;
}

}  // namespace csv

namespace detail {

inline DealRecord parse_deal_row(const std::vector<std::string>& cells, const DatasetSchema& schema,
                                 std::size_t line_no) {
  const std::string where = " (data row " + std::to_string(line_no) + ")";
  DealRecord d;
  std::size_t col = 0;
  d.deal_id = cells[col++];
  require(!d.deal_id.empty(), ErrorKind::MalformedRow, "empty deal_id" + where);
  d.announce_date = Date::parse(cells[col++]);

  d.numeric.reserve(schema.n_numeric());
  for (std::size_t j = 0; j < schema.n_numeric(); ++j, ++col) {
    if (cells[col].empty()) {
      d.numeric.emplace_back();
      continue;
    }
    auto v = csv::parse_double(cells[col]);
    require(v.has_value(), ErrorKind::MalformedRow,
            "non-numeric value '" + cells[col] + "' in " + schema.numeric_names[j] + where);
    d.numeric.push_back(v);
  }

  d.categorical.reserve(schema.n_categorical());
  for (std::size_t q = 0; q < schema.n_categorical(); ++q, ++col) {
    if (cells[col].empty()) {
      d.categorical.emplace_back();
      continue;
    }
    const auto& levels = schema.categorical_levels[q];
    auto it = std::find(levels.begin(), levels.end(), cells[col]);
    require(it != levels.end(), ErrorKind::UnknownCategory,
            "'" + cells[col] + "' is not a level of " + schema.categorical_names[q] + where);
    d.categorical.emplace_back(static_cast<std::uint32_t>(it - levels.begin()));
  }

  if (schema.sentiment_length > 0) {
    const auto first = col;
    const auto len = static_cast<std::size_t>(schema.sentiment_length);
    std::size_t present = 0;
    for (std::size_t t = 0; t < len; ++t) present += cells[first + t].empty() ? 0 : 1;
    if (present == len) {
      std::vector<double> s(len);
      for (std::size_t t = 0; t < len; ++t) {
        auto v = csv::parse_double(cells[first + t]);
        require(v.has_value() && *v >= -1.0 && *v <= 1.0, ErrorKind::BadSentiment,
                "sentiment value '" + cells[first + t] + "' outside [-1, 1]" + where);
        s[t] = *v;
      }
      d.sentiment = std::move(s);
    } else {
      require(present == 0, ErrorKind::BadSentiment,
              "partial sentiment sequence (" + std::to_string(present) + " of " +
                  std::to_string(len) + " values)" + where);
    }
    col += len;
  }

  const auto& lab = cells[col];
  require(lab == "0" || lab == "1", ErrorKind::MalformedRow, "label must be 0 or 1" + where);
  d.label = lab == "1" ? 1 : 0;
  return d;
}

}  // namespace detail

/// Reads a deal CSV whose header is deal_id, announce_date, numeric names,
/// categorical names, s000.., label. Empty cells are missing values.
inline std::vector<DealRecord> load_deals_csv(const std::string& path, const DatasetSchema& schema) {
  schema.validate();
  std::vector<std::string> header;
  const auto rows = csv::read_rows(path, header);
  const auto expected = schema.header();
  require(header == expected, ErrorKind::MalformedHeader,
          "header of '" + path + "' does not match the schema");

  std::vector<DealRecord> deals;
  deals.reserve(rows.size());
  std::unordered_set<std::string> ids;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r].size() == expected.size(), ErrorKind::MalformedRow,
            "data row " + std::to_string(r + 1) + " has " + std::to_string(rows[r].size()) +
                " cells, expected " + std::to_string(expected.size()));
    auto deal = detail::parse_deal_row(rows[r], schema, r + 1);
    require(ids.insert(deal.deal_id).second, ErrorKind::DuplicateId,
            "deal_id '" + deal.deal_id + "' appears more than once");
    deals.push_back(std::move(deal));
  }
  return deals;
}

inline void write_deals_csv(std::ostream& out, const std::vector<DealRecord>& deals,
                            const DatasetSchema& schema) {
  const auto header = schema.header();
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << csv::quote(header[i]);
  out << '\n';
  for (const auto& d : deals) {
    out << csv::quote(d.deal_id) << ',' << d.announce_date.iso();
    for (const auto& v : d.numeric) out << ',' << (v ? csv::format_double(*v) : "");
    for (std::size_t q = 0; q < d.categorical.size(); ++q) {
      out << ',';
      if (d.categorical[q]) out << csv::quote(schema.categorical_levels[q][*d.categorical[q]]);
    }
    for (int t = 0; t < schema.sentiment_length; ++t) {
      out << ',';
      if (d.sentiment) out << csv::format_double((*d.sentiment)[static_cast<std::size_t>(t)]);
    }
    out << ',' << d.label << '\n';
  }
}

inline void write_deals_csv(const std::string& path, const std::vector<DealRecord>& deals,
                            const DatasetSchema& schema) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::IoFailure, "cannot write '" + path + "'");
  write_deals_csv(out, deals, schema);
  require(static_cast<bool>(out), ErrorKind::IoFailure, "write to '" + path + "' failed");
}

/// Recovers a schema from a deal CSV: s### columns are sentiment, columns whose
/// non-empty cells all parse as numbers are numeric, everything else is
/// categorical with levels in sorted order.
inline DatasetSchema infer_schema(const std::string& path) {
  std::vector<std::string> header;
  const auto rows = csv::read_rows(path, header);
  require(header.size() >= 3 && header[0] == "deal_id" && header[1] == "announce_date" &&
              header.back() == "label",
          ErrorKind::MalformedHeader, "'" + path + "' lacks deal_id/announce_date/label columns");
  DatasetSchema schema;
  schema.sentiment_length = 0;
  auto is_sentiment = [](const std::string& h) {
    return h.size() == 4 && h[0] == 's' && std::isdigit(static_cast<unsigned char>(h[1])) &&
           std::isdigit(static_cast<unsigned char>(h[2])) &&
           std::isdigit(static_cast<unsigned char>(h[3]));
  };
  for (std::size_t c = 2; c + 1 < header.size(); ++c) {
    const auto& name = header[c];
    if (is_sentiment(name)) {
      require(name == DatasetSchema::sentiment_column(schema.sentiment_length), ErrorKind::MalformedHeader,
              "sentiment columns must run s000, s001, ... without gaps");
      ++schema.sentiment_length;
      continue;
    }
    require(schema.sentiment_length == 0, ErrorKind::MalformedHeader,
            "feature column '" + name + "' after sentiment columns");
    bool numeric = true;
    std::set<std::string> levels;
    for (const auto& row : rows) {
      require(row.size() == header.size(), ErrorKind::MalformedRow, "row width does not match header");
      const auto& cell = row[c];
      if (cell.empty()) continue;
      levels.insert(cell);
      if (numeric && !csv::parse_double(cell)) numeric = false;
    }
    if (numeric) {
      schema.numeric_names.push_back(name);
    } else {
      schema.categorical_names.push_back(name);
      schema.categorical_levels.emplace_back(levels.begin(), levels.end());
    }
  }
  schema.validate();
  return schema;
}

// ---------------------------------------------------------------------------
// Split

inline std::pair<std::vector<DealRecord>, std::vector<DealRecord>> temporal_split(
    const std::vector<DealRecord>& deals, const SplitSpec& spec) {
  require(spec.cutoff_date.has_value() != spec.train_fraction_override.has_value(),
          ErrorKind::BadConfig, "exactly one of cutoff_date / train_fraction must be set");
  std::vector<bool> in_train(deals.size(), false);
  if (spec.cutoff_date) {
    for (std::size_t i = 0; i < deals.size(); ++i) in_train[i] = deals[i].announce_date < *spec.cutoff_date;
  } else {
    const double f = *spec.train_fraction_override;
    require(f > 0.0 && f < 1.0, ErrorKind::BadConfig, "train_fraction must lie in (0, 1)");
    std::vector<std::size_t> order(deals.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return deals[a].announce_date < deals[b].announce_date;
    });
    const auto n_train = static_cast<std::size_t>(std::floor(f * static_cast<double>(deals.size())));
    for (std::size_t r = 0; r < n_train; ++r) in_train[order[r]] = true;
  }
  std::pair<std::vector<DealRecord>, std::vector<DealRecord>> out;
  for (std::size_t i = 0; i < deals.size(); ++i) (in_train[i] ? out.first : out.second).push_back(deals[i]);
  require(!out.first.empty() && !out.second.empty(), ErrorKind::EmptySide,
          "split leaves " + std::string(out.first.empty() ? "train" : "test") + " empty");
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic generator

struct GeneratorConfig {
  std::size_t n_deals = 17440;
  double cancel_rate = 0.1921;
  std::size_t n_numeric = 52;
  /// Binary variables count as two-level categoricals.
  std::size_t n_categorical = 51;
  /// Levels per categorical; empty selects the default layout (see level_counts()).
  std::vector<int> categorical_levels;
  int sentiment_length = kSentimentLength;
  /// Index of the announcement day inside the sentiment window.
  int announce_index = 90;
  double missing_rate = 0.05;
  double signal_strength = 1.0;
  /// Post-announcement sentiment drift; defaults to signal_strength when unset.
  std::optional<double> sentiment_signal;
  Date start_date = Date::from_ymd(2001, 1, 1);
  Date cutoff_date = Date::from_ymd(2019, 1, 1);
  Date end_date = Date::from_ymd(2020, 10, 30);
  /// Fraction of deals dated on/after cutoff_date (915 / 17440 by default).
  double test_fraction = 915.0 / 17440.0;

  void validate() const {
    require(n_deals >= 1, ErrorKind::BadConfig, "n_deals must be >= 1");
    require(cancel_rate > 0.0 && cancel_rate < 1.0, ErrorKind::BadConfig, "cancel_rate must lie in (0, 1)");
    require(missing_rate >= 0.0 && missing_rate < 1.0, ErrorKind::BadConfig, "missing_rate must lie in [0, 1)");
    require(signal_strength >= 0.0, ErrorKind::BadConfig, "signal_strength must be >= 0");
    require(!sentiment_signal || *sentiment_signal >= 0.0, ErrorKind::BadConfig, "sentiment_signal must be >= 0");
    require(n_numeric >= 1, ErrorKind::BadConfig, "n_numeric must be >= 1");
    require(sentiment_length >= 0, ErrorKind::BadConfig, "sentiment_length must be >= 0");
    require(sentiment_length == 0 || (announce_index >= 0 && announce_index < sentiment_length),
            ErrorKind::BadConfig, "announce_index must lie inside the sentiment window");
    require(categorical_levels.empty() || categorical_levels.size() == n_categorical, ErrorKind::BadConfig,
            "categorical_levels must list one count per categorical");
    for (int l : categorical_levels) require(l >= 2, ErrorKind::BadConfig, "categoricals need >= 2 levels");
    require(test_fraction >= 0.0 && test_fraction < 1.0, ErrorKind::BadConfig, "test_fraction must lie in [0, 1)");
    require(start_date < cutoff_date && cutoff_date <= end_date, ErrorKind::BadConfig,
            "dates must satisfy start < cutoff <= end");
  }

  /// Default layout: 11 multi-level variables (six with 3 levels, five with 2)
  /// followed by binaries, which gives 108 indicator columns at n_categorical = 51.
  std::vector<int> level_counts() const {
    if (!categorical_levels.empty()) return categorical_levels;
    static constexpr int kPattern[11] = {3, 3, 3, 3, 3, 3, 2, 2, 2, 2, 2};
    std::vector<int> out(n_categorical, 2);
    for (std::size_t q = 0; q < std::min<std::size_t>(n_categorical, 11); ++q) out[q] = kPattern[q];
    return out;
  }
};

inline void to_json(nlohmann::json& j, const GeneratorConfig& c) {
  j = nlohmann::json{{"n_deals", c.n_deals},
                     {"cancel_rate", c.cancel_rate},
                     {"n_numeric", c.n_numeric},
                     {"n_categorical", c.n_categorical},
                     {"categorical_levels", c.categorical_levels},
                     {"sentiment_length", c.sentiment_length},
                     {"announce_index", c.announce_index},
                     {"missing_rate", c.missing_rate},
                     {"signal_strength", c.signal_strength},
                     {"start_date", c.start_date.iso()},
                     {"cutoff_date", c.cutoff_date.iso()},
                     {"end_date", c.end_date.iso()},
                     {"test_fraction", c.test_fraction}};
  j["sentiment_signal"] = c.sentiment_signal ? nlohmann::json(*c.sentiment_signal) : nlohmann::json(nullptr);
}

inline void from_json(const nlohmann::json& j, GeneratorConfig& c) {
  static const std::set<std::string> known{"n_deals", "cancel_rate", "n_numeric", "n_categorical",
                                           "categorical_levels", "sentiment_length", "announce_index",
                                           "missing_rate", "signal_strength", "sentiment_signal",
                                           "start_date", "cutoff_date", "end_date", "test_fraction"};
  require(j.is_object(), ErrorKind::BadConfig, "generator config must be a JSON object");
  for (const auto& [key, _] : j.items())
    require(known.count(key) > 0, ErrorKind::BadConfig, "unknown generator field '" + key + "'");
  try {
    GeneratorConfig d;
    c.n_deals = j.value("n_deals", d.n_deals);
    c.cancel_rate = j.value("cancel_rate", d.cancel_rate);
    c.n_numeric = j.value("n_numeric", d.n_numeric);
    c.n_categorical = j.value("n_categorical", d.n_categorical);
    c.categorical_levels = j.value("categorical_levels", d.categorical_levels);
    c.sentiment_length = j.value("sentiment_length", d.sentiment_length);
    c.announce_index = j.value("announce_index", d.announce_index);
    c.missing_rate = j.value("missing_rate", d.missing_rate);
    c.signal_strength = j.value("signal_strength", d.signal_strength);
    if (j.contains("sentiment_signal") && !j["sentiment_signal"].is_null())
      c.sentiment_signal = j["sentiment_signal"].get<double>();
    c.test_fraction = j.value("test_fraction", d.test_fraction);
    c.start_date = j.contains("start_date") ? Date::parse(j["start_date"].get<std::string>()) : d.start_date;
    c.cutoff_date = j.contains("cutoff_date") ? Date::parse(j["cutoff_date"].get<std::string>()) : d.cutoff_date;
    c.end_date = j.contains("end_date") ? Date::parse(j["end_date"].get<std::string>()) : d.end_date;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::BadConfig, e.what());
  } catch (const Error& e) {
    throw Error(ErrorKind::BadConfig, e.what());
  }
}

inline DatasetSchema synthetic_schema(const GeneratorConfig& config) {
  DatasetSchema schema;
  char buf[32];
  for (std::size_t j = 0; j < config.n_numeric; ++j) {
    std::snprintf(buf, sizeof buf, "num_%02zu", j);
    schema.numeric_names.emplace_back(buf);
  }
  const auto counts = config.level_counts();
  for (std::size_t q = 0; q < config.n_categorical; ++q) {
    std::snprintf(buf, sizeof buf, "cat_%02zu", q);
    schema.categorical_names.emplace_back(buf);
    std::vector<std::string> levels;
    for (int l = 0; l < counts[q]; ++l) {
      std::snprintf(buf, sizeof buf, "L%d", l);
      levels.emplace_back(buf);
    }
    schema.categorical_levels.push_back(std::move(levels));
  }
  schema.sentiment_length = config.sentiment_length;
  return schema;
}

/// Deal universe with known ground truth. Numeric features are a 5-factor
/// Gaussian plus noise; cancelled deals are shifted by signal_strength noise
/// standard deviations along a direction orthogonal to the factors. Records
/// are returned in chronological order.
inline std::vector<DealRecord> generate_synthetic(const GeneratorConfig& config, std::uint64_t seed) {
  config.validate();
  const auto m = static_cast<Eigen::Index>(config.n_numeric);
  const Eigen::Index n_factors = std::min<Eigen::Index>(5, m - 1);
  const auto counts = config.level_counts();
  const double sentiment_signal = config.sentiment_signal.value_or(config.signal_strength);

  // Structural parameters.
  Rng structure(Rng::derive(seed, 1));
  Eigen::MatrixXd loadings(m, std::max<Eigen::Index>(n_factors, 0));
  for (Eigen::Index i = 0; i < loadings.size(); ++i) loadings.data()[i] = 0.8 * structure.normal();
  Eigen::VectorXd col_scale(m), col_offset(m);
  for (Eigen::Index j = 0; j < m; ++j) {
    col_scale[j] = std::exp(1.5 * structure.normal());
    col_offset[j] = 2.0 * col_scale[j] * structure.normal();
  }
  Eigen::VectorXd direction(m);
  for (Eigen::Index j = 0; j < m; ++j) direction[j] = structure.normal();
  if (n_factors > 0) {
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(loadings);
    const Eigen::MatrixXd basis = qr.householderQ() * Eigen::MatrixXd::Identity(m, n_factors);
    direction -= basis * (basis.transpose() * direction);
  }
  direction.normalize();

  std::vector<std::vector<double>> base_logits(config.n_categorical), effects(config.n_categorical);
  for (std::size_t q = 0; q < config.n_categorical; ++q) {
    for (int l = 0; l < counts[q]; ++l) {
      base_logits[q].push_back(0.5 * structure.normal());
      effects[q].push_back(structure.normal());
    }
  }

  // Dates: the last test_fraction of deals fall on/after the cutoff.
  Rng rng(Rng::derive(seed, 2));
  const auto n = config.n_deals;
  const auto n_test = static_cast<std::size_t>(std::llround(config.test_fraction * static_cast<double>(n)));
  const auto n_train = n - n_test;
  std::vector<int> days(n);
  const int pre_span = config.cutoff_date.days() - config.start_date.days();
  const int post_span = config.end_date.days() - config.cutoff_date.days() + 1;
  for (std::size_t i = 0; i < n; ++i) {
    days[i] = i < n_train ? config.start_date.days() + static_cast<int>(rng.index(static_cast<std::size_t>(pre_span)))
                          : config.cutoff_date.days() + static_cast<int>(rng.index(static_cast<std::size_t>(post_span)));
  }
  std::sort(days.begin(), days.end());

  constexpr double kPhi = 0.9;
  constexpr double kSigma = 0.1;
  std::vector<DealRecord> deals(n);
  Eigen::VectorXd factors(std::max<Eigen::Index>(n_factors, 0));
  for (std::size_t i = 0; i < n; ++i) {
    DealRecord& d = deals[i];
    char id[32];
    std::snprintf(id, sizeof id, "D%06zu", i + 1);
    d.deal_id = id;
    d.announce_date = Date(days[i]);
    d.label = rng.uniform() < config.cancel_rate ? 1 : 0;
    const double sign = d.label == 1 ? 1.0 : 0.0;

    for (Eigen::Index f = 0; f < factors.size(); ++f) factors[f] = rng.normal();
    d.numeric.resize(config.n_numeric);
    for (Eigen::Index j = 0; j < m; ++j) {
      double z = rng.normal() + sign * config.signal_strength * direction[j];
      if (n_factors > 0) z += loadings.row(j).dot(factors);
      d.numeric[static_cast<std::size_t>(j)] = col_offset[j] + col_scale[j] * z;
    }

    d.categorical.resize(config.n_categorical);
    for (std::size_t q = 0; q < config.n_categorical; ++q) {
      std::vector<double> w(static_cast<std::size_t>(counts[q]));
      double total = 0.0;
      for (std::size_t l = 0; l < w.size(); ++l) {
        w[l] = std::exp(base_logits[q][l] + sign * 0.5 * config.signal_strength * effects[q][l]);
        total += w[l];
      }
      double u = rng.uniform() * total;
      std::uint32_t level = static_cast<std::uint32_t>(w.size() - 1);
      for (std::size_t l = 0; l < w.size(); ++l) {
        if (u < w[l]) {
          level = static_cast<std::uint32_t>(l);
          break;
        }
        u -= w[l];
      }
      d.categorical[q] = level;
    }

    if (config.sentiment_length > 0) {
      const int T = config.sentiment_length;
      const int post_steps = std::max(1, T - 1 - config.announce_index);
      const double drift = (d.label == 1 ? -0.5 : 0.5) * sentiment_signal;
      std::vector<double> s(static_cast<std::size_t>(T));
      double level = 0.0;
      double deviation = rng.normal() * kSigma / std::sqrt(1.0 - kPhi * kPhi);
      for (int t = 0; t < T; ++t) {
        if (t > 0) deviation = kPhi * deviation + kSigma * rng.normal();
        if (t > config.announce_index)
          level = drift * static_cast<double>(t - config.announce_index) / post_steps;
        s[static_cast<std::size_t>(t)] = std::tanh(level + deviation);
      }
      d.sentiment = std::move(s);
    }

    if (config.missing_rate > 0.0) {
      std::size_t observed = config.n_numeric;
      for (auto& v : d.numeric) {
        if (rng.uniform() < config.missing_rate) {
          v.reset();
          --observed;
        }
      }
      for (auto& c : d.categorical)
        if (rng.uniform() < config.missing_rate) c.reset();
      // Keep one numeric cell so every deal has a neighbourhood for imputation.
      if (observed == 0) {
        const auto j = static_cast<Eigen::Index>(rng.index(config.n_numeric));
        double z = rng.normal() + sign * config.signal_strength * direction[j];
        if (n_factors > 0) z += loadings.row(j).dot(factors);
        d.numeric[static_cast<std::size_t>(j)] = col_offset[j] + col_scale[j] * z;
      }
    }
  }
  return deals;
}

// ---------------------------------------------------------------------------
// Helpers shared by downstream stages

inline Eigen::VectorXd label_vector(const std::vector<DealRecord>& deals) {
  Eigen::VectorXd y(static_cast<Eigen::Index>(deals.size()));
  for (std::size_t i = 0; i < deals.size(); ++i) y[static_cast<Eigen::Index>(i)] = deals[i].label;
  return y;
}

/// Numeric block as a dense matrix; requires every cell observed.
inline Eigen::MatrixXd numeric_matrix(const std::vector<DealRecord>& deals, std::size_t n_numeric) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(deals.size()), static_cast<Eigen::Index>(n_numeric));
  for (std::size_t i = 0; i < deals.size(); ++i) {
    require(deals[i].numeric.size() == n_numeric, ErrorKind::ShapeMismatch, "numeric width mismatch");
    for (std::size_t j = 0; j < n_numeric; ++j) {
      require(deals[i].numeric[j].has_value(), ErrorKind::MissingCell,
              "deal '" + deals[i].deal_id + "' has a missing numeric cell");
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = *deals[i].numeric[j];
    }
  }
  return x;
}

inline Eigen::MatrixXd sentiment_matrix(const std::vector<DealRecord>& deals, int length) {
  Eigen::MatrixXd s(static_cast<Eigen::Index>(deals.size()), length);
  for (std::size_t i = 0; i < deals.size(); ++i) {
    require(deals[i].sentiment.has_value(), ErrorKind::MissingSentiment,
            "deal '" + deals[i].deal_id + "' has no sentiment sequence");
    require(static_cast<int>(deals[i].sentiment->size()) == length, ErrorKind::BadSentiment,
            "sentiment length mismatch");
    for (int t = 0; t < length; ++t) s(static_cast<Eigen::Index>(i), t) = (*deals[i].sentiment)[static_cast<std::size_t>(t)];
  }
  return s;
}

}  // namespace mergepipe
