#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mergepipe/dataset.hpp"
#include "mergepipe/error.hpp"
#include "mergepipe/impute.hpp"
#include "mergepipe/metrics.hpp"
#include "mergepipe/neural.hpp"
#include "mergepipe/random.hpp"
#include "mergepipe/reduce.hpp"
#include "mergepipe/resample.hpp"

namespace mergepipe {

enum class Framework { f1, f2, f3 };
enum class Objective { recall, accuracy, f1 };

inline std::string to_string(Framework f) {
  switch (f) {
    case Framework::f1: return "f1";
    case Framework::f2: return "f2";
    case Framework::f3: return "f3";
  }
  return "f1";
}

inline Framework parse_framework(const std::string& s) {
  if (s == "f1") return Framework::f1;
  if (s == "f2") return Framework::f2;
  if (s == "f3") return Framework::f3;
  throw Error(ErrorKind::BadConfig, "unknown framework '" + s + "' (expected f1, f2 or f3)");
}

inline std::string to_string(Objective o) {
  switch (o) {
    case Objective::recall: return "recall";
    case Objective::accuracy: return "accuracy";
    case Objective::f1: return "f1";
  }
  return "f1";
}

inline Objective parse_objective(const std::string& s) {
  if (s == "recall") return Objective::recall;
  if (s == "accuracy") return Objective::accuracy;
  if (s == "f1") return Objective::f1;
  throw Error(ErrorKind::BadConfig, "unknown objective '" + s + "' (expected recall, accuracy or f1)");
}

/// Objective value of a report; undefined metrics rank below every defined one.
inline double objective_value(const EvalReport& r, Objective o) {
  switch (o) {
    case Objective::recall: return r.recall.value_or(-1.0);
    case Objective::accuracy: return r.accuracy;
    case Objective::f1: return r.f1.value_or(-1.0);
  }
  return -1.0;
}

/// Raised when a pipeline stage fails; carries the stage name.
class StageError : public Error {
 public:
  StageError(std::string stage, const Error& cause)
      : Error(cause.kind(), "stage '" + stage + "': " + cause.what()), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

template <class Fn>
auto run_stage(const std::string& stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(stage, e);
  }
}

inline neural::TrainConfig default_autoencoder_train() {
  neural::TrainConfig c;
  c.epochs = 20;
  c.learning_rate = 5e-3;
  c.patience = 0;
  return c;
}

struct FrameworkConfig {
  Framework framework = Framework::f1;
  int impute_k = 5;
  int pca_dims = 20;
  int mca_dims = 45;
  int embedding_dim = 5;
  bool use_smote = false;
  SmoteConfig smote;
  neural::NetworkSpec network;
  neural::TrainConfig train;
  neural::AutoencoderSpec autoencoder;
  neural::TrainConfig autoencoder_train = default_autoencoder_train();
  Objective objective = Objective::f1;
  /// Most recent share of training deals held out for early stopping.
  double validation_fraction = 0.1;
  /// z-score the concatenated reduced features (train statistics).
  bool standardize_features = true;
  /// Master seed; network, SMOTE and autoencoder seeds derive from it.
  std::uint64_t seed = 0;

  void validate() const {
    require(impute_k >= 1, ErrorKind::BadConfig, "impute_k must be >= 1");
    require(pca_dims >= 1 && mca_dims >= 1, ErrorKind::BadConfig, "pca_dims and mca_dims must be >= 1");
    require(validation_fraction >= 0.0 && validation_fraction < 1.0, ErrorKind::BadConfig,
            "validation_fraction must lie in [0, 1)");
    if (framework == Framework::f2)
      require(embedding_dim >= 1, ErrorKind::BadConfig, "embedding_dim must be >= 1");
    const bool has_lstm = network.has_sequence_branch();
    if (framework == Framework::f3) {
      require(has_lstm && network.layers.size() >= 2, ErrorKind::BadConfig,
              "framework f3 needs an lstm layer followed by a dense tabular branch");
    } else {
      require(!has_lstm, ErrorKind::BadConfig, "lstm layers are only valid in framework f3");
    }
    network.loss.validate();
    train.validate();
    autoencoder_train.validate();
  }
};

inline void to_json(nlohmann::json& j, const FrameworkConfig& c) {
  j = nlohmann::json{{"framework", to_string(c.framework)},
                     {"impute_k", c.impute_k},
                     {"pca_dims", c.pca_dims},
                     {"mca_dims", c.mca_dims},
                     {"embedding_dim", c.embedding_dim},
                     {"use_smote", c.use_smote},
                     {"smote", {{"k_neighbors", c.smote.k_neighbors}, {"target_ratio", c.smote.target_ratio}}},
                     {"network", {{"layers", c.network.layers}, {"loss", c.network.loss}}},
                     {"train", c.train},
                     {"autoencoder",
                      {{"encoder_width", c.autoencoder.encoder_width},
                       {"decoder_width", c.autoencoder.decoder_width},
                       {"activation", neural::to_string(c.autoencoder.activation)}}},
                     {"autoencoder_train", c.autoencoder_train},
                     {"objective", to_string(c.objective)},
                     {"validation_fraction", c.validation_fraction},
                     {"standardize_features", c.standardize_features},
                     {"seed", c.seed}};
}

inline FrameworkConfig preset(const std::string& name);

/// Reads a run config. A "preset" key selects a starting point whose fields
/// the remaining keys override.
inline void from_json(const nlohmann::json& j, FrameworkConfig& c) {
  static const std::set<std::string> known{
      "preset",      "framework",         "impute_k",          "pca_dims",        "mca_dims",
      "embedding_dim", "use_smote",       "smote",             "network",         "train",
      "autoencoder", "autoencoder_train", "objective",         "validation_fraction", "standardize_features",
      "seed",        "split"};
  require(j.is_object(), ErrorKind::BadConfig, "run config must be a JSON object");
  for (const auto& [key, _] : j.items())
    require(known.count(key) > 0, ErrorKind::BadConfig, "unknown run-config field '" + key + "'");
  try {
    c = j.contains("preset") ? preset(j["preset"].get<std::string>()) : FrameworkConfig{};
    if (j.contains("framework")) c.framework = parse_framework(j["framework"].get<std::string>());
    c.impute_k = j.value("impute_k", c.impute_k);
    c.pca_dims = j.value("pca_dims", c.pca_dims);
    c.mca_dims = j.value("mca_dims", c.mca_dims);
    c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
    c.use_smote = j.value("use_smote", c.use_smote);
    if (j.contains("smote")) {
      c.smote.k_neighbors = j["smote"].value("k_neighbors", c.smote.k_neighbors);
      c.smote.target_ratio = j["smote"].value("target_ratio", c.smote.target_ratio);
    }
    if (j.contains("network")) {
      const auto& n = j["network"];
      if (n.contains("layers")) c.network.layers = n["layers"].get<std::vector<neural::LayerSpec>>();
      if (n.contains("loss")) c.network.loss = n["loss"].get<neural::LossKind>();
    }
    if (j.contains("train")) {
      nlohmann::json merged = c.train;
      merged.update(j["train"]);
      c.train = merged.get<neural::TrainConfig>();
    }
    if (j.contains("autoencoder")) {
      const auto& a = j["autoencoder"];
      c.autoencoder.encoder_width = a.value("encoder_width", c.autoencoder.encoder_width);
      c.autoencoder.decoder_width = a.value("decoder_width", c.autoencoder.decoder_width);
      if (a.contains("activation"))
        c.autoencoder.activation = neural::parse_activation(a["activation"].get<std::string>());
    }
    if (j.contains("autoencoder_train")) {
      nlohmann::json merged = c.autoencoder_train;
      merged.update(j["autoencoder_train"]);
      c.autoencoder_train = merged.get<neural::TrainConfig>();
    }
    if (j.contains("objective")) c.objective = parse_objective(j["objective"].get<std::string>());
    c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
    c.standardize_features = j.value("standardize_features", c.standardize_features);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::BadConfig, e.what());
  }
  c.validate();
}

// ---------------------------------------------------------------------------
// Presets

namespace detail {

inline FrameworkConfig make_preset(Framework fw, bool smote, std::vector<neural::LayerSpec> layers,
                                   neural::LossKind loss, Objective objective) {
  FrameworkConfig c;
  c.framework = fw;
  c.use_smote = smote;
  c.network.layers = std::move(layers);
  c.network.loss = loss;
  c.objective = objective;
  return c;
}

}  // namespace detail

/// Architectures reported for each framework and selection target.
inline const std::map<std::string, FrameworkConfig>& presets() {
  using neural::Activation;
  using neural::LayerSpec;
  using neural::LossKind;
  using F = Framework;
  using O = Objective;
  auto d = [](int w, Activation a) { return LayerSpec::dense(w, a); };
  const auto lstm = LayerSpec::lstm(8);
  static const std::map<std::string, FrameworkConfig> table{
      {"f1/nn-recall", detail::make_preset(F::f1, false, {d(64, Activation::selu)}, LossKind::cross_entropy(), O::recall)},
      {"f1/nn-accuracy",
       detail::make_preset(F::f1, false, {d(128, Activation::relu), d(8, Activation::relu)}, LossKind::cross_entropy(),
                           O::accuracy)},
      {"f1/nn-f1",
       detail::make_preset(F::f1, false, {d(256, Activation::relu), d(8, Activation::relu)}, LossKind::f1(), O::f1)},
      {"f1/smote-nn-recall", detail::make_preset(F::f1, true, {d(8, Activation::elu)}, LossKind::focal(), O::recall)},
      {"f1/smote-nn-accuracy",
       detail::make_preset(F::f1, true, {d(256, Activation::relu)}, LossKind::cross_entropy(), O::accuracy)},
      {"f1/smote-nn-f1", detail::make_preset(F::f1, true, {d(8, Activation::selu)}, LossKind::f1(), O::f1)},
      {"f2/nn-recall", detail::make_preset(F::f2, false, {d(32, Activation::selu)}, LossKind::focal(), O::recall)},
      {"f2/nn-accuracy", detail::make_preset(F::f2, false, {d(64, Activation::relu)}, LossKind::focal(), O::accuracy)},
      {"f2/nn-f1", detail::make_preset(F::f2, false, {d(32, Activation::elu)}, LossKind::f1(), O::f1)},
      {"f2/smote-nn-recall",
       detail::make_preset(F::f2, true, {d(32, Activation::selu), d(32, Activation::elu)}, LossKind::tversky(),
                           O::recall)},
      {"f2/smote-nn-accuracy",
       detail::make_preset(F::f2, true, {d(32, Activation::selu), d(8, Activation::selu)}, LossKind::cross_entropy(),
                           O::accuracy)},
      {"f2/smote-nn-f1",
       detail::make_preset(F::f2, true, {d(32, Activation::selu), d(16, Activation::selu)}, LossKind::f1(), O::f1)},
      {"f3/nn-recall",
       detail::make_preset(F::f3, false, {lstm, d(4, Activation::selu), d(8, Activation::selu)}, LossKind::f1(),
                           O::recall)},
      {"f3/nn-accuracy",
       detail::make_preset(F::f3, false, {lstm, d(4, Activation::elu), d(16, Activation::elu)}, LossKind::focal(),
                           O::accuracy)},
      {"f3/nn-f1",
       detail::make_preset(F::f3, false, {lstm, d(4, Activation::elu), d(16, Activation::elu)}, LossKind::focal(),
                           O::f1)},
      {"f3/smote-nn-recall",
       detail::make_preset(F::f3, true, {lstm, d(4, Activation::selu), d(16, Activation::selu)}, LossKind::f1(),
                           O::recall)},
      {"f3/smote-nn-accuracy",
       detail::make_preset(F::f3, true, {lstm, d(64, Activation::selu), d(64, Activation::relu)},
                           LossKind::tversky(), O::accuracy)},
      {"f3/smote-nn-f1",
       detail::make_preset(F::f3, true, {lstm, d(64, Activation::selu), d(64, Activation::relu)},
                           LossKind::tversky(), O::f1)},
  };
  return table;
}

inline FrameworkConfig preset(const std::string& name) {
  const auto& table = presets();
  const auto it = table.find(name);
  require(it != table.end(), ErrorKind::BadConfig, "unknown preset '" + name + "'");
  return it->second;
}

// ---------------------------------------------------------------------------
// Fitted artifacts

struct Standardizer {
  Eigen::RowVectorXd mean, scale;

  static Standardizer fit(const Eigen::MatrixXd& x, bool enabled) {
    Standardizer s;
    s.mean = Eigen::RowVectorXd::Zero(x.cols());
    s.scale = Eigen::RowVectorXd::Ones(x.cols());
    if (!enabled || x.rows() < 2) return s;
    s.mean = x.colwise().mean();
    for (Index j = 0; j < x.cols(); ++j) {
      const double sd = std::sqrt((x.col(j).array() - s.mean[j]).square().sum() / static_cast<double>(x.rows() - 1));
      if (sd > 0.0) s.scale[j] = sd;
    }
    return s;
  }

  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const {
    require(x.cols() == mean.size(), ErrorKind::ShapeMismatch, "standardizer width mismatch");
    return (x.rowwise() - mean).array().rowwise() / scale.array();
  }
};

/// Everything fitted on the training side of one framework run.
struct ModelBundle {
  Framework framework = Framework::f1;
  DatasetSchema schema;
  ImputerModel imputer;
  PcaModel pca;
  McaModel mca;
  std::vector<Index> kept_levels;
  std::optional<neural::FittedAutoencoder> autoencoder;
  Standardizer standardizer;
  neural::NetworkSpec network;
  neural::NetworkParams params;
  neural::TrainResult trace;
  double threshold = 0.5;
};

inline void to_json(nlohmann::json& j, const ModelBundle& b) {
  nlohmann::json mca = b.mca;
  std::vector<long long> kept(b.kept_levels.begin(), b.kept_levels.end());
  j = nlohmann::json{{"format_version", 1},
                     {"framework", to_string(b.framework)},
                     {"imputer", {{"k", b.imputer.k}, {"numeric_scale", b.imputer.numeric_scale}}},
                     {"pca", b.pca},
                     {"mca", mca},
                     {"kept_levels", kept},
                     {"standardizer", {{"mean", detail::vec(b.standardizer.mean)},
                                       {"scale", detail::vec(b.standardizer.scale)}}},
                     {"network", b.network},
                     {"params", b.params},
                     {"threshold", b.threshold}};
  j["autoencoder"] = b.autoencoder ? nlohmann::json(*b.autoencoder) : nlohmann::json(nullptr);
}

struct FrameworkResult {
  ModelBundle bundle;
  EvalReport in_sample;
  EvalReport out_of_sample;
  Index input_width = 0;
};

namespace detail {

/// Reduced tabular features [PCA scores | MCA scores] for imputed deals.
inline Eigen::MatrixXd reduced_features(const ModelBundle& b, const std::vector<DealRecord>& imputed) {
  const Eigen::MatrixXd pca_scores = pca_transform(b.pca, numeric_matrix(imputed, b.schema.n_numeric()));
  const IndicatorMatrix onehot = select_columns(one_hot_encode(imputed, b.schema), b.kept_levels);
  const Eigen::MatrixXd mca_scores = mca_transform(b.mca, onehot.values);
  Eigen::MatrixXd x(pca_scores.rows(), pca_scores.cols() + mca_scores.cols());
  x << pca_scores, mca_scores;
  return x;
}

inline bool uses_sentiment(Framework f) { return f != Framework::f1; }

/// Indices of the most recent `fraction` of deals (by date) and the rest.
inline std::pair<std::vector<Index>, std::vector<Index>> holdout_split(const std::vector<DealRecord>& deals,
                                                                       double fraction) {
  std::vector<Index> order(deals.size());
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return deals[static_cast<std::size_t>(a)].announce_date < deals[static_cast<std::size_t>(b)].announce_date;
  });
  auto n_hold = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(deals.size())));
  if (fraction <= 0.0 || deals.size() < 2) n_hold = 0;
  n_hold = std::min(n_hold, deals.size() - 1);
  std::vector<Index> fit(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_hold));
  std::vector<Index> hold(order.end() - static_cast<std::ptrdiff_t>(n_hold), order.end());
  std::sort(fit.begin(), fit.end());
  std::sort(hold.begin(), hold.end());
  return {fit, hold};
}

inline Eigen::MatrixXd take_rows(const Eigen::MatrixXd& m, const std::vector<Index>& idx) {
  Eigen::MatrixXd out(static_cast<Index>(idx.size()), m.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Index>(r)) = m.row(idx[r]);
  return out;
}

inline Eigen::VectorXd take(const Eigen::VectorXd& v, const std::vector<Index>& idx) {
  Eigen::VectorXd out(static_cast<Index>(idx.size()));
  for (std::size_t r = 0; r < idx.size(); ++r) out[static_cast<Index>(r)] = v[idx[r]];
  return out;
}

}  // namespace detail

/// Per-sample weights n / (2 n_c), which average to one over the sample.
inline Eigen::VectorXd class_weights(const Eigen::VectorXd& labels) {
  const double n = static_cast<double>(labels.size());
  const double n_pos = (labels.array() > 0.5).cast<double>().sum();
  const double n_neg = n - n_pos;
  require(n_pos > 0 && n_neg > 0, ErrorKind::SingleClass, "class weights need both classes");
  return labels.unaryExpr([&](double y) { return y > 0.5 ? n / (2.0 * n_pos) : n / (2.0 * n_neg); });
}

/// Model inputs (standardized tabular features and, for f3, raw sequences)
/// for deals not seen at fit time.
inline neural::Inputs bundle_inputs(const ModelBundle& b, const std::vector<DealRecord>& deals) {
  neural::Inputs in;
  Eigen::MatrixXd seq;
  if (detail::uses_sentiment(b.framework))
    seq = run_stage("sentiment", [&] { return sentiment_matrix(deals, b.schema.sentiment_length); });
  const auto imputed = run_stage("impute", [&] { return impute(b.imputer, deals); });
  Eigen::MatrixXd x = run_stage("reduce", [&] { return detail::reduced_features(b, imputed); });
  if (b.framework == Framework::f2) {
    const Eigen::MatrixXd emb = run_stage("autoencoder", [&] { return neural::autoencoder_encode(*b.autoencoder, seq); });
    Eigen::MatrixXd joined(x.rows(), x.cols() + emb.cols());
    joined << x, emb;
    x = std::move(joined);
  }
  in.tabular = b.standardizer.apply(x);
  if (b.framework == Framework::f3) in.sequences = std::move(seq);
  return in;
}

inline Eigen::VectorXd predict(const ModelBundle& b, const std::vector<DealRecord>& deals) {
  const auto in = bundle_inputs(b, deals);
  return neural::Network(b.network).predict(b.params, in);
}

namespace detail {

struct FitOptions {
  bool logit = false;
  bool class_weighted = false;
};

inline FrameworkResult fit_and_evaluate(const std::vector<DealRecord>& train, const std::vector<DealRecord>& test,
                                        const DatasetSchema& schema, FrameworkConfig config, FitOptions opts) {
  run_stage("config", [&] {
    config.validate();
    schema.validate();
    require(!train.empty() && !test.empty(), ErrorKind::EmptySide, "train and test must both be nonempty");
  });
  const std::uint64_t seed = config.seed;
  config.network.seed = Rng::derive(seed, 10);
  config.smote.seed = Rng::derive(seed, 11);
  config.autoencoder.seed = Rng::derive(seed, 12);
  config.autoencoder.embedding_dim = config.embedding_dim;
  config.autoencoder.sequence_length = schema.sentiment_length;

  FrameworkResult result;
  ModelBundle& b = result.bundle;
  b.framework = config.framework;
  b.schema = schema;
  b.threshold = config.train.threshold;

  Eigen::MatrixXd train_seq;
  if (uses_sentiment(config.framework))
    train_seq = run_stage("sentiment", [&] {
      require(schema.sentiment_length > 0, ErrorKind::MissingSentiment, "dataset has no sentiment columns");
      return sentiment_matrix(train, schema.sentiment_length);
    });

  b.imputer = run_stage("impute", [&] {
    return fit_imputer(train, static_cast<std::size_t>(config.impute_k), schema);
  });
  const auto train_imp = run_stage("impute", [&] { return impute(b.imputer, train); });

  Eigen::MatrixXd x = run_stage("reduce", [&] {
    const Eigen::MatrixXd numeric = numeric_matrix(train_imp, schema.n_numeric());
    require(config.pca_dims <= numeric.cols(), ErrorKind::BadConfig,
            "pca_dims = " + std::to_string(config.pca_dims) + " exceeds the " + std::to_string(numeric.cols()) +
                " numeric columns");
    b.pca = pca_fit(numeric, config.pca_dims);
    const IndicatorMatrix full = one_hot_encode(train_imp, schema);
    b.kept_levels = nonempty_columns(full.values);
    b.mca = mca_fit(select_columns(full, b.kept_levels), config.mca_dims);
    return reduced_features(b, train_imp);
  });

  if (config.framework == Framework::f2) {
    b.autoencoder = run_stage("autoencoder", [&] {
      return neural::autoencoder_fit(config.autoencoder, train_seq, config.autoencoder_train);
    });
    const Eigen::MatrixXd emb = run_stage("autoencoder", [&] { return neural::autoencoder_encode(*b.autoencoder, train_seq); });
    Eigen::MatrixXd joined(x.rows(), x.cols() + emb.cols());
    joined << x, emb;
    x = std::move(joined);
  }
  b.standardizer = Standardizer::fit(x, config.standardize_features);
  x = b.standardizer.apply(x);
  result.input_width = x.cols();
  const Eigen::VectorXd y = label_vector(train);

  // Early-stopping holdout: the most recent training deals, never resampled.
  const double frac = config.train.patience > 0 ? config.validation_fraction : 0.0;
  const auto [fit_idx, hold_idx] = holdout_split(train, frac);
  Eigen::MatrixXd fit_x = take_rows(x, fit_idx);
  Eigen::VectorXd fit_y = take(y, fit_idx);
  Eigen::MatrixXd fit_seq = config.framework == Framework::f3 ? take_rows(train_seq, fit_idx) : Eigen::MatrixXd();

  if (config.use_smote && !opts.logit) {
    run_stage("smote", [&] {
      // f3 interpolates tabular features and sequences together.
      const Index width = fit_x.cols();
      const Index seq_width = fit_seq.cols();
      Eigen::MatrixXd joined(fit_x.rows(), width + seq_width);
      joined.leftCols(width) = fit_x;
      if (seq_width > 0) joined.rightCols(seq_width) = fit_seq;
      auto res = smote(joined, fit_y, config.smote);
      fit_x = res.features.leftCols(width);
      if (seq_width > 0) fit_seq = res.features.rightCols(seq_width);
      fit_y = std::move(res.labels);
    });
  }

  b.network = config.network;
  if (opts.logit) {
    b.network.layers.clear();
    b.network.loss = neural::LossKind::cross_entropy();
  }
  b.network.input_width = static_cast<int>(x.cols());
  b.network.sequence_length = config.framework == Framework::f3 ? schema.sentiment_length : 0;

  neural::Examples fit_ex;
  fit_ex.inputs.tabular = std::move(fit_x);
  fit_ex.inputs.sequences = std::move(fit_seq);
  fit_ex.labels = std::move(fit_y);
  if (opts.class_weighted) fit_ex.weights = class_weights(fit_ex.labels);
  neural::Examples hold_ex;
  if (!hold_idx.empty()) {
    hold_ex.inputs.tabular = take_rows(x, hold_idx);
    if (config.framework == Framework::f3) hold_ex.inputs.sequences = take_rows(train_seq, hold_idx);
    hold_ex.labels = take(y, hold_idx);
    if (opts.class_weighted) hold_ex.weights = class_weights(hold_ex.labels);
  }
  b.trace = run_stage("train", [&] {
    return neural::train(b.network, fit_ex, hold_idx.empty() ? nullptr : &hold_ex, config.train);
  });
  b.params = b.trace.params;

  const neural::Network net(b.network);
  neural::Inputs train_in;
  train_in.tabular = x;
  if (config.framework == Framework::f3) train_in.sequences = train_seq;
  result.in_sample = run_stage("evaluate", [&] { return evaluate(y, net.predict(b.params, train_in), b.threshold); });
  const Eigen::VectorXd test_scores = predict(b, test);
  result.out_of_sample = run_stage("evaluate", [&] { return evaluate(label_vector(test), test_scores, b.threshold); });
  return result;
}

}  // namespace detail

/// PCA(numeric) + MCA(one-hot) -> optional SMOTE -> feedforward net.
inline FrameworkResult run_framework1(const std::vector<DealRecord>& train, const std::vector<DealRecord>& test,
                                      const DatasetSchema& schema, FrameworkConfig config) {
  config.framework = Framework::f1;
  return detail::fit_and_evaluate(train, test, schema, config, {});
}

/// As framework 1 with a separately trained, frozen LSTM-autoencoder
/// embedding of the sentiment sequence appended before SMOTE.
inline FrameworkResult run_framework2(const std::vector<DealRecord>& train, const std::vector<DealRecord>& test,
                                      const DatasetSchema& schema, FrameworkConfig config) {
  config.framework = Framework::f2;
  return detail::fit_and_evaluate(train, test, schema, config, {});
}

/// Two-branch network: dense branch on reduced tabular features, LSTM over
/// the raw sentiment sequence, merged into a dense head; trained jointly.
inline FrameworkResult run_framework3(const std::vector<DealRecord>& train, const std::vector<DealRecord>& test,
                                      const DatasetSchema& schema, FrameworkConfig config) {
  config.framework = Framework::f3;
  return detail::fit_and_evaluate(train, test, schema, config, {});
}

inline FrameworkResult run_framework(const std::vector<DealRecord>& train, const std::vector<DealRecord>& test,
                                     const DatasetSchema& schema, const FrameworkConfig& config) {
  return detail::fit_and_evaluate(train, test, schema, config, {});
}

/// Single sigmoid unit on the framework-1 features, trained with
/// cross-entropy; optionally class-weighted.
inline FrameworkResult fit_logit(const std::vector<DealRecord>& train, const std::vector<DealRecord>& test,
                                 const DatasetSchema& schema, FrameworkConfig config, bool use_class_weights) {
  config.framework = Framework::f1;
  config.use_smote = false;
  config.network.layers.clear();
  config.network.loss = neural::LossKind::cross_entropy();
  return detail::fit_and_evaluate(train, test, schema, config, {.logit = true, .class_weighted = use_class_weights});
}

// ---------------------------------------------------------------------------
// Hyperparameter search

struct SearchSpace {
  FrameworkConfig base;
  std::vector<std::vector<int>> hidden_layers;
  std::vector<neural::Activation> activations;
  std::vector<neural::LossKind> losses;
  std::vector<double> learning_rates;
  std::vector<int> batch_sizes;
  std::vector<int> epochs;
  std::vector<bool> use_smote;
  /// Enumerate the cartesian product in order instead of sampling.
  bool grid = false;

  std::size_t dimension_count() const {
    return !hidden_layers.empty() + !activations.empty() + !losses.empty() + !learning_rates.empty() +
           !batch_sizes.empty() + !epochs.empty() + !use_smote.empty();
  }

  std::vector<std::size_t> radices() const {
    return {std::max<std::size_t>(1, hidden_layers.size()), std::max<std::size_t>(1, activations.size()),
            std::max<std::size_t>(1, losses.size()),        std::max<std::size_t>(1, learning_rates.size()),
            std::max<std::size_t>(1, batch_sizes.size()),   std::max<std::size_t>(1, epochs.size()),
            std::max<std::size_t>(1, use_smote.size())};
  }

  std::size_t grid_size() const {
    std::size_t n = 1;
    for (auto r : radices()) n *= r;
    return n;
  }

  /// Config for one choice index per dimension.
  FrameworkConfig materialize(const std::vector<std::size_t>& pick) const {
    FrameworkConfig c = base;
    if (!hidden_layers.empty() || !activations.empty()) {
      std::vector<neural::LayerSpec> dense;
      for (const auto& l : base.network.layers)
        if (l.kind == neural::LayerKind::dense) dense.push_back(l);
      if (!hidden_layers.empty()) {
        const neural::Activation keep = dense.empty() ? neural::Activation::relu : dense.front().activation;
        dense.clear();
        for (int w : hidden_layers[pick[0]]) dense.push_back(neural::LayerSpec::dense(w, keep));
      }
      if (!activations.empty())
        for (auto& l : dense) l.activation = activations[pick[1]];
      std::vector<neural::LayerSpec> layers;
      if (base.network.has_sequence_branch()) layers.push_back(base.network.layers.front());
      layers.insert(layers.end(), dense.begin(), dense.end());
      c.network.layers = std::move(layers);
    }
    if (!losses.empty()) c.network.loss = losses[pick[2]];
    if (!learning_rates.empty()) c.train.learning_rate = learning_rates[pick[3]];
    if (!batch_sizes.empty()) c.train.batch_size = batch_sizes[pick[4]];
    if (!epochs.empty()) c.train.epochs = epochs[pick[5]];
    if (!use_smote.empty()) c.use_smote = use_smote[pick[6]];
    return c;
  }
};

inline void from_json(const nlohmann::json& j, SearchSpace& s) {
  static const std::set<std::string> known{"base",        "hidden_layers", "activations", "losses",
                                           "learning_rates", "batch_sizes", "epochs",    "use_smote", "grid"};
  require(j.is_object(), ErrorKind::BadConfig, "search space must be a JSON object");
  for (const auto& [key, _] : j.items())
    require(known.count(key) > 0, ErrorKind::BadConfig, "unknown search-space field '" + key + "'");
  try {
    s = SearchSpace{};
    if (j.contains("base")) s.base = j["base"].get<FrameworkConfig>();
    auto list = [&](const char* key, auto& out) {
      if (!j.contains(key)) return;
      require(j[key].is_array() && !j[key].empty(), ErrorKind::EmptySpace,
              std::string("candidate list '") + key + "' is empty");
      j[key].get_to(out);
    };
    list("hidden_layers", s.hidden_layers);
    list("learning_rates", s.learning_rates);
    list("batch_sizes", s.batch_sizes);
    list("epochs", s.epochs);
    if (j.contains("use_smote")) {
      require(j["use_smote"].is_array() && !j["use_smote"].empty(), ErrorKind::EmptySpace,
              "candidate list 'use_smote' is empty");
      for (const auto& v : j["use_smote"]) s.use_smote.push_back(v.get<bool>());
    }
    if (j.contains("activations")) {
      require(j["activations"].is_array() && !j["activations"].empty(), ErrorKind::EmptySpace,
              "candidate list 'activations' is empty");
      for (const auto& a : j["activations"]) s.activations.push_back(neural::parse_activation(a.get<std::string>()));
    }
    list("losses", s.losses);
    s.grid = j.value("grid", false);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::BadConfig, e.what());
  }
}

struct TrialResult {
  int trial = 0;
  FrameworkConfig config;
  EvalReport valid_report;
  std::optional<EvalReport> test_report;
  double objective = 0.0;
  double wall_time = 0.0;
};

struct SearchResult {
  /// Ranked by validation objective, best first; ties keep trial order.
  std::vector<TrialResult> trials;
  FrameworkResult winner;
};

/// Seeded random (or grid) search. Each trial trains on the older 90% of the
/// training deals and is scored on the most recent 10%; the test set is
/// touched once, by the winner. Trial configs are drawn before any trial runs
/// and each trial seeds from (seed, trial index), so thread count never
/// changes the outcome.
inline SearchResult hyper_search(const std::vector<DealRecord>& train, const std::vector<DealRecord>& test,
                                 const DatasetSchema& schema, const SearchSpace& space, int budget,
                                 Objective objective, std::uint64_t seed, unsigned threads = 1) {
  require(space.dimension_count() > 0, ErrorKind::EmptySpace, "search space declares no candidates");
  require(budget >= 1, ErrorKind::BadConfig, "budget must be >= 1");
  const auto [inner, valid] = run_stage("split", [&] {
    return temporal_split(train, SplitSpec{std::nullopt, 0.9});
  });

  std::vector<FrameworkConfig> configs;
  const auto radices = space.radices();
  if (space.grid) {
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(budget), space.grid_size());
    for (std::size_t t = 0; t < n; ++t) {
      std::vector<std::size_t> pick(radices.size());
      std::size_t rest = t;
      for (std::size_t d = radices.size(); d-- > 0;) {
        pick[d] = rest % radices[d];
        rest /= radices[d];
      }
      configs.push_back(space.materialize(pick));
    }
  } else {
    Rng rng(Rng::derive(seed, 0x5EA7C4));
    for (int t = 0; t < budget; ++t) {
      std::vector<std::size_t> pick(radices.size());
      for (std::size_t d = 0; d < radices.size(); ++d) pick[d] = rng.index(radices[d]);
      configs.push_back(space.materialize(pick));
    }
  }
  for (std::size_t t = 0; t < configs.size(); ++t) {
    configs[t].objective = objective;
    configs[t].seed = Rng::derive(seed, 1000 + t);
  }

  std::vector<TrialResult> trials(configs.size());
  std::vector<std::optional<FrameworkResult>> fitted(configs.size());
  std::vector<std::exception_ptr> errors(configs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t t = next++; t < configs.size(); t = next++) {
      try {
        const auto start = std::chrono::steady_clock::now();
        auto res = run_framework(inner, valid, schema, configs[t]);
        trials[t].trial = static_cast<int>(t);
        trials[t].config = configs[t];
        trials[t].valid_report = res.out_of_sample;
        trials[t].objective = objective_value(res.out_of_sample, objective);
        trials[t].wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        fitted[t] = std::move(res);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    }
  };
  const unsigned n_threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(configs.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<std::size_t> order(trials.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return trials[a].objective > trials[b].objective; });

  SearchResult result;
  result.winner = std::move(*fitted[order.front()]);
  const Eigen::VectorXd scores = predict(result.winner.bundle, test);
  const EvalReport test_report = run_stage("evaluate", [&] {
    return evaluate(label_vector(test), scores, result.winner.bundle.threshold);
  });
  result.winner.out_of_sample = test_report;
  for (std::size_t r = 0; r < order.size(); ++r) {
    result.trials.push_back(std::move(trials[order[r]]));
    if (r == 0) result.trials.back().test_report = test_report;
  }
  return result;
}

namespace detail {

inline std::string widths_label(const FrameworkConfig& c) {
  std::string s;
  for (const auto& l : c.network.layers) {
    if (!s.empty()) s += "-";
    s += (l.kind == neural::LayerKind::lstm ? "lstm" : "") + std::to_string(l.width);
  }
  return s.empty() ? "none" : s;
}

inline std::string activation_label(const FrameworkConfig& c) {
  std::string s;
  for (const auto& l : c.network.layers) {
    if (l.kind != neural::LayerKind::dense) continue;
    if (!s.empty()) s += "-";
    s += neural::to_string(l.activation);
  }
  return s.empty() ? "none" : s;
}

inline std::string metric_cell(const std::optional<double>& v) { return v ? csv::format_double(*v) : ""; }

}  // namespace detail

/// One row per trial, ranked; the objective column is nonincreasing.
inline void write_trials_csv(std::ostream& out, const std::vector<TrialResult>& trials) {
  out << "rank,trial,framework,layers,activations,loss,learning_rate,batch_size,epochs,use_smote,"
         "accuracy,precision,recall,f1,auroc,aupr,objective\n";
  for (std::size_t r = 0; r < trials.size(); ++r) {
    const auto& t = trials[r];
    const auto& c = t.config;
    const auto& v = t.valid_report;
    out << r + 1 << ',' << t.trial << ',' << to_string(c.framework) << ',' << detail::widths_label(c) << ','
        << detail::activation_label(c) << ',' << neural::to_string(c.network.loss.type) << ','
        << csv::format_double(c.train.learning_rate) << ',' << c.train.batch_size << ',' << c.train.epochs << ','
        << (c.use_smote ? "true" : "false") << ',' << csv::format_double(v.accuracy) << ','
        << detail::metric_cell(v.precision) << ',' << detail::metric_cell(v.recall) << ','
        << detail::metric_cell(v.f1) << ',' << detail::metric_cell(v.auroc) << ',' << detail::metric_cell(v.aupr)
        << ',' << csv::format_double(t.objective) << '\n';
  }
}

}  // namespace mergepipe
