#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mergepipe/error.hpp"
#include "mergepipe/neural/activation.hpp"
#include "mergepipe/neural/losses.hpp"
#include "mergepipe/neural/lstm.hpp"
#include "mergepipe/neural/params.hpp"
#include "mergepipe/random.hpp"

namespace mergepipe::neural {

enum class LayerKind { dense, lstm };

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  int width = 1;
  Activation activation = Activation::relu;

  static LayerSpec dense(int width, Activation act) { return {LayerKind::dense, width, act}; }
  static LayerSpec lstm(int width) { return {LayerKind::lstm, width, Activation::tanh}; }
  bool operator==(const LayerSpec&) const = default;
};

/// Hidden layers followed by an implicit sigmoid output unit.
///
/// Without an lstm layer this is a plain feedforward net over the tabular
/// input. With a leading lstm layer it becomes a two-branch model: the LSTM
/// reads the sequence and keeps its final hidden state, the first dense layer
/// after it processes the tabular input, and the two outputs are concatenated
/// and fed through the remaining dense layers.
struct NetworkSpec {
  std::vector<LayerSpec> layers;
  LossKind loss;
  std::uint64_t seed = 0;
  int input_width = 0;
  int sequence_length = 0;

  bool has_sequence_branch() const { return !layers.empty() && layers.front().kind == LayerKind::lstm; }

  void validate() const {
    loss.validate();
    require(input_width >= 1, ErrorKind::BadConfig, "network input_width must be >= 1");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      require(layers[l].width >= 1, ErrorKind::BadConfig, "layer widths must be >= 1");
      require(layers[l].kind == LayerKind::dense || l == 0, ErrorKind::BadConfig,
              "an lstm layer may only appear first");
    }
    if (has_sequence_branch()) {
      require(layers.size() >= 2, ErrorKind::BadConfig, "a sequence network needs a dense tabular branch");
      require(sequence_length >= 1, ErrorKind::BadConfig, "sequence_length must be >= 1");
    }
  }

  bool operator==(const NetworkSpec&) const = default;
};

inline void to_json(nlohmann::json& j, const LayerSpec& l) {
  j = nlohmann::json{{"kind", l.kind == LayerKind::lstm ? "lstm" : "dense"}, {"width", l.width}};
  if (l.kind == LayerKind::dense) j["activation"] = to_string(l.activation);
}

inline void from_json(const nlohmann::json& j, LayerSpec& l) {
  const auto kind = j.value("kind", std::string("dense"));
  require(kind == "dense" || kind == "lstm", ErrorKind::BadConfig, "unknown layer kind '" + kind + "'");
  l.kind = kind == "lstm" ? LayerKind::lstm : LayerKind::dense;
  l.width = j.at("width").get<int>();
  l.activation = l.kind == LayerKind::lstm ? Activation::tanh
                                           : parse_activation(j.value("activation", std::string("relu")));
}

inline void to_json(nlohmann::json& j, const NetworkSpec& s) {
  j = nlohmann::json{{"layers", s.layers},
                     {"loss", s.loss},
                     {"seed", s.seed},
                     {"input_width", s.input_width},
                     {"sequence_length", s.sequence_length}};
}

inline void from_json(const nlohmann::json& j, NetworkSpec& s) {
  s.layers = j.value("layers", std::vector<LayerSpec>{});
  s.loss = j.contains("loss") ? j["loss"].get<LossKind>() : LossKind{};
  s.seed = j.value("seed", std::uint64_t{0});
  s.input_width = j.value("input_width", 0);
  s.sequence_length = j.value("sequence_length", 0);
}

/// Tabular rows (B x d) and, for sequence networks, sequences (B x T).
struct Inputs {
  Eigen::MatrixXd tabular;
  Eigen::MatrixXd sequences;

  Index size() const { return tabular.rows(); }

  Inputs rows(const std::vector<Index>& idx) const {
    Inputs out;
    out.tabular.resize(static_cast<Index>(idx.size()), tabular.cols());
    out.sequences.resize(sequences.rows() ? static_cast<Index>(idx.size()) : 0, sequences.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      out.tabular.row(static_cast<Index>(r)) = tabular.row(idx[r]);
      if (sequences.rows()) out.sequences.row(static_cast<Index>(r)) = sequences.row(idx[r]);
    }
    return out;
  }
};

struct Examples {
  Inputs inputs;
  Eigen::VectorXd labels;
  /// Per-sample loss weights; empty means all ones.
  Eigen::VectorXd weights;

  Index size() const { return labels.size(); }

  Examples rows(const std::vector<Index>& idx) const {
    Examples out;
    out.inputs = inputs.rows(idx);
    out.labels.resize(static_cast<Index>(idx.size()));
    if (weights.size()) out.weights.resize(static_cast<Index>(idx.size()));
    for (std::size_t r = 0; r < idx.size(); ++r) {
      out.labels[static_cast<Index>(r)] = labels[idx[r]];
      if (weights.size()) out.weights[static_cast<Index>(r)] = weights[idx[r]];
    }
    return out;
  }
};

namespace detail {

struct DenseCache {
  Eigen::MatrixXd input, pre;
};

inline Eigen::MatrixXd dense_forward(const Eigen::Ref<const Eigen::MatrixXd>& w,
                                     const Eigen::Ref<const Eigen::MatrixXd>& b, Activation act,
                                     const Eigen::MatrixXd& x, DenseCache* cache) {
  Eigen::MatrixXd pre = x * w;
  pre.rowwise() += b.row(0);
  Eigen::MatrixXd out = activate(act, pre);
  if (cache) {
    cache->input = x;
    cache->pre = std::move(pre);
  }
  return out;
}

/// Accumulates dW, db and returns d input.
inline Eigen::MatrixXd dense_backward(const Eigen::Ref<const Eigen::MatrixXd>& w, Activation act,
                                      const DenseCache& cache, const Eigen::MatrixXd& d_out,
                                      Eigen::Map<Eigen::MatrixXd> dw, Eigen::Map<Eigen::MatrixXd> db) {
  const Eigen::MatrixXd d_pre =
      act == Activation::none ? d_out : Eigen::MatrixXd(d_out.cwiseProduct(activate_grad(act, cache.pre)));
  dw.noalias() += cache.input.transpose() * d_pre;
  db += d_pre.colwise().sum();
  return d_pre * w.transpose();
}

inline double init_std(Activation act, Index fan_in) {
  const double gain = (act == Activation::relu || act == Activation::elu) ? 2.0 : 1.0;
  return std::sqrt(gain / static_cast<double>(std::max<Index>(fan_in, 1)));
}

}  // namespace detail

class Network {
 public:
  explicit Network(NetworkSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    Index in = spec_.input_width;
    std::size_t first_dense = 0;
    if (spec_.has_sequence_branch()) {
      lstm_width_ = spec_.layers.front().width;
      const Index H = lstm_width_;
      lstm_blocks_ = {layout_.add("lstm.wx", 1, 4 * H), layout_.add("lstm.wh", H, 4 * H),
                      layout_.add("lstm.b", 1, 4 * H)};
      const auto& branch = spec_.layers[1];
      branch_ = {layout_.add("branch.w", in, branch.width), layout_.add("branch.b", 1, branch.width)};
      in = branch.width + H;
      first_dense = 2;
    }
    for (std::size_t l = first_dense; l < spec_.layers.size(); ++l) {
      const auto& layer = spec_.layers[l];
      const auto name = "dense" + std::to_string(hidden_.size());
      hidden_.push_back({layout_.add(name + ".w", in, layer.width), layout_.add(name + ".b", 1, layer.width),
                         layer.activation});
      in = layer.width;
    }
    out_ = {layout_.add("out.w", in, 1), layout_.add("out.b", 1, 1)};
  }

  const NetworkSpec& spec() const { return spec_; }
  const ParamLayout& layout() const { return layout_; }

  NetworkParams init_params() const {
    NetworkParams p;
    p.layout = layout_;
    p.init_seed = spec_.seed;
    p.values = Eigen::VectorXd::Zero(layout_.total());
    Rng rng(Rng::derive(spec_.seed, 0));
    auto fill = [&](std::size_t blk, double sd) {
      auto m = p[blk];
      for (Index c = 0; c < m.cols(); ++c)
        for (Index r = 0; r < m.rows(); ++r) m(r, c) = sd * rng.normal();
    };
    if (spec_.has_sequence_branch()) {
      const double sd = 1.0 / std::sqrt(static_cast<double>(1 + lstm_width_));
      fill(lstm_blocks_[0], sd);
      fill(lstm_blocks_[1], sd);
      p[lstm_blocks_[2]].middleCols(lstm_width_, lstm_width_).setConstant(1.0);
      fill(branch_.w, detail::init_std(spec_.layers[1].activation, spec_.input_width));
    }
    for (const auto& h : hidden_) fill(h.w, detail::init_std(h.act, layout_[h.w].rows));
    fill(out_.w, detail::init_std(Activation::sigmoid, layout_[out_.w].rows));
    return p;
  }

  /// Predicted probabilities, one per row.
  Eigen::VectorXd predict(const NetworkParams& params, const Inputs& inputs) const {
    const Eigen::MatrixXd logits = forward(params, inputs, nullptr);
    return logits.col(0).unaryExpr([](double z) { return sigmoid(z); });
  }

  /// Loss over the batch; writes d loss / d params into grad (resized).
  double loss_and_gradient(const NetworkParams& params, const Examples& batch, Eigen::VectorXd& grad) const {
    Cache cache;
    const Eigen::MatrixXd logits = forward(params, batch.inputs, &cache);
    const Eigen::VectorXd z = logits.col(0);
    const Eigen::VectorXd q = z.unaryExpr([](double v) { return sigmoid(v); });
    const Eigen::VectorXd* w = batch.weights.size() ? &batch.weights : nullptr;
    const double loss = loss_eval(spec_.loss, batch.labels, q, w);
    const Eigen::VectorXd dq = loss_grad(spec_.loss, batch.labels, q, w);
    // q (1 - q) evaluated as sigmoid(z) sigmoid(-z) to avoid cancellation.
    const Eigen::VectorXd dz = dq.cwiseProduct(z.unaryExpr([](double v) { return sigmoid(v) * sigmoid(-v); }));
    grad = Eigen::VectorXd::Zero(layout_.total());
    backward(params, cache, Eigen::MatrixXd(dz), grad);
    return loss;
  }

  double loss(const NetworkParams& params, const Examples& batch) const {
    const Eigen::VectorXd q = predict(params, batch.inputs);
    return loss_eval(spec_.loss, batch.labels, q, batch.weights.size() ? &batch.weights : nullptr);
  }

 private:
  struct DenseBlocks {
    std::size_t w = 0, b = 0;
    Activation act = Activation::none;
  };

  struct Cache {
    std::vector<LstmStepCache> lstm;
    detail::DenseCache branch;
    std::vector<detail::DenseCache> hidden;
    detail::DenseCache out;
  };

  LstmCell cell(const NetworkParams& p) const {
    return {p[lstm_blocks_[0]], p[lstm_blocks_[1]], p[lstm_blocks_[2]]};
  }

  Eigen::MatrixXd forward(const NetworkParams& p, const Inputs& in, Cache* cache) const {
    require(p.layout == layout_, ErrorKind::ShapeMismatch, "parameters do not match the network layout");
    require(in.tabular.cols() == spec_.input_width, ErrorKind::ShapeMismatch,
            "network expects " + std::to_string(spec_.input_width) + " tabular columns, got " +
                std::to_string(in.tabular.cols()));
    const Index B = in.tabular.rows();
    Eigen::MatrixXd x;
    if (spec_.has_sequence_branch()) {
      require(in.sequences.rows() == B && in.sequences.cols() == spec_.sequence_length, ErrorKind::ShapeMismatch,
              "network expects " + std::to_string(spec_.sequence_length) + "-step sequences");
      const auto c = cell(p);
      Eigen::MatrixXd h_last;
      Eigen::MatrixXd zeros = Eigen::MatrixXd::Zero(B, lstm_width_);
      auto trace = lstm_unroll(
          c, in.sequences.cols(), [&](Index t) { return Eigen::MatrixXd(in.sequences.col(t)); }, zeros, zeros,
          &h_last);
      const Eigen::MatrixXd a = detail::dense_forward(p[branch_.w], p[branch_.b], spec_.layers[1].activation,
                                                      in.tabular, cache ? &cache->branch : nullptr);
      x.resize(B, a.cols() + lstm_width_);
      x << a, h_last;
      if (cache) cache->lstm = std::move(trace);
    } else {
      x = in.tabular;
    }
    if (cache) cache->hidden.resize(hidden_.size());
    for (std::size_t l = 0; l < hidden_.size(); ++l)
      x = detail::dense_forward(p[hidden_[l].w], p[hidden_[l].b], hidden_[l].act, x,
                                cache ? &cache->hidden[l] : nullptr);
    return detail::dense_forward(p[out_.w], p[out_.b], Activation::none, x, cache ? &cache->out : nullptr);
  }

  void backward(const NetworkParams& p, const Cache& cache, const Eigen::MatrixXd& d_logits,
                Eigen::VectorXd& grad) const {
    auto g = [&](std::size_t blk) { return block(grad, layout_[blk]); };
    Eigen::MatrixXd d = detail::dense_backward(p[out_.w], Activation::none, cache.out, d_logits, g(out_.w), g(out_.b));
    for (std::size_t l = hidden_.size(); l-- > 0;)
      d = detail::dense_backward(p[hidden_[l].w], hidden_[l].act, cache.hidden[l], d, g(hidden_[l].w),
                                 g(hidden_[l].b));
    if (!spec_.has_sequence_branch()) return;
    const Index a_width = spec_.layers[1].width;
    detail::dense_backward(p[branch_.w], spec_.layers[1].activation, cache.branch, d.leftCols(a_width), g(branch_.w),
                           g(branch_.b));
    LstmGrads lg{g(lstm_blocks_[0]), g(lstm_blocks_[1]), g(lstm_blocks_[2])};
    lstm_unroll_backward(cell(p), cache.lstm, {}, d.rightCols(lstm_width_), lg);
  }

  NetworkSpec spec_;
  ParamLayout layout_;
  Index lstm_width_ = 0;
  std::vector<std::size_t> lstm_blocks_;
  DenseBlocks branch_;
  std::vector<DenseBlocks> hidden_;
  DenseBlocks out_;
};

/// Single-sample convenience: probability for one tabular row (and sequence).
inline double forward(const NetworkSpec& spec, const NetworkParams& params, const Eigen::RowVectorXd& tabular,
                      const Eigen::RowVectorXd& sequence = {}) {
  Inputs in;
  in.tabular = tabular;
  if (sequence.size()) in.sequences = sequence;
  return Network(spec).predict(params, in)[0];
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  int epochs = 100;
  int batch_size = 64;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Epochs without validation improvement before stopping; 0 disables.
  int patience = 10;
  double threshold = 0.5;
  /// Parameter blocks whose name starts with any of these prefixes stay fixed.
  std::vector<std::string> frozen;

  void validate() const {
    require(epochs >= 1, ErrorKind::BadConfig, "epochs must be >= 1");
    require(batch_size >= 1, ErrorKind::BadConfig, "batch_size must be >= 1");
    require(learning_rate >= 0.0, ErrorKind::BadConfig, "learning_rate must be >= 0");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && epsilon > 0.0, ErrorKind::BadConfig,
            "invalid Adam settings");
    require(patience >= 0, ErrorKind::BadConfig, "patience must be >= 0");
    require(threshold >= 0.0 && threshold <= 1.0, ErrorKind::BadConfig, "threshold must lie in [0, 1]");
  }

  bool operator==(const TrainConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},       {"batch_size", c.batch_size}, {"learning_rate", c.learning_rate},
                     {"beta1", c.beta1},         {"beta2", c.beta2},           {"epsilon", c.epsilon},
                     {"patience", c.patience},   {"threshold", c.threshold},   {"frozen", c.frozen}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.epsilon = j.value("epsilon", d.epsilon);
  c.patience = j.value("patience", d.patience);
  c.threshold = j.value("threshold", d.threshold);
  c.frozen = j.value("frozen", d.frozen);
  c.validate();
}

class Adam {
 public:
  Adam(Index size, const TrainConfig& config)
      : m_(Eigen::VectorXd::Zero(size)), v_(Eigen::VectorXd::Zero(size)), config_(config) {}

  void step(Eigen::VectorXd& values, const Eigen::VectorXd& grad) {
    ++t_;
    m_ = config_.beta1 * m_ + (1.0 - config_.beta1) * grad;
    v_ = config_.beta2 * v_ + (1.0 - config_.beta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(config_.beta1, t_);
    const double c2 = 1.0 - std::pow(config_.beta2, t_);
    values.array() -=
        config_.learning_rate * (m_.array() / c1) / ((v_.array() / c2).sqrt() + config_.epsilon);
  }

 private:
  Eigen::VectorXd m_, v_;
  TrainConfig config_;
  int t_ = 0;
};

/// Zero mask over the frozen blocks of a layout.
inline Eigen::VectorXd trainable_mask(const ParamLayout& layout, const std::vector<std::string>& frozen) {
  Eigen::VectorXd mask = Eigen::VectorXd::Ones(layout.total());
  for (const auto& b : layout.blocks())
    for (const auto& prefix : frozen)
      if (b.name.rfind(prefix, 0) == 0) mask.segment(b.offset, b.size()).setZero();
  return mask;
}

struct TrainResult {
  NetworkParams params;
  std::vector<double> train_loss;
  std::vector<double> valid_loss;
  int best_epoch = 0;
};

/// Mini-batch Adam with a seeded shuffle. When validation data is given and
/// patience > 0, training stops after `patience` epochs without improvement
/// and the best parameters are returned.
inline TrainResult train(const NetworkSpec& spec, const Examples& data, const Examples* valid,
                         const TrainConfig& config, const NetworkParams* initial = nullptr) {
  config.validate();
  require(data.size() > 0, ErrorKind::EmptyInput, "no training examples");
  const Network net(spec);
  TrainResult result;
  result.params = initial ? *initial : net.init_params();
  require(result.params.layout == net.layout(), ErrorKind::ShapeMismatch, "initial parameters do not fit the spec");
  const Eigen::VectorXd mask = trainable_mask(net.layout(), config.frozen);

  Adam adam(net.layout().total(), config);
  Rng shuffle(Rng::derive(spec.seed, 1));
  std::vector<Index> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), Index{0});
  const bool early_stop = valid && valid->size() > 0 && config.patience > 0;
  NetworkParams best = result.params;
  double best_loss = early_stop ? net.loss(result.params, *valid) : 0.0;
  int since_best = 0;
  Eigen::VectorXd grad;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle.shuffle(order.begin(), order.end());
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const auto end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const std::vector<Index> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(end));
      const Examples batch = data.rows(idx);
      const double loss = net.loss_and_gradient(result.params, batch, grad);
      require(std::isfinite(loss) && grad.allFinite(), ErrorKind::NonFiniteLoss,
              "loss diverged at epoch " + std::to_string(epoch));
      epoch_loss += loss * static_cast<double>(idx.size());
      grad.array() *= mask.array();
      adam.step(result.params.values, grad);
    }
    require(result.params.all_finite(), ErrorKind::NonFiniteLoss, "parameters diverged");
    result.train_loss.push_back(epoch_loss / static_cast<double>(order.size()));
    if (early_stop) {
      const double vl = net.loss(result.params, *valid);
      require(std::isfinite(vl), ErrorKind::NonFiniteLoss, "validation loss diverged");
      result.valid_loss.push_back(vl);
      if (vl < best_loss) {
        best_loss = vl;
        best = result.params;
        result.best_epoch = epoch;
        since_best = 0;
      } else if (++since_best >= config.patience) {
        break;
      }
    } else {
      result.best_epoch = epoch;
    }
  }
  if (early_stop) result.params = std::move(best);
  return result;
}

}  // namespace mergepipe::neural
