#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mergepipe/error.hpp"
#include "mergepipe/neural/activation.hpp"
#include "mergepipe/neural/lstm.hpp"
#include "mergepipe/neural/network.hpp"
#include "mergepipe/neural/params.hpp"
#include "mergepipe/random.hpp"

namespace mergepipe::neural {

struct AutoencoderSpec {
  int sequence_length = 121;
  int embedding_dim = 5;
  int encoder_width = 16;
  int decoder_width = 16;
  /// Activation of the embedding layer.
  Activation activation = Activation::sigmoid;
  std::uint64_t seed = 0;

  void validate() const {
    require(sequence_length >= 2, ErrorKind::BadConfig, "sequence_length must be >= 2");
    require(embedding_dim >= 1 && embedding_dim < sequence_length, ErrorKind::BadConfig,
            "embedding_dim must satisfy 1 <= K < T");
    require(encoder_width >= 1 && decoder_width >= 1, ErrorKind::BadConfig, "LSTM widths must be >= 1");
  }

  bool operator==(const AutoencoderSpec&) const = default;
};

inline void to_json(nlohmann::json& j, const AutoencoderSpec& s) {
  j = nlohmann::json{{"sequence_length", s.sequence_length}, {"embedding_dim", s.embedding_dim},
                     {"encoder_width", s.encoder_width},     {"decoder_width", s.decoder_width},
                     {"activation", to_string(s.activation)}, {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, AutoencoderSpec& s) {
  const AutoencoderSpec d;
  s.sequence_length = j.value("sequence_length", d.sequence_length);
  s.embedding_dim = j.value("embedding_dim", d.embedding_dim);
  s.encoder_width = j.value("encoder_width", d.encoder_width);
  s.decoder_width = j.value("decoder_width", d.decoder_width);
  s.activation = parse_activation(j.value("activation", std::string(to_string(d.activation))));
  s.seed = j.value("seed", d.seed);
}

/// Encoder LSTM reads x_1..x_T; its final hidden state is mapped to the
/// embedding Z. The decoder LSTM starts from h_0 = tanh(Z W + b), c_0 = 0,
/// receives no input, and emits x_hat_t = h_t w_out + b_out at every step.
/// Training minimises the mean Euclidean distance ||x - x_hat||.
class Autoencoder {
 public:
  explicit Autoencoder(AutoencoderSpec spec) : spec_(spec) {
    spec_.validate();
    const Index He = spec_.encoder_width, Hd = spec_.decoder_width, K = spec_.embedding_dim;
    enc_ = {layout_.add("enc.wx", 1, 4 * He), layout_.add("enc.wh", He, 4 * He), layout_.add("enc.b", 1, 4 * He)};
    embed_w_ = layout_.add("embed.w", He, K);
    embed_b_ = layout_.add("embed.b", 1, K);
    init_w_ = layout_.add("init.w", K, Hd);
    init_b_ = layout_.add("init.b", 1, Hd);
    dec_ = {layout_.add("dec.wx", 0, 4 * Hd), layout_.add("dec.wh", Hd, 4 * Hd), layout_.add("dec.b", 1, 4 * Hd)};
    out_w_ = layout_.add("out.w", Hd, 1);
    out_b_ = layout_.add("out.b", 1, 1);
  }

  const AutoencoderSpec& spec() const { return spec_; }
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
    const double se = 1.0 / std::sqrt(1.0 + spec_.encoder_width);
    const double sd = 1.0 / std::sqrt(static_cast<double>(spec_.decoder_width));
    fill(enc_[0], se);
    fill(enc_[1], se);
    p[enc_[2]].middleCols(spec_.encoder_width, spec_.encoder_width).setConstant(1.0);
    fill(embed_w_, 1.0 / std::sqrt(static_cast<double>(spec_.encoder_width)));
    fill(init_w_, 1.0 / std::sqrt(static_cast<double>(spec_.embedding_dim)));
    fill(dec_[1], sd);
    p[dec_[2]].middleCols(spec_.decoder_width, spec_.decoder_width).setConstant(1.0);
    fill(out_w_, sd);
    return p;
  }

  Eigen::MatrixXd encode(const NetworkParams& p, const Eigen::MatrixXd& x) const {
    return encode_impl(p, x, nullptr);
  }

  Eigen::MatrixXd reconstruct(const NetworkParams& p, const Eigen::MatrixXd& x) const {
    return decode_impl(p, encode_impl(p, x, nullptr), nullptr);
  }

  double loss(const NetworkParams& p, const Eigen::MatrixXd& x) const {
    const Eigen::MatrixXd x_hat = reconstruct(p, x);
    return (x - x_hat).rowwise().norm().mean();
  }

  double loss_and_gradient(const NetworkParams& p, const Eigen::MatrixXd& x, Eigen::VectorXd& grad) const {
    Cache cache;
    const Eigen::MatrixXd z = encode_impl(p, x, &cache);
    const Eigen::MatrixXd x_hat = decode_impl(p, z, &cache);
    const Index B = x.rows();
    const Index T = x.cols();
    const Eigen::MatrixXd diff = x_hat - x;
    const Eigen::VectorXd norms = diff.rowwise().norm();
    const double loss = norms.mean();

    grad = Eigen::VectorXd::Zero(layout_.total());
    auto g = [&](std::size_t blk) { return block(grad, layout_[blk]); };
    Eigen::MatrixXd d_xhat(B, T);
    for (Index b = 0; b < B; ++b)
      d_xhat.row(b) = norms[b] > 0.0 ? Eigen::RowVectorXd(diff.row(b) / (norms[b] * static_cast<double>(B)))
                                     : Eigen::RowVectorXd::Zero(T);

    // Output head, applied at every decoder step.
    const auto out_w = p[out_w_];
    auto g_out_w = g(out_w_);
    auto g_out_b = g(out_b_);
    std::vector<Eigen::MatrixXd> dh_steps(static_cast<std::size_t>(T));
    for (Index t = 0; t < T; ++t) {
      const auto& h_t = cache.dec_h[static_cast<std::size_t>(t)];
      const Eigen::VectorXd d = d_xhat.col(t);
      g_out_w.noalias() += h_t.transpose() * d;
      g_out_b(0, 0) += d.sum();
      dh_steps[static_cast<std::size_t>(t)] = d * out_w.col(0).transpose();
    }
    LstmGrads dec_grads{g(dec_[0]), g(dec_[1]), g(dec_[2])};
    const auto dec_back = lstm_unroll_backward(cell(p, dec_), cache.dec_trace, dh_steps,
                                               Eigen::MatrixXd::Zero(B, spec_.decoder_width), dec_grads);
    const Eigen::MatrixXd dz = detail::dense_backward(p[init_w_], Activation::tanh, cache.init, dec_back.dh0,
                                                      g(init_w_), g(init_b_));
    const Eigen::MatrixXd dh_enc =
        detail::dense_backward(p[embed_w_], spec_.activation, cache.embed, dz, g(embed_w_), g(embed_b_));
    LstmGrads enc_grads{g(enc_[0]), g(enc_[1]), g(enc_[2])};
    lstm_unroll_backward(cell(p, enc_), cache.enc_trace, {}, dh_enc, enc_grads);
    return loss;
  }

 private:
  struct Cache {
    std::vector<LstmStepCache> enc_trace, dec_trace;
    detail::DenseCache embed, init;
    std::vector<Eigen::MatrixXd> dec_h;
  };

  LstmCell cell(const NetworkParams& p, const std::vector<std::size_t>& blk) const {
    return {p[blk[0]], p[blk[1]], p[blk[2]]};
  }

  Eigen::MatrixXd encode_impl(const NetworkParams& p, const Eigen::MatrixXd& x, Cache* cache) const {
    require(p.layout == layout_, ErrorKind::ShapeMismatch, "parameters do not match the autoencoder layout");
    require(x.cols() == spec_.sequence_length, ErrorKind::ShapeMismatch,
            "autoencoder expects sequences of length " + std::to_string(spec_.sequence_length));
    const Index B = x.rows();
    const Eigen::MatrixXd zeros = Eigen::MatrixXd::Zero(B, spec_.encoder_width);
    Eigen::MatrixXd h_last;
    auto trace = lstm_unroll(
        cell(p, enc_), x.cols(), [&](Index t) { return Eigen::MatrixXd(x.col(t)); }, zeros, zeros, &h_last);
    if (cache) cache->enc_trace = std::move(trace);
    return detail::dense_forward(p[embed_w_], p[embed_b_], spec_.activation, h_last,
                                 cache ? &cache->embed : nullptr);
  }

  Eigen::MatrixXd decode_impl(const NetworkParams& p, const Eigen::MatrixXd& z, Cache* cache) const {
    const Index B = z.rows();
    const Index T = spec_.sequence_length;
    Eigen::MatrixXd h = detail::dense_forward(p[init_w_], p[init_b_], Activation::tanh, z,
                                              cache ? &cache->init : nullptr);
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(B, spec_.decoder_width);
    const auto dec = cell(p, dec_);
    const auto out_w = p[out_w_];
    const double out_b = p[out_b_](0, 0);
    const Eigen::MatrixXd no_input(B, 0);
    Eigen::MatrixXd x_hat(B, T);
    if (cache) {
      cache->dec_trace.resize(static_cast<std::size_t>(T));
      cache->dec_h.resize(static_cast<std::size_t>(T));
    }
    for (Index t = 0; t < T; ++t) {
      auto [h_next, c_next] =
          lstm_step(dec, no_input, h, c, cache ? &cache->dec_trace[static_cast<std::size_t>(t)] : nullptr);
      h = std::move(h_next);
      c = std::move(c_next);
      x_hat.col(t) = (h * out_w).col(0).array() + out_b;
      if (cache) cache->dec_h[static_cast<std::size_t>(t)] = h;
    }
    return x_hat;
  }

  AutoencoderSpec spec_;
  ParamLayout layout_;
  std::vector<std::size_t> enc_, dec_;
  std::size_t embed_w_ = 0, embed_b_ = 0, init_w_ = 0, init_b_ = 0, out_w_ = 0, out_b_ = 0;
};

struct FittedAutoencoder {
  AutoencoderSpec spec;
  NetworkParams params;
  std::vector<double> loss_trace;
};

inline void to_json(nlohmann::json& j, const FittedAutoencoder& f) {
  j = nlohmann::json{{"spec", f.spec}, {"params", f.params}};
}

inline void from_json(const nlohmann::json& j, FittedAutoencoder& f) {
  f.spec = j.at("spec").get<AutoencoderSpec>();
  f.params = j.at("params").get<NetworkParams>();
}

/// Trains on the reconstruction loss for config.epochs epochs (no early stop).
inline FittedAutoencoder autoencoder_fit(const AutoencoderSpec& spec, const Eigen::MatrixXd& sequences,
                                         const TrainConfig& config) {
  config.validate();
  require(sequences.rows() > 0, ErrorKind::EmptyInput, "no sequences to fit");
  const Autoencoder ae(spec);
  require(sequences.cols() == spec.sequence_length, ErrorKind::ShapeMismatch,
          "sequences must have length " + std::to_string(spec.sequence_length));
  FittedAutoencoder fitted{spec, ae.init_params(), {}};
  Adam adam(ae.layout().total(), config);
  Rng shuffle(Rng::derive(spec.seed, 1));
  std::vector<Index> order(static_cast<std::size_t>(sequences.rows()));
  std::iota(order.begin(), order.end(), Index{0});
  Eigen::VectorXd grad;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle.shuffle(order.begin(), order.end());
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const auto end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      Eigen::MatrixXd batch(static_cast<Index>(end - start), sequences.cols());
      for (std::size_t r = start; r < end; ++r) batch.row(static_cast<Index>(r - start)) = sequences.row(order[r]);
      const double loss = ae.loss_and_gradient(fitted.params, batch, grad);
      require(std::isfinite(loss) && grad.allFinite(), ErrorKind::NonFiniteLoss,
              "autoencoder loss diverged at epoch " + std::to_string(epoch));
      epoch_loss += loss * static_cast<double>(end - start);
      adam.step(fitted.params.values, grad);
    }
    fitted.loss_trace.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  return fitted;
}

inline Eigen::MatrixXd autoencoder_encode(const FittedAutoencoder& fitted, const Eigen::MatrixXd& sequences) {
  return Autoencoder(fitted.spec).encode(fitted.params, sequences);
}

inline Eigen::MatrixXd autoencoder_reconstruct(const FittedAutoencoder& fitted, const Eigen::MatrixXd& sequences) {
  return Autoencoder(fitted.spec).reconstruct(fitted.params, sequences);
}

}  // namespace mergepipe::neural
