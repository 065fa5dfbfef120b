#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>

#include <Eigen/Dense>
#include <json.hpp>

#include "mergepipe/error.hpp"

namespace mergepipe::neural {

inline constexpr double kProbEpsilon = 1e-12;

/// p are labels in {0, 1}, q predicted probabilities of label 1.
struct LossKind {
  enum class Type { cross_entropy, focal, f1, tversky };
  Type type = Type::cross_entropy;
  double gamma = 2.0;
  double alpha = 0.3;
  double beta = 0.7;

  static LossKind cross_entropy() { return {}; }
  static LossKind focal(double gamma = 2.0) { return {Type::focal, gamma}; }
  static LossKind f1() { return {Type::f1}; }
  static LossKind tversky(double alpha = 0.3, double beta = 0.7) { return {Type::tversky, 2.0, alpha, beta}; }

  void validate() const {
    if (type == Type::focal) require(gamma > 0.0, ErrorKind::BadConfig, "focal gamma must be > 0");
    if (type == Type::tversky)
      require(alpha >= 0.0 && beta >= 0.0 && alpha + beta > 0.0, ErrorKind::BadConfig,
              "tversky needs alpha, beta >= 0 with alpha + beta > 0");
  }

  bool operator==(const LossKind&) const = default;
};

inline std::string_view to_string(LossKind::Type t) {
  switch (t) {
    case LossKind::Type::cross_entropy: return "cross_entropy";
    case LossKind::Type::focal: return "focal";
    case LossKind::Type::f1: return "f1";
    case LossKind::Type::tversky: return "tversky";
  }
  return "cross_entropy";
}

inline void to_json(nlohmann::json& j, const LossKind& l) {
  j = nlohmann::json{{"kind", to_string(l.type)}};
  if (l.type == LossKind::Type::focal) j["gamma"] = l.gamma;
  if (l.type == LossKind::Type::tversky) {
    j["alpha"] = l.alpha;
    j["beta"] = l.beta;
  }
}

inline void from_json(const nlohmann::json& j, LossKind& l) {
  const std::string kind = j.is_string() ? j.get<std::string>() : j.at("kind").get<std::string>();
  l = LossKind{};
  if (kind == "cross_entropy") {
    l.type = LossKind::Type::cross_entropy;
  } else if (kind == "focal") {
    l.type = LossKind::Type::focal;
  } else if (kind == "f1") {
    l.type = LossKind::Type::f1;
  } else if (kind == "tversky") {
    l.type = LossKind::Type::tversky;
  } else {
    throw Error(ErrorKind::BadConfig, "unknown loss '" + kind + "'");
  }
  if (j.is_object()) {
    l.gamma = j.value("gamma", l.gamma);
    l.alpha = j.value("alpha", l.alpha);
    l.beta = j.value("beta", l.beta);
  }
  l.validate();
}

namespace detail {

inline double clamp_prob(double q) { return std::clamp(q, kProbEpsilon, 1.0 - kProbEpsilon); }

inline void check_lengths(const Eigen::VectorXd& p, const Eigen::VectorXd& q, const Eigen::VectorXd* w) {
  require(p.size() == q.size(), ErrorKind::LengthMismatch, "labels and probabilities differ in length");
  require(!w || w->size() == 0 || w->size() == p.size(), ErrorKind::LengthMismatch,
          "sample weights differ in length");
  require(p.size() > 0, ErrorKind::EmptyInput, "loss over an empty batch");
}

inline double weight(const Eigen::VectorXd* w, Eigen::Index n) { return (w && w->size()) ? (*w)[n] : 1.0; }

struct SoftCounts {
  double tp = 0.0, fp = 0.0, fn = 0.0;
};

inline SoftCounts soft_counts(const Eigen::VectorXd& p, const Eigen::VectorXd& q, const Eigen::VectorXd* w) {
  SoftCounts s;
  for (Eigen::Index n = 0; n < p.size(); ++n) {
    const double wn = weight(w, n);
    const double qn = clamp_prob(q[n]);
    s.tp += wn * p[n] * qn;
    s.fp += wn * (1.0 - p[n]) * qn;
    s.fn += wn * p[n] * (1.0 - qn);
  }
  return s;
}

inline double set_weights(const LossKind& kind, double& beta) {
  if (kind.type == LossKind::Type::f1) {
    beta = 0.5;
    return 0.5;
  }
  beta = kind.beta;
  return kind.alpha;
}

}  // namespace detail

/// Mean cross-entropy / focal loss, or the set-level F1 / Tversky loss.
/// Optional per-sample weights scale each term (mean losses) or each soft
/// count (set losses).
inline double loss_eval(const LossKind& kind, const Eigen::VectorXd& p, const Eigen::VectorXd& q,
                        const Eigen::VectorXd* weights = nullptr) {
  detail::check_lengths(p, q, weights);
  const auto N = static_cast<double>(p.size());
  switch (kind.type) {
    case LossKind::Type::cross_entropy: {
      double total = 0.0;
      for (Eigen::Index n = 0; n < p.size(); ++n) {
        const double qn = detail::clamp_prob(q[n]);
        total -= detail::weight(weights, n) * (p[n] * std::log(qn) + (1.0 - p[n]) * std::log(1.0 - qn));
      }
      return total / N;
    }
    case LossKind::Type::focal: {
      double total = 0.0;
      for (Eigen::Index n = 0; n < p.size(); ++n) {
        const double qn = detail::clamp_prob(q[n]);
        total -= detail::weight(weights, n) * (p[n] * std::pow(1.0 - qn, kind.gamma) * std::log(qn) +
                                               (1.0 - p[n]) * std::pow(qn, kind.gamma) * std::log(1.0 - qn));
      }
      return total / N;
    }
    case LossKind::Type::f1:
    case LossKind::Type::tversky: {
      double beta = 0.0;
      const double alpha = detail::set_weights(kind, beta);
      const auto s = detail::soft_counts(p, q, weights);
      const double denom = s.tp + alpha * s.fp + beta * s.fn;
      return denom > 0.0 ? 1.0 - s.tp / denom : 1.0;
    }
  }
  return 0.0;
}

/// Analytic d loss / d q.
inline Eigen::VectorXd loss_grad(const LossKind& kind, const Eigen::VectorXd& p, const Eigen::VectorXd& q,
                                 const Eigen::VectorXd* weights = nullptr) {
  detail::check_lengths(p, q, weights);
  const auto N = static_cast<double>(p.size());
  Eigen::VectorXd g(p.size());
  switch (kind.type) {
    case LossKind::Type::cross_entropy:
      for (Eigen::Index n = 0; n < p.size(); ++n) {
        const double qn = detail::clamp_prob(q[n]);
        g[n] = -detail::weight(weights, n) * (p[n] / qn - (1.0 - p[n]) / (1.0 - qn)) / N;
      }
      return g;
    case LossKind::Type::focal: {
      const double gm = kind.gamma;
      for (Eigen::Index n = 0; n < p.size(); ++n) {
        const double qn = detail::clamp_prob(q[n]);
        const double pos = -gm * std::pow(1.0 - qn, gm - 1.0) * std::log(qn) + std::pow(1.0 - qn, gm) / qn;
        const double neg = gm * std::pow(qn, gm - 1.0) * std::log(1.0 - qn) - std::pow(qn, gm) / (1.0 - qn);
        g[n] = -detail::weight(weights, n) * (p[n] * pos + (1.0 - p[n]) * neg) / N;
      }
      return g;
    }
    case LossKind::Type::f1:
    case LossKind::Type::tversky: {
      double beta = 0.0;
      const double alpha = detail::set_weights(kind, beta);
      const auto s = detail::soft_counts(p, q, weights);
      const double denom = s.tp + alpha * s.fp + beta * s.fn;
      if (denom <= 0.0) return Eigen::VectorXd::Zero(p.size());
      for (Eigen::Index n = 0; n < p.size(); ++n) {
        const double wn = detail::weight(weights, n);
        const double d_tp = wn * p[n];
        const double d_denom = wn * (p[n] + alpha * (1.0 - p[n]) - beta * p[n]);
        g[n] = -(d_tp * denom - s.tp * d_denom) / (denom * denom);
      }
      return g;
    }
  }
  return g;
}

}  // namespace mergepipe::neural
