#pragma once

#include <cmath>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "mergepipe/error.hpp"

namespace mergepipe::neural {

enum class Activation { none, relu, elu, selu, sigmoid, tanh };

inline constexpr double kSeluAlpha = 1.6732632423543772;
inline constexpr double kSeluLambda = 1.0507009873554805;

constexpr std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::none: return "none";
    case Activation::relu: return "relu";
    case Activation::elu: return "elu";
    case Activation::selu: return "selu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
  }
  return "none";
}

inline Activation parse_activation(std::string_view s) {
  for (auto a : {Activation::none, Activation::relu, Activation::elu, Activation::selu, Activation::sigmoid,
                 Activation::tanh})
    if (to_string(a) == s) return a;
  throw Error(ErrorKind::BadConfig, "unknown activation '" + std::string(s) + "'");
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double activate(Activation a, double z) {
  switch (a) {
    case Activation::none: return z;
    case Activation::relu: return z > 0.0 ? z : 0.0;
    case Activation::elu: return z > 0.0 ? z : std::expm1(z);
    case Activation::selu: return kSeluLambda * (z > 0.0 ? z : kSeluAlpha * std::expm1(z));
    case Activation::sigmoid: return sigmoid(z);
    case Activation::tanh: return std::tanh(z);
  }
  return z;
}

/// d activate / dz at pre-activation z.
inline double activate_grad(Activation a, double z) {
  switch (a) {
    case Activation::none: return 1.0;
    case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::elu: return z > 0.0 ? 1.0 : std::exp(z);
    case Activation::selu: return kSeluLambda * (z > 0.0 ? 1.0 : kSeluAlpha * std::exp(z));
    case Activation::sigmoid: {
      const double s = sigmoid(z);
      return s * (1.0 - s);
    }
    case Activation::tanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
  }
  return 1.0;
}

inline Eigen::MatrixXd activate(Activation a, const Eigen::MatrixXd& z) {
  if (a == Activation::none) return z;
  return z.unaryExpr([a](double v) { return activate(a, v); });
}

inline Eigen::MatrixXd activate_grad(Activation a, const Eigen::MatrixXd& z) {
  return z.unaryExpr([a](double v) { return activate_grad(a, v); });
}

}  // namespace mergepipe::neural
