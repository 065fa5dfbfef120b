#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mergepipe/error.hpp"

namespace mergepipe::neural {

using Eigen::Index;

struct ParamBlock {
  std::string name;
  Index rows = 0;
  Index cols = 0;
  Index offset = 0;

  Index size() const { return rows * cols; }
  bool operator==(const ParamBlock&) const = default;
};

/// Named matrix blocks laid out back to back in one flat vector.
class ParamLayout {
 public:
  std::size_t add(std::string name, Index rows, Index cols) {
    blocks_.push_back({std::move(name), rows, cols, total_});
    total_ += rows * cols;
    return blocks_.size() - 1;
  }

  const ParamBlock& operator[](std::size_t i) const { return blocks_[i]; }
  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  Index total() const { return total_; }

  std::size_t find(std::string_view name) const {
    for (std::size_t i = 0; i < blocks_.size(); ++i)
      if (blocks_[i].name == name) return i;
    throw Error(ErrorKind::ShapeMismatch, "no parameter block '" + std::string(name) + "'");
  }

  bool operator==(const ParamLayout&) const = default;

 private:
  std::vector<ParamBlock> blocks_;
  Index total_ = 0;
};

inline Eigen::Map<Eigen::MatrixXd> block(Eigen::VectorXd& flat, const ParamBlock& b) {
  return {flat.data() + b.offset, b.rows, b.cols};
}

inline Eigen::Map<const Eigen::MatrixXd> block(const Eigen::VectorXd& flat, const ParamBlock& b) {
  return {flat.data() + b.offset, b.rows, b.cols};
}

struct NetworkParams {
  ParamLayout layout;
  Eigen::VectorXd values;
  std::uint64_t init_seed = 0;

  Eigen::Map<Eigen::MatrixXd> operator[](std::size_t i) { return block(values, layout[i]); }
  Eigen::Map<const Eigen::MatrixXd> operator[](std::size_t i) const { return block(values, layout[i]); }
  Eigen::Map<Eigen::MatrixXd> operator[](std::string_view name) { return (*this)[layout.find(name)]; }
  Eigen::Map<const Eigen::MatrixXd> operator[](std::string_view name) const { return (*this)[layout.find(name)]; }

  bool all_finite() const { return values.allFinite(); }
};

inline constexpr int kParamsFormatVersion = 1;

inline void to_json(nlohmann::json& j, const NetworkParams& p) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : p.layout.blocks()) blocks.push_back({{"name", b.name}, {"rows", b.rows}, {"cols", b.cols}});
  j = nlohmann::json{{"format_version", kParamsFormatVersion},
                     {"init_seed", p.init_seed},
                     {"blocks", blocks},
                     {"values", std::vector<double>(p.values.data(), p.values.data() + p.values.size())}};
}

inline void from_json(const nlohmann::json& j, NetworkParams& p) {
  require(j.at("format_version").get<int>() == kParamsFormatVersion, ErrorKind::BadConfig,
          "unsupported parameter format version");
  p = NetworkParams{};
  p.init_seed = j.at("init_seed").get<std::uint64_t>();
  for (const auto& b : j.at("blocks"))
    p.layout.add(b.at("name").get<std::string>(), b.at("rows").get<Index>(), b.at("cols").get<Index>());
  const auto values = j.at("values").get<std::vector<double>>();
  require(static_cast<Index>(values.size()) == p.layout.total(), ErrorKind::ShapeMismatch,
          "parameter vector length does not match the shape table");
  p.values = Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Index>(values.size()));
}

}  // namespace mergepipe::neural
