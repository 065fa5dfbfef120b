#pragma once

#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mergepipe/error.hpp"
#include "mergepipe/neural/activation.hpp"

namespace mergepipe::neural {

using Eigen::Index;

/// Gate blocks are laid out [input, forget, cell candidate, output] along the
/// 4H columns. An input width of zero gives a cell driven by its state alone.
struct LstmCell {
  Eigen::Ref<const Eigen::MatrixXd> wx;  // d x 4H
  Eigen::Ref<const Eigen::MatrixXd> wh;  // H x 4H
  Eigen::Ref<const Eigen::MatrixXd> b;   // 1 x 4H

  Index input_width() const { return wx.rows(); }
  Index hidden() const { return wh.rows(); }
};

struct LstmStepCache {
  Eigen::MatrixXd x, h_prev, c_prev, i, f, g, o, c, tanh_c;
};

/// One step over a batch: x is B x d, h and c are B x H.
inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> lstm_step(const LstmCell& cell, const Eigen::MatrixXd& x,
                                                             const Eigen::MatrixXd& h, const Eigen::MatrixXd& c,
                                                             LstmStepCache* cache = nullptr) {
  const Index H = cell.hidden();
  require(cell.wh.cols() == 4 * H && cell.wx.cols() == 4 * H && cell.b.cols() == 4 * H, ErrorKind::ShapeMismatch,
          "LSTM weight shapes are inconsistent");
  require(h.cols() == H && c.cols() == H && h.rows() == c.rows(), ErrorKind::ShapeMismatch, "LSTM state shape");
  require(x.cols() == cell.input_width() && (x.rows() == h.rows() || cell.input_width() == 0),
          ErrorKind::ShapeMismatch, "LSTM input shape");
  const Index B = h.rows();
  Eigen::MatrixXd z = h * cell.wh;
  if (cell.input_width() > 0) z.noalias() += x * cell.wx;
  z.rowwise() += cell.b.row(0);

  auto sig = [](double v) { return sigmoid(v); };
  Eigen::MatrixXd i = z.middleCols(0, H).unaryExpr(sig);
  Eigen::MatrixXd f = z.middleCols(H, H).unaryExpr(sig);
  Eigen::MatrixXd g = z.middleCols(2 * H, H).array().tanh().matrix();
  Eigen::MatrixXd o = z.middleCols(3 * H, H).unaryExpr(sig);
  Eigen::MatrixXd c_next = f.cwiseProduct(c) + i.cwiseProduct(g);
  Eigen::MatrixXd tanh_c = c_next.array().tanh().matrix();
  Eigen::MatrixXd h_next = o.cwiseProduct(tanh_c);
  if (cache) {
    cache->x = cell.input_width() > 0 ? x : Eigen::MatrixXd(B, 0);
    cache->h_prev = h;
    cache->c_prev = c;
    cache->i = std::move(i);
    cache->f = std::move(f);
    cache->g = std::move(g);
    cache->o = std::move(o);
    cache->c = c_next;
    cache->tanh_c = std::move(tanh_c);
  }
  return {std::move(h_next), std::move(c_next)};
}

struct LstmGrads {
  Eigen::Map<Eigen::MatrixXd> wx, wh, b;
};

/// Backpropagates one step. Accumulates weight gradients and returns
/// (dx, dh_prev, dc_prev).
struct LstmStepGrads {
  Eigen::MatrixXd dx, dh_prev, dc_prev;
};

inline LstmStepGrads lstm_step_backward(const LstmCell& cell, const LstmStepCache& s, const Eigen::MatrixXd& dh,
                                        const Eigen::MatrixXd& dc_next, LstmGrads& grads) {
  const Index H = cell.hidden();
  const Index B = dh.rows();
  const Eigen::ArrayXXd d_o = dh.array() * s.tanh_c.array();
  const Eigen::ArrayXXd dc = dc_next.array() + dh.array() * s.o.array() * (1.0 - s.tanh_c.array().square());
  Eigen::MatrixXd dz(B, 4 * H);
  dz.middleCols(0, H) = (dc * s.g.array() * s.i.array() * (1.0 - s.i.array())).matrix();
  dz.middleCols(H, H) = (dc * s.c_prev.array() * s.f.array() * (1.0 - s.f.array())).matrix();
  dz.middleCols(2 * H, H) = (dc * s.i.array() * (1.0 - s.g.array().square())).matrix();
  dz.middleCols(3 * H, H) = (d_o * s.o.array() * (1.0 - s.o.array())).matrix();

  grads.wh.noalias() += s.h_prev.transpose() * dz;
  grads.b += dz.colwise().sum();
  LstmStepGrads out;
  if (cell.input_width() > 0) {
    grads.wx.noalias() += s.x.transpose() * dz;
    out.dx = dz * cell.wx.transpose();
  } else {
    out.dx = Eigen::MatrixXd(B, 0);
  }
  out.dh_prev = dz * cell.wh.transpose();
  out.dc_prev = (dc * s.f.array()).matrix();
  return out;
}

/// Runs the cell over T steps. step_input(t) yields the B x d input at t.
template <class InputFn>
std::vector<LstmStepCache> lstm_unroll(const LstmCell& cell, Index steps, InputFn step_input, Eigen::MatrixXd h,
                                       Eigen::MatrixXd c, Eigen::MatrixXd* h_last = nullptr) {
  std::vector<LstmStepCache> trace(static_cast<std::size_t>(steps));
  for (Index t = 0; t < steps; ++t) {
    auto [h_next, c_next] = lstm_step(cell, step_input(t), h, c, &trace[static_cast<std::size_t>(t)]);
    h = std::move(h_next);
    c = std::move(c_next);
  }
  if (h_last) *h_last = std::move(h);
  return trace;
}

struct LstmUnrollGrads {
  std::vector<Eigen::MatrixXd> dx;
  Eigen::MatrixXd dh0, dc0;
};

/// Backpropagation through time. dh_steps, when nonempty, holds an extra
/// gradient on h_t for every step (e.g. from a per-step output head).
inline LstmUnrollGrads lstm_unroll_backward(const LstmCell& cell, const std::vector<LstmStepCache>& trace,
                                            const std::vector<Eigen::MatrixXd>& dh_steps, Eigen::MatrixXd dh_last,
                                            LstmGrads& grads) {
  const auto T = trace.size();
  LstmUnrollGrads out;
  out.dx.resize(T);
  Eigen::MatrixXd dh = std::move(dh_last);
  Eigen::MatrixXd dc = Eigen::MatrixXd::Zero(dh.rows(), dh.cols());
  for (std::size_t t = T; t-- > 0;) {
    if (!dh_steps.empty()) dh += dh_steps[t];
    auto step = lstm_step_backward(cell, trace[t], dh, dc, grads);
    out.dx[t] = std::move(step.dx);
    dh = std::move(step.dh_prev);
    dc = std::move(step.dc_prev);
  }
  out.dh0 = std::move(dh);
  out.dc0 = std::move(dc);
  return out;
}

}  // namespace mergepipe::neural
