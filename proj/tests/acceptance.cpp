// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any failure.
// Usage: acceptance [criterion ids...]

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mergepipe/dataset.hpp"
#include "mergepipe/impute.hpp"
#include "mergepipe/metrics.hpp"
#include "mergepipe/neural.hpp"
#include "mergepipe/pipeline.hpp"
#include "mergepipe/random.hpp"
#include "mergepipe/reduce.hpp"
#include "mergepipe/resample.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace mergepipe;
namespace nn = mergepipe::neural;

namespace {

class Check {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok && failures_.size() < 5) failures_.push_back(what);
    failed_ |= !ok;
  }
  void note(const std::string& s) { notes_.push_back(s); }
  bool failed() const { return failed_; }
  std::string summary() const {
    std::string s;
    for (const auto& n : notes_) s += (s.empty() ? "" : "; ") + n;
    for (const auto& f : failures_) s += (s.empty() ? "" : "; ") + std::string("violated: ") + f;
    return s;
  }

 private:
  bool failed_ = false;
  std::vector<std::string> failures_, notes_;
};

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

Eigen::MatrixXd random_matrix(Rng& rng, Index r, Index c, double scale = 1.0) {
  Eigen::MatrixXd m(r, c);
  for (Index j = 0; j < c; ++j)
    for (Index i = 0; i < r; ++i) m(i, j) = scale * rng.normal();
  return m;
}

// ---------------------------------------------------------------------------
// 1. loss identities

void loss_identities(Check& c) {
  Rng rng(101);
  double worst_focal = 0.0;
  bool tversky_exact = true;
  for (int t = 0; t < 1000; ++t) {
    Eigen::VectorXd p(1), q(1);
    p[0] = rng.uniform() < 0.5 ? 1.0 : 0.0;
    q[0] = 1e-3 + (1.0 - 2e-3) * rng.uniform();
    worst_focal = std::max(worst_focal, std::abs(nn::loss_eval(nn::LossKind::focal(1e-8), p, q) -
                                                 nn::loss_eval(nn::LossKind::cross_entropy(), p, q)));
    tversky_exact &= nn::loss_eval(nn::LossKind::tversky(0.5, 0.5), p, q) == nn::loss_eval(nn::LossKind::f1(), p, q);
  }
  // set-level identity over whole batches as well
  for (int t = 0; t < 100; ++t) {
    Eigen::VectorXd p(20), q(20);
    for (Index i = 0; i < 20; ++i) {
      p[i] = rng.uniform() < 0.3 ? 1.0 : 0.0;
      q[i] = rng.uniform();
    }
    tversky_exact &= nn::loss_eval(nn::LossKind::tversky(0.5, 0.5), p, q) == nn::loss_eval(nn::LossKind::f1(), p, q);
  }
  Eigen::VectorXd one(1), half(1);
  one[0] = 1.0;
  half[0] = 0.5;
  const double ce = nn::loss_eval(nn::LossKind::cross_entropy(), one, half);
  c.note("max |focal - ce| = " + fmt(worst_focal));
  c.expect(worst_focal < 1e-6, "|focal(1e-8) - ce| < 1e-6");
  c.expect(tversky_exact, "tversky(0.5, 0.5) == f1");
  c.expect(std::abs(ce - std::log(2.0)) < 1e-12, "ce(1, 0.5) = ln 2");
}

// ---------------------------------------------------------------------------
// 2. gradient suite

double network_gradient_error(const nn::Network& net, const nn::Examples& ex, Rng& rng) {
  nn::NetworkParams p = net.init_params();
  for (Index i = 0; i < p.values.size(); ++i) p.values[i] += 0.1 * rng.normal();
  Eigen::VectorXd grad;
  net.loss_and_gradient(p, ex, grad);
  const auto numeric = oracle::numeric_gradient(
      [&](const Eigen::VectorXd& v) {
        nn::NetworkParams q = p;
        q.values = v;
        return net.loss(q, ex);
      },
      p.values);
  return oracle::relative_error(grad, numeric);
}

nn::Examples random_examples(Rng& rng, Index n, Index d, Index t) {
  nn::Examples ex;
  ex.inputs.tabular = random_matrix(rng, n, d);
  if (t > 0) ex.inputs.sequences = random_matrix(rng, n, t, 0.5);
  ex.labels.resize(n);
  for (Index i = 0; i < n; ++i) ex.labels[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
  ex.labels[0] = 1.0;
  return ex;
}

double lstm_gradient_error(Rng& rng) {
  const Index H = 1 + static_cast<Index>(rng.index(4)), T = 2 + static_cast<Index>(rng.index(5)), B = 3,
              D = 1 + static_cast<Index>(rng.index(3));
  const Index n_wx = D * 4 * H, n_wh = H * 4 * H;
  Eigen::VectorXd theta(n_wx + n_wh + 4 * H);
  for (Index i = 0; i < theta.size(); ++i) theta[i] = 0.5 * rng.normal();
  std::vector<Eigen::MatrixXd> xs;
  for (Index t = 0; t < T; ++t) xs.push_back(random_matrix(rng, B, D));
  const Eigen::MatrixXd h0 = random_matrix(rng, B, H, 0.3), c0 = random_matrix(rng, B, H, 0.3);
  const Eigen::MatrixXd probe = random_matrix(rng, B, H);
  auto cell_of = [&](const Eigen::VectorXd& v) {
    return nn::LstmCell{Eigen::Map<const Eigen::MatrixXd>(v.data(), D, 4 * H),
                        Eigen::Map<const Eigen::MatrixXd>(v.data() + n_wx, H, 4 * H),
                        Eigen::Map<const Eigen::MatrixXd>(v.data() + n_wx + n_wh, 1, 4 * H)};
  };
  auto objective = [&](const Eigen::VectorXd& v, std::vector<nn::LstmStepCache>* keep) {
    Eigen::MatrixXd h_last;
    auto trace = nn::lstm_unroll(cell_of(v), T, [&](Index t) { return xs[static_cast<std::size_t>(t)]; }, h0, c0,
                                 &h_last);
    double total = probe.cwiseProduct(h_last).sum();
    for (const auto& s : trace) total += 0.5 * s.o.cwiseProduct(s.tanh_c).sum();
    if (keep) *keep = std::move(trace);
    return total;
  };
  std::vector<nn::LstmStepCache> trace;
  objective(theta, &trace);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(theta.size());
  nn::LstmGrads g{{grad.data(), D, 4 * H}, {grad.data() + n_wx, H, 4 * H}, {grad.data() + n_wx + n_wh, 1, 4 * H}};
  nn::lstm_unroll_backward(cell_of(theta), trace, std::vector<Eigen::MatrixXd>(T, Eigen::MatrixXd::Constant(B, H, 0.5)),
                           probe, g);
  return oracle::relative_error(
      grad, oracle::numeric_gradient([&](const Eigen::VectorXd& v) { return objective(v, nullptr); }, theta));
}

void gradient_suite(Check& c) {
  Rng rng(202);
  const std::vector<nn::LossKind> losses{nn::LossKind::cross_entropy(), nn::LossKind::focal(2.0), nn::LossKind::f1(),
                                         nn::LossKind::tversky(0.3, 0.7)};
  double worst_loss = 0.0, worst_dense = 0.0, worst_lstm = 0.0, worst_joint = 0.0;
  for (const auto& kind : losses) {
    for (int inst = 0; inst < 20; ++inst) {
      const Index n = 5 + static_cast<Index>(rng.index(20));
      Eigen::VectorXd p(n), q(n), w(n);
      for (Index i = 0; i < n; ++i) {
        p[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
        q[i] = 0.02 + 0.96 * rng.uniform();
        w[i] = 0.5 + rng.uniform();
      }
      p[0] = 1.0;
      const Eigen::VectorXd* wp = inst % 2 ? &w : nullptr;
      const auto numeric = oracle::numeric_gradient([&](const Eigen::VectorXd& v) { return nn::loss_eval(kind, p, v, wp); }, q);
      worst_loss = std::max(worst_loss, oracle::relative_error(nn::loss_grad(kind, p, q, wp), numeric));
    }
  }
  const std::vector<nn::Activation> acts{nn::Activation::tanh, nn::Activation::sigmoid, nn::Activation::elu,
                                         nn::Activation::selu, nn::Activation::none};
  for (int inst = 0; inst < 20; ++inst) {
    nn::NetworkSpec spec;
    spec.input_width = 2 + static_cast<int>(rng.index(4));
    spec.layers = {nn::LayerSpec::dense(2 + static_cast<int>(rng.index(5)), acts[static_cast<std::size_t>(inst) % 5]),
                   nn::LayerSpec::dense(3, acts[static_cast<std::size_t>(inst + 2) % 5])};
    spec.loss = losses[static_cast<std::size_t>(inst) % 4];
    spec.seed = static_cast<std::uint64_t>(inst);
    worst_dense = std::max(worst_dense,
                           network_gradient_error(nn::Network(spec), random_examples(rng, 8, spec.input_width, 0), rng));
  }
  for (int inst = 0; inst < 20; ++inst) worst_lstm = std::max(worst_lstm, lstm_gradient_error(rng));
  for (int inst = 0; inst < 20; ++inst) {
    nn::NetworkSpec spec;
    spec.input_width = 2 + static_cast<int>(rng.index(3));
    spec.sequence_length = 3 + static_cast<int>(rng.index(5));
    spec.layers = {nn::LayerSpec::lstm(2 + static_cast<int>(rng.index(3))),
                   nn::LayerSpec::dense(3, acts[static_cast<std::size_t>(inst) % 5]),
                   nn::LayerSpec::dense(3, acts[static_cast<std::size_t>(inst + 1) % 5])};
    spec.loss = losses[static_cast<std::size_t>(inst) % 4];
    spec.seed = static_cast<std::uint64_t>(100 + inst);
    worst_joint = std::max(worst_joint, network_gradient_error(nn::Network(spec),
                                                               random_examples(rng, 6, spec.input_width,
                                                                               spec.sequence_length),
                                                               rng));
  }
  c.note("losses " + fmt(worst_loss) + ", dense " + fmt(worst_dense) + ", lstm " + fmt(worst_lstm) + ", joint " +
         fmt(worst_joint));
  c.expect(worst_loss < 1e-6, "loss gradients < 1e-6");
  c.expect(worst_dense < 1e-6, "dense gradients < 1e-6");
  c.expect(worst_lstm < 1e-5, "lstm gradients < 1e-5");
  c.expect(worst_joint < 1e-5, "joint graph gradients < 1e-5");
}

// ---------------------------------------------------------------------------
// 3. PCA / MCA oracle equivalence

double max_abs_up_to_sign(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const std::vector<bool>& use) {
  double worst = 0.0;
  for (Index k = 0; k < a.cols(); ++k) {
    if (!use[static_cast<std::size_t>(k)]) continue;
    const double sign = a.col(k).dot(b.col(k)) < 0 ? -1.0 : 1.0;
    worst = std::max(worst, (a.col(k) - sign * b.col(k)).cwiseAbs().maxCoeff());
  }
  return worst;
}

std::vector<bool> separated(const Eigen::VectorXd& values, Index k) {
  std::vector<bool> use(static_cast<std::size_t>(k), true);
  for (Index a = 0; a < k; ++a)
    for (Index b = 0; b < values.size(); ++b)
      if (a != b && std::abs(values[a] - values[b]) < 1e-6) use[static_cast<std::size_t>(a)] = false;
  return use;
}

void reduction_oracles(Check& c) {
  Rng rng(303);
  double pca_values = 0.0, pca_scores = 0.0, ortho = 0.0, curve_end = 0.0;
  double mca_values = 0.0, mca_scores = 0.0;
  bool monotone = true;
  for (int trial = 0; trial < 50; ++trial) {
    const Index n = 4 + static_cast<Index>(rng.index(9));
    const Index m = 2 + static_cast<Index>(rng.index(7));
    Eigen::MatrixXd x = random_matrix(rng, n, m);
    for (Index j = 0; j < m; ++j) x.col(j) *= 1.0 + static_cast<double>(j);
    const Index keep = std::min(n - 1, m);
    const auto model = pca_fit(x, keep);
    const auto [values, vectors] = oracle::jacobi_eigen(oracle::standardized_covariance(x));
    pca_values = std::max(pca_values, (model.spectrum - values).cwiseAbs().maxCoeff());
    ortho = std::max(ortho, (model.components * model.components.transpose() -
                             Eigen::MatrixXd::Identity(keep, keep)).cwiseAbs().maxCoeff());
    const Eigen::MatrixXd oracle_scores = oracle::standardize(x) * vectors.leftCols(keep);
    pca_scores = std::max(pca_scores, max_abs_up_to_sign(pca_transform(model, x), oracle_scores,
                                                         separated(values, keep)));
    const auto curve = explained_curve(model);
    for (std::size_t k = 1; k < curve.size(); ++k) monotone &= curve[k].second >= curve[k - 1].second;
    curve_end = std::max(curve_end, std::abs(curve.back().second - 1.0));

    // indicator table with every level observed
    const std::size_t q_target = 2 + rng.index(3);
    std::vector<int> levels;
    int total_levels = 0;
    while (levels.size() < q_target) {
      const int l = 2 + static_cast<int>(rng.index(2));
      if (total_levels + l > 8) break;
      levels.push_back(l);
      total_levels += l;
    }
    const std::size_t q = levels.size();
    const Index rows = 4 + static_cast<Index>(rng.index(9));
    std::vector<std::vector<int>> codes(static_cast<std::size_t>(rows), std::vector<int>(q));
    for (std::size_t v = 0; v < q; ++v)
      for (Index i = 0; i < rows; ++i)
        codes[static_cast<std::size_t>(i)][v] =
            i < levels[v] ? static_cast<int>(i) : static_cast<int>(rng.index(static_cast<std::size_t>(levels[v])));
    const auto table = indicator_from_codes(codes, levels);
    const Index cap = std::min<Index>(total_levels - static_cast<Index>(q), rows - 1);
    if (cap < 1) continue;
    const auto mca = mca_fit(table, cap);
    const Eigen::MatrixXd y = oracle::mca_residual(table.values);
    const auto [inertias, axes] = oracle::jacobi_eigen(y.transpose() * y);
    mca_values = std::max(mca_values, (mca.principal_inertias - inertias.head(cap)).cwiseAbs().maxCoeff());
    mca_values = std::max(mca_values, std::abs(mca.total_inertia - inertias.sum()));
    // row principal coordinates D_r^{-1/2} Y V
    const double row_mass = 1.0 / static_cast<double>(rows);
    const Eigen::MatrixXd row_scores = y * axes.leftCols(cap) / std::sqrt(row_mass);
    mca_scores = std::max(mca_scores, max_abs_up_to_sign(mca.fit_row_scores, row_scores, separated(inertias, cap)));
    mca_scores = std::max(mca_scores, max_abs_up_to_sign(mca_transform(mca, table.values), row_scores,
                                                         separated(inertias, cap)));
    const auto mc = explained_curve(mca);
    for (std::size_t k = 1; k < mc.size(); ++k) monotone &= mc[k].second >= mc[k - 1].second;
    curve_end = std::max(curve_end, std::abs(mc.back().second - 1.0));
  }
  c.note("pca eig " + fmt(pca_values) + ", pca scores " + fmt(pca_scores) + ", orthonormality " + fmt(ortho) +
         ", mca inertia " + fmt(mca_values) + ", mca scores " + fmt(mca_scores));
  c.expect(pca_values < 1e-8, "pca eigenvalues within 1e-8");
  c.expect(pca_scores < 1e-8, "pca scores within 1e-8");
  c.expect(ortho < 1e-8, "pca orthonormality within 1e-8");
  c.expect(mca_values < 1e-8, "mca inertias within 1e-8");
  c.expect(mca_scores < 1e-8, "mca scores within 1e-8");
  c.expect(monotone, "explained curves monotone");
  c.expect(curve_end < 1e-8, "explained curves end at 1");
}

// ---------------------------------------------------------------------------
// 4. SMOTE geometry

void smote_geometry(Check& c) {
  Rng meta(404);
  bool geometry = true, counts = true, repeat = true;
  for (std::uint64_t run = 0; run < 100; ++run) {
    const Index minority = 6 + static_cast<Index>(meta.index(20));
    const Index majority = minority + 5 + static_cast<Index>(meta.index(60));
    const Index dims = 1 + static_cast<Index>(meta.index(5));
    const double ratio = 0.5 + 0.5 * meta.uniform();
    const int k = 1 + static_cast<int>(meta.index(5));
    Rng rng(run);
    Eigen::MatrixXd x = random_matrix(rng, majority + minority, dims);
    Eigen::VectorXd y = Eigen::VectorXd::Zero(majority + minority);
    y.tail(minority).setOnes();
    Eigen::MatrixXd min_rows = x.bottomRows(minority);
    const SmoteConfig cfg{.k_neighbors = k, .target_ratio = ratio, .seed = run};
    if (static_cast<double>(minority) >= ratio * static_cast<double>(majority)) continue;
    const auto a = smote(x, y, cfg);
    const auto b = smote(x, y, cfg);
    repeat &= a.features == b.features && a.labels == b.labels;
    const auto target = static_cast<Index>(std::floor(ratio * static_cast<double>(majority)));
    counts &= a.n_synthetic == target - minority && (a.labels.array() > 0.5).count() == target;
    geometry &= validate_smote_geometry(min_rows, a.features.bottomRows(a.n_synthetic), k);
  }
  c.expect(geometry, "every synthetic point on a neighbour segment");
  c.expect(counts, "post-SMOTE counts match floor(ratio * majority)");
  c.expect(repeat, "identical seeds give identical output");
}

// ---------------------------------------------------------------------------
// 5. imputation

void imputation(Check& c) {
  // hand example
  auto row = [](std::optional<double> a, std::optional<double> b) {
    DealRecord d;
    d.numeric = {a, b};
    return d;
  };
  const std::vector<DealRecord> refs{row(1, 10), row(2, 20), row(4, 40), row(5, 50)};
  const auto hand = impute_one(fit_imputer(refs, 2, std::vector<std::size_t>{}), row(3.0, std::nullopt));
  c.expect(hand.numeric[1] && *hand.numeric[1] == 30.0, "hand example imputes 30");

  GeneratorConfig cfg;
  cfg.n_deals = 1200;
  cfg.n_numeric = 20;
  cfg.n_categorical = 6;
  cfg.sentiment_length = 0;
  cfg.missing_rate = 0.0;
  const auto complete = generate_synthetic(cfg, 5);
  Rng mask(55);
  auto masked = complete;
  for (auto& d : masked) {
    for (auto& v : d.numeric)
      if (mask.uniform() < 0.2) v.reset();
    for (auto& v : d.categorical)
      if (mask.uniform() < 0.2) v.reset();
    if (std::none_of(d.numeric.begin(), d.numeric.end(), [](const auto& v) { return v.has_value(); }))
      d.numeric[0] = complete[static_cast<std::size_t>(&d - masked.data())].numeric[0];
  }
  const auto schema = synthetic_schema(cfg);
  const auto model = fit_imputer(masked, 5, schema);
  const auto once = impute(model, masked);
  c.expect(impute(model, once) == once, "imputation is idempotent");
  bool preserved = true;
  for (std::size_t i = 0; i < masked.size(); ++i) {
    for (std::size_t j = 0; j < masked[i].numeric.size(); ++j)
      preserved &= !masked[i].numeric[j] || once[i].numeric[j] == masked[i].numeric[j];
    for (std::size_t j = 0; j < masked[i].categorical.size(); ++j)
      preserved &= !masked[i].categorical[j] || once[i].categorical[j] == masked[i].categorical[j];
  }
  c.expect(preserved, "observed values preserved");

  const Eigen::MatrixXd before = numeric_matrix(complete, cfg.n_numeric);
  const Eigen::MatrixXd after = numeric_matrix(once, cfg.n_numeric);
  double worst_mean = 0.0, worst_var = 0.0, mean_var = 0.0;
  for (Index j = 0; j < before.cols(); ++j) {
    const double m0 = before.col(j).mean(), m1 = after.col(j).mean();
    const double v0 = (before.col(j).array() - m0).square().mean(), v1 = (after.col(j).array() - m1).square().mean();
    worst_mean = std::max(worst_mean, std::abs(m1 - m0) / std::sqrt(v0));
    worst_var = std::max(worst_var, std::abs(v1 - v0) / v0);
    mean_var += std::abs(v1 - v0) / v0 / static_cast<double>(before.cols());
  }
  c.note("max mean shift " + fmt(worst_mean) + " sd, max variance shift " + fmt(worst_var) + " (column average " +
         fmt(mean_var) + ")");
  c.expect(worst_mean < 0.1, "mean shift < 10%");
  c.expect(worst_var < 0.1, "variance shift < 10%");
}

// ---------------------------------------------------------------------------
// 6. metrics

void metrics_checks(Check& c) {
  Rng rng(606);
  double worst_mw = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Index n = 50 + static_cast<Index>(rng.index(400));
    Eigen::VectorXd y(n), s(n);
    for (Index i = 0; i < n; ++i) {
      y[i] = rng.uniform() < 0.3 ? 1.0 : 0.0;
      s[i] = 0.7 * y[i] + rng.normal();
    }
    y[0] = 1.0;
    y[1] = 0.0;
    worst_mw = std::max(worst_mw, std::abs(roc_curve(y, s).second - oracle::mann_whitney_auc(y, s)));
  }
  const Index n = 10000;
  Eigen::VectorXd y(n), s(n);
  for (Index i = 0; i < n; ++i) {
    y[i] = rng.uniform() < 0.2 ? 1.0 : 0.0;
    s[i] = rng.uniform();
  }
  const auto report = evaluate(y, s);
  const double prevalence = y.mean();
  double worst_f1 = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const ConfusionMatrix cm{static_cast<std::int64_t>(1 + rng.index(500)), static_cast<std::int64_t>(rng.index(500)),
                             static_cast<std::int64_t>(rng.index(500)), static_cast<std::int64_t>(rng.index(500))};
    const auto m = scalar_metrics(cm);
    const double harmonic = 2.0 * *m.precision * *m.recall / (*m.precision + *m.recall);
    worst_f1 = std::max(worst_f1, std::abs(*m.f1 - harmonic));
  }
  c.note("mann-whitney gap " + fmt(worst_mw) + ", random auroc " + fmt(*report.auroc) + ", aupr " +
         fmt(*report.aupr) + " at prevalence " + fmt(prevalence));
  c.expect(worst_mw < 1e-9, "auroc equals the Mann-Whitney statistic");
  c.expect(std::abs(*report.auroc - 0.5) <= 0.02, "random auroc 0.50 +- 0.02");
  c.expect(std::abs(*report.aupr - prevalence) <= 0.03, "random aupr = prevalence +- 0.03");
  c.expect(worst_f1 < 1e-12, "f1 is the harmonic mean of precision and recall");
}

// ---------------------------------------------------------------------------
// 7. end-to-end recovery

struct Universe {
  DatasetSchema schema;
  std::vector<DealRecord> train, test;
};

Universe make_universe(GeneratorConfig cfg, std::uint64_t seed) {
  Universe u;
  u.schema = synthetic_schema(cfg);
  std::tie(u.train, u.test) = temporal_split(generate_synthetic(cfg, seed), SplitSpec{cfg.cutoff_date, std::nullopt});
  return u;
}

GeneratorConfig recovery_config(double signal) {
  GeneratorConfig cfg;
  cfg.n_deals = 5000;
  cfg.cancel_rate = 0.20;
  cfg.sentiment_length = 0;
  cfg.test_fraction = 0.3;
  cfg.signal_strength = signal;
  return cfg;
}

void end_to_end(Check& c) {
  FrameworkConfig config = preset("f1/smote-nn-accuracy");
  config.seed = 7;
  const auto high = make_universe(recovery_config(4.0), 17);
  const auto r = run_framework1(high.train, high.test, high.schema, config);
  const auto zero = make_universe(recovery_config(0.0), 17);
  const auto r0 = run_framework1(zero.train, zero.test, zero.schema, config);
  c.note("signal 4: accuracy " + fmt(r.out_of_sample.accuracy) + ", recall " + fmt(r.out_of_sample.recall.value_or(0)) +
         "; signal 0: auroc " + fmt(r0.out_of_sample.auroc.value_or(-1)));
  c.expect(r.out_of_sample.accuracy >= 0.95, "accuracy >= 0.95");
  c.expect(r.out_of_sample.recall.value_or(0) >= 0.95, "recall >= 0.95");
  const double a0 = r0.out_of_sample.auroc.value_or(-1);
  c.expect(a0 >= 0.45 && a0 <= 0.55, "signal-0 auroc in [0.45, 0.55]");
}

// ---------------------------------------------------------------------------
// 8. structure checks

void structure_checks(Check& c) {
  GeneratorConfig cfg;
  cfg.n_deals = 600;
  cfg.test_fraction = 0.3;
  const auto u = make_universe(cfg, 8);
  FrameworkConfig f1 = preset("f1/nn-recall");
  f1.train.epochs = 2;
  const auto r1 = run_framework1(u.train, u.test, u.schema, f1);
  FrameworkConfig f2 = preset("f2/nn-recall");
  f2.train.epochs = 2;
  const auto r2 = run_framework2(u.train, u.test, u.schema, f2);
  const Eigen::MatrixXd emb = nn::autoencoder_encode(*r2.bundle.autoencoder, sentiment_matrix(u.test, 121));
  c.expect(r1.input_width == 65, "F1 input width 65 (got " + std::to_string(r1.input_width) + ")");
  c.expect(r2.input_width == 70, "F2 input width 70 (got " + std::to_string(r2.input_width) + ")");
  c.expect(r2.bundle.autoencoder->spec.sequence_length == 121 && emb.cols() == 5,
           "5-dim embedding from 121-step sequences");

  GeneratorConfig bench;
  bench.n_deals = 3000;
  bench.sentiment_length = 0;
  bench.test_fraction = 0.3;
  bench.signal_strength = 0.6;
  const auto b = make_universe(bench, 88);
  FrameworkConfig logit;
  logit.seed = 3;
  const auto plain = fit_logit(b.train, b.test, b.schema, logit, false);
  const auto weighted = fit_logit(b.train, b.test, b.schema, logit, true);
  const double rp = plain.out_of_sample.recall.value_or(0), rw = weighted.out_of_sample.recall.value_or(0);
  c.note("widths " + std::to_string(r1.input_width) + "/" + std::to_string(r2.input_width) + ", logit recall " +
         fmt(rp) + ", weighted-logit recall " + fmt(rw));
  c.expect(rw >= rp, "weighted-logit recall >= logit recall");
}

// ---------------------------------------------------------------------------
// 9. leakage guard

void leakage(Check& c) {
  GeneratorConfig cfg;
  cfg.n_deals = 400;
  cfg.test_fraction = 0.3;
  cfg.signal_strength = 1.5;
  const auto u = make_universe(cfg, 9);
  auto flipped = u.test;
  for (auto& d : flipped) d.label = 1 - d.label;
  const auto dump = [](const ModelBundle& b) { return nlohmann::json(b).dump(); };
  for (const char* name : {"f1/smote-nn-f1", "f2/smote-nn-f1", "f3/smote-nn-f1"}) {
    FrameworkConfig config = preset(name);
    config.train.epochs = 3;
    config.autoencoder_train.epochs = 3;
    const auto a = run_framework(u.train, u.test, u.schema, config);
    const auto b = run_framework(u.train, flipped, u.schema, config);
    c.expect(dump(a.bundle) == dump(b.bundle), std::string(name) + " bundle identical");
  }
  SearchSpace space;
  space.base = preset("f1/nn-f1");
  space.base.train.epochs = 3;
  space.hidden_layers = {{8}, {16, 8}};
  space.learning_rates = {1e-3, 1e-2};
  space.use_smote = {false, true};
  const auto sa = hyper_search(u.train, u.test, u.schema, space, 4, Objective::f1, 9);
  const auto sb = hyper_search(u.train, flipped, u.schema, space, 4, Objective::f1, 9);
  c.expect(nlohmann::json(sa.trials.front().config).dump() == nlohmann::json(sb.trials.front().config).dump(),
           "selected hyperparameters identical");
  c.expect(dump(sa.winner.bundle) == dump(sb.winner.bundle), "search winner bundle identical");
  bool ranking = sa.trials.size() == sb.trials.size();
  for (std::size_t t = 0; ranking && t < sa.trials.size(); ++t) ranking &= sa.trials[t].trial == sb.trials[t].trial;
  c.expect(ranking, "trial ranking identical");
}

// ---------------------------------------------------------------------------
// 10. CLI determinism

int run_cli(const std::string& args, const std::string& log) {
  const std::string cmd = std::string(MERGEPIPE_CLI_PATH) + " " + args + " > " + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void cli_determinism(Check& c) {
  testutil::TempDir dir("acceptance");
  const auto gen = dir.write("gen.json", R"({"n_deals": 500, "test_fraction": 0.3, "signal_strength": 1.5})");
  const auto log = dir.file("log.txt");
  const auto small = dir.write("run.json", R"({"train": {"epochs": 3}, "autoencoder_train": {"epochs": 2}})");
  const auto space = dir.write("space.json", R"({"base": {"preset": "f1/nn-f1", "train": {"epochs": 3}},
                                                 "hidden_layers": [[8], [16]], "learning_rates": [0.001, 0.01],
                                                 "use_smote": [false, true]})");
  const std::vector<std::pair<std::string, std::vector<std::string>>> commands{
      {"generate --config " + gen + " --seed 5 --out-dir {dir}", {"deals.csv", "deals.schema.json", "deals.manifest.json"}},
      {"run --data {data} --preset f1/smote-nn-f1 --config " + small + " --seed 2 --out-dir {dir}",
       {"report.json", "roc.csv", "pr.csv", "model.json", "manifest.json"}},
      {"run --data {data} --preset f2/smote-nn-f1 --config " + small + " --seed 2 --out-dir {dir}",
       {"report.json", "roc.csv", "pr.csv", "model.json", "manifest.json"}},
      {"run --data {data} --preset f3/nn-f1 --config " + small + " --seed 2 --out-dir {dir}",
       {"report.json", "roc.csv", "pr.csv", "model.json", "manifest.json"}},
      {"run --data {data} --baseline weighted-logit --config " + small + " --out-dir {dir}",
       {"report.json", "roc.csv", "pr.csv", "model.json", "manifest.json"}},
      {"search --data {data} --space " + space + " --budget 4 --seed 6 --out-dir {dir}",
       {"trials.csv", "report.json", "model.json", "manifest.json"}},
  };
  const std::string data = dir.file("gen_a/deals.csv");
  int index = 0;
  for (const auto& [pattern, artifacts] : commands) {
    std::string first, second;
    for (const char* side : {"_a", "_b"}) {
      std::string args = pattern;
      const std::string out = dir.file("cmd" + std::to_string(index) + side);
      args.replace(args.find("{dir}"), 5, index == 0 ? dir.file(std::string("gen") + side) : out);
      if (const auto p = args.find("{data}"); p != std::string::npos) args.replace(p, 6, data);
      const int code = run_cli(args, log);
      c.expect(code == 0, "exit 0 for: " + args + " (" + testutil::slurp(log) + ")");
    }
    for (const auto& name : artifacts) {
      const auto a = testutil::slurp(index == 0 ? dir.file("gen_a/" + name)
                                                : dir.file("cmd" + std::to_string(index) + "_a/" + name));
      const auto b = testutil::slurp(index == 0 ? dir.file("gen_b/" + name)
                                                : dir.file("cmd" + std::to_string(index) + "_b/" + name));
      c.expect(!a.empty() && a == b, pattern.substr(0, pattern.find(' ')) + " " + name + " byte-identical");
    }
    ++index;
  }
  c.note(std::to_string(commands.size()) + " commands rerun");
}

struct Criterion {
  int id;
  std::string name;
  double budget_seconds;
  std::function<void(Check&)> body;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {1, "loss identities", 1, loss_identities},
      {2, "gradient suite", 30, gradient_suite},
      {3, "PCA/MCA oracle equivalence", 10, reduction_oracles},
      {4, "SMOTE geometry", 10, smote_geometry},
      {5, "imputation", 10, imputation},
      {6, "metrics", 5, metrics_checks},
      {7, "end-to-end recovery", 300, end_to_end},
      {8, "structure checks", 300, structure_checks},
      {9, "leakage guard", 120, leakage},
      {10, "CLI determinism", 300, cli_determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& cr : criteria) {
    if (!only.empty() && !only.count(cr.id)) continue;
    Check check;
    const auto start = std::chrono::steady_clock::now();
    try {
      cr.body(check);
    } catch (const std::exception& e) {
      check.expect(false, std::string("exception: ") + e.what());
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    check.expect(seconds < cr.budget_seconds, "runtime " + fmt(seconds) + " s over budget");
    failures += check.failed();
    std::cout << (check.failed() ? "FAIL" : "PASS") << "  criterion " << cr.id << ": " << cr.name << " ["
              << fmt(seconds, 3) << " s / " << cr.budget_seconds << " s] " << check.summary() << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
