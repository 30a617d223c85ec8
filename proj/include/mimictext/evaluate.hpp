#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mimictext/error.hpp"
#include "mimictext/rng.hpp"

namespace mimictext {

// ---------------------------------------------------------------------------
// Metrics

struct ScoredSet {
  std::vector<double> scores;
  std::vector<int> labels;  // 0/1, parallel to scores

  std::size_t size() const noexcept { return scores.size(); }
  std::size_t positives() const { return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1)); }

  void check() const {
    if (scores.size() != labels.size()) throw DataError("scores and labels differ in length");
    if (scores.empty()) throw DataError("empty scored set");
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (!std::isfinite(scores[i])) throw DataError("non-finite score");
      if (labels[i] != 0 && labels[i] != 1) throw DataError("label outside {0,1}");
    }
  }
};

namespace detail {

// Indices sorted by descending score.
inline std::vector<std::size_t> order_desc(std::span<const double> s) {
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  return idx;
}

}  // namespace detail

// Mann-Whitney AUC: P(score_pos > score_neg) + P(tie)/2, evaluated with
// integer pair counts. nullopt when either class is absent.
inline std::optional<double> auroc(const ScoredSet& s) {
  s.check();
  const auto idx = detail::order_desc(s.scores);
  std::uint64_t pos = 0, neg = 0;
  for (int l : s.labels) (l ? pos : neg) += 1;
  if (pos == 0 || neg == 0) return std::nullopt;

  // Walk from the lowest score upwards, tracking negatives strictly below.
  std::uint64_t twice_concordant = 0;
  std::uint64_t neg_below = 0;
  std::size_t i = idx.size();
  while (i > 0) {
    std::size_t j = i;
    const double v = s.scores[idx[i - 1]];
    std::uint64_t gp = 0, gn = 0;
    while (j > 0 && s.scores[idx[j - 1]] == v) {
      (s.labels[idx[j - 1]] ? gp : gn) += 1;
      --j;
    }
    twice_concordant += 2 * gp * neg_below + gp * gn;
    neg_below += gn;
    i = j;
  }
  return static_cast<double>(static_cast<long double>(twice_concordant) / (2.0L * pos * neg));
}

// Average precision: sum over distinct score thresholds that admit positives of
// (recall increase) x (precision at that threshold); tied scores form one
// threshold. nullopt when there are no positives.
inline std::optional<double> auprc(const ScoredSet& s) {
  s.check();
  const std::size_t total_pos = s.positives();
  if (total_pos == 0) return std::nullopt;
  const auto idx = detail::order_desc(s.scores);
  std::size_t tp = 0, fp = 0;
  double ap = 0;
  std::size_t i = 0;
  while (i < idx.size()) {
    const double v = s.scores[idx[i]];
    std::size_t gp = 0;
    while (i < idx.size() && s.scores[idx[i]] == v) {
      if (s.labels[idx[i]]) {
        ++gp;
        ++tp;
      } else {
        ++fp;
      }
      ++i;
    }
    if (gp) ap += (static_cast<double>(gp) / total_pos) * (static_cast<double>(tp) / (tp + fp));
  }
  return ap;
}

struct MetricsReport {
  std::optional<double> auroc;
  std::optional<double> auprc;
  std::size_t n = 0;
  std::size_t n_pos = 0;
};

inline MetricsReport evaluate_scores(const ScoredSet& s) {
  return {mimictext::auroc(s), mimictext::auprc(s), s.size(), s.positives()};
}

inline nlohmann::json to_json(const MetricsReport& m) {
  nlohmann::json j;
  j["auroc"] = m.auroc ? nlohmann::json(*m.auroc) : nlohmann::json(nullptr);
  j["auprc"] = m.auprc ? nlohmann::json(*m.auprc) : nlohmann::json(nullptr);
  j["n"] = m.n;
  j["n_pos"] = m.n_pos;
  return j;
}

// ---------------------------------------------------------------------------
// Logistic regression

// Dense row-major matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  static Matrix from_rows(const std::vector<std::vector<double>>& rows) {
    Matrix m(rows.size(), rows.empty() ? 0 : rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != m.cols) throw DataError("ragged feature matrix");
      std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
    }
    return m;
  }

  Matrix select_rows(std::span<const std::size_t> idx) const {
    Matrix m(idx.size(), cols);
    for (std::size_t i = 0; i < idx.size(); ++i) std::copy_n(row(idx[i]).begin(), cols, m.row(i).begin());
    return m;
  }
};

struct LogRegHyper {
  double l2_lambda = 0.0;
  double lr = 0.1;
  int max_iters = 2000;
  double tol = 1e-8;

  bool operator==(const LogRegHyper&) const = default;
};

inline std::vector<LogRegHyper> default_hyper_grid() {
  std::vector<LogRegHyper> g;
  for (double l : {0.0, 0.001, 0.01, 0.1, 1.0}) g.push_back({l, 0.1, 2000, 1e-8});
  return g;
}

inline nlohmann::json to_json(const LogRegHyper& h) {
  return {{"l2_lambda", h.l2_lambda}, {"lr", h.lr}, {"max_iters", h.max_iters}, {"tol", h.tol}};
}

inline LogRegHyper hyper_from_json(const nlohmann::json& j) {
  LogRegHyper h;
  h.l2_lambda = j.value("l2_lambda", h.l2_lambda);
  h.lr = j.value("lr", h.lr);
  h.max_iters = j.value("max_iters", h.max_iters);
  h.tol = j.value("tol", h.tol);
  return h;
}

struct LogRegModel {
  std::vector<double> weights;  // on standardized features
  double bias = 0.0;
  std::vector<double> mean;
  std::vector<double> stddev;  // 1 for zero-variance features
  std::vector<bool> pinned;    // zero-variance features; weight held at 0
  LogRegHyper hyper;
  int iterations = 0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> loss_history;  // accepted losses, not serialized

  double decision(std::span<const double> x) const {
    double z = bias;
    for (std::size_t j = 0; j < weights.size(); ++j) z += weights[j] * (x[j] - mean[j]) / stddev[j];
    return z;
  }

  double predict_proba(std::span<const double> x) const {
    const double z = decision(x);
    return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  }

  std::vector<double> predict_proba(const Matrix& X) const {
    std::vector<double> out(X.rows);
    for (std::size_t i = 0; i < X.rows; ++i) out[i] = predict_proba(X.row(i));
    return out;
  }
};

namespace detail {

// log(1 + e^z) without overflow.
inline double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

inline double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

// Nonzero entries of X per row, so products with raw (unstandardized) data
// cost O(nnz). Standardization is applied through the weights instead.
struct SparseRows {
  std::vector<std::size_t> start;
  std::vector<std::uint32_t> col;
  std::vector<double> val;

  explicit SparseRows(const Matrix& X) {
    start.reserve(X.rows + 1);
    start.push_back(0);
    for (std::size_t i = 0; i < X.rows; ++i) {
      for (std::size_t j = 0; j < X.cols; ++j) {
        const double v = X.at(i, j);
        if (v != 0.0) {
          col.push_back(static_cast<std::uint32_t>(j));
          val.push_back(v);
        }
      }
      start.push_back(col.size());
    }
  }
};

}  // namespace detail

// Regularized mean log loss and its gradient on standardized features:
//   L(w, b) = mean_i[softplus(z_i) - y_i z_i] + (lambda / 2) |w|^2,
//   z_i = w . (x_i - mean) / sd + b.
// The bias is not penalized. `grad` receives d/dw followed by d/db.
inline double logloss_and_gradient(const Matrix& X, std::span<const int> y, std::span<const double> mean,
                                   std::span<const double> sd, std::span<const double> w, double b, double lambda,
                                   std::vector<double>* grad) {
  const std::size_t n = X.rows, d = X.cols;
  double loss = 0;
  if (grad) grad->assign(d + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double z = b;
    for (std::size_t j = 0; j < d; ++j) z += w[j] * (X.at(i, j) - mean[j]) / sd[j];
    loss += detail::softplus(z) - y[i] * z;
    if (grad) {
      const double r = detail::sigmoid(z) - y[i];
      for (std::size_t j = 0; j < d; ++j) (*grad)[j] += r * (X.at(i, j) - mean[j]) / sd[j];
      (*grad)[d] += r;
    }
  }
  loss /= static_cast<double>(n);
  double reg = 0;
  for (std::size_t j = 0; j < d; ++j) reg += w[j] * w[j];
  loss += 0.5 * lambda * reg;
  if (grad) {
    for (std::size_t j = 0; j <= d; ++j) (*grad)[j] /= static_cast<double>(n);
    for (std::size_t j = 0; j < d; ++j) (*grad)[j] += lambda * w[j];
  }
  return loss;
}

// Full-batch gradient descent from zero weights. A step that raises the loss is
// retried with half the learning rate, so accepted losses never increase.
// Stops when the accepted loss changes by less than tol or after max_iters.
inline LogRegModel train_logreg(const Matrix& X, std::span<const int> y, const LogRegHyper& hyper) {
  const std::size_t n = X.rows, d = X.cols;
  if (n == 0 || y.size() != n) throw DataError("feature matrix and labels differ in length");
  std::size_t npos = 0;
  for (int v : y) {
    if (v != 0 && v != 1) throw DataError("label outside {0,1}");
    npos += static_cast<std::size_t>(v);
  }
  if (npos == 0 || npos == n) throw DataError("training labels contain a single class");
  for (double v : X.data)
    if (!std::isfinite(v)) throw DataError("non-finite feature value");

  LogRegModel m;
  m.hyper = hyper;
  m.mean.assign(d, 0.0);
  m.stddev.assign(d, 1.0);
  m.pinned.assign(d, false);
  for (std::size_t j = 0; j < d; ++j) {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) s += X.at(i, j);
    const double mu = s / static_cast<double>(n);
    double ss = 0;
    for (std::size_t i = 0; i < n; ++i) ss += (X.at(i, j) - mu) * (X.at(i, j) - mu);
    const double sd = std::sqrt(ss / static_cast<double>(n));
    m.mean[j] = mu;
    if (sd > 1e-12 * std::max(1.0, std::abs(mu))) {
      m.stddev[j] = sd;
    } else {
      m.pinned[j] = true;
    }
  }
  m.weights.assign(d, 0.0);

  const detail::SparseRows sx(X);
  // z = raw . (w / sd) + (b - sum_j w_j mean_j / sd_j)
  auto margins = [&](std::span<const double> w, double b, std::vector<double>& z) {
    std::vector<double> a(d);
    double shift = b;
    for (std::size_t j = 0; j < d; ++j) {
      a[j] = w[j] / m.stddev[j];
      shift -= a[j] * m.mean[j];
    }
    z.assign(n, shift);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = sx.start[i]; k < sx.start[i + 1]; ++k) z[i] += a[sx.col[k]] * sx.val[k];
  };
  auto loss_at = [&](const std::vector<double>& z, std::span<const double> w) {
    double l = 0;
    for (std::size_t i = 0; i < n; ++i) l += detail::softplus(z[i]) - y[i] * z[i];
    l /= static_cast<double>(n);
    double reg = 0;
    for (double v : w) reg += v * v;
    return l + 0.5 * hyper.l2_lambda * reg;
  };

  std::vector<double> z, z_try, w_try(d), grad(d);
  margins(m.weights, m.bias, z);
  double loss = loss_at(z, m.weights);
  m.initial_loss = loss;
  m.loss_history.push_back(loss);
  double lr = hyper.lr;

  for (int it = 0; it < hyper.max_iters; ++it) {
    // gradient: (X_std^T r) / n + lambda w, with X_std = (X - mean) / sd
    std::vector<double> xr(d, 0.0);
    double rsum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = detail::sigmoid(z[i]) - y[i];
      rsum += r;
      for (std::size_t k = sx.start[i]; k < sx.start[i + 1]; ++k) xr[sx.col[k]] += r * sx.val[k];
    }
    double gnorm = 0;
    for (std::size_t j = 0; j < d; ++j) {
      grad[j] = m.pinned[j] ? 0.0
                            : (xr[j] - m.mean[j] * rsum) / (static_cast<double>(n) * m.stddev[j]) +
                                  hyper.l2_lambda * m.weights[j];
      gnorm += grad[j] * grad[j];
    }
    const double gb = rsum / static_cast<double>(n);
    gnorm += gb * gb;
    if (gnorm == 0.0) break;

    double new_loss = 0;
    double b_try = 0;
    bool accepted = false;
    for (int halvings = 0; halvings < 60; ++halvings) {
      for (std::size_t j = 0; j < d; ++j) w_try[j] = m.weights[j] - lr * grad[j];
      b_try = m.bias - lr * gb;
      margins(w_try, b_try, z_try);
      new_loss = loss_at(z_try, w_try);
      if (new_loss <= loss) {
        accepted = true;
        break;
      }
      lr *= 0.5;
    }
    if (!accepted) break;
    m.weights.swap(w_try);
    w_try.resize(d);
    m.bias = b_try;
    z.swap(z_try);
    const double delta = loss - new_loss;
    loss = new_loss;
    m.loss_history.push_back(loss);
    m.iterations = it + 1;
    if (delta < hyper.tol) break;
  }
  m.final_loss = loss;
  return m;
}

inline nlohmann::json to_json(const LogRegModel& m) {
  std::vector<int> pinned(m.pinned.begin(), m.pinned.end());
  return {{"weights", m.weights},   {"bias", m.bias},           {"mean", m.mean},
          {"stddev", m.stddev},     {"pinned", pinned},         {"hyper", to_json(m.hyper)},
          {"iterations", m.iterations}, {"initial_loss", m.initial_loss}, {"final_loss", m.final_loss}};
}

inline LogRegModel model_from_json(const nlohmann::json& j) {
  LogRegModel m;
  try {
    m.weights = j.at("weights").get<std::vector<double>>();
    m.bias = j.at("bias").get<double>();
    m.mean = j.at("mean").get<std::vector<double>>();
    m.stddev = j.at("stddev").get<std::vector<double>>();
    auto pinned = j.at("pinned").get<std::vector<int>>();
    m.pinned.assign(pinned.begin(), pinned.end());
    m.hyper = hyper_from_json(j.at("hyper"));
    m.iterations = j.value("iterations", 0);
    m.initial_loss = j.value("initial_loss", 0.0);
    m.final_loss = j.value("final_loss", 0.0);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed model JSON: ") + e.what());
  }
  const auto d = m.weights.size();
  if (m.mean.size() != d || m.stddev.size() != d || m.pinned.size() != d)
    throw DataError("model JSON arrays differ in length");
  for (double s : m.stddev)
    if (!(s > 0)) throw DataError("model JSON has a non-positive stddev");
  return m;
}

// ---------------------------------------------------------------------------
// Cross-validation

// Duplicates minority-class rows uniformly at random with replacement until
// both classes have equal counts. Returns row indices into the input; the
// originals come first, in order.
inline std::vector<std::size_t> oversample_indices(std::span<const int> labels, std::uint64_t seed) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] ? pos : neg).push_back(i);
  if (pos.empty() || neg.empty()) throw DataError("oversampling needs both classes present");
  std::vector<std::size_t> out(labels.size());
  std::iota(out.begin(), out.end(), 0);
  const auto& minority = pos.size() < neg.size() ? pos : neg;
  const std::size_t deficit = std::max(pos.size(), neg.size()) - minority.size();
  Rng rng(seed);
  for (std::size_t k = 0; k < deficit; ++k) out.push_back(minority[rng.index(minority.size())]);
  return out;
}

// Stratified fold id per row. Positives and negatives are shuffled separately
// and dealt round-robin, continuing the rotation across classes so fold sizes
// differ by at most one.
inline std::vector<int> stratified_folds(std::span<const int> labels, int folds, std::uint64_t seed) {
  if (folds < 2) throw DataError("need at least 2 folds");
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] ? pos : neg).push_back(i);
  if (pos.size() < static_cast<std::size_t>(folds) || neg.size() < static_cast<std::size_t>(folds))
    throw DataError("every fold needs both classes: " + std::to_string(pos.size()) + " positives and " +
                    std::to_string(neg.size()) + " negatives for " + std::to_string(folds) + " folds");
  Rng rng(seed);
  rng.shuffle(pos);
  rng.shuffle(neg);
  std::vector<int> out(labels.size(), -1);
  std::size_t k = 0;
  for (auto i : pos) out[i] = static_cast<int>(k++ % folds);
  for (auto i : neg) out[i] = static_cast<int>(k++ % folds);
  return out;
}

struct FoldMetrics {
  double auroc = 0;
  double auprc = 0;
  std::size_t n = 0;
};

struct CvResult {
  std::size_t best_index = 0;
  LogRegHyper best;
  std::vector<double> mean_auroc;                  // per grid point
  std::vector<std::vector<FoldMetrics>> per_fold;  // [grid point][fold]
};

// k-fold stratified cross-validation over a hyperparameter grid; picks the grid
// point with the highest mean validation AU-ROC (first one on ties).
// Standardization is fitted inside train_logreg on each training fold only.
inline CvResult cross_validate(const Matrix& X, std::span<const int> y, int folds,
                               const std::vector<LogRegHyper>& grid, std::uint64_t seed,
                               bool oversample_train = false) {
  if (grid.empty()) throw DataError("empty hyperparameter grid");
  if (X.rows < static_cast<std::size_t>(folds)) throw DataError("fewer rows than folds");
  const auto fold_of = stratified_folds(y, folds, seed);

  CvResult res;
  res.per_fold.assign(grid.size(), {});
  res.mean_auroc.assign(grid.size(), 0.0);
  for (int f = 0; f < folds; ++f) {
    std::vector<std::size_t> tr, va;
    for (std::size_t i = 0; i < X.rows; ++i) (fold_of[i] == f ? va : tr).push_back(i);
    std::vector<int> ytr, yva;
    for (auto i : tr) ytr.push_back(y[i]);
    for (auto i : va) yva.push_back(y[i]);
    if (oversample_train) {
      auto os = oversample_indices(ytr, seed + 1 + static_cast<std::uint64_t>(f));
      std::vector<std::size_t> tr2;
      std::vector<int> ytr2;
      for (auto k : os) {
        tr2.push_back(tr[k]);
        ytr2.push_back(ytr[k]);
      }
      tr.swap(tr2);
      ytr.swap(ytr2);
    }
    const Matrix Xtr = X.select_rows(tr), Xva = X.select_rows(va);
    for (std::size_t g = 0; g < grid.size(); ++g) {
      const auto model = train_logreg(Xtr, ytr, grid[g]);
      ScoredSet s{model.predict_proba(Xva), yva};
      FoldMetrics fm{auroc(s).value(), auprc(s).value(), va.size()};
      res.per_fold[g].push_back(fm);
    }
  }
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double sum = 0;
    for (const auto& fm : res.per_fold[g]) sum += fm.auroc;
    res.mean_auroc[g] = sum / folds;
    if (res.mean_auroc[g] > res.mean_auroc[res.best_index]) res.best_index = g;
  }
  res.best = grid[res.best_index];
  return res;
}

}  // namespace mimictext
