#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/SVD>

#include "histcode/errors.hpp"
#include "histcode/nn/linalg.hpp"

namespace histcode {

/// fc = tumor / max(normal, eps); the pseudocount keeps zero-expression
/// normals from blowing up the ratio.
inline double fold_change(double tumor_expr, double normal_expr,
                          double eps = 1e-6) {
  if (tumor_expr < 0 || normal_expr < 0)
    throw Error("expression values must be nonnegative");
  return tumor_expr / std::max(normal_expr, eps);
}

inline double de_target(double fc) {
  if (fc < 0) throw Error("fold change must be nonnegative");
  return std::log10(fc + 1.0);
}

/// 1 iff |log2(fc)| strictly exceeds the threshold. Compared in the fc
/// domain against exp2(+-threshold) so that fc = 2^threshold lands exactly
/// on "not more than" instead of depending on log rounding. fc <= 0 maps to
/// label 1 (infinite down-regulation by convention).
inline int binarize_de(double fc, double threshold = 1.5) {
  if (fc <= 0) return 1;
  const double hi = std::exp2(threshold);
  const double lo = std::exp2(-threshold);
  return (fc > hi || fc < lo) ? 1 : 0;
}

struct TileSelection {
  std::vector<std::size_t> top;     // descending attention, ties by index
  std::vector<std::size_t> bottom;  // ascending attention, ties by index
};

/// Indices of the l highest- and l lowest-attention tiles. With heavy ties
/// the two sets may overlap; that is allowed.
inline TileSelection select_tiles(const std::vector<double>& a,
                                  std::size_t l) {
  if (l == 0) throw Error("select_tiles: l must be positive");
  if (2 * l > a.size())
    throw BagTooSmall("bag smaller than 2l tiles");
  std::vector<std::size_t> idx(a.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::vector<std::size_t> hi = idx, lo = idx;
  std::sort(hi.begin(), hi.end(), [&](std::size_t p, std::size_t q) {
    if (a[p] != a[q]) return a[p] > a[q];
    return p < q;
  });
  std::sort(lo.begin(), lo.end(), [&](std::size_t p, std::size_t q) {
    if (a[p] != a[q]) return a[p] < a[q];
    return p < q;
  });
  TileSelection sel;
  sel.top.assign(hi.begin(), hi.begin() + static_cast<std::ptrdiff_t>(l));
  sel.bottom.assign(lo.begin(), lo.begin() + static_cast<std::ptrdiff_t>(l));
  return sel;
}

/// concat(mean of top-l rows, mean of bottom-l rows); length 2D.
template <class S>
inline nn::Vec<double> build_de_feature(const nn::Mat<S>& h,
                                        const std::vector<double>& a,
                                        std::size_t l) {
  if (static_cast<std::size_t>(h.rows()) != a.size())
    throw DimensionMismatch("attention length != bag size");
  TileSelection sel = select_tiles(a, l);
  const Eigen::Index d = h.cols();
  nn::Vec<double> feat = nn::Vec<double>::Zero(2 * d);
  for (std::size_t i : sel.top)
    feat.head(d) += h.row(static_cast<Eigen::Index>(i)).template cast<double>();
  for (std::size_t i : sel.bottom)
    feat.tail(d) +=
        h.row(static_cast<Eigen::Index>(i)).template cast<double>();
  feat /= static_cast<double>(l);
  return feat;
}

enum class DEMode { kRegression, kClassification };

inline const char* de_mode_name(DEMode m) {
  return m == DEMode::kRegression ? "regression" : "classification";
}

/// One linear model per gene. Regression: y = w.f + b. Classification: two
/// logit rows, softmax on top.
struct GeneModel {
  DEMode mode = DEMode::kRegression;
  nn::Vec<double> w;        // regression: 2D; classification: stacked 2 x 2D
  double b = 0;             // regression bias
  double b2[2] = {0, 0};    // classification biases
  bool degenerate = false;  // all training targets equal

  Eigen::Index feature_dim() const {
    return mode == DEMode::kRegression ? w.size() : w.size() / 2;
  }
};

inline double predict_de(const nn::Vec<double>& feature,
                         const GeneModel& model) {
  if (feature.size() != model.feature_dim())
    throw DimensionMismatch("feature length does not match gene model");
  if (model.mode == DEMode::kRegression)
    return model.w.dot(feature) + model.b;
  const Eigen::Index d = feature.size();
  double l0 = model.w.head(d).dot(feature) + model.b2[0];
  double l1 = model.w.tail(d).dot(feature) + model.b2[1];
  double mx = std::max(l0, l1);
  double e0 = std::exp(l0 - mx), e1 = std::exp(l1 - mx);
  return e1 / (e0 + e1);
}

/// Mean squared error of the linear regression and its analytic gradient.
inline double de_mse_loss(const nn::Mat<double>& x,
                          const nn::Vec<double>& y, const nn::Vec<double>& w,
                          double b) {
  nn::Vec<double> r = x * w;
  r.array() += b;
  r -= y;
  return r.squaredNorm() / static_cast<double>(x.rows());
}

inline void de_mse_grad(const nn::Mat<double>& x, const nn::Vec<double>& y,
                        const nn::Vec<double>& w, double b,
                        nn::Vec<double>& dw, double& db) {
  nn::Vec<double> r = x * w;
  r.array() += b;
  r -= y;
  const double scale = 2.0 / static_cast<double>(x.rows());
  dw = scale * (x.transpose() * r);
  db = scale * r.sum();
}

struct DETrainConfig {
  DEMode mode = DEMode::kRegression;
  double rcond = 1e-6;     // singular value cutoff for the least squares
  int gd_epochs = 2000;    // classification / gradient-descent route
  double gd_lr = 0.0;      // 0 = auto from the spectral norm
  std::uint64_t seed = 0;
};

namespace detail {

inline double largest_singular_value_sq(const nn::Mat<double>& x) {
  // power iteration on X^T X; only used to pick a safe GD step
  nn::Vec<double> v = nn::Vec<double>::Ones(x.cols());
  v /= v.norm();
  double lambda = 0;
  for (int it = 0; it < 100; ++it) {
    nn::Vec<double> u = x.transpose() * (x * v);
    double n = u.norm();
    if (n == 0) return 0;
    v = u / n;
    lambda = n;
  }
  return lambda;
}

}  // namespace detail

/// Min-norm least squares through an SVD with relative cutoff `rcond`.
/// Bias handled by an appended all-ones column.
inline GeneModel train_gene_regression_exact(const nn::Mat<double>& x,
                                             const nn::Vec<double>& y,
                                             double rcond = 1e-6) {
  if (x.rows() != y.size()) throw DimensionMismatch("targets != rows");
  if (x.rows() < 2) throw TooFewValues("need >= 2 training patients");
  nn::Mat<double> xt(x.rows(), x.cols() + 1);
  xt.leftCols(x.cols()) = x;
  xt.col(x.cols()).setOnes();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(xt,
                                     Eigen::ComputeThinU | Eigen::ComputeThinV);
  svd.setThreshold(rcond);
  Eigen::VectorXd sol = svd.solve(y);
  GeneModel m;
  m.mode = DEMode::kRegression;
  m.w = sol.head(x.cols());
  m.b = sol[x.cols()];
  m.degenerate = (y.maxCoeff() == y.minCoeff());
  return m;
}

/// Same problem solved by plain gradient descent from zero initialization,
/// which converges to the identical min-norm solution. Kept as a mutual
/// check on the closed form.
inline GeneModel train_gene_regression_gd(const nn::Mat<double>& x,
                                          const nn::Vec<double>& y,
                                          int epochs = 20000,
                                          double lr = 0.0) {
  if (x.rows() != y.size()) throw DimensionMismatch("targets != rows");
  if (x.rows() < 2) throw TooFewValues("need >= 2 training patients");
  nn::Mat<double> xt(x.rows(), x.cols() + 1);
  xt.leftCols(x.cols()) = x;
  xt.col(x.cols()).setOnes();
  if (lr <= 0) {
    double s = detail::largest_singular_value_sq(xt);
    lr = (s > 0) ? 0.9 * static_cast<double>(x.rows()) / s : 1e-2;
  }
  nn::Vec<double> w = nn::Vec<double>::Zero(xt.cols());
  const double scale = 2.0 / static_cast<double>(xt.rows());
  for (int it = 0; it < epochs; ++it) {
    nn::Vec<double> r = xt * w - y;
    w -= lr * scale * (xt.transpose() * r);
  }
  GeneModel m;
  m.mode = DEMode::kRegression;
  m.w = w.head(x.cols());
  m.b = w[x.cols()];
  m.degenerate = (y.maxCoeff() == y.minCoeff());
  return m;
}

/// Two-node softmax classifier trained by full-batch gradient descent.
inline GeneModel train_gene_classifier(const nn::Mat<double>& x,
                                       const std::vector<int>& labels,
                                       const DETrainConfig& cfg) {
  if (static_cast<std::size_t>(x.rows()) != labels.size())
    throw DimensionMismatch("labels != rows");
  if (x.rows() < 2) throw TooFewValues("need >= 2 training patients");
  const Eigen::Index d = x.cols(), q = x.rows();
  nn::Mat<double> w = nn::Mat<double>::Zero(2, d);
  nn::Vec<double> b = nn::Vec<double>::Zero(2);
  double lr = cfg.gd_lr;
  if (lr <= 0) {
    double s = detail::largest_singular_value_sq(x);
    lr = (s > 0) ? 0.5 * static_cast<double>(q) / s : 1e-2;
  }
  for (int it = 0; it < cfg.gd_epochs; ++it) {
    nn::Mat<double> logits = x * w.transpose();
    logits.rowwise() += b.transpose();
    nn::softmax_rows(logits);
    for (Eigen::Index i = 0; i < q; ++i)
      logits(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
    logits /= static_cast<double>(q);
    w -= lr * (logits.transpose() * x);
    b -= lr * logits.colwise().sum().transpose();
  }
  GeneModel m;
  m.mode = DEMode::kClassification;
  m.w.resize(2 * d);
  m.w.head(d) = w.row(0).transpose();
  m.w.tail(d) = w.row(1).transpose();
  m.b2[0] = b[0];
  m.b2[1] = b[1];
  bool all_same = std::all_of(labels.begin(), labels.end(),
                              [&](int v) { return v == labels.front(); });
  m.degenerate = all_same;
  return m;
}

/// Independent per-gene training. Gene g touches only targets[g]; nothing
/// else, which the poisoning test relies on.
inline std::map<std::string, GeneModel> train_gene_models(
    const nn::Mat<double>& features,
    const std::map<std::string, std::vector<double>>& targets_per_gene,
    const DETrainConfig& cfg = DETrainConfig{}) {
  std::map<std::string, GeneModel> models;
  for (const auto& [gene, targets] : targets_per_gene) {
    if (static_cast<std::size_t>(features.rows()) != targets.size())
      throw DimensionMismatch("gene " + gene +
                              ": target count != patient count");
    if (cfg.mode == DEMode::kRegression) {
      nn::Vec<double> y(static_cast<Eigen::Index>(targets.size()));
      for (std::size_t i = 0; i < targets.size(); ++i)
        y[static_cast<Eigen::Index>(i)] = targets[i];
      models[gene] = train_gene_regression_exact(features, y, cfg.rcond);
    } else {
      std::vector<int> labels(targets.size());
      for (std::size_t i = 0; i < targets.size(); ++i) {
        double t = targets[i];
        if (t != 0.0 && t != 1.0)
          throw Error("classification targets must be 0/1");
        labels[i] = static_cast<int>(t);
      }
      models[gene] = train_gene_classifier(features, labels, cfg);
    }
  }
  return models;
}

// ---- expression table and gene list I/O ----

struct ExpressionRow {
  std::string patient_id;
  std::string gene;
  double tumor_fpkm_uq = 0;
  double normal_fpkm_uq = 0;
};

inline std::vector<ExpressionRow> load_expression_tsv(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open expression table: " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty expression table");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "patient_id\tgene\ttumor_fpkm_uq\tnormal_fpkm_uq")
    throw SchemaMismatch("unexpected expression table header: " + line);
  std::vector<ExpressionRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ss(line);
    ExpressionRow r;
    std::string tumor, normal;
    if (!std::getline(ss, r.patient_id, '\t') ||
        !std::getline(ss, r.gene, '\t') || !std::getline(ss, tumor, '\t') ||
        !std::getline(ss, normal, '\t'))
      throw SchemaMismatch("malformed expression row at line " +
                           std::to_string(lineno));
    try {
      r.tumor_fpkm_uq = std::stod(tumor);
      r.normal_fpkm_uq = std::stod(normal);
    } catch (const std::exception&) {
      throw SchemaMismatch("non-numeric expression at line " +
                           std::to_string(lineno));
    }
    if (r.tumor_fpkm_uq < 0 || r.normal_fpkm_uq < 0)
      throw SchemaMismatch("negative expression at line " +
                           std::to_string(lineno));
    rows.push_back(std::move(r));
  }
  return rows;
}

/// Plain text, one symbol per line, ordered by mutation count. At most
/// `cap` symbols are kept (the downstream models cover the top of the
/// list); duplicates are an input error.
inline std::vector<std::string> load_gene_list(const std::string& path,
                                               std::size_t cap = 200) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open gene list: " + path);
  std::vector<std::string> genes;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    genes.push_back(line);
  }
  std::vector<std::string> sorted = genes;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw SchemaMismatch("duplicate symbol in gene list");
  if (genes.size() > cap) genes.resize(cap);
  return genes;
}

}  // namespace histcode
