#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <random>

#include "histcode/errors.hpp"
#include "histcode/rng.hpp"

namespace histcode::nn {

// Row-major throughout: a row is one sample (or one bank entry), matching
// the flattened CHW activation layout.
template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <class S>
inline bool all_finite(const Mat<S>& m) {
  return m.allFinite();
}
template <class S>
inline bool all_finite(const Vec<S>& v) {
  return v.allFinite();
}

/// Learnable tensor with its gradient and momentum buffer. Vectors are
/// stored as single-column matrices.
template <class S>
struct Param {
  Mat<S> value, grad, mom;

  void resize(Eigen::Index rows, Eigen::Index cols) {
    value.setZero(rows, cols);
    grad.setZero(rows, cols);
    mom.setZero(rows, cols);
  }
  void zero_grad() { grad.setZero(); }

  /// Gaussian fan-in scaled init (He style).
  void init_normal(Rng& rng, double fan_in) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (Eigen::Index i = 0; i < value.rows(); ++i)
      for (Eigen::Index j = 0; j < value.cols(); ++j)
        value(i, j) = static_cast<S>(dist(rng));
  }
};

/// Row-wise L2 normalization. Returns norms so the backward pass can form
/// d/du of q = u/|u|, which is (dq - q (q.dq)) / |u| per row.
template <class S>
inline Vec<S> l2_normalize_rows(Mat<S>& m, S eps = S(0)) {
  Vec<S> norms(m.rows());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    S n = m.row(i).norm();
    if (n <= eps)
      throw NumericalDegeneracy("cannot normalize a zero vector");
    m.row(i) /= n;
    norms[i] = n;
  }
  return norms;
}

template <class S>
inline Mat<S> l2_normalize_backward(const Mat<S>& q, const Mat<S>& dq,
                                    const Vec<S>& norms) {
  Mat<S> du(q.rows(), q.cols());
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    S dot = q.row(i).dot(dq.row(i));
    du.row(i) = (dq.row(i) - dot * q.row(i)) / norms[i];
  }
  return du;
}

/// Numerically stable row-wise softmax, in place.
template <class S>
inline void softmax_rows(Mat<S>& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    S mx = m.row(i).maxCoeff();
    m.row(i) = (m.row(i).array() - mx).exp();
    m.row(i) /= m.row(i).sum();
  }
}

}  // namespace histcode::nn
