#ifndef CMGP_NUMCORE_HPP
#define CMGP_NUMCORE_HPP

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <string>

#include "errors.hpp"

namespace cmgp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/*
 * Jitter ladder for near-singular kernel matrices. The first attempt uses
 * the caller's base jitter; on failure the jitter escalates through
 * 1e-8, 1e-7, ... up to the cap (only rungs strictly above the base).
 */
inline constexpr double kJitterFloor = 1e-8;
inline constexpr double kJitterGrowth = 10.0;
inline constexpr double kJitterCap = 1e-2;

/// Dense symmetric matrix, symmetrized as (A + A^T) / 2 on construction.
class SymMatrix {
public:
  SymMatrix() = default;

  explicit SymMatrix(const Matrix &a) {
    if (a.rows() != a.cols()) {
      throw DimensionMismatch("SymMatrix requires a square matrix, got " +
                              std::to_string(a.rows()) + "x" +
                              std::to_string(a.cols()));
    }
    if (!a.allFinite()) {
      throw InvalidArgument("SymMatrix entries must be finite");
    }
    entries_ = 0.5 * (a + a.transpose());
  }

  /// Adopts a matrix the caller already filled symmetrically.
  static SymMatrix adopt_symmetric(Matrix a) {
    SymMatrix out;
    out.entries_ = std::move(a);
    return out;
  }

  Eigen::Index size() const { return entries_.rows(); }
  double operator()(Eigen::Index i, Eigen::Index j) const {
    return entries_(i, j);
  }
  const Matrix &matrix() const { return entries_; }

private:
  Matrix entries_;
};

namespace detail {

/// In-place inverse of a lower-triangular block by recursive halving:
/// [A 0; B C]^{-1} = [A^{-1} 0; -C^{-1} B A^{-1}  C^{-1}].
inline void invert_lower_inplace(Eigen::Ref<Matrix> l) {
  const Eigen::Index n = l.rows();
  if (n <= 64) {
    Matrix id = Matrix::Identity(n, n);
    l.triangularView<Eigen::Lower>().solveInPlace(id);
    l = id;
    return;
  }
  const Eigen::Index h = n / 2;
  invert_lower_inplace(l.topLeftCorner(h, h));
  invert_lower_inplace(l.bottomRightCorner(n - h, n - h));
  const Matrix ba = l.bottomLeftCorner(n - h, h) *
                    l.topLeftCorner(h, h).triangularView<Eigen::Lower>();
  l.bottomLeftCorner(n - h, h).noalias() =
      -(l.bottomRightCorner(n - h, n - h).triangularView<Eigen::Lower>() * ba);
  l.topRightCorner(h, n - h).setZero();
}

} // namespace detail

/// Lower Cholesky factor of (A + jitter_used * I).
class CholFactor {
public:
  CholFactor(Eigen::LLT<Matrix> llt, double jitter_used)
      : llt_(std::move(llt)), jitter_used_(jitter_used) {}

  Eigen::Index size() const { return llt_.matrixLLT().rows(); }
  double jitter_used() const { return jitter_used_; }
  Matrix lower() const { return llt_.matrixL(); }
  const Eigen::LLT<Matrix> &llt() const { return llt_; }

  /// (A + jitter I)^{-1}, used by the trace-form likelihood gradient.
  Matrix inverse() const {
    Matrix linv = llt_.matrixL();
    detail::invert_lower_inplace(linv);
    return linv.transpose().triangularView<Eigen::Upper>() * linv;
  }

private:
  Eigen::LLT<Matrix> llt_;
  double jitter_used_;
};

inline CholFactor cholesky(const SymMatrix &a, double base_jitter = 0.0) {
  if (!(base_jitter >= 0.0) || !std::isfinite(base_jitter)) {
    throw InvalidArgument("base_jitter must be finite and nonnegative");
  }
  const Eigen::Index n = a.size();
  double jitter = base_jitter;
  double next_rung = kJitterFloor;
  while (true) {
    Matrix shifted = a.matrix();
    if (jitter > 0.0) {
      shifted.diagonal().array() += jitter;
    }
    Eigen::LLT<Matrix> llt(shifted);
    if (llt.info() == Eigen::Success &&
        (n == 0 || llt.matrixLLT().diagonal().minCoeff() > 0.0)) {
      return CholFactor(std::move(llt), jitter);
    }
    while (next_rung <= jitter) {
      next_rung *= kJitterGrowth;
    }
    if (next_rung > kJitterCap * (1.0 + 1e-12)) {
      throw NotPositiveDefinite("factorization failed at jitter cap " +
                                std::to_string(kJitterCap) + " (n = " +
                                std::to_string(n) + ")");
    }
    jitter = next_rung;
  }
}

inline Vector solve_posdef(const CholFactor &f, const Vector &b) {
  if (b.size() != f.size()) {
    throw DimensionMismatch("solve_posdef: rhs length " +
                            std::to_string(b.size()) + " vs order " +
                            std::to_string(f.size()));
  }
  return f.llt().solve(b);
}

inline double logdet(const CholFactor &f) {
  return 2.0 * f.llt().matrixLLT().diagonal().array().log().sum();
}

} // namespace cmgp

#endif
