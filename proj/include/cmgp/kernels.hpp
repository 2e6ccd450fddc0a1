#ifndef CMGP_KERNELS_HPP
#define CMGP_KERNELS_HPP

#include <cmath>
#include <string>
#include <vector>

#include "errors.hpp"
#include "numcore.hpp"

namespace cmgp {

enum class KernelKind { RBF, Linear };

inline std::string to_string(KernelKind kind) {
  return kind == KernelKind::RBF ? "rbf" : "linear";
}

inline KernelKind kernel_kind_from_string(const std::string &s) {
  if (s == "rbf") return KernelKind::RBF;
  if (s == "linear") return KernelKind::Linear;
  throw InvalidArgument("unknown kernel kind '" + s + "'");
}

/*
 * Hyperparameters in log space. RBF is always ARD: one lengthscale per
 * input dimension. An isotropic kernel is obtained by keeping the entries
 * tied. The linear kernel carries the lengthscale vector only to fix its
 * input dimension; the values do not enter the kernel.
 */
struct BaseKernelParams {
  Vector log_lengthscales;
  double log_signal_variance = 0.0;

  static BaseKernelParams defaults(Eigen::Index dim) {
    return {Vector::Zero(dim), 0.0};
  }

  Eigen::Index dim() const { return log_lengthscales.size(); }
  double signal_variance() const { return std::exp(log_signal_variance); }
};

namespace detail {

inline void check_dims(const BaseKernelParams &params, Eigen::Index d,
                       const char *where) {
  if (d != params.dim()) {
    throw DimensionMismatch(std::string(where) + ": input dimension " +
                            std::to_string(d) + " vs kernel dimension " +
                            std::to_string(params.dim()));
  }
}

inline Vector inverse_squared_lengthscales(const BaseKernelParams &params) {
  return (-2.0 * params.log_lengthscales.array()).exp().matrix();
}

} // namespace detail

template <typename A, typename B>
double kernel_eval(KernelKind kind, const BaseKernelParams &params,
                   const Eigen::MatrixBase<A> &x, const Eigen::MatrixBase<B> &z) {
  if (x.size() != z.size()) {
    throw DimensionMismatch("kernel_eval: point dimensions differ");
  }
  detail::check_dims(params, x.size(), "kernel_eval");
  const double s2 = params.signal_variance();
  if (kind == KernelKind::Linear) {
    return s2 * x.dot(z);
  }
  double r = 0.0;
  for (Eigen::Index d = 0; d < x.size(); ++d) {
    const double diff = x(d) - z(d);
    r += diff * diff * std::exp(-2.0 * params.log_lengthscales(d));
  }
  return s2 * std::exp(-0.5 * r);
}

/// Entry (i, j) is k(row i of x1, row j of x2).
inline Matrix kernel_matrix(KernelKind kind, const BaseKernelParams &params,
                            const Matrix &x1, const Matrix &x2) {
  if (x1.cols() != x2.cols()) {
    throw DimensionMismatch("kernel_matrix: column counts differ");
  }
  detail::check_dims(params, x1.cols(), "kernel_matrix");
  const double s2 = params.signal_variance();
  if (kind == KernelKind::Linear) {
    return s2 * x1 * x2.transpose();
  }
  const Vector inv_l = detail::inverse_squared_lengthscales(params).cwiseSqrt();
  const Matrix a = x1 * inv_l.asDiagonal();
  const Matrix b = x2 * inv_l.asDiagonal();
  const Vector na = a.rowwise().squaredNorm();
  const Vector nb = b.rowwise().squaredNorm();
  Matrix out = -2.0 * a * b.transpose();
  out.colwise() += na;
  out.rowwise() += nb.transpose();
  return (s2 * (-0.5 * out.array().max(0.0)).exp()).matrix();
}

/// Symmetric training covariance k(X, X), filled exactly symmetric.
inline SymMatrix kernel_matrix(KernelKind kind, const BaseKernelParams &params,
                               const Matrix &x) {
  detail::check_dims(params, x.cols(), "kernel_matrix");
  const Eigen::Index n = x.rows();
  const double s2 = params.signal_variance();
  if (kind == KernelKind::Linear) {
    Matrix k = s2 * x * x.transpose();
    k = 0.5 * (k + k.transpose()).eval();
    return SymMatrix::adopt_symmetric(std::move(k));
  }
  const Matrix scaled =
      (x * detail::inverse_squared_lengthscales(params).cwiseSqrt().asDiagonal())
          .transpose();
  Matrix k(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    k(j, j) = s2;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      k(i, j) = s2 * std::exp(-0.5 * (scaled.col(i) - scaled.col(j)).squaredNorm());
      k(j, i) = k(i, j);
    }
  }
  return SymMatrix::adopt_symmetric(std::move(k));
}

/*
 * Dense kernel gradients on a single input set X (n x d).
 *
 *   log_lengthscales[d] : dK / d log l_d            (n x n)
 *   log_signal_variance : dK / d log s^2 (== K)      (n x n)
 *   inputs[d](i, j)     : d k(x_i, x_j) / d x_{i,d}  (derivative in the
 *                         first argument; the derivative of K_ij in x_j
 *                         is inputs[d](j, i) by symmetry of k)
 */
struct KernelGradients {
  std::vector<Matrix> log_lengthscales;
  Matrix log_signal_variance;
  std::vector<Matrix> inputs;
};

inline KernelGradients kernel_grads(KernelKind kind,
                                    const BaseKernelParams &params,
                                    const Matrix &x) {
  detail::check_dims(params, x.cols(), "kernel_grads");
  const Eigen::Index n = x.rows();
  const Eigen::Index dim = x.cols();
  const Matrix k = kernel_matrix(kind, params, x).matrix();
  KernelGradients out;
  out.log_signal_variance = k;
  const double s2 = params.signal_variance();
  if (kind == KernelKind::Linear) {
    for (Eigen::Index d = 0; d < dim; ++d) {
      out.log_lengthscales.push_back(Matrix::Zero(n, n));
      Matrix g(n, n);
      for (Eigen::Index i = 0; i < n; ++i) {
        g.row(i) = s2 * x.col(d).transpose();
      }
      out.inputs.push_back(std::move(g));
    }
    return out;
  }
  const Vector inv_l2 = detail::inverse_squared_lengthscales(params);
  for (Eigen::Index d = 0; d < dim; ++d) {
    Matrix diff = x.col(d).replicate(1, n) - x.col(d).transpose().replicate(n, 1);
    out.log_lengthscales.push_back(
        (k.array() * diff.array().square() * inv_l2(d)).matrix());
    out.inputs.push_back((-k.array() * diff.array() * inv_l2(d)).matrix());
  }
  return out;
}

/*
 * Contracted kernel gradients: for a weight matrix W (n x n), returns
 * sum_ij W_ij dK_ij/dtheta for every hyperparameter, and the gradient of
 * sum_ij W_ij K_ij with respect to every input coordinate. This is the
 * form the likelihood gradient consumes; it never materializes the
 * per-parameter matrices.
 */
struct ContractedKernelGradients {
  Vector log_lengthscales;
  double log_signal_variance = 0.0;
  Matrix inputs;
};

inline ContractedKernelGradients
contract_kernel_grads(KernelKind kind, const BaseKernelParams &params,
                      const Matrix &x, const Matrix &k, const Matrix &w) {
  const Eigen::Index n = x.rows();
  const Eigen::Index dim = x.cols();
  ContractedKernelGradients out;
  out.log_lengthscales = Vector::Zero(dim);
  out.inputs = Matrix::Zero(n, dim);
  const Matrix wk = w.cwiseProduct(k);
  out.log_signal_variance = wk.sum();
  const Matrix wsym = w + w.transpose();
  if (kind == KernelKind::Linear) {
    out.inputs = params.signal_variance() * wsym * x;
    return out;
  }
  const Vector inv_l2 = detail::inverse_squared_lengthscales(params);
  const Matrix wsk = wsym.cwiseProduct(k);
  const Vector row_sums = wsk.rowwise().sum();
  // sum_ij wk_ij (x_id - x_jd)^2 expands into row/column sums and a
  // bilinear term; same for the input gradient sum_j wsk_ij (x_id - x_jd).
  const Vector wk_rows = wk.rowwise().sum();
  const Vector wk_cols = wk.colwise().sum().transpose();
  for (Eigen::Index d = 0; d < dim; ++d) {
    const Vector xd = x.col(d);
    const Vector xd2 = xd.array().square();
    const double quad =
        wk_rows.dot(xd2) + wk_cols.dot(xd2) - 2.0 * xd.dot(wk * xd);
    out.log_lengthscales(d) = quad * inv_l2(d);
    out.inputs.col(d) =
        -inv_l2(d) * (row_sums.cwiseProduct(xd) - wsk * xd);
  }
  return out;
}

} // namespace cmgp

#endif
