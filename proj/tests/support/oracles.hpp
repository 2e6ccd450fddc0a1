// Independent reference computations used only by the tests. Nothing here
// calls into the library's numerical paths.
#ifndef CMGP_TEST_ORACLES_HPP
#define CMGP_TEST_ORACLES_HPP

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

namespace oracle {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline Matrix random_matrix(std::mt19937_64 &rng, int rows, int cols,
                            double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = u(rng);
  return m;
}

inline Matrix random_spd(std::mt19937_64 &rng, int n) {
  const Matrix a = random_matrix(rng, n, n);
  return a * a.transpose() + n * Matrix::Identity(n, n);
}

/// Cyclic Jacobi eigenvalues of a small symmetric matrix.
inline Vector jacobi_eigenvalues(Matrix a, int sweeps = 100) {
  const int n = static_cast<int>(a.rows());
  for (int s = 0; s < sweeps; ++s) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-30) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - sn * akq;
          a(k, q) = sn * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - sn * aqk;
          a(q, k) = sn * apk + c * aqk;
        }
      }
    }
  }
  return a.diagonal();
}

/// Determinant by Gaussian elimination with partial pivoting.
inline double determinant(Matrix a) {
  const int n = static_cast<int>(a.rows());
  double det = 1.0;
  for (int c = 0; c < n; ++c) {
    int piv = c;
    for (int r = c + 1; r < n; ++r)
      if (std::abs(a(r, c)) > std::abs(a(piv, c))) piv = r;
    if (a(piv, c) == 0.0) return 0.0;
    if (piv != c) {
      a.row(piv).swap(a.row(c));
      det = -det;
    }
    det *= a(c, c);
    for (int r = c + 1; r < n; ++r) {
      const double f = a(r, c) / a(c, c);
      for (int k = c; k < n; ++k) a(r, k) -= f * a(c, k);
    }
  }
  return det;
}

/// Explicit inverse via the adjugate (cofactor transpose / determinant).
inline Matrix adjugate_inverse(const Matrix &a) {
  const int n = static_cast<int>(a.rows());
  if (n == 1) return Matrix::Constant(1, 1, 1.0 / a(0, 0));
  const double det = determinant(a);
  Matrix inv(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      Matrix minor(n - 1, n - 1);
      for (int r = 0, rr = 0; r < n; ++r) {
        if (r == i) continue;
        for (int c = 0, cc = 0; c < n; ++c) {
          if (c == j) continue;
          minor(rr, cc++) = a(r, c);
        }
        ++rr;
      }
      const double cof = ((i + j) % 2 ? -1.0 : 1.0) * determinant(minor);
      inv(j, i) = cof / det;
    }
  }
  return inv;
}

/// RBF written out from the closed form.
inline double rbf(double s2, const Vector &lengthscales, const Vector &x,
                  const Vector &z) {
  double r = 0.0;
  for (int d = 0; d < x.size(); ++d) {
    const double u = (x(d) - z(d)) / lengthscales(d);
    r += u * u;
  }
  return s2 * std::exp(-0.5 * r);
}

/// Layer-by-layer forward pass of a tanh/relu MLP (row-vector input).
inline Vector mlp_forward(const std::vector<Matrix> &weights,
                          const std::vector<Vector> &biases, bool tanh_act,
                          Vector h) {
  for (std::size_t k = 0; k < weights.size(); ++k) {
    Vector z(weights[k].rows());
    for (int i = 0; i < weights[k].rows(); ++i) {
      double s = biases[k](i);
      for (int j = 0; j < weights[k].cols(); ++j) s += weights[k](i, j) * h(j);
      z(i) = tanh_act ? std::tanh(s) : std::max(s, 0.0);
    }
    h = z;
  }
  return h;
}

/// Central finite difference of f along every coordinate of x.
inline Vector central_difference(const std::function<double(const Vector &)> &f,
                                 Vector x, double step = 1e-5) {
  Vector g(x.size());
  for (int i = 0; i < x.size(); ++i) {
    const double orig = x(i);
    x(i) = orig + step;
    const double fp = f(x);
    x(i) = orig - step;
    const double fm = f(x);
    x(i) = orig;
    g(i) = (fp - fm) / (2.0 * step);
  }
  return g;
}

} // namespace oracle

#endif
