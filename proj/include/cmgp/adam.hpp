#ifndef CMGP_ADAM_HPP
#define CMGP_ADAM_HPP

#include <cmath>

#include "numcore.hpp"

namespace cmgp {

/// Bias-corrected Adam over a flat parameter vector (minimization).
class Adam {
public:
  Adam(Eigen::Index size, double learning_rate, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps),
        m_(Vector::Zero(size)), v_(Vector::Zero(size)) {}

  /// Returns the update to add to the parameters.
  Vector step(const Vector &grad) {
    ++t_;
    m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
    v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    return (-lr_ * (m_.array() / c1) /
            ((v_.array() / c2).sqrt() + eps_))
        .matrix();
  }

  int steps() const { return t_; }

private:
  double lr_, beta1_, beta2_, eps_;
  Vector m_, v_;
  int t_ = 0;
};

} // namespace cmgp

#endif
