#ifndef CMGP_COREGION_HPP
#define CMGP_COREGION_HPP

#include <unsupported/Eigen/KroneckerProduct>

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "errors.hpp"
#include "kernels.hpp"
#include "numcore.hpp"
#include "rng.hpp"

namespace cmgp {

/// (action, outcome) pair. Flat index is outcome * num_actions + action,
/// matching the B_Y (x) B_A Kronecker ordering.
struct TaskIndex {
  int action = 0;
  int outcome = 0;

  int flat(int num_actions) const { return outcome * num_actions + action; }
  static TaskIndex from_flat(int flat, int num_actions) {
    return {flat % num_actions, flat / num_actions};
  }
  friend bool operator==(const TaskIndex &, const TaskIndex &) = default;
};

/// log(1e-6): lower bound on the diagonal regularizer of every B.
inline const double kLogDiagFloor = std::log(1e-6);

/*
 * Low-rank-plus-diagonal coregionalization factor:
 *   B = L L^T + diag(exp(max(log_diag, kLogDiagFloor)))
 * L is T x R; the entries of L are the mixing coefficients of the
 * latent processes.
 */
struct CoregionFactor {
  Matrix L;
  Vector log_diag;

  int num_tasks() const { return static_cast<int>(L.rows()); }
  int rank() const { return static_cast<int>(L.cols()); }

  void validate() const {
    if (L.rows() < 1 || L.cols() < 1 || L.cols() > L.rows()) {
      throw InvalidArgument("CoregionFactor requires 1 <= R <= T");
    }
    if (log_diag.size() != L.rows()) {
      throw DimensionMismatch("CoregionFactor log_diag length");
    }
  }

  /// L[a][r] = 1 on the diagonal, 0.01 * N(0, 1) elsewhere.
  static CoregionFactor identity_like(int tasks, int rank, Rng &rng,
                                      double log_diag = std::log(1e-2)) {
    std::normal_distribution<double> normal(0.0, 1.0);
    CoregionFactor f{Matrix(tasks, rank), Vector::Constant(tasks, log_diag)};
    for (int a = 0; a < tasks; ++a) {
      for (int r = 0; r < rank; ++r) {
        f.L(a, r) = (a == r) ? 1.0 : 0.01 * normal(rng);
      }
    }
    return f;
  }

  Vector diag_values() const {
    return log_diag.array().max(kLogDiagFloor).exp().matrix();
  }
};

inline SymMatrix build_B(const CoregionFactor &f) {
  f.validate();
  Matrix b = f.L * f.L.transpose();
  b.diagonal() += f.diag_values();
  return SymMatrix(b);
}

/// One separable term: B_Y (x) B_A (x) k_q. Without an outcome factor the
/// B_Y multiplier is 1 and the spec has a single outcome.
struct KernelComponent {
  CoregionFactor action;
  std::optional<CoregionFactor> outcome;
  KernelKind kind = KernelKind::RBF;
  BaseKernelParams base;
};

/// Sum of Q separable terms (Q = 1 is the intrinsic coregionalization model).
struct MultitaskKernelSpec {
  std::vector<KernelComponent> components;

  int num_actions() const { return components.front().action.num_tasks(); }
  int num_outcomes() const {
    const auto &o = components.front().outcome;
    return o ? o->num_tasks() : 1;
  }
  int num_tasks() const { return num_actions() * num_outcomes(); }
  Eigen::Index input_dim() const { return components.front().base.dim(); }

  void validate() const {
    if (components.empty()) {
      throw InvalidArgument("MultitaskKernelSpec needs at least one component");
    }
    for (const auto &c : components) {
      c.action.validate();
      if (c.outcome) c.outcome->validate();
      if (c.action.num_tasks() != num_actions() ||
          (c.outcome ? c.outcome->num_tasks() : 1) != num_outcomes() ||
          c.base.dim() != input_dim()) {
        throw DimensionMismatch("kernel components disagree on D, M or d");
      }
    }
  }
};

namespace detail {

inline void check_task(const MultitaskKernelSpec &spec, const TaskIndex &t) {
  if (t.action < 0 || t.action >= spec.num_actions() || t.outcome < 0 ||
      t.outcome >= spec.num_outcomes()) {
    throw TaskOutOfRange("task (" + std::to_string(t.action) + ", " +
                         std::to_string(t.outcome) + ") outside D = " +
                         std::to_string(spec.num_actions()) + ", M = " +
                         std::to_string(spec.num_outcomes()));
  }
}

/// Flat T x T task covariance of a single component.
inline Matrix component_task_matrix(const KernelComponent &c) {
  const Matrix ba = build_B(c.action).matrix();
  if (!c.outcome) return ba;
  return Eigen::kroneckerProduct(build_B(*c.outcome).matrix(), ba);
}

inline std::vector<int> flat_tasks(const MultitaskKernelSpec &spec,
                                   const std::vector<TaskIndex> &tasks) {
  std::vector<int> out;
  out.reserve(tasks.size());
  for (const auto &t : tasks) {
    check_task(spec, t);
    out.push_back(t.flat(spec.num_actions()));
  }
  return out;
}

/// C(i, j) = task_matrix(t_i, t_j).
inline Matrix expand_task_matrix(const Matrix &task_matrix,
                                 const std::vector<int> &rows,
                                 const std::vector<int> &cols) {
  Matrix out(rows.size(), cols.size());
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      out(i, j) = task_matrix(rows[i], cols[j]);
    }
  }
  return out;
}

/// S[s][s'] = sum of W(i, j) over rows with task s and columns with task s'.
inline Matrix aggregate_by_task(const Matrix &w, const std::vector<int> &tasks,
                                int num_tasks) {
  Matrix s = Matrix::Zero(num_tasks, num_tasks);
  for (Eigen::Index j = 0; j < w.cols(); ++j) {
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      s(tasks[i], tasks[j]) += w(i, j);
    }
  }
  return s;
}

} // namespace detail

inline double task_cov(const KernelComponent &c, const TaskIndex &t,
                       const TaskIndex &u) {
  const double a = build_B(c.action)(t.action, u.action);
  return c.outcome ? a * build_B(*c.outcome)(t.outcome, u.outcome) : a;
}

inline double task_cov(const MultitaskKernelSpec &spec, const TaskIndex &t,
                       const TaskIndex &u) {
  detail::check_task(spec, t);
  detail::check_task(spec, u);
  double total = 0.0;
  for (const auto &c : spec.components) total += task_cov(c, t, u);
  return total;
}

namespace detail {

inline void check_rows(const Matrix &x, const std::vector<TaskIndex> &tasks,
                       const MultitaskKernelSpec &spec) {
  if (static_cast<std::size_t>(x.rows()) != tasks.size()) {
    throw DimensionMismatch("feature rows and task labels differ in length");
  }
  if (x.cols() != spec.input_dim()) {
    throw DimensionMismatch("feature columns vs kernel input dimension");
  }
}

} // namespace detail

/// Block-design training covariance with per-task noise on the diagonal.
inline SymMatrix assemble_train_cov(const MultitaskKernelSpec &spec,
                                    const Matrix &x,
                                    const std::vector<TaskIndex> &tasks,
                                    const Vector &noise) {
  spec.validate();
  detail::check_rows(x, tasks, spec);
  if (noise.size() != spec.num_tasks()) {
    throw DimensionMismatch("noise vector must have one entry per task");
  }
  const auto flat = detail::flat_tasks(spec, tasks);
  const Eigen::Index n = x.rows();
  Matrix k = Matrix::Zero(n, n);
  for (const auto &c : spec.components) {
    const Matrix kq = kernel_matrix(c.kind, c.base, x).matrix();
    k += detail::expand_task_matrix(detail::component_task_matrix(c), flat, flat)
             .cwiseProduct(kq);
  }
  for (Eigen::Index i = 0; i < n; ++i) k(i, i) += noise(flat[i]);
  return SymMatrix::adopt_symmetric(0.5 * (k + k.transpose()));
}

inline Matrix assemble_cross_cov(const MultitaskKernelSpec &spec,
                                 const Matrix &x_train,
                                 const std::vector<TaskIndex> &tasks_train,
                                 const Matrix &x_query,
                                 const std::vector<TaskIndex> &tasks_query) {
  spec.validate();
  detail::check_rows(x_train, tasks_train, spec);
  detail::check_rows(x_query, tasks_query, spec);
  const auto ft = detail::flat_tasks(spec, tasks_train);
  const auto fq = detail::flat_tasks(spec, tasks_query);
  Matrix k = Matrix::Zero(x_query.rows(), x_train.rows());
  for (const auto &c : spec.components) {
    k += detail::expand_task_matrix(detail::component_task_matrix(c), fq, ft)
             .cwiseProduct(kernel_matrix(c.kind, c.base, x_query, x_train));
  }
  return k;
}

/// Gradients of a loss with respect to one factor's parameters.
struct FactorGradient {
  Matrix L;
  Vector log_diag;

  static FactorGradient zeros_like(const CoregionFactor &f) {
    return {Matrix::Zero(f.L.rows(), f.L.cols()),
            Vector::Zero(f.log_diag.size())};
  }
};

/// Chains dLoss/dB (entries treated as independent) through
/// B = L L^T + diag(exp(log_diag)).
inline FactorGradient chain_factor(const CoregionFactor &f, const Matrix &dB) {
  FactorGradient g;
  g.L = (dB + dB.transpose()) * f.L;
  g.log_diag = Vector::Zero(f.log_diag.size());
  for (Eigen::Index s = 0; s < f.log_diag.size(); ++s) {
    if (f.log_diag(s) > kLogDiagFloor) {
      g.log_diag(s) = dB(s, s) * std::exp(f.log_diag(s));
    }
  }
  return g;
}

struct ComponentCoregionGradient {
  FactorGradient action;
  std::optional<FactorGradient> outcome;
};

/*
 * Contracted coregionalization gradients of sum_ij W_ij C_ij where
 * C_ij = B_Y[m_i, m_j] B_A[a_i, a_j] for flat task labels. Callers pass
 * W = dLoss/dK (elementwise) times the component's base kernel matrix.
 */
inline ComponentCoregionGradient
contract_coregion_grads(const KernelComponent &c, const std::vector<int> &flat,
                        const Matrix &w) {
  const int na = c.action.num_tasks();
  const int no = c.outcome ? c.outcome->num_tasks() : 1;
  const Matrix s = detail::aggregate_by_task(w, flat, na * no);
  const Matrix ba = build_B(c.action).matrix();
  const Matrix by = c.outcome ? build_B(*c.outcome).matrix() : Matrix::Ones(1, 1);
  Matrix d_ba = Matrix::Zero(na, na);
  Matrix d_by = Matrix::Zero(no, no);
  for (int m = 0; m < no; ++m) {
    for (int mp = 0; mp < no; ++mp) {
      const auto block = s.block(m * na, mp * na, na, na);
      d_ba += by(m, mp) * block;
      d_by(m, mp) = block.cwiseProduct(ba).sum();
    }
  }
  ComponentCoregionGradient g{chain_factor(c.action, d_ba), std::nullopt};
  if (c.outcome) g.outcome = chain_factor(*c.outcome, d_by);
  return g;
}

/*
 * Dense derivatives of the assembled (noise-free part of the) training
 * covariance with respect to every factor entry. Entries are stored in
 * row-major (task, rank) order for L, then one matrix per log_diag entry.
 */
struct CoregionGradients {
  struct Factor {
    std::vector<Matrix> L;
    std::vector<Matrix> log_diag;
  };
  struct Component {
    Factor action;
    std::optional<Factor> outcome;
  };
  std::vector<Component> components;
};

inline CoregionGradients coregion_grads(const MultitaskKernelSpec &spec,
                                        const Matrix &x,
                                        const std::vector<TaskIndex> &tasks) {
  spec.validate();
  detail::check_rows(x, tasks, spec);
  const auto flat = detail::flat_tasks(spec, tasks);
  CoregionGradients out;
  for (const auto &c : spec.components) {
    const Matrix kq = kernel_matrix(c.kind, c.base, x).matrix();
    const Matrix ba = build_B(c.action).matrix();
    const Matrix by =
        c.outcome ? build_B(*c.outcome).matrix() : Matrix::Ones(1, 1);
    // dB/dtheta for a factor, expanded through the Kronecker product.
    auto expand = [&](const Matrix &dB, bool is_action) {
      const Matrix task_matrix = is_action ? Matrix(Eigen::kroneckerProduct(by, dB))
                                           : Matrix(Eigen::kroneckerProduct(dB, ba));
      return Matrix(
          detail::expand_task_matrix(task_matrix, flat, flat).cwiseProduct(kq));
    };
    auto factor_grads = [&](const CoregionFactor &f, bool is_action) {
      CoregionGradients::Factor fg;
      const int t = f.num_tasks();
      for (int a = 0; a < t; ++a) {
        for (int r = 0; r < f.rank(); ++r) {
          Matrix dB = Matrix::Zero(t, t);
          dB.row(a) += f.L.col(r).transpose();
          dB.col(a) += f.L.col(r);
          fg.L.push_back(expand(dB, is_action));
        }
      }
      for (int s = 0; s < t; ++s) {
        Matrix dB = Matrix::Zero(t, t);
        if (f.log_diag(s) > kLogDiagFloor) dB(s, s) = std::exp(f.log_diag(s));
        fg.log_diag.push_back(expand(dB, is_action));
      }
      return fg;
    };
    CoregionGradients::Component cg{factor_grads(c.action, true), std::nullopt};
    if (c.outcome) cg.outcome = factor_grads(*c.outcome, false);
    out.components.push_back(std::move(cg));
  }
  return out;
}

} // namespace cmgp

#endif
