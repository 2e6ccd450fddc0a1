#ifndef CMGP_GP_MODEL_HPP
#define CMGP_GP_MODEL_HPP

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "adam.hpp"
#include "coregion.hpp"
#include "dataset.hpp"
#include "errors.hpp"
#include "kernels.hpp"
#include "mlp.hpp"
#include "numcore.hpp"
#include "rng.hpp"

namespace cmgp {

// ---------------------------------------------------------------------------
// Variants and layout
// ---------------------------------------------------------------------------

/*
 * GP / DKL            one independent model per (action, outcome)
 * CounterGP / -DKL    one model per outcome, coregionalized over actions
 * MOGP / MODKL        one model coregionalized over actions and outcomes
 *
 * The DKL family routes covariates through an MLP before the base kernel.
 */
enum class ModelVariant { GP, CounterGP, MOGP, DKL, CounterDKL, MODKL };

inline constexpr ModelVariant kAllVariants[] = {
    ModelVariant::GP,  ModelVariant::CounterGP,  ModelVariant::MOGP,
    ModelVariant::DKL, ModelVariant::CounterDKL, ModelVariant::MODKL};

inline std::string to_string(ModelVariant v) {
  switch (v) {
  case ModelVariant::GP: return "gp";
  case ModelVariant::CounterGP: return "countergp";
  case ModelVariant::MOGP: return "mogp";
  case ModelVariant::DKL: return "dkl";
  case ModelVariant::CounterDKL: return "counterdkl";
  case ModelVariant::MODKL: return "modkl";
  }
  return "?";
}

inline ModelVariant variant_from_string(const std::string &s) {
  for (ModelVariant v : kAllVariants) {
    if (to_string(v) == s) return v;
  }
  throw InvalidArgument("unknown model variant '" + s + "'");
}

inline bool is_deep(ModelVariant v) {
  return v == ModelVariant::DKL || v == ModelVariant::CounterDKL ||
         v == ModelVariant::MODKL;
}

inline bool shares_actions(ModelVariant v) {
  return v != ModelVariant::GP && v != ModelVariant::DKL;
}

inline bool shares_outcomes(ModelVariant v) {
  return v == ModelVariant::MOGP || v == ModelVariant::MODKL;
}

/// Global actions/outcomes one sub-model covers. Local task index is
/// local_outcome * actions.size() + local_action.
struct SubModelLayout {
  std::vector<int> actions;
  std::vector<int> outcomes;

  int num_local_tasks() const {
    return static_cast<int>(actions.size() * outcomes.size());
  }

  std::optional<TaskIndex> local(const TaskIndex &global) const {
    TaskIndex t{-1, -1};
    for (std::size_t a = 0; a < actions.size(); ++a) {
      if (actions[a] == global.action) t.action = static_cast<int>(a);
    }
    for (std::size_t m = 0; m < outcomes.size(); ++m) {
      if (outcomes[m] == global.outcome) t.outcome = static_cast<int>(m);
    }
    if (t.action < 0 || t.outcome < 0) return std::nullopt;
    return t;
  }
};

inline std::vector<SubModelLayout> layout_for(ModelVariant v, int num_actions,
                                              int num_outcomes) {
  std::vector<int> all_actions(static_cast<std::size_t>(num_actions));
  for (int a = 0; a < num_actions; ++a) all_actions[static_cast<std::size_t>(a)] = a;
  std::vector<int> all_outcomes(static_cast<std::size_t>(num_outcomes));
  for (int m = 0; m < num_outcomes; ++m) all_outcomes[static_cast<std::size_t>(m)] = m;

  std::vector<SubModelLayout> out;
  if (shares_outcomes(v)) {
    out.push_back({all_actions, all_outcomes});
  } else if (shares_actions(v)) {
    for (int m = 0; m < num_outcomes; ++m) out.push_back({all_actions, {m}});
  } else {
    for (int m = 0; m < num_outcomes; ++m) {
      for (int a = 0; a < num_actions; ++a) out.push_back({{a}, {m}});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Trainable parameters of one sub-model.
struct ThetaParams {
  std::optional<MlpParams> mlp;
  MultitaskKernelSpec kernel;
  Vector log_noise;
};

/// Architecture and kernel choices shared by every sub-model of a fit.
struct ModelOptions {
  /// Hidden layer sizes after the input layer; the last entry is the
  /// feature dimension seen by the base kernel.
  std::vector<int> hidden = {50, 50, 2};
  Activation activation = Activation::Tanh;
  KernelKind kernel = KernelKind::RBF;
  int components = 1;
  /// Coregionalization rank; 0 means full rank.
  int rank = 0;
};

enum class ParamKind {
  MlpWeight,
  MlpBias,
  LogLengthscale,
  LogSignalVariance,
  CoregionL,
  CoregionLogDiag,
  LogNoise,
};

/// Bit flags selecting which parameter groups an optimizer may move.
enum ParamGroup : unsigned {
  kGroupMlp = 1u,
  kGroupKernel = 2u,
  kGroupCoregion = 4u,
  kGroupNoise = 8u,
  kGroupAll = 15u,
};

inline unsigned group_of(ParamKind k) {
  switch (k) {
  case ParamKind::MlpWeight:
  case ParamKind::MlpBias: return kGroupMlp;
  case ParamKind::LogLengthscale:
  case ParamKind::LogSignalVariance: return kGroupKernel;
  case ParamKind::CoregionL:
  case ParamKind::CoregionLogDiag: return kGroupCoregion;
  case ParamKind::LogNoise: return kGroupNoise;
  }
  return 0;
}

/// Visits every scalar parameter in a fixed order (the flattening order).
template <typename Theta, typename F>
  requires std::is_same_v<std::remove_const_t<Theta>, ThetaParams>
void for_each_param(Theta &theta, F &&f) {
  auto visit_matrix = [&](auto &m, ParamKind kind) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) f(kind, m(i, j));
    }
  };
  if (theta.mlp) {
    for (auto &w : theta.mlp->weights) visit_matrix(w, ParamKind::MlpWeight);
    for (auto &b : theta.mlp->biases) visit_matrix(b, ParamKind::MlpBias);
  }
  for (auto &c : theta.kernel.components) {
    visit_matrix(c.base.log_lengthscales, ParamKind::LogLengthscale);
    f(ParamKind::LogSignalVariance, c.base.log_signal_variance);
    visit_matrix(c.action.L, ParamKind::CoregionL);
    visit_matrix(c.action.log_diag, ParamKind::CoregionLogDiag);
    if (c.outcome) {
      visit_matrix(c.outcome->L, ParamKind::CoregionL);
      visit_matrix(c.outcome->log_diag, ParamKind::CoregionLogDiag);
    }
  }
  visit_matrix(theta.log_noise, ParamKind::LogNoise);
}

inline Eigen::Index param_count(const ThetaParams &theta) {
  Eigen::Index n = 0;
  for_each_param(theta, [&](ParamKind, const double &) { ++n; });
  return n;
}

inline Vector flatten(const ThetaParams &theta) {
  Vector out(param_count(theta));
  Eigen::Index i = 0;
  for_each_param(theta, [&](ParamKind, const double &v) { out(i++) = v; });
  return out;
}

inline void unflatten(ThetaParams &theta, const Vector &values) {
  if (values.size() != param_count(theta)) {
    throw DimensionMismatch("parameter vector length");
  }
  Eigen::Index i = 0;
  for_each_param(theta, [&](ParamKind, double &v) { v = values(i++); });
}

/// A zero-valued parameter set with the same shapes (gradient container).
inline ThetaParams zeros_like(const ThetaParams &theta) {
  ThetaParams z = theta;
  for_each_param(z, [](ParamKind, double &v) { v = 0.0; });
  return z;
}

/// log(1e-6): floor on per-task noise variance during optimization.
inline const double kLogNoiseFloor = std::log(1e-6);

inline ThetaParams initial_params(const SubModelLayout &layout,
                                  ModelVariant variant, int num_covariates,
                                  const ModelOptions &options, Rng &rng) {
  ThetaParams theta;
  Eigen::Index feature_dim = num_covariates;
  if (is_deep(variant)) {
    if (options.hidden.empty()) {
      throw InvalidArgument("deep variants need at least one hidden layer");
    }
    std::vector<int> sizes{num_covariates};
    sizes.insert(sizes.end(), options.hidden.begin(), options.hidden.end());
    theta.mlp = MlpParams::glorot(sizes, options.activation, rng);
    feature_dim = options.hidden.back();
  }
  const int na = static_cast<int>(layout.actions.size());
  const int no = static_cast<int>(layout.outcomes.size());
  auto rank_for = [&](int t) {
    return options.rank > 0 ? std::min(options.rank, t) : t;
  };
  for (int q = 0; q < std::max(1, options.components); ++q) {
    KernelComponent c;
    c.kind = options.kernel;
    c.base = BaseKernelParams::defaults(feature_dim);
    c.action = CoregionFactor::identity_like(na, rank_for(na), rng);
    if (shares_outcomes(variant) && no > 1) {
      c.outcome = CoregionFactor::identity_like(no, rank_for(no), rng);
    }
    theta.kernel.components.push_back(std::move(c));
  }
  theta.log_noise = Vector::Constant(na * no, std::log(0.1));
  return theta;
}

// ---------------------------------------------------------------------------
// Standardization
// ---------------------------------------------------------------------------

/// Column-wise affine maps applied before fitting. Constant columns keep
/// shift 0 and scale 1 and are flagged.
struct StandardizationRecord {
  Vector x_shift, x_scale;
  std::vector<bool> x_constant;
  Vector y_shift, y_scale;
  std::vector<bool> y_constant;

  static StandardizationRecord identity(Eigen::Index p, Eigen::Index m) {
    return {Vector::Zero(p), Vector::Ones(p), std::vector<bool>(p, false),
            Vector::Zero(m), Vector::Ones(m), std::vector<bool>(m, false)};
  }

  Matrix apply_x(const Matrix &x) const {
    if (x.cols() != x_shift.size()) {
      throw DimensionMismatch("covariate count differs from training data");
    }
    return ((x.rowwise() - x_shift.transpose()).array().rowwise() /
            x_scale.transpose().array())
        .matrix();
  }
  Matrix apply_y(const Matrix &y) const {
    return ((y.rowwise() - y_shift.transpose()).array().rowwise() /
            y_scale.transpose().array())
        .matrix();
  }
  Matrix invert_y(const Matrix &y) const {
    return ((y.array().rowwise() * y_scale.transpose().array()).rowwise() +
            y_shift.transpose().array())
        .matrix();
  }
};

namespace detail {

inline void column_stats(const Matrix &m, Vector &shift, Vector &scale,
                         std::vector<bool> &constant) {
  const Eigen::Index n = m.rows();
  shift = Vector::Zero(m.cols());
  scale = Vector::Ones(m.cols());
  constant.assign(static_cast<std::size_t>(m.cols()), false);
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    const double mean = m.col(j).mean();
    const double var =
        (m.col(j).array() - mean).square().sum() / static_cast<double>(n - 1);
    if (!(var > 0.0)) {
      constant[static_cast<std::size_t>(j)] = true;
      continue;
    }
    shift(j) = mean;
    scale(j) = std::sqrt(var);
  }
}

} // namespace detail

/// Zero mean, unit (N - 1) variance per covariate and outcome column.
inline std::pair<Dataset, StandardizationRecord>
standardize(const Dataset &data) {
  if (data.size() < 2) {
    throw EmptyDataset("standardize needs at least two units, got " +
                       std::to_string(data.size()));
  }
  data.validate();
  StandardizationRecord rec;
  detail::column_stats(data.X, rec.x_shift, rec.x_scale, rec.x_constant);
  detail::column_stats(data.Y, rec.y_shift, rec.y_scale, rec.y_constant);
  Dataset out = data;
  out.X = rec.apply_x(data.X);
  out.Y = rec.apply_y(data.Y);
  return {std::move(out), std::move(rec)};
}

// ---------------------------------------------------------------------------
// Block-design training data and the marginal likelihood
// ---------------------------------------------------------------------------

/*
 * Rows of one sub-model: unit i observed under action a_i contributes one
 * row (x_i, (a_i, m)) per covered outcome m. Covariates are stored once
 * per unit; row_unit maps rows back to units.
 */
struct TrainingBlock {
  Matrix unit_x;
  std::vector<int> row_unit;
  std::vector<TaskIndex> row_task;
  Vector y;

  Eigen::Index rows() const { return y.size(); }
};

inline TrainingBlock make_block(const SubModelLayout &layout,
                                const Dataset &data) {
  TrainingBlock block;
  std::vector<Eigen::Index> units;
  std::vector<double> ys;
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    const auto local =
        layout.local({data.A[static_cast<std::size_t>(i)], layout.outcomes[0]});
    if (!local) continue;
    const int unit = static_cast<int>(units.size());
    units.push_back(i);
    for (std::size_t m = 0; m < layout.outcomes.size(); ++m) {
      block.row_unit.push_back(unit);
      block.row_task.push_back({local->action, static_cast<int>(m)});
      ys.push_back(data.Y(i, layout.outcomes[m]));
    }
  }
  block.unit_x.resize(static_cast<Eigen::Index>(units.size()), data.X.cols());
  for (std::size_t u = 0; u < units.size(); ++u) {
    block.unit_x.row(static_cast<Eigen::Index>(u)) = data.X.row(units[u]);
  }
  block.y = Eigen::Map<const Vector>(ys.data(), static_cast<Eigen::Index>(ys.size()));
  return block;
}

namespace detail {

inline Matrix gather_rows(const Matrix &units, const std::vector<int> &row_unit) {
  Matrix out(static_cast<Eigen::Index>(row_unit.size()), units.cols());
  for (std::size_t r = 0; r < row_unit.size(); ++r) {
    out.row(static_cast<Eigen::Index>(r)) = units.row(row_unit[r]);
  }
  return out;
}

inline std::vector<int> local_flat(const MultitaskKernelSpec &spec,
                                   const std::vector<TaskIndex> &tasks) {
  return flat_tasks(spec, tasks);
}

struct Features {
  Matrix units;
  std::optional<ForwardTrace> trace;
};

inline Features unit_features(const ThetaParams &theta, const Matrix &unit_x) {
  if (!theta.mlp) return {unit_x, std::nullopt};
  auto [h, trace] = forward(*theta.mlp, unit_x);
  return {std::move(h), std::move(trace)};
}

} // namespace detail

struct BlockEvaluation {
  double nll = 0.0;
  double jitter_used = 0.0;
  std::optional<ThetaParams> grad;
};

/*
 * Negative log marginal likelihood of one block under zero prior mean,
 *   1/2 y^T H y + 1/2 log det(K + Sigma) + n/2 log 2 pi,  H = (K + Sigma)^{-1},
 * and, on request, its gradient. With W = dNLL/dK = 1/2 (H - H y y^T H)
 * every parameter gradient is a contraction of W against dK/dtheta; the
 * input-coordinate contraction is chained through the MLP.
 */
inline BlockEvaluation evaluate_block(const ThetaParams &theta,
                                      const TrainingBlock &block,
                                      bool with_grad) {
  const auto &spec = theta.kernel;
  spec.validate();
  if (theta.log_noise.size() != spec.num_tasks()) {
    throw DimensionMismatch("log_noise needs one entry per task");
  }
  BlockEvaluation result;
  const Eigen::Index n = block.rows();
  if (with_grad) result.grad = zeros_like(theta);
  if (n == 0) return result;

  // Base kernels are evaluated once per unit and expanded to rows; a unit
  // covering several outcomes contributes identical feature rows.
  const auto feats = detail::unit_features(theta, block.unit_x);
  const Eigen::Index n_units = feats.units.rows();
  const bool one_row_per_unit = n_units == n;
  const auto flat = detail::local_flat(spec, block.row_task);

  const std::size_t q_count = spec.components.size();
  std::vector<Matrix> unit_base(q_count), base(q_count), task(q_count);
  Matrix k = Matrix::Zero(n, n);
  for (std::size_t q = 0; q < q_count; ++q) {
    const auto &c = spec.components[q];
    unit_base[q] = kernel_matrix(c.kind, c.base, feats.units).matrix();
    base[q] = one_row_per_unit
                  ? unit_base[q]
                  : detail::expand_task_matrix(unit_base[q], block.row_unit, block.row_unit);
    task[q] = detail::expand_task_matrix(detail::component_task_matrix(c), flat, flat);
    k += task[q].cwiseProduct(base[q]);
  }
  const Vector noise = theta.log_noise.array().exp().matrix();
  for (Eigen::Index i = 0; i < n; ++i) k(i, i) += noise(flat[static_cast<std::size_t>(i)]);

  const CholFactor chol = cholesky(SymMatrix::adopt_symmetric(std::move(k)), 0.0);
  result.jitter_used = chol.jitter_used();
  const Vector alpha = solve_posdef(chol, block.y);
  result.nll = 0.5 * block.y.dot(alpha) + 0.5 * logdet(chol) +
               0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
  if (!with_grad) return result;

  Matrix w = chol.inverse();
  w.noalias() -= alpha * alpha.transpose();
  w *= 0.5;

  ThetaParams &g = *result.grad;
  Matrix du = Matrix::Zero(n_units, feats.units.cols());
  for (std::size_t q = 0; q < q_count; ++q) {
    const auto &c = spec.components[q];
    auto &gc = g.kernel.components[q];
    Matrix wt = w.cwiseProduct(task[q]);
    if (!one_row_per_unit) {
      wt = detail::aggregate_by_task(wt, block.row_unit, static_cast<int>(n_units));
    }
    const auto kg = contract_kernel_grads(c.kind, c.base, feats.units, unit_base[q], wt);
    gc.base.log_lengthscales = kg.log_lengthscales;
    gc.base.log_signal_variance = kg.log_signal_variance;
    du += kg.inputs;
    const auto cg = contract_coregion_grads(c, flat, w.cwiseProduct(base[q]));
    gc.action.L = cg.action.L;
    gc.action.log_diag = cg.action.log_diag;
    if (c.outcome) {
      gc.outcome->L = cg.outcome->L;
      gc.outcome->log_diag = cg.outcome->log_diag;
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const int t = flat[static_cast<std::size_t>(i)];
    g.log_noise(t) += w(i, i) * noise(t);
  }
  if (theta.mlp) {
    const auto mg = backward(*theta.mlp, *feats.trace, du);
    g.mlp->weights = mg.weights;
    g.mlp->biases = mg.biases;
  }
  return result;
}

/// Parameters of every sub-model of a variant, aligned with layout_for.
using ModelParams = std::vector<ThetaParams>;

namespace detail {

inline std::vector<TrainingBlock> blocks_for(ModelVariant variant,
                                             const Dataset &data) {
  std::vector<TrainingBlock> out;
  for (const auto &layout :
       layout_for(variant, data.num_actions(), data.num_outcomes())) {
    out.push_back(make_block(layout, data));
  }
  return out;
}

inline void check_params(const ModelParams &params, ModelVariant variant,
                         const Dataset &data) {
  const auto layouts = layout_for(variant, data.num_actions(), data.num_outcomes());
  if (params.size() != layouts.size()) {
    throw DimensionMismatch(to_string(variant) + " expects " +
                            std::to_string(layouts.size()) +
                            " sub-model parameter sets, got " +
                            std::to_string(params.size()));
  }
  for (std::size_t s = 0; s < params.size(); ++s) {
    if (params[s].mlp.has_value() != is_deep(variant)) {
      throw InvalidArgument("MLP presence must match the variant family");
    }
    if (params[s].kernel.num_tasks() != layouts[s].num_local_tasks()) {
      throw DimensionMismatch("sub-model " + std::to_string(s) +
                              " task count does not match the layout");
    }
  }
}

} // namespace detail

/// Seeded initialization for every sub-model of a variant.
inline ModelParams initial_params(ModelVariant variant, int num_actions,
                                  int num_outcomes, int num_covariates,
                                  const ModelOptions &options,
                                  std::uint64_t seed) {
  ModelParams out;
  const auto layouts = layout_for(variant, num_actions, num_outcomes);
  for (std::size_t s = 0; s < layouts.size(); ++s) {
    Rng rng = make_rng(seed, Stream::Fit, s);
    out.push_back(initial_params(layouts[s], variant, num_covariates, options, rng));
  }
  return out;
}

/// Total NLL over the sub-models; data are taken in model space.
inline double nll(const ModelParams &params, ModelVariant variant,
                  const Dataset &data) {
  detail::check_params(params, variant, data);
  const auto blocks = detail::blocks_for(variant, data);
  double total = 0.0;
  for (std::size_t s = 0; s < blocks.size(); ++s) {
    total += evaluate_block(params[s], blocks[s], false).nll;
  }
  return total;
}

inline ModelParams nll_grad(const ModelParams &params, ModelVariant variant,
                            const Dataset &data) {
  detail::check_params(params, variant, data);
  const auto blocks = detail::blocks_for(variant, data);
  ModelParams grads;
  for (std::size_t s = 0; s < blocks.size(); ++s) {
    grads.push_back(*evaluate_block(params[s], blocks[s], true).grad);
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Posterior predictions and the trained model
// ---------------------------------------------------------------------------

/// Latent-function posterior with a 95% credible band.
struct PosteriorPrediction {
  double mean = 0.0;
  double variance = 0.0;
  double lower95 = 0.0;
  double upper95 = 0.0;

  static PosteriorPrediction from_moments(double mean, double variance) {
    const double v = std::max(variance, 0.0);
    const double half = 1.96 * std::sqrt(v);
    return {mean, v, mean - half, mean + half};
  }
};

struct FitConfig {
  double learning_rate = 0.05;
  int iterations = 500;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  /// L2 penalty on MLP weights, added to the gradient.
  double weight_decay = 0.0;
  unsigned trainable = kGroupAll;

  void validate() const {
    if (!(learning_rate > 0.0) || iterations < 0 || !(adam_beta1 > 0.0) ||
        !(adam_beta1 < 1.0) || !(adam_beta2 > 0.0) || !(adam_beta2 < 1.0) ||
        !(adam_eps > 0.0) || !(weight_decay >= 0.0)) {
      throw InvalidArgument("invalid FitConfig");
    }
  }
};

/// One fitted sub-model with its cached factorization.
class SubModel {
public:
  SubModel(SubModelLayout layout, ThetaParams theta, TrainingBlock block)
      : layout_(std::move(layout)), theta_(std::move(theta)),
        block_(std::move(block)) {
    theta_.kernel.validate();
    flat_ = detail::local_flat(theta_.kernel, block_.row_task);
    if (block_.rows() == 0) return;
    features_ = detail::gather_rows(
        detail::unit_features(theta_, block_.unit_x).units, block_.row_unit);
    const SymMatrix k = assemble_train_cov(theta_.kernel, features_,
                                           block_.row_task, noise());
    chol_.emplace(cholesky(k, 0.0));
    alpha_ = solve_posdef(*chol_, block_.y);
  }

  const SubModelLayout &layout() const { return layout_; }
  const ThetaParams &theta() const { return theta_; }
  const TrainingBlock &block() const { return block_; }
  double jitter_used() const { return chol_ ? chol_->jitter_used() : 0.0; }

  Vector noise() const { return theta_.log_noise.array().exp().matrix(); }

  Matrix features(const Matrix &x_model) const {
    return detail::unit_features(theta_, x_model).units;
  }

  /// Cross covariance between query rows (features, local task) and the
  /// training rows.
  Matrix cross_cov(const Matrix &feats, const TaskIndex &local) const {
    const std::vector<TaskIndex> tq(static_cast<std::size_t>(feats.rows()), local);
    return assemble_cross_cov(theta_.kernel, features_, block_.row_task, feats, tq);
  }

  /// Prior covariance of the latent functions of two local tasks at equal
  /// feature rows.
  Vector prior_cov(const Matrix &feats, const TaskIndex &a,
                   const TaskIndex &b) const {
    Vector out = Vector::Zero(feats.rows());
    for (const auto &c : theta_.kernel.components) {
      const double tc = task_cov(c, a, b);
      for (Eigen::Index i = 0; i < feats.rows(); ++i) {
        out(i) += tc * kernel_eval(c.kind, c.base, feats.row(i), feats.row(i));
      }
    }
    return out;
  }

  /// Posterior mean and covariance (model space) of two local tasks at the
  /// same query rows. Returns (mean_a, mean_b, cov_ab, var_a, var_b).
  struct JointMoments {
    Vector mean_a, mean_b, var_a, var_b, cov_ab;
  };

  JointMoments joint(const Matrix &x_model, const TaskIndex &a,
                     const TaskIndex &b, bool need_variance) const {
    const Matrix feats = features(x_model);
    JointMoments out;
    const Eigen::Index nq = feats.rows();
    if (block_.rows() == 0) {
      out.mean_a = out.mean_b = Vector::Zero(nq);
      if (need_variance) {
        out.var_a = prior_cov(feats, a, a);
        out.var_b = prior_cov(feats, b, b);
        out.cov_ab = prior_cov(feats, a, b);
      }
      return out;
    }
    const Matrix ka = cross_cov(feats, a);
    out.mean_a = ka * alpha_;
    const bool same = (a == b);
    const Matrix kb = same ? Matrix() : cross_cov(feats, b);
    out.mean_b = same ? out.mean_a : Vector(kb * alpha_);
    if (!need_variance) return out;
    const auto lower = chol_->llt().matrixL();
    const Matrix va = lower.solve(ka.transpose());
    const Matrix vb = same ? va : Matrix(lower.solve(kb.transpose()));
    out.var_a = prior_cov(feats, a, a) - va.colwise().squaredNorm().transpose();
    out.var_b = same ? out.var_a
                     : Vector(prior_cov(feats, b, b) -
                              vb.colwise().squaredNorm().transpose());
    out.cov_ab = same ? out.var_a
                      : Vector(prior_cov(feats, a, b) -
                               (va.cwiseProduct(vb)).colwise().sum().transpose());
    return out;
  }

private:
  SubModelLayout layout_;
  ThetaParams theta_;
  TrainingBlock block_;
  std::vector<int> flat_;
  Matrix features_;
  std::optional<CholFactor> chol_;
  Vector alpha_;
};

/*
 * Immutable fitted model. Holds the standardization record, the training
 * rows of every sub-model in model space, and the parameters; predictions
 * are returned in original outcome units.
 */
class TrainedModel {
public:
  TrainedModel(ModelVariant variant, int num_actions, int num_outcomes,
               StandardizationRecord record, std::vector<SubModel> submodels,
               std::vector<double> trajectory = {})
      : variant_(variant), num_actions_(num_actions),
        num_outcomes_(num_outcomes), record_(std::move(record)),
        submodels_(std::move(submodels)), trajectory_(std::move(trajectory)) {}

  ModelVariant variant() const { return variant_; }
  int num_actions() const { return num_actions_; }
  int num_outcomes() const { return num_outcomes_; }
  Eigen::Index num_covariates() const { return record_.x_shift.size(); }
  const StandardizationRecord &record() const { return record_; }
  const std::vector<SubModel> &submodels() const { return submodels_; }
  const std::vector<double> &nll_trajectory() const { return trajectory_; }

  ModelParams params() const {
    ModelParams out;
    for (const auto &s : submodels_) out.push_back(s.theta());
    return out;
  }

  /// Posterior for task t at every row of x (original covariate units).
  std::vector<PosteriorPrediction> predict_many(const Matrix &x,
                                                const TaskIndex &t) const {
    const auto [sub, local] = locate(t);
    const auto mom = sub->joint(record_.apply_x(x), local, local, true);
    const double scale = record_.y_scale(t.outcome);
    const double shift = record_.y_shift(t.outcome);
    std::vector<PosteriorPrediction> out;
    out.reserve(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      out.push_back(PosteriorPrediction::from_moments(
          mom.mean_a(i) * scale + shift, mom.var_a(i) * scale * scale));
    }
    return out;
  }

  PosteriorPrediction predict(const Vector &x_star, const TaskIndex &t) const {
    return predict_many(x_star.transpose(), t).front();
  }

  /// Posterior means only (cheaper: no triangular solves).
  Vector mean_many(const Matrix &x, const TaskIndex &t) const {
    const auto [sub, local] = locate(t);
    const auto mom = sub->joint(record_.apply_x(x), local, local, false);
    return (mom.mean_a.array() * record_.y_scale(t.outcome) +
            record_.y_shift(t.outcome))
        .matrix();
  }

  double mean(const Vector &x, int action, int outcome) const {
    return mean_many(x.transpose(), {action, outcome})(0);
  }

  /// Posterior of f_a(x) - f_b(x) for tasks a, b, including the posterior
  /// cross covariance when both live in the same sub-model.
  std::vector<PosteriorPrediction> contrast_many(const Matrix &x,
                                                 const TaskIndex &a,
                                                 const TaskIndex &b) const {
    const auto [sa, la] = locate(a);
    const auto [sb, lb] = locate(b);
    const Matrix xm = record_.apply_x(x);
    const double ka = record_.y_scale(a.outcome);
    const double kb = record_.y_scale(b.outcome);
    const double shift = record_.y_shift(a.outcome) - record_.y_shift(b.outcome);
    Vector mean_a, mean_b, var_a, var_b, cov = Vector::Zero(x.rows());
    if (sa == sb) {
      auto m = sa->joint(xm, la, lb, true);
      mean_a = m.mean_a; mean_b = m.mean_b;
      var_a = m.var_a; var_b = m.var_b; cov = m.cov_ab;
    } else {
      auto ma = sa->joint(xm, la, la, true);
      auto mb = sb->joint(xm, lb, lb, true);
      mean_a = ma.mean_a; var_a = ma.var_a;
      mean_b = mb.mean_a; var_b = mb.var_a;
    }
    std::vector<PosteriorPrediction> out;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double mu = ka * mean_a(i) - kb * mean_b(i) + shift;
      const double v = ka * ka * var_a(i) + kb * kb * var_b(i) - 2.0 * ka * kb * cov(i);
      out.push_back(PosteriorPrediction::from_moments(mu, v));
    }
    return out;
  }

private:
  std::pair<const SubModel *, TaskIndex> locate(const TaskIndex &t) const {
    if (t.action < 0 || t.action >= num_actions_ || t.outcome < 0 ||
        t.outcome >= num_outcomes_) {
      throw TaskOutOfRange("task (" + std::to_string(t.action) + ", " +
                           std::to_string(t.outcome) + ") outside D = " +
                           std::to_string(num_actions_) + ", M = " +
                           std::to_string(num_outcomes_));
    }
    for (const auto &s : submodels_) {
      if (auto local = s.layout().local(t)) return {&s, *local};
    }
    throw TaskOutOfRange("no sub-model covers the task");
  }

  ModelVariant variant_;
  int num_actions_;
  int num_outcomes_;
  StandardizationRecord record_;
  std::vector<SubModel> submodels_;
  std::vector<double> trajectory_;
};

/// Builds a model from given parameters and model-space training data.
inline TrainedModel assemble_model(ModelVariant variant,
                                   const Dataset &model_data,
                                   StandardizationRecord record,
                                   ModelParams params,
                                   std::vector<double> trajectory = {}) {
  detail::check_params(params, variant, model_data);
  const auto layouts =
      layout_for(variant, model_data.num_actions(), model_data.num_outcomes());
  std::vector<SubModel> subs;
  for (std::size_t s = 0; s < layouts.size(); ++s) {
    subs.emplace_back(layouts[s], std::move(params[s]),
                      make_block(layouts[s], model_data));
  }
  return TrainedModel(variant, model_data.num_actions(),
                      model_data.num_outcomes(), std::move(record),
                      std::move(subs), std::move(trajectory));
}

/// Standardizes raw data and builds a model with the given parameters.
inline TrainedModel make_model(ModelVariant variant, const Dataset &raw,
                               ModelParams params) {
  auto [model_data, record] = standardize(raw);
  return assemble_model(variant, model_data, std::move(record), std::move(params));
}

namespace detail {

inline void project(ThetaParams &theta) {
  for_each_param(theta, [](ParamKind kind, double &v) {
    if (kind == ParamKind::CoregionLogDiag) v = std::max(v, kLogDiagFloor);
    if (kind == ParamKind::LogNoise) v = std::max(v, kLogNoiseFloor);
  });
}

struct BlockFit {
  ThetaParams best;
  std::vector<double> trajectory;
};

inline BlockFit fit_block(ThetaParams theta, const TrainingBlock &block,
                          const FitConfig &config) {
  const Eigen::Index np = param_count(theta);
  Vector mask(np), decay(np);
  {
    Eigen::Index i = 0;
    for_each_param(theta, [&](ParamKind kind, const double &) {
      mask(i) = (group_of(kind) & config.trainable) ? 1.0 : 0.0;
      decay(i) = kind == ParamKind::MlpWeight ? config.weight_decay : 0.0;
      ++i;
    });
  }
  Adam adam(np, config.learning_rate, config.adam_beta1, config.adam_beta2,
            config.adam_eps);
  BlockFit out{theta, {}};
  double best = std::numeric_limits<double>::infinity();
  for (int it = 0;; ++it) {
    const bool last = it == config.iterations;
    BlockEvaluation eval;
    try {
      eval = evaluate_block(theta, block, !last);
    } catch (const InvalidArgument &e) {
      // an Adam step pushed a log-parameter out of floating-point range
      if (it == 0) throw;
      throw Divergence(it, e.what());
    }
    if (!std::isfinite(eval.nll)) {
      throw Divergence(it, "non-finite negative log marginal likelihood");
    }
    out.trajectory.push_back(eval.nll);
    if (eval.nll < best) {
      best = eval.nll;
      out.best = theta;
    }
    if (last) break;
    Vector values = flatten(theta);
    Vector grad = flatten(*eval.grad);
    if (!grad.allFinite()) {
      throw Divergence(it, "non-finite gradient");
    }
    grad = (grad + decay.cwiseProduct(values)).cwiseProduct(mask);
    values += adam.step(grad).cwiseProduct(mask);
    unflatten(theta, values);
    project(theta);
  }
  return out;
}

} // namespace detail

/*
 * Full-batch Adam on the negative log marginal likelihood from a seeded
 * initialization. Sub-models share no parameters, so each is optimized on
 * its own and keeps its lowest-NLL iterate; the reported trajectory is
 * the per-iteration sum over sub-models.
 */
inline TrainedModel fit(ModelVariant variant, const Dataset &raw,
                        const FitConfig &config,
                        const ModelOptions &options = {},
                        std::optional<ModelParams> init = std::nullopt) {
  config.validate();
  auto [model_data, record] = standardize(raw);
  ModelParams params =
      init ? std::move(*init)
           : initial_params(variant, raw.num_actions(), raw.num_outcomes(),
                            static_cast<int>(raw.num_covariates()), options,
                            config.seed);
  detail::check_params(params, variant, model_data);
  const auto blocks = detail::blocks_for(variant, model_data);
  std::vector<double> trajectory(static_cast<std::size_t>(config.iterations) + 1, 0.0);
  for (std::size_t s = 0; s < blocks.size(); ++s) {
    auto bf = detail::fit_block(std::move(params[s]), blocks[s], config);
    for (std::size_t i = 0; i < trajectory.size(); ++i) trajectory[i] += bf.trajectory[i];
    params[s] = std::move(bf.best);
  }
  return assemble_model(variant, model_data, std::move(record), std::move(params),
                        std::move(trajectory));
}

} // namespace cmgp

#endif
