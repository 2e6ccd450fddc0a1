#ifndef CMGP_CAUSAL_HPP
#define CMGP_CAUSAL_HPP

#include <cmath>
#include <concepts>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "dataset.hpp"
#include "errors.hpp"
#include "gp_model.hpp"
#include "simgen.hpp"

namespace cmgp {

/// Anything that returns expected outcomes per (x, action, outcome).
template <typename S>
concept OutcomeSource = requires(const S &s, const Vector &x, const Matrix &xs) {
  { s.num_actions() } -> std::convertible_to<int>;
  { s.num_outcomes() } -> std::convertible_to<int>;
  { s.mean(x, 0, 0) } -> std::convertible_to<double>;
  { s.mean_many(xs, TaskIndex{}) } -> std::convertible_to<Vector>;
};

/// An outcome source that also reports credible bands.
template <typename S>
concept ProbabilisticSource =
    OutcomeSource<S> && requires(const S &s, const Vector &x, const Matrix &xs) {
      { s.predict(x, TaskIndex{}) } -> std::convertible_to<PosteriorPrediction>;
      { s.predict_many(xs, TaskIndex{}) }
          -> std::convertible_to<std::vector<PosteriorPrediction>>;
      { s.contrast_many(xs, TaskIndex{}, TaskIndex{}) }
          -> std::convertible_to<std::vector<PosteriorPrediction>>;
    };

/// Presents the true surfaces as a model with zero-width bands.
class OracleModel {
public:
  explicit OracleModel(GroundTruthOracle oracle) : oracle_(std::move(oracle)) {}

  const GroundTruthOracle &oracle() const { return oracle_; }
  int num_actions() const { return oracle_.num_actions; }
  int num_outcomes() const { return oracle_.num_outcomes; }

  double mean(const Vector &x, int a, int m) const { return oracle_.true_surface(x, a, m); }

  Vector mean_many(const Matrix &x, const TaskIndex &t) const {
    Vector out(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      out(i) = oracle_.true_surface(x.row(i).transpose(), t.action, t.outcome);
    }
    return out;
  }

  PosteriorPrediction predict(const Vector &x, const TaskIndex &t) const {
    return PosteriorPrediction::from_moments(mean(x, t.action, t.outcome), 0.0);
  }

  std::vector<PosteriorPrediction> predict_many(const Matrix &x, const TaskIndex &t) const {
    std::vector<PosteriorPrediction> out;
    const Vector m = mean_many(x, t);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      out.push_back(PosteriorPrediction::from_moments(m(i), 0.0));
    }
    return out;
  }

  std::vector<PosteriorPrediction> contrast_many(const Matrix &x, const TaskIndex &a,
                                                 const TaskIndex &b) const {
    const Vector d = mean_many(x, a) - mean_many(x, b);
    std::vector<PosteriorPrediction> out;
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      out.push_back(PosteriorPrediction::from_moments(d(i), 0.0));
    }
    return out;
  }

private:
  GroundTruthOracle oracle_;
};

static_assert(ProbabilisticSource<TrainedModel>);
static_assert(ProbabilisticSource<OracleModel>);

namespace detail {

template <OutcomeSource S>
void check_task(const S &s, int a, int m) {
  if (a < 0 || a >= s.num_actions() || m < 0 || m >= s.num_outcomes()) {
    throw TaskOutOfRange("task (" + std::to_string(a) + ", " + std::to_string(m) + ")");
  }
}

/// N x D matrix of expected outcome m under every action.
template <OutcomeSource S>
Matrix action_values(const S &s, const Matrix &x, int m) {
  Matrix v(x.rows(), s.num_actions());
  for (int a = 0; a < s.num_actions(); ++a) v.col(a) = s.mean_many(x, {a, m});
  return v;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Effects
// ---------------------------------------------------------------------------

template <ProbabilisticSource S>
PosteriorPrediction ice(const S &model, const Vector &x, int a, int m) {
  return model.predict(x, TaskIndex{a, m});
}

/// f_a(x) - f_b(x) from posterior means.
template <OutcomeSource S>
double cate(const S &model, const Vector &x, int a, int b, int m) {
  if (a == b) throw InvalidArgument("cate needs two distinct actions");
  detail::check_task(model, a, m);
  detail::check_task(model, b, m);
  return model.mean(x, a, m) - model.mean(x, b, m);
}

/// Posterior of the contrast f_a - f_b at every row of x.
template <ProbabilisticSource S>
std::vector<PosteriorPrediction> cate_band(const S &model, const Matrix &x, int a, int b,
                                           int m) {
  if (a == b) throw InvalidArgument("cate needs two distinct actions");
  return model.contrast_many(x, TaskIndex{a, m}, TaskIndex{b, m});
}

/// Mean CATE over the units observed under the treated action.
template <OutcomeSource S>
double att(const S &model, const Dataset &data, int treated, int control, int m) {
  if (treated == control) throw InvalidArgument("att needs two distinct actions");
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    if (data.A[static_cast<std::size_t>(i)] == treated) rows.push_back(i);
  }
  if (rows.empty()) {
    throw NoTreatedUnits("no unit observed under action " + std::to_string(treated));
  }
  detail::check_task(model, treated, m);
  detail::check_task(model, control, m);
  const Matrix xt = data.subset(rows).X;
  return (model.mean_many(xt, {treated, m}) - model.mean_many(xt, {control, m})).mean();
}

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

/// Uniform, deterministic (x -> a), stochastic (x -> probabilities) or a
/// fixed per-unit assignment aligned with the rows being evaluated.
class PolicySpec {
public:
  struct Uniform {};
  using Deterministic = std::function<int(const Vector &)>;
  using Stochastic = std::function<Vector(const Vector &)>;
  using Assignment = std::vector<int>;

  static PolicySpec uniform() { return PolicySpec(Uniform{}); }
  static PolicySpec deterministic(Deterministic f) { return PolicySpec(std::move(f)); }
  static PolicySpec stochastic(Stochastic f) { return PolicySpec(std::move(f)); }
  static PolicySpec assignment(Assignment a) { return PolicySpec(std::move(a)); }

  /// Probability vector over D actions for row i with covariates x.
  Vector probs(const Vector &x, Eigen::Index i, int num_actions) const {
    Vector p = Vector::Zero(num_actions);
    if (std::holds_alternative<Uniform>(kind_)) {
      p.setConstant(1.0 / num_actions);
      return p;
    }
    int a = -1;
    if (const auto *f = std::get_if<Deterministic>(&kind_)) {
      a = (*f)(x);
    } else if (const auto *v = std::get_if<Assignment>(&kind_)) {
      if (i >= static_cast<Eigen::Index>(v->size())) {
        throw LengthMismatch("assignment shorter than the evaluated sample");
      }
      a = (*v)[static_cast<std::size_t>(i)];
    } else {
      p = std::get<Stochastic>(kind_)(x);
      if (p.size() != num_actions || (p.array() < 0.0).any() ||
          std::abs(p.sum() - 1.0) > 1e-12) {
        throw InvalidArgument("policy probabilities must be nonnegative and sum to 1");
      }
      return p;
    }
    if (a < 0 || a >= num_actions) {
      throw TaskOutOfRange("policy chose action " + std::to_string(a));
    }
    p(a) = 1.0;
    return p;
  }

private:
  using Kind = std::variant<Uniform, Deterministic, Stochastic, Assignment>;
  explicit PolicySpec(Kind k) : kind_(std::move(k)) {}
  Kind kind_;
};

/// (1/N) sum_i sum_a pi(a | x_i) value(x_i, a, m).
template <OutcomeSource S>
double policy_value(const S &source, const PolicySpec &policy, const Matrix &x, int m) {
  if (x.rows() == 0) throw EmptyDataset("policy_value over an empty sample");
  const Matrix v = detail::action_values(source, x, m);
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    total += v.row(i).dot(policy.probs(x.row(i).transpose(), i, source.num_actions()));
  }
  return total / static_cast<double>(x.rows());
}

/// Per-unit value of a policy (its mean over units is policy_value).
template <OutcomeSource S>
Vector unit_policy_values(const S &source, const PolicySpec &policy, const Matrix &x,
                          int m) {
  const Matrix v = detail::action_values(source, x, m);
  Vector out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    out(i) = v.row(i).dot(policy.probs(x.row(i).transpose(), i, source.num_actions()));
  }
  return out;
}

inline Vector equal_weights(int num_outcomes) {
  return Vector::Constant(num_outcomes, 1.0 / num_outcomes);
}

/// argmax_a sum_m w_m mean(x_i, a, m); ties go to the lowest index.
template <OutcomeSource S>
std::vector<int> optimal_policy(const S &source, const Matrix &x, const Vector &weights) {
  if (weights.size() != source.num_outcomes() || (weights.array() < 0.0).any() ||
      std::abs(weights.sum() - 1.0) > 1e-12) {
    throw InvalidArgument("outcome weights must be nonnegative, sum to 1, one per outcome");
  }
  Matrix score = Matrix::Zero(x.rows(), source.num_actions());
  for (int m = 0; m < source.num_outcomes(); ++m) {
    if (weights(m) == 0.0) continue;
    score += weights(m) * detail::action_values(source, x, m);
  }
  std::vector<int> out(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    int best = 0;
    for (int a = 1; a < source.num_actions(); ++a) {
      if (score(i, a) > score(i, best)) best = a;
    }
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

template <OutcomeSource S>
std::vector<int> optimal_policy(const S &source, const Matrix &x) {
  return optimal_policy(source, x, equal_weights(source.num_outcomes()));
}

/// Fraction of units allocated to their true best action.
inline double oar(const std::vector<int> &predicted, const std::vector<int> &truth) {
  if (predicted.size() != truth.size()) {
    throw LengthMismatch("oar needs equally long allocations");
  }
  if (predicted.empty()) throw LengthMismatch("oar of an empty allocation");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

inline double rmse(const Vector &pred, const Vector &truth) {
  if (pred.size() != truth.size()) throw LengthMismatch("rmse needs equal lengths");
  if (pred.size() == 0) throw LengthMismatch("rmse of empty vectors");
  return std::sqrt((pred - truth).squaredNorm() / static_cast<double>(pred.size()));
}

inline double ope_regret(double estimated, double truth) {
  return std::abs(estimated - truth);
}

/// Fraction of (unit, task) pairs whose true value lies in the 95% band.
template <ProbabilisticSource S>
double coverage95(const S &model, const GroundTruthOracle &oracle, const Matrix &x,
                  const std::vector<TaskIndex> &tasks) {
  if (tasks.empty() || x.rows() == 0) throw InvalidArgument("coverage needs tasks and units");
  std::size_t inside = 0;
  for (const auto &t : tasks) {
    const auto bands = model.predict_many(x, t);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double truth = oracle.true_surface(x.row(i).transpose(), t.action, t.outcome);
      const auto &b = bands[static_cast<std::size_t>(i)];
      inside += (b.lower95 <= truth && truth <= b.upper95);
    }
  }
  return static_cast<double>(inside) /
         (static_cast<double>(tasks.size()) * static_cast<double>(x.rows()));
}

inline std::vector<TaskIndex> all_tasks(int num_actions, int num_outcomes) {
  std::vector<TaskIndex> out;
  for (int m = 0; m < num_outcomes; ++m)
    for (int a = 0; a < num_actions; ++a) out.push_back({a, m});
  return out;
}

template <ProbabilisticSource S>
double coverage95(const S &model, const GroundTruthOracle &oracle, const Matrix &x) {
  return coverage95(model, oracle, x, all_tasks(oracle.num_actions, oracle.num_outcomes));
}

/// Treat (action 1) where the estimated effect f_1 - f_0 is positive.
template <OutcomeSource S>
std::vector<int> ice_sign_policy(const S &model, const Matrix &x, int m = 0) {
  if (model.num_actions() != 2) throw NotBinaryActions("ICE-sign rule needs D = 2");
  const Vector effect = model.mean_many(x, {1, m}) - model.mean_many(x, {0, m});
  std::vector<int> out(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) out[static_cast<std::size_t>(i)] = effect(i) > 0.0;
  return out;
}

/// 1 - [E(Y | do(1), pi = 1) p(pi = 1) + E(Y | do(0), pi = 0) p(pi = 0)],
/// with expectations from the oracle means over the sample partition.
template <OutcomeSource S>
double policy_risk(const S &value_source, const std::vector<int> &policy, const Matrix &x,
                   int m = 0) {
  if (value_source.num_actions() != 2) throw NotBinaryActions("policy risk needs D = 2");
  if (static_cast<Eigen::Index>(policy.size()) != x.rows()) {
    throw LengthMismatch("policy must assign every unit");
  }
  return 1.0 - policy_value(value_source, PolicySpec::assignment(policy), x, m);
}

/// Per-(outcome, metric) values; the aggregate of a metric is the equal
/// weight mean over outcomes.
class MetricReport {
public:
  void set(const std::string &metric, int outcome, double value) {
    values_[metric][outcome] = value;
  }

  double get(const std::string &metric, int outcome) const {
    return values_.at(metric).at(outcome);
  }

  double aggregate(const std::string &metric) const {
    const auto &per = values_.at(metric);
    double s = 0.0;
    for (const auto &[m, v] : per) s += v;
    return s / static_cast<double>(per.size());
  }

  std::vector<std::string> metrics() const {
    std::vector<std::string> out;
    for (const auto &[k, v] : values_) out.push_back(k);
    return out;
  }

  const std::map<int, double> &per_outcome(const std::string &metric) const {
    return values_.at(metric);
  }

private:
  std::map<std::string, std::map<int, double>> values_;
};

} // namespace cmgp

#endif
