#ifndef CMGP_SIMGEN_HPP
#define CMGP_SIMGEN_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dataset.hpp"
#include "errors.hpp"
#include "numcore.hpp"
#include "rng.hpp"

#include "json.hpp"

namespace cmgp {

enum class DgpKind { B1, B2, Confounded, OpeSynth };

inline std::string to_string(DgpKind k) {
  switch (k) {
  case DgpKind::B1: return "b1";
  case DgpKind::B2: return "b2";
  case DgpKind::Confounded: return "confounded";
  case DgpKind::OpeSynth: return "ope-synth";
  }
  return "?";
}

inline DgpKind dgp_from_string(const std::string &s) {
  for (auto k : {DgpKind::B1, DgpKind::B2, DgpKind::Confounded, DgpKind::OpeSynth}) {
    if (to_string(k) == s) return k;
  }
  throw InvalidArgument("unknown dgp '" + s + "'");
}

inline double standard_normal_cdf(double x) {
  return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

namespace detail {

/// Behavior-policy coefficients of the four-action simulator, one row per
/// action over X_0..X_6. Rows 0 and 3 coincide as printed in the source
/// design; kept verbatim.
inline Matrix b2_behavior_coefficients(int p) {
  Matrix beta = Matrix::Zero(4, p);
  const double rows[4][5] = {{-1.0, -0.8, -0.1, -0.1, 0.0},
                             {0.0, 0.0, 1.0, 0.8, 0.2},
                             {1.5, -0.8, -0.1, -0.1, 0.0},
                             {-1.0, -0.8, -0.1, -0.1, 0.0}};
  for (int a = 0; a < 4; ++a)
    for (int j = 0; j < 5; ++j) beta(a, j) = rows[a][j];
  return beta;
}

inline Vector softmax(const Vector &logits) {
  const Vector e = (logits.array() - logits.maxCoeff()).exp().matrix();
  return e / e.sum();
}

} // namespace detail

/*
 * Closed-form ground truth of a simulator: noiseless outcome surfaces
 * f_{a,m}(x), the behavior policy p(A = a | x) and per-task noise. Every
 * generated dataset carries the seed that reproduces its draws.
 */
struct GroundTruthOracle {
  DgpKind kind = DgpKind::B1;
  int num_actions = 2;
  int num_outcomes = 1;
  int num_covariates = 1;
  double gamma = 0.0;
  std::uint64_t seed = 0;
  /// Outcome coefficients (D x P), transformed-classification simulator only.
  Matrix outcome_coefficients;
  /// Label frequencies, transformed-classification simulator only.
  Vector label_frequencies;
  /// Per-action noise standard deviation (shared across outcomes).
  double noise_sd = 0.75;

  int num_tasks() const { return num_actions * num_outcomes; }

  double true_surface(const Eigen::Ref<const Vector> &x, int a, int m) const {
    if (x.size() != num_covariates) {
      throw DimensionMismatch("oracle expects " + std::to_string(num_covariates) +
                              " covariates");
    }
    if (a < 0 || a >= num_actions || m < 0 || m >= num_outcomes) {
      throw TaskOutOfRange("oracle task (" + std::to_string(a) + ", " +
                           std::to_string(m) + ")");
    }
    switch (kind) {
    case DgpKind::B1: {
      const double f0 = 2.0 + 0.3 * std::exp(x(0));
      return a == 0 ? f0 : 3.0 + f0;
    }
    case DgpKind::B2:
    case DgpKind::Confounded: {
      if (m == 0) {
        const double base = 3.0 + 0.4 * x(0) * x(1) - 0.3 * x(2) * x(2) +
                            0.2 * std::exp(x(3)) + 0.6 * std::sin(x(4));
        switch (a) {
        case 0: return base;
        case 1: return -1.0 + base + 0.1 * x(5);
        case 2: return 1.0 + base + 0.3 * x(5);
        default: return 0.5 + base + 0.5 * x(6);
        }
      }
      const double base =
          1.0 + 0.2 * x(0) * x(1) - 0.2 * x(2) * x(2) + 0.1 * std::exp(x(3));
      switch (a) {
      case 0: return base;
      case 1: return -2.0 + base + 0.2 * x(5);
      case 2: return 2.0 + base + 0.4 * x(5);
      default: return 1.0 + base + 0.5 * x(6);
      }
    }
    case DgpKind::OpeSynth:
      return std::exp(x.dot(outcome_coefficients.row(a)));
    }
    return 0.0;
  }

  /// Alias so the oracle can stand in for a fitted model.
  double mean(const Eigen::Ref<const Vector> &x, int a, int m) const {
    return true_surface(x, a, m);
  }

  Vector behavior_probs(const Eigen::Ref<const Vector> &x) const {
    switch (kind) {
    case DgpKind::B1: {
      const double p1 = standard_normal_cdf(0.2 + x(0));
      Vector p(2);
      p << 1.0 - p1, p1;
      return p;
    }
    case DgpKind::B2:
    case DgpKind::Confounded: {
      Vector logits = detail::b2_behavior_coefficients(num_covariates) * x;
      logits(2) += gamma;
      logits(3) += gamma;
      return detail::softmax(logits);
    }
    case DgpKind::OpeSynth:
      return label_frequencies;
    }
    return {};
  }

  Vector noise_variances() const {
    return Vector::Constant(num_tasks(), noise_sd * noise_sd);
  }

  /// Noiseless surface values for every unit under its observed action
  /// plus the seeded noise stream: reproduces Y of the generated dataset.
  Matrix outcomes_for(const Matrix &x, const std::vector<int> &actions) const {
    Rng rng = make_rng(seed, Stream::Noise);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix y(x.rows(), num_outcomes);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      for (int m = 0; m < num_outcomes; ++m) {
        y(i, m) = true_surface(x.row(i).transpose(),
                               actions[static_cast<std::size_t>(i)], m) +
                  noise_sd * normal(rng);
      }
    }
    return y;
  }

  /// Best action per unit for outcome weights w (ties to the lowest index).
  int best_action(const Eigen::Ref<const Vector> &x, const Vector &w) const {
    int best = 0;
    double best_value = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < num_actions; ++a) {
      double v = 0.0;
      for (int m = 0; m < num_outcomes; ++m) v += w(m) * true_surface(x, a, m);
      if (v > best_value) {
        best_value = v;
        best = a;
      }
    }
    return best;
  }

  /// (1/N) sum_i sum_a f_a(x_i) / D: value of the uniform policy on a sample.
  double uniform_policy_value(const Matrix &x, int m = 0) const {
    double total = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      for (int a = 0; a < num_actions; ++a) {
        total += true_surface(x.row(i).transpose(), a, m);
      }
    }
    return total / (static_cast<double>(num_actions) * static_cast<double>(x.rows()));
  }
};

struct SimulatedData {
  Dataset data;
  GroundTruthOracle oracle;
};

namespace detail {

inline Matrix uniform_covariates(std::uint64_t seed, Eigen::Index n, Eigen::Index p,
                                 double lo, double hi) {
  Rng rng = make_rng(seed, Stream::Covariates);
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix x(n, p);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < p; ++j) x(i, j) = u(rng);
  return x;
}

/// One uniform draw per unit, inverted through the behavior probabilities.
inline std::vector<int> draw_actions(const GroundTruthOracle &oracle,
                                     const Matrix &x) {
  Rng rng = make_rng(oracle.seed, Stream::Actions);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<int> actions;
  actions.reserve(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Vector p = oracle.behavior_probs(x.row(i).transpose());
    const double draw = u(rng);
    int a = 0;
    double acc = p(0);
    while (draw >= acc && a + 1 < p.size()) acc += p(++a);
    actions.push_back(a);
  }
  return actions;
}

inline SimulatedData finish(GroundTruthOracle oracle, Matrix x,
                            std::vector<int> actions) {
  Dataset d;
  d.meta = {oracle.num_actions, oracle.num_outcomes, oracle.seed, to_string(oracle.kind)};
  d.Y = oracle.outcomes_for(x, actions);
  d.X = std::move(x);
  d.A = std::move(actions);
  d.validate();
  return {std::move(d), std::move(oracle)};
}

} // namespace detail

/// One covariate on (-3, 3), binary action with p(A = 1 | x) = Phi(0.2 + x),
/// f_0 = 2 + 0.3 exp(x), f_1 = 3 + f_0, noise sd 0.75.
inline SimulatedData gen_b1(Eigen::Index n, std::uint64_t seed) {
  if (n < 2) throw InvalidDims("gen_b1 needs n >= 2");
  GroundTruthOracle o;
  o.kind = DgpKind::B1;
  o.num_actions = 2;
  o.num_outcomes = 1;
  o.num_covariates = 1;
  o.seed = seed;
  o.noise_sd = 0.75;
  Matrix x = detail::uniform_covariates(seed, n, 1, -3.0, 3.0);
  auto actions = detail::draw_actions(o, x);
  return detail::finish(std::move(o), std::move(x), std::move(actions));
}

/*
 * Four actions, two outcomes, P >= 7 covariates on (-3, 3) of which X_0..X_6
 * matter. Softmax behavior policy; the logits of actions 2 and 3 are shifted
 * by gamma (gamma = 0 is the unconfounded design).
 */
inline SimulatedData gen_confounded(Eigen::Index n, Eigen::Index p, double gamma,
                                    std::uint64_t seed) {
  if (p < 7) throw InvalidDims("need p >= 7 covariates, got " + std::to_string(p));
  if (n < 4) throw InvalidDims("need n >= D = 4 units");
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) {
    throw InvalidArgument("gamma must be finite and nonnegative");
  }
  GroundTruthOracle o;
  o.kind = gamma == 0.0 ? DgpKind::B2 : DgpKind::Confounded;
  o.num_actions = 4;
  o.num_outcomes = 2;
  o.num_covariates = static_cast<int>(p);
  o.gamma = gamma;
  o.seed = seed;
  o.noise_sd = 0.5;
  Matrix x = detail::uniform_covariates(seed, n, p, -3.0, 3.0);
  auto actions = detail::draw_actions(o, x);
  auto sim = detail::finish(std::move(o), std::move(x), std::move(actions));
  sim.oracle.kind = DgpKind::Confounded;
  sim.data.meta.dgp = to_string(DgpKind::Confounded);
  return sim;
}

inline SimulatedData gen_b2(Eigen::Index n, Eigen::Index p, std::uint64_t seed) {
  auto sim = gen_confounded(n, p, 0.0, seed);
  sim.oracle.kind = DgpKind::B2;
  sim.data.meta.dgp = to_string(DgpKind::B2);
  return sim;
}

/*
 * Turns a labelled covariate matrix into a bandit problem: labels become
 * actions and Y = exp(x . beta_a) + eps with eps ~ N(0, 0.5) (variance).
 * Coefficient entries are 0.4 / 0.2 / 0.0 with probabilities
 * 0.6 / 0.25 / 0.15, drawn with replacement.
 */
inline SimulatedData gen_ope_synth(const Matrix &x, const std::vector<int> &labels,
                                   std::uint64_t seed) {
  if (static_cast<Eigen::Index>(labels.size()) != x.rows() || x.rows() < 2) {
    throw DimensionMismatch("labels must align with covariate rows (n >= 2)");
  }
  const int max_label = *std::max_element(labels.begin(), labels.end());
  std::vector<int> counts(static_cast<std::size_t>(std::max(max_label, 0) + 1), 0);
  for (int l : labels) {
    if (l < 0) throw LabelGap("negative label " + std::to_string(l));
    ++counts[static_cast<std::size_t>(l)];
  }
  for (std::size_t a = 0; a < counts.size(); ++a) {
    if (counts[a] == 0) {
      throw LabelGap("label " + std::to_string(a) + " missing from {0.." +
                     std::to_string(max_label) + "}");
    }
  }
  if (counts.size() < 2) throw LabelGap("need at least two distinct labels");
  GroundTruthOracle o;
  o.kind = DgpKind::OpeSynth;
  o.num_actions = static_cast<int>(counts.size());
  o.num_outcomes = 1;
  o.num_covariates = static_cast<int>(x.cols());
  o.seed = seed;
  o.noise_sd = std::sqrt(0.5);
  Rng rng = make_rng(seed, Stream::Coefficients);
  std::discrete_distribution<int> pick({0.6, 0.25, 0.15});
  const double values[3] = {0.4, 0.2, 0.0};
  o.outcome_coefficients.resize(o.num_actions, x.cols());
  for (int a = 0; a < o.num_actions; ++a)
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      o.outcome_coefficients(a, j) = values[pick(rng)];
  o.label_frequencies.resize(o.num_actions);
  for (int a = 0; a < o.num_actions; ++a) {
    o.label_frequencies(a) = static_cast<double>(counts[static_cast<std::size_t>(a)]) /
                             static_cast<double>(labels.size());
  }
  return detail::finish(std::move(o), x, labels);
}

/*
 * Synthetic stand-in for a labelled classification table: covariates on
 * (-1, 1), labels from a random linear scorer with Gumbel noise. The first
 * D units are assigned labels 0..D-1 so every class is present.
 */
inline std::pair<Matrix, std::vector<int>>
synthetic_classification(Eigen::Index n, Eigen::Index p, int num_classes,
                         std::uint64_t seed) {
  if (num_classes < 2 || n < num_classes || p < 1) {
    throw InvalidDims("synthetic_classification needs n >= D >= 2, p >= 1");
  }
  Matrix x = detail::uniform_covariates(seed, n, p, -1.0, 1.0);
  Rng rng = make_rng(seed, Stream::Labels);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> u(1e-12, 1.0);
  Matrix w(p, num_classes);
  for (Eigen::Index j = 0; j < p; ++j)
    for (int c = 0; c < num_classes; ++c) w(j, c) = normal(rng);
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    Vector score = (x.row(i) * w).transpose();
    for (int c = 0; c < num_classes; ++c) score(c) -= std::log(-std::log(u(rng)));
    Eigen::Index best = 0;
    score.maxCoeff(&best);
    labels[static_cast<std::size_t>(i)] = i < num_classes ? static_cast<int>(i)
                                                          : static_cast<int>(best);
  }
  return {std::move(x), std::move(labels)};
}

struct SplitSpec {
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};

struct SplitIndices {
  std::vector<Eigen::Index> train;
  std::vector<Eigen::Index> test;
};

/// Seeded uniform shuffle, then the first round(f N) rows train.
inline SplitIndices split_indices(Eigen::Index n, const SplitSpec &spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw DegenerateSplit("train_fraction must lie in (0, 1)");
  }
  const auto n_train = static_cast<Eigen::Index>(
      std::llround(spec.train_fraction * static_cast<double>(n)));
  if (n_train < 1 || n_train >= n) {
    throw DegenerateSplit("split of " + std::to_string(n) + " rows at " +
                          std::to_string(spec.train_fraction) +
                          " leaves an empty partition");
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(spec.seed, Stream::Split);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  SplitIndices out;
  out.train.assign(order.begin(), order.begin() + n_train);
  out.test.assign(order.begin() + n_train, order.end());
  return out;
}

inline std::pair<Dataset, Dataset> split(const Dataset &data, const SplitSpec &spec) {
  const auto idx = split_indices(data.size(), spec);
  return {data.subset(idx.train), data.subset(idx.test)};
}

// ---------------------------------------------------------------------------
// Oracle sidecar: the simulator tag, seed and parameters (surfaces are
// closed form and never tabulated).
// ---------------------------------------------------------------------------

inline nlohmann::json oracle_to_json(const GroundTruthOracle &o) {
  nlohmann::json j;
  j["format"] = "cmgp-oracle";
  j["version"] = 1;
  j["dgp"] = to_string(o.kind);
  j["seed"] = o.seed;
  j["num_actions"] = o.num_actions;
  j["num_outcomes"] = o.num_outcomes;
  j["num_covariates"] = o.num_covariates;
  j["gamma"] = o.gamma;
  j["noise_sd"] = o.noise_sd;
  if (o.kind == DgpKind::OpeSynth) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index a = 0; a < o.outcome_coefficients.rows(); ++a) {
      rows.push_back(std::vector<double>(o.outcome_coefficients.row(a).begin(),
                                         o.outcome_coefficients.row(a).end()));
    }
    j["outcome_coefficients"] = rows;
    j["label_frequencies"] =
        std::vector<double>(o.label_frequencies.begin(), o.label_frequencies.end());
  }
  return j;
}

inline GroundTruthOracle oracle_from_json(const nlohmann::json &j) {
  if (j.value("format", "") != "cmgp-oracle" || j.value("version", 0) != 1) {
    throw FormatError("not a version-1 oracle sidecar");
  }
  GroundTruthOracle o;
  o.kind = dgp_from_string(j.at("dgp").get<std::string>());
  o.seed = j.at("seed").get<std::uint64_t>();
  o.num_actions = j.at("num_actions").get<int>();
  o.num_outcomes = j.at("num_outcomes").get<int>();
  o.num_covariates = j.at("num_covariates").get<int>();
  o.gamma = j.at("gamma").get<double>();
  o.noise_sd = j.at("noise_sd").get<double>();
  if (o.kind == DgpKind::OpeSynth) {
    const auto rows = j.at("outcome_coefficients").get<std::vector<std::vector<double>>>();
    o.outcome_coefficients.resize(static_cast<Eigen::Index>(rows.size()), o.num_covariates);
    for (std::size_t a = 0; a < rows.size(); ++a) {
      if (rows[a].size() != static_cast<std::size_t>(o.num_covariates)) {
        throw FormatError("outcome coefficient row length");
      }
      for (int k = 0; k < o.num_covariates; ++k) {
        o.outcome_coefficients(static_cast<Eigen::Index>(a), k) = rows[a][static_cast<std::size_t>(k)];
      }
    }
    const auto freq = j.at("label_frequencies").get<std::vector<double>>();
    o.label_frequencies = Eigen::Map<const Vector>(freq.data(), static_cast<Eigen::Index>(freq.size()));
  }
  return o;
}

inline void write_oracle(const std::string &path, const GroundTruthOracle &o) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open '" + path + "' for writing");
  out << oracle_to_json(o).dump(2) << '\n';
}

inline GroundTruthOracle read_oracle(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  return oracle_from_json(nlohmann::json::parse(in));
}

} // namespace cmgp

#endif
