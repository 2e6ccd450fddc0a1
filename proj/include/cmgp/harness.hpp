#ifndef CMGP_HARNESS_HPP
#define CMGP_HARNESS_HPP

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "causal.hpp"
#include "dataset.hpp"
#include "errors.hpp"
#include "gp_model.hpp"
#include "rng.hpp"
#include "simgen.hpp"

#include "json.hpp"

#ifndef CMGP_VERSION
#define CMGP_VERSION "0.0.0"
#endif

namespace cmgp {

enum class Task { ICE, OPE, OPL, COVERAGE, POLICY_RISK, OPE_REGRET };

inline std::string to_string(Task t) {
  switch (t) {
  case Task::ICE: return "ICE";
  case Task::OPE: return "OPE";
  case Task::OPL: return "OPL";
  case Task::COVERAGE: return "COVERAGE";
  case Task::POLICY_RISK: return "POLICY_RISK";
  case Task::OPE_REGRET: return "OPE_REGRET";
  }
  return "?";
}

inline Task task_from_string(const std::string &s) {
  for (auto t : {Task::ICE, Task::OPE, Task::OPL, Task::COVERAGE, Task::POLICY_RISK,
                 Task::OPE_REGRET}) {
    if (to_string(t) == s) return t;
  }
  throw ConfigInvalid("unknown task '" + s + "'");
}

/// Metric column name reported for each task.
inline std::string metric_name(Task t) {
  switch (t) {
  case Task::ICE: return "ice_rmse";
  case Task::OPE: return "ope_rmse";
  case Task::OPL: return "oar";
  case Task::COVERAGE: return "coverage95";
  case Task::POLICY_RISK: return "policy_risk";
  case Task::OPE_REGRET: return "ope_regret";
  }
  return "?";
}

/// A fitted variant or the ground-truth oracle plugged in as a model.
struct Contender {
  bool is_oracle = false;
  ModelVariant variant = ModelVariant::GP;

  std::string name() const { return is_oracle ? "oracle" : to_string(variant); }

  static Contender parse(const std::string &s) {
    if (s == "oracle") return {true, ModelVariant::GP};
    try {
      return {false, variant_from_string(s)};
    } catch (const Error &) {
      throw ConfigInvalid("unknown variant '" + s + "'");
    }
  }
};

struct DgpConfig {
  DgpKind kind = DgpKind::B1;
  Eigen::Index n = 200;
  Eigen::Index p = 1;
  double gamma = 0.0;
  /// Class count of the synthetic labelled table behind ope-synth.
  int actions = 3;

  int num_actions() const {
    switch (kind) {
    case DgpKind::B1: return 2;
    case DgpKind::OpeSynth: return actions;
    default: return 4;
    }
  }
};

enum class SweepAxis { N, P, Gamma };

inline std::string to_string(SweepAxis a) {
  switch (a) {
  case SweepAxis::N: return "n";
  case SweepAxis::P: return "p";
  case SweepAxis::Gamma: return "gamma";
  }
  return "?";
}

struct SweepSpec {
  SweepAxis axis = SweepAxis::N;
  std::vector<double> values;
};

struct ExperimentConfig {
  std::string name = "experiment";
  DgpConfig dgp;
  std::vector<Contender> contenders;
  int replications = 1;
  FitConfig fit;
  ModelOptions model;
  double train_fraction = 0.8;
  std::vector<Task> tasks;
  std::uint64_t base_seed = 0;
  int threads = 1;
  std::optional<SweepSpec> sweep;

  void validate() const {
    if (replications < 1) throw ConfigInvalid("replications must be >= 1");
    if (tasks.empty()) throw ConfigInvalid("at least one task is required");
    if (contenders.empty()) throw ConfigInvalid("at least one variant is required");
    if (threads < 1) throw ConfigInvalid("threads must be >= 1");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
      throw ConfigInvalid("split.train_fraction must lie in (0, 1)");
    }
    try {
      fit.validate();
    } catch (const Error &e) {
      throw ConfigInvalid(e.what());
    }
    if (sweep && sweep->values.empty()) throw ConfigInvalid("sweep values must be nonempty");
    const bool binary = dgp.num_actions() == 2;
    for (Task t : tasks) {
      if (t == Task::POLICY_RISK && !binary) {
        throw ConfigInvalid("POLICY_RISK requires a two-action simulator");
      }
    }
    for (const auto &point : grid()) {
      const auto &d = point.second;
      if (d.n < 4) throw ConfigInvalid("dgp.n must be >= 4");
      if ((d.kind == DgpKind::B2 || d.kind == DgpKind::Confounded) && d.p < 7) {
        throw ConfigInvalid("dgp.p must be >= 7 for b2/confounded");
      }
      if (d.kind == DgpKind::B1 && d.p != 1) throw ConfigInvalid("b1 has p = 1");
      if (d.kind == DgpKind::OpeSynth && (d.actions < 2 || d.p < 1 || d.n < d.actions)) {
        throw ConfigInvalid("ope-synth needs actions >= 2, p >= 1, n >= actions");
      }
      if (!(d.gamma >= 0.0) || !std::isfinite(d.gamma)) {
        throw ConfigInvalid("dgp.gamma must be finite and nonnegative");
      }
      if (d.kind != DgpKind::Confounded && d.gamma != 0.0) {
        throw ConfigInvalid("gamma applies to the confounded simulator only");
      }
    }
  }

  /// (axis value label, simulator settings) per grid point; one point
  /// without a sweep.
  std::vector<std::pair<std::string, DgpConfig>> grid() const {
    if (!sweep) return {{"", dgp}};
    std::vector<std::pair<std::string, DgpConfig>> out;
    for (double v : sweep->values) {
      DgpConfig d = dgp;
      switch (sweep->axis) {
      case SweepAxis::N:
        if (v != std::floor(v)) throw ConfigInvalid("sweep over n needs integers");
        d.n = static_cast<Eigen::Index>(v);
        break;
      case SweepAxis::P:
        if (v != std::floor(v)) throw ConfigInvalid("sweep over p needs integers");
        d.p = static_cast<Eigen::Index>(v);
        break;
      case SweepAxis::Gamma:
        d.gamma = v;
        break;
      }
      out.emplace_back(format_double(v), d);
    }
    return out;
  }
};

/// Grid point 0 keeps the base seed so a singleton sweep equals a plain run.
inline std::uint64_t grid_seed(std::uint64_t base, std::size_t point) {
  return point == 0 ? base : derive_seed(base, Stream::GridPoint, point);
}

inline std::uint64_t replication_seed(std::uint64_t grid, int b) {
  return derive_seed(grid, Stream::Replication, static_cast<std::uint64_t>(b));
}

struct ResultRow {
  std::size_t grid_index = 0;
  std::string grid_value;
  std::string dgp;
  std::size_t contender_index = 0;
  std::string contender;
  std::string task;
  std::string metric;
  /// Outcome index, or -1 for the equal-weight aggregate over outcomes.
  int outcome = -1;
  int replication = 0;
  std::uint64_t seed = 0;
  double value = 0.0;
  bool failed = false;
  std::string error;
};

struct TimingRow {
  std::size_t grid_index = 0;
  std::string grid_value;
  std::string contender;
  int replication = 0;
  double seconds = 0.0;
};

struct AggregateRow {
  std::string grid_value;
  std::string dgp;
  std::string contender;
  std::string task;
  std::string metric;
  int outcome = -1;
  int n = 0;
  double mean = 0.0;
  double sd = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  int failed = 0;
};

struct ExperimentResult {
  std::vector<ResultRow> rows;
  std::vector<AggregateRow> aggregates;
  std::vector<TimingRow> timings;
};

namespace detail {

struct Replicate {
  SimulatedData sim;
  SplitIndices split;
  Dataset train;
  Matrix test_x;
};

inline Replicate make_replicate(const DgpConfig &d, std::uint64_t seed, double train_fraction) {
  Replicate r;
  switch (d.kind) {
  case DgpKind::B1: r.sim = gen_b1(d.n, seed); break;
  case DgpKind::B2: r.sim = gen_b2(d.n, d.p, seed); break;
  case DgpKind::Confounded: r.sim = gen_confounded(d.n, d.p, d.gamma, seed); break;
  case DgpKind::OpeSynth: {
    auto [x, labels] =
        synthetic_classification(d.n, d.p, d.actions, derive_seed(seed, Stream::Labels));
    r.sim = gen_ope_synth(x, labels, seed);
    break;
  }
  }
  r.split = split_indices(r.sim.data.size(), {train_fraction, seed});
  r.train = r.sim.data.subset(r.split.train);
  r.test_x = r.sim.data.subset(r.split.test).X;
  return r;
}

/// Metric values for one contender on one replicate: (task, metric,
/// outcome, value), with outcome -1 for the cross-outcome aggregate.
template <ProbabilisticSource S>
std::vector<std::tuple<Task, int, double>> evaluate(const S &model, const Replicate &r,
                                                    const std::vector<Task> &tasks) {
  const auto &oracle = r.sim.oracle;
  const OracleModel truth(oracle);
  const Matrix &full_x = r.sim.data.X;
  const int d = oracle.num_actions, m_count = oracle.num_outcomes;
  std::vector<std::tuple<Task, int, double>> out;
  auto per_outcome = [&](Task t, auto &&fn) {
    double sum = 0.0;
    for (int m = 0; m < m_count; ++m) {
      const double v = fn(m);
      out.emplace_back(t, m, v);
      sum += v;
    }
    out.emplace_back(t, -1, sum / m_count);
  };
  for (Task t : tasks) {
    switch (t) {
    case Task::ICE:
      per_outcome(t, [&](int m) {
        Vector pred(r.test_x.rows() * d), real(r.test_x.rows() * d);
        for (int a = 0; a < d; ++a) {
          pred.segment(a * r.test_x.rows(), r.test_x.rows()) = model.mean_many(r.test_x, {a, m});
          real.segment(a * r.test_x.rows(), r.test_x.rows()) = truth.mean_many(r.test_x, {a, m});
        }
        return rmse(pred, real);
      });
      break;
    case Task::COVERAGE:
      per_outcome(t, [&](int m) {
        std::vector<TaskIndex> ts;
        for (int a = 0; a < d; ++a) ts.push_back({a, m});
        return coverage95(model, oracle, r.test_x, ts);
      });
      break;
    case Task::OPE:
      per_outcome(t, [&](int m) {
        return rmse(unit_policy_values(model, PolicySpec::uniform(), full_x, m),
                    unit_policy_values(truth, PolicySpec::uniform(), full_x, m));
      });
      break;
    case Task::OPE_REGRET:
      per_outcome(t, [&](int m) {
        return ope_regret(policy_value(model, PolicySpec::uniform(), full_x, m),
                          policy_value(truth, PolicySpec::uniform(), full_x, m));
      });
      break;
    case Task::OPL:
      // one equal-weight scalarized allocation across outcomes
      out.emplace_back(t, -1, oar(optimal_policy(model, full_x), optimal_policy(truth, full_x)));
      break;
    case Task::POLICY_RISK:
      per_outcome(t, [&](int m) {
        return policy_risk(truth, ice_sign_policy(model, r.test_x, m), r.test_x, m);
      });
      break;
    }
  }
  return out;
}

struct Job {
  std::size_t grid_index;
  int replication;
};

} // namespace detail

/// Mean, sample sd and mean +/- 1.96 sd / sqrt(n) over the successful rows
/// of each (grid point, contender, task, metric, outcome) cell.
inline std::vector<AggregateRow> aggregate(const std::vector<ResultRow> &rows) {
  using Key = std::tuple<std::size_t, std::size_t, std::string, std::string, int>;
  std::map<Key, std::vector<const ResultRow *>> cells;
  for (const auto &r : rows) {
    cells[{r.grid_index, r.contender_index, r.task, r.metric, r.outcome}].push_back(&r);
  }
  std::vector<AggregateRow> out;
  for (const auto &[key, members] : cells) {
    AggregateRow a;
    const auto &first = *members.front();
    a.grid_value = first.grid_value;
    a.dgp = first.dgp;
    a.contender = first.contender;
    a.task = first.task;
    a.metric = first.metric;
    a.outcome = first.outcome;
    std::vector<double> vals;
    for (const auto *r : members) {
      if (r->failed) {
        ++a.failed;
      } else {
        vals.push_back(r->value);
      }
    }
    a.n = static_cast<int>(vals.size());
    if (a.n > 0) {
      double s = 0.0;
      for (double v : vals) s += v;
      a.mean = s / a.n;
      double ss = 0.0;
      for (double v : vals) ss += (v - a.mean) * (v - a.mean);
      a.sd = a.n > 1 ? std::sqrt(ss / (a.n - 1)) : 0.0;
      const double half = 1.96 * a.sd / std::sqrt(static_cast<double>(a.n));
      a.ci_low = a.mean - half;
      a.ci_high = a.mean + half;
    } else {
      a.mean = a.sd = a.ci_low = a.ci_high = std::numeric_limits<double>::quiet_NaN();
    }
    out.push_back(a);
  }
  return out;
}

/*
 * Replication loop: for each grid point and replication, derive the seed,
 * simulate, split, fit every contender on the training part and score it.
 * ICE, coverage and policy risk use the held-out rows; OPE, OPE regret
 * and OPL use the full sample. Failed fits become failed rows.
 */
inline ExperimentResult run_experiment(const ExperimentConfig &config) {
  config.validate();
  const auto grid = config.grid();
  std::vector<detail::Job> jobs;
  for (std::size_t g = 0; g < grid.size(); ++g)
    for (int b = 0; b < config.replications; ++b) jobs.push_back({g, b});

  std::vector<std::vector<ResultRow>> job_rows(jobs.size());
  std::vector<std::vector<TimingRow>> job_times(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;

  auto worker = [&]() {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      try {
        const auto [g, b] = jobs[j];
        const auto &[grid_value, dgp] = grid[g];
        const std::uint64_t seed = replication_seed(grid_seed(config.base_seed, g), b);
        const auto rep = detail::make_replicate(dgp, seed, config.train_fraction);
        for (std::size_t c = 0; c < config.contenders.size(); ++c) {
          const auto &contender = config.contenders[c];
          ResultRow base;
          base.grid_index = g;
          base.grid_value = grid_value;
          base.dgp = to_string(dgp.kind);
          base.contender_index = c;
          base.contender = contender.name();
          base.replication = b;
          base.seed = seed;
          std::vector<std::tuple<Task, int, double>> values;
          const auto t0 = std::chrono::steady_clock::now();
          try {
            if (contender.is_oracle) {
              values = detail::evaluate(OracleModel(rep.sim.oracle), rep, config.tasks);
            } else {
              FitConfig fc = config.fit;
              fc.seed = derive_seed(seed, Stream::Fit,
                                    static_cast<std::uint64_t>(contender.variant));
              const auto model = fit(contender.variant, rep.train, fc, config.model);
              values = detail::evaluate(model, rep, config.tasks);
            }
          } catch (const Divergence &e) {
            base.failed = true;
            base.error = e.what();
          } catch (const NotPositiveDefinite &e) {
            base.failed = true;
            base.error = e.what();
          }
          const double secs =
              std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
          job_times[j].push_back({g, grid_value, contender.name(), b, secs});
          if (base.failed) {
            for (Task t : config.tasks) {
              ResultRow r = base;
              r.task = to_string(t);
              r.metric = metric_name(t);
              r.value = std::numeric_limits<double>::quiet_NaN();
              job_rows[j].push_back(r);
            }
            continue;
          }
          for (const auto &[t, m, v] : values) {
            ResultRow r = base;
            r.task = to_string(t);
            r.metric = metric_name(t);
            r.outcome = m;
            r.value = v;
            job_rows[j].push_back(r);
          }
        }
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };

  const int n_threads = std::min<int>(config.threads, static_cast<int>(jobs.size()));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto &t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  ExperimentResult result;
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    result.rows.insert(result.rows.end(), job_rows[j].begin(), job_rows[j].end());
    result.timings.insert(result.timings.end(), job_times[j].begin(), job_times[j].end());
  }
  // Deterministic order: grid point, contender, replication, task order,
  // outcome (aggregate last).
  std::map<std::string, std::size_t> task_rank;
  for (std::size_t i = 0; i < config.tasks.size(); ++i) task_rank[to_string(config.tasks[i])] = i;
  std::stable_sort(result.rows.begin(), result.rows.end(),
                   [&](const ResultRow &a, const ResultRow &b) {
                     const auto ka = std::make_tuple(a.grid_index, a.contender_index,
                                                     a.replication, task_rank[a.task],
                                                     a.outcome < 0 ? 1 << 20 : a.outcome);
                     const auto kb = std::make_tuple(b.grid_index, b.contender_index,
                                                     b.replication, task_rank[b.task],
                                                     b.outcome < 0 ? 1 << 20 : b.outcome);
                     return ka < kb;
                   });
  result.aggregates = aggregate(result.rows);
  return result;
}

/// A sweep is an experiment whose config carries the axis and values.
inline ExperimentResult sweep(ExperimentConfig config, SweepAxis axis,
                              std::vector<double> values) {
  if (values.empty()) throw ConfigInvalid("sweep values must be nonempty");
  config.sweep = SweepSpec{axis, std::move(values)};
  return run_experiment(config);
}

// ---------------------------------------------------------------------------
// Configuration file
// ---------------------------------------------------------------------------

namespace detail {

inline void reject_unknown(const nlohmann::json &j, std::initializer_list<const char *> keys,
                           const std::string &where) {
  if (!j.is_object()) throw ConfigInvalid(where + " must be an object");
  for (const auto &[k, v] : j.items()) {
    if (std::find_if(keys.begin(), keys.end(), [&](const char *s) { return k == s; }) ==
        keys.end()) {
      throw ConfigInvalid("unknown key '" + k + "' in " + where);
    }
  }
}

} // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json &j) {
  ExperimentConfig c;
  try {
    detail::reject_unknown(j,
                           {"name", "dgp", "variants", "replications", "fit", "model", "split",
                            "tasks", "base_seed", "threads", "sweep"},
                           "config");
    c.name = j.value("name", c.name);
    const auto &d = j.at("dgp");
    detail::reject_unknown(d, {"kind", "n", "p", "gamma", "actions"}, "dgp");
    c.dgp.kind = dgp_from_string(d.at("kind").get<std::string>());
    c.dgp.n = d.value("n", c.dgp.n);
    c.dgp.p = d.value("p", c.dgp.kind == DgpKind::B1 ? Eigen::Index{1} : Eigen::Index{10});
    c.dgp.gamma = d.value("gamma", 0.0);
    c.dgp.actions = d.value("actions", c.dgp.actions);
    for (const auto &v : j.at("variants")) c.contenders.push_back(Contender::parse(v.get<std::string>()));
    c.replications = j.value("replications", 1);
    if (j.contains("fit")) {
      const auto &f = j.at("fit");
      detail::reject_unknown(f,
                             {"learning_rate", "iterations", "adam_beta1", "adam_beta2",
                              "adam_eps", "weight_decay"},
                             "fit");
      c.fit.learning_rate = f.value("learning_rate", c.fit.learning_rate);
      c.fit.iterations = f.value("iterations", c.fit.iterations);
      c.fit.adam_beta1 = f.value("adam_beta1", c.fit.adam_beta1);
      c.fit.adam_beta2 = f.value("adam_beta2", c.fit.adam_beta2);
      c.fit.adam_eps = f.value("adam_eps", c.fit.adam_eps);
      c.fit.weight_decay = f.value("weight_decay", c.fit.weight_decay);
    }
    if (j.contains("model")) {
      const auto &m = j.at("model");
      detail::reject_unknown(m, {"hidden", "activation", "kernel", "components", "rank"}, "model");
      c.model.hidden = m.value("hidden", c.model.hidden);
      c.model.activation = activation_from_string(m.value("activation", std::string("tanh")));
      c.model.kernel = kernel_kind_from_string(m.value("kernel", std::string("rbf")));
      c.model.components = m.value("components", c.model.components);
      c.model.rank = m.value("rank", c.model.rank);
    }
    if (j.contains("split")) {
      detail::reject_unknown(j.at("split"), {"train_fraction"}, "split");
      c.train_fraction = j.at("split").value("train_fraction", c.train_fraction);
    }
    for (const auto &t : j.at("tasks")) c.tasks.push_back(task_from_string(t.get<std::string>()));
    c.base_seed = j.value("base_seed", std::uint64_t{0});
    c.threads = j.value("threads", 1);
    if (j.contains("sweep")) {
      const auto &s = j.at("sweep");
      detail::reject_unknown(s, {"axis", "values"}, "sweep");
      SweepSpec spec;
      const auto axis = s.at("axis").get<std::string>();
      if (axis == "n") spec.axis = SweepAxis::N;
      else if (axis == "p") spec.axis = SweepAxis::P;
      else if (axis == "gamma") spec.axis = SweepAxis::Gamma;
      else throw ConfigInvalid("sweep axis must be n, p or gamma");
      spec.values = s.at("values").get<std::vector<double>>();
      c.sweep = spec;
    }
  } catch (const nlohmann::json::exception &e) {
    throw ConfigInvalid(std::string("malformed config: ") + e.what());
  } catch (const ConfigInvalid &) {
    throw;
  } catch (const Error &e) {
    throw ConfigInvalid(e.what());
  }
  c.validate();
  return c;
}

inline nlohmann::json config_to_json(const ExperimentConfig &c) {
  nlohmann::json j;
  j["name"] = c.name;
  j["dgp"] = {{"kind", to_string(c.dgp.kind)},
              {"n", c.dgp.n},
              {"p", c.dgp.p},
              {"gamma", c.dgp.gamma},
              {"actions", c.dgp.actions}};
  std::vector<std::string> variants;
  for (const auto &v : c.contenders) variants.push_back(v.name());
  j["variants"] = variants;
  j["replications"] = c.replications;
  j["fit"] = {{"learning_rate", c.fit.learning_rate}, {"iterations", c.fit.iterations},
              {"adam_beta1", c.fit.adam_beta1},       {"adam_beta2", c.fit.adam_beta2},
              {"adam_eps", c.fit.adam_eps},           {"weight_decay", c.fit.weight_decay}};
  j["model"] = {{"hidden", c.model.hidden},
                {"activation", to_string(c.model.activation)},
                {"kernel", to_string(c.model.kernel)},
                {"components", c.model.components},
                {"rank", c.model.rank}};
  j["split"] = {{"train_fraction", c.train_fraction}};
  std::vector<std::string> tasks;
  for (Task t : c.tasks) tasks.push_back(to_string(t));
  j["tasks"] = tasks;
  j["base_seed"] = c.base_seed;
  j["threads"] = c.threads;
  if (c.sweep) j["sweep"] = {{"axis", to_string(c.sweep->axis)}, {"values", c.sweep->values}};
  return j;
}

inline ExperimentConfig read_config(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw ConfigInvalid("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::exception &e) {
    throw ConfigInvalid(std::string("malformed config: ") + e.what());
  }
  return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Output files
// ---------------------------------------------------------------------------

inline std::string outcome_label(int outcome) {
  return outcome < 0 ? "agg" : std::to_string(outcome);
}

inline void write_results_csv(std::ostream &out, const std::vector<ResultRow> &rows,
                              const std::string &axis) {
  out << "axis,grid_value,dgp,variant,task,metric,outcome,replication,seed,value,status\n";
  for (const auto &r : rows) {
    out << axis << ',' << r.grid_value << ',' << r.dgp << ',' << r.contender << ',' << r.task
        << ',' << r.metric << ',' << outcome_label(r.outcome) << ',' << r.replication << ','
        << r.seed << ',' << (r.failed ? "" : format_double(r.value)) << ','
        << (r.failed ? "failed" : "ok") << '\n';
  }
}

inline void write_aggregates_csv(std::ostream &out, const std::vector<AggregateRow> &rows,
                                 const std::string &axis) {
  out << "axis,grid_value,dgp,variant,task,metric,outcome,n,mean,sd,ci_low,ci_high,failed\n";
  for (const auto &a : rows) {
    out << axis << ',' << a.grid_value << ',' << a.dgp << ',' << a.contender << ',' << a.task
        << ',' << a.metric << ',' << outcome_label(a.outcome) << ',' << a.n << ','
        << format_double(a.mean) << ',' << format_double(a.sd) << ','
        << format_double(a.ci_low) << ',' << format_double(a.ci_high) << ',' << a.failed
        << '\n';
  }
}

inline nlohmann::json manifest_json(const ExperimentConfig &config, const ExperimentResult &r) {
  nlohmann::json j;
  j["library"] = "cmgp";
  j["version"] = CMGP_VERSION;
  j["config"] = config_to_json(config);
  j["evaluation"] = {
      {"fit_on", "train split"},
      {"ICE", "test split, all actions"},
      {"COVERAGE", "test split, all actions"},
      {"POLICY_RISK", "test split"},
      {"OPE", "full sample, uniform evaluation policy, per-unit value RMSE"},
      {"OPE_REGRET", "full sample, uniform evaluation policy"},
      {"OPL", "full sample, equal outcome weights"}};
  nlohmann::json seeds = nlohmann::json::array();
  const auto grid = config.grid();
  for (std::size_t g = 0; g < grid.size(); ++g) {
    std::vector<std::uint64_t> reps;
    for (int b = 0; b < config.replications; ++b) {
      reps.push_back(replication_seed(grid_seed(config.base_seed, g), b));
    }
    seeds.push_back({{"grid_value", grid[g].first}, {"replication_seeds", reps}});
  }
  j["seeds"] = seeds;
  int failed = 0;
  for (const auto &a : r.aggregates) failed += a.failed;
  j["failed_rows"] = failed;
  return j;
}

/// Writes results.csv, aggregates.csv, manifest.json and timings.csv.
inline void write_outputs(const std::string &dir, const ExperimentConfig &config,
                          const ExperimentResult &result) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const std::string axis = config.sweep ? to_string(config.sweep->axis) : "none";
  {
    std::ofstream out(fs::path(dir) / "results.csv", std::ios::binary);
    write_results_csv(out, result.rows, axis);
  }
  {
    std::ofstream out(fs::path(dir) / "aggregates.csv", std::ios::binary);
    write_aggregates_csv(out, result.aggregates, axis);
  }
  {
    std::ofstream out(fs::path(dir) / "manifest.json", std::ios::binary);
    out << manifest_json(config, result).dump(2) << '\n';
  }
  {
    std::ofstream out(fs::path(dir) / "timings.csv", std::ios::binary);
    out << "grid_value,variant,replication,seconds\n";
    for (const auto &t : result.timings) {
      out << t.grid_value << ',' << t.contender << ',' << t.replication << ','
          << format_double(t.seconds) << '\n';
    }
  }
}

} // namespace cmgp

#endif
