// cmgp command line: simulate, fit, predict, benchmark.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cmgp/cmgp.hpp"

namespace {

std::vector<int> parse_ints(const std::string &csv) {
  std::vector<int> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    const int v = std::stoi(item, &used);
    if (used != item.size() || v < 1) {
      throw cmgp::InvalidArgument("--hidden expects positive integers, got '" + item + "'");
    }
    out.push_back(v);
  }
  return out;
}

std::string sidecar_path(const std::string &data_path) { return data_path + ".oracle.json"; }

/// Action count from the oracle sidecar when present, else from the data.
cmgp::Dataset load_dataset(const std::string &path, int num_actions = 0) {
  if (num_actions == 0 && std::filesystem::exists(sidecar_path(path))) {
    num_actions = cmgp::read_oracle(sidecar_path(path)).num_actions;
  }
  return cmgp::read_csv(path, num_actions);
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Counterfactual multitask GP and deep kernel regression"};
  app.require_subcommand(1);
  app.set_version_flag("--version", CMGP_VERSION);

  auto *sim = app.add_subcommand("simulate", "Draw a dataset from a simulator");
  std::string dgp, sim_out;
  long long n = 0, p = 0;
  double gamma = 0.0;
  std::uint64_t sim_seed = 0;
  int classes = 3;
  sim->add_option("--dgp", dgp, "b1 | b2 | confounded | ope-synth")
      ->required()
      ->check(CLI::IsMember({"b1", "b2", "confounded", "ope-synth"}));
  sim->add_option("--n", n, "number of units")->required();
  sim->add_option("--p", p, "number of covariates (b1 uses 1)");
  sim->add_option("--gamma", gamma, "confounding strength (confounded only)");
  sim->add_option("--seed", sim_seed, "seed")->required();
  sim->add_option("--actions", classes, "label classes for ope-synth");
  sim->add_option("--out", sim_out, "dataset CSV path")->required();

  auto *fitc = app.add_subcommand("fit", "Fit a model to a dataset CSV");
  std::string data_path, variant, hidden = "50,50,2", model_out;
  double lr = 0.05, weight_decay = 0.0;
  int iters = 500;
  std::uint64_t fit_seed = 0;
  fitc->add_option("--data", data_path, "dataset CSV")->required();
  fitc->add_option("--variant", variant, "gp | countergp | mogp | dkl | counterdkl | modkl")
      ->required()
      ->check(CLI::IsMember({"gp", "countergp", "mogp", "dkl", "counterdkl", "modkl"}));
  fitc->add_option("--hidden", hidden, "hidden layer sizes, comma separated");
  fitc->add_option("--lr", lr, "Adam learning rate");
  fitc->add_option("--iters", iters, "Adam iterations");
  fitc->add_option("--seed", fit_seed, "initialization seed");
  fitc->add_option("--weight-decay", weight_decay, "L2 penalty on MLP weights");
  fitc->add_option("--model-out", model_out, "model file")->required();

  auto *pred = app.add_subcommand("predict", "Posterior for one task at every row");
  std::string model_path, pred_data, pred_out;
  int action = 0, outcome = 0;
  pred->add_option("--model", model_path, "model file")->required();
  pred->add_option("--data", pred_data, "dataset CSV with the query covariates")->required();
  pred->add_option("--action", action, "action index")->required();
  pred->add_option("--outcome", outcome, "outcome index")->required();
  pred->add_option("--out", pred_out, "prediction CSV")->required();

  auto *bench = app.add_subcommand("benchmark", "Run an experiment config");
  std::string config_path, out_dir;
  bench->add_option("--config", config_path, "experiment config (JSON)")->required();
  bench->add_option("--out-dir", out_dir, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim) {
      const auto kind = cmgp::dgp_from_string(dgp);
      if (kind != cmgp::DgpKind::Confounded && gamma != 0.0) {
        throw cmgp::InvalidArgument("--gamma applies to the confounded simulator only");
      }
      cmgp::SimulatedData s;
      switch (kind) {
      case cmgp::DgpKind::B1:
        if (p != 0 && p != 1) throw cmgp::InvalidDims("b1 has a single covariate");
        s = cmgp::gen_b1(n, sim_seed);
        break;
      case cmgp::DgpKind::B2: s = cmgp::gen_b2(n, p == 0 ? 10 : p, sim_seed); break;
      case cmgp::DgpKind::Confounded:
        s = cmgp::gen_confounded(n, p == 0 ? 10 : p, gamma, sim_seed);
        break;
      case cmgp::DgpKind::OpeSynth: {
        auto [x, labels] = cmgp::synthetic_classification(
            n, p == 0 ? 5 : p, classes,
            cmgp::derive_seed(sim_seed, cmgp::Stream::Labels));
        s = cmgp::gen_ope_synth(x, labels, sim_seed);
        break;
      }
      }
      cmgp::write_csv(sim_out, s.data);
      cmgp::write_oracle(sidecar_path(sim_out), s.oracle);
      std::cout << "wrote " << s.data.size() << " rows to " << sim_out << '\n';
    } else if (*fitc) {
      const auto data = load_dataset(data_path);
      cmgp::FitConfig cfg;
      cfg.learning_rate = lr;
      cfg.iterations = iters;
      cfg.seed = fit_seed;
      cfg.weight_decay = weight_decay;
      cmgp::ModelOptions opt;
      opt.hidden = parse_ints(hidden);
      const auto v = cmgp::variant_from_string(variant);
      const auto model = cmgp::fit(v, data, cfg, opt);
      cmgp::save_model(model_out, model);
      const auto &traj = model.nll_trajectory();
      std::cout << "variant " << variant << ": nll " << traj.front() << " -> "
                << *std::min_element(traj.begin(), traj.end()) << " after " << iters
                << " iterations\n";
    } else if (*pred) {
      const auto model = cmgp::load_model(model_path);
      const auto data = load_dataset(pred_data, model.num_actions());
      if (data.num_covariates() != model.num_covariates()) {
        throw cmgp::DimensionMismatch("data has " + std::to_string(data.num_covariates()) +
                                      " covariates, model expects " +
                                      std::to_string(model.num_covariates()));
      }
      const auto preds = model.predict_many(data.X, {action, outcome});
      std::ofstream out(pred_out, std::ios::binary);
      if (!out) throw cmgp::FormatError("cannot open '" + pred_out + "'");
      out << "mean,variance,lower95,upper95\n";
      for (const auto &q : preds) {
        out << cmgp::format_double(q.mean) << ',' << cmgp::format_double(q.variance) << ','
            << cmgp::format_double(q.lower95) << ',' << cmgp::format_double(q.upper95) << '\n';
      }
    } else if (*bench) {
      const auto config = cmgp::read_config(config_path);
      const auto result = cmgp::run_experiment(config);
      cmgp::write_outputs(out_dir, config, result);
      int failed = 0;
      for (const auto &r : result.rows) failed += r.failed;
      std::cout << result.rows.size() << " result rows (" << failed << " failed) in "
                << out_dir << '\n';
    }
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
