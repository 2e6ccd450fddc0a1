#ifndef CMGP_SERIALIZE_HPP
#define CMGP_SERIALIZE_HPP

#include <fstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "gp_model.hpp"

#include "json.hpp"

// Textual model dump. nlohmann writes doubles in shortest round-trip form,
// so every parameter reloads bit for bit.

namespace cmgp {

using nlohmann::json;

namespace io {

inline constexpr const char *kModelFormat = "cmgp-model";
inline constexpr int kModelVersion = 1;

inline void require_finite(double v) {
  if (!std::isfinite(v)) throw FormatError("non-finite value cannot be serialized");
}

inline json vec(const Vector &v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    require_finite(v(i));
    out.push_back(v(i));
  }
  return out;
}

inline json mat(const Matrix &m) {
  json out = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.push_back(vec(m.row(i).transpose()));
  return out;
}

inline Vector to_vec(const json &j) {
  if (!j.is_array()) throw FormatError("expected an array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw FormatError("expected a number");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

inline Matrix to_mat(const json &j, Eigen::Index cols) {
  if (!j.is_array()) throw FormatError("expected an array of rows");
  Matrix m(static_cast<Eigen::Index>(j.size()), cols);
  for (std::size_t i = 0; i < j.size(); ++i) {
    const Vector r = to_vec(j[i]);
    if (r.size() != cols) throw FormatError("ragged matrix rows");
    m.row(static_cast<Eigen::Index>(i)) = r.transpose();
  }
  return m;
}

inline json factor_json(const CoregionFactor &f) {
  return {{"rank", f.rank()}, {"L", mat(f.L)}, {"log_diag", vec(f.log_diag)}};
}

inline CoregionFactor factor_from(const json &j) {
  CoregionFactor f;
  f.L = to_mat(j.at("L"), j.at("rank").get<int>());
  f.log_diag = to_vec(j.at("log_diag"));
  f.validate();
  return f;
}

inline json theta_json(const ThetaParams &t) {
  json j;
  if (t.mlp) {
    json layers = json::array();
    for (std::size_t k = 0; k < t.mlp->num_layers(); ++k) {
      layers.push_back({{"weights", mat(t.mlp->weights[k])}, {"bias", vec(t.mlp->biases[k])}});
    }
    j["mlp"] = {{"layer_sizes", t.mlp->layer_sizes},
                {"activation", to_string(t.mlp->activation)},
                {"layers", layers}};
  }
  json comps = json::array();
  for (const auto &c : t.kernel.components) {
    require_finite(c.base.log_signal_variance);
    json cj = {{"kind", to_string(c.kind)},
               {"log_lengthscales", vec(c.base.log_lengthscales)},
               {"log_signal_variance", c.base.log_signal_variance},
               {"action", factor_json(c.action)}};
    if (c.outcome) cj["outcome"] = factor_json(*c.outcome);
    comps.push_back(cj);
  }
  j["components"] = comps;
  j["log_noise"] = vec(t.log_noise);
  return j;
}

inline ThetaParams theta_from(const json &j) {
  ThetaParams t;
  if (j.contains("mlp")) {
    const auto &mj = j.at("mlp");
    MlpParams m;
    m.layer_sizes = mj.at("layer_sizes").get<std::vector<int>>();
    m.activation = activation_from_string(mj.at("activation").get<std::string>());
    const auto &layers = mj.at("layers");
    if (layers.size() + 1 != m.layer_sizes.size()) throw FormatError("MLP layer count");
    for (std::size_t k = 0; k < layers.size(); ++k) {
      m.weights.push_back(to_mat(layers[k].at("weights"), m.layer_sizes[k]));
      m.biases.push_back(to_vec(layers[k].at("bias")));
    }
    m.validate();
    t.mlp = std::move(m);
  }
  for (const auto &cj : j.at("components")) {
    KernelComponent c;
    c.kind = kernel_kind_from_string(cj.at("kind").get<std::string>());
    c.base.log_lengthscales = to_vec(cj.at("log_lengthscales"));
    c.base.log_signal_variance = cj.at("log_signal_variance").get<double>();
    c.action = factor_from(cj.at("action"));
    if (cj.contains("outcome")) c.outcome = factor_from(cj.at("outcome"));
    t.kernel.components.push_back(std::move(c));
  }
  t.kernel.validate();
  t.log_noise = to_vec(j.at("log_noise"));
  return t;
}

inline std::vector<bool> bools(const json &j) { return j.get<std::vector<bool>>(); }

} // namespace io

/// Everything needed to rebuild a TrainedModel: variant, shapes,
/// standardization, per-sub-model parameters and model-space training data.
inline json model_to_json(const TrainedModel &model) {
  const auto &r = model.record();
  json j;
  j["format"] = io::kModelFormat;
  j["version"] = io::kModelVersion;
  j["variant"] = to_string(model.variant());
  j["num_actions"] = model.num_actions();
  j["num_outcomes"] = model.num_outcomes();
  j["num_covariates"] = model.num_covariates();
  j["standardization"] = {{"x_shift", io::vec(r.x_shift)}, {"x_scale", io::vec(r.x_scale)},
                          {"x_constant", r.x_constant},   {"y_shift", io::vec(r.y_shift)},
                          {"y_scale", io::vec(r.y_scale)}, {"y_constant", r.y_constant}};
  json subs = json::array();
  for (const auto &s : model.submodels()) {
    const auto &b = s.block();
    std::vector<int> actions, outcomes;
    for (const auto &t : b.row_task) {
      actions.push_back(t.action);
      outcomes.push_back(t.outcome);
    }
    subs.push_back({{"theta", io::theta_json(s.theta())},
                    {"unit_x", io::mat(b.unit_x)},
                    {"row_unit", b.row_unit},
                    {"row_action", actions},
                    {"row_outcome", outcomes},
                    {"y", io::vec(b.y)}});
  }
  j["submodels"] = subs;
  j["nll_trajectory"] = model.nll_trajectory();
  return j;
}

inline TrainedModel model_from_json(const json &j) {
  try {
    if (j.value("format", "") != io::kModelFormat) throw FormatError("not a cmgp model");
    if (j.value("version", 0) != io::kModelVersion) {
      throw FormatError("unsupported model version " + j.value("version", json()).dump());
    }
    const auto variant = variant_from_string(j.at("variant").get<std::string>());
    const int d = j.at("num_actions").get<int>();
    const int m = j.at("num_outcomes").get<int>();
    const auto p = j.at("num_covariates").get<Eigen::Index>();
    const auto &sj = j.at("standardization");
    StandardizationRecord rec{io::to_vec(sj.at("x_shift")), io::to_vec(sj.at("x_scale")),
                              io::bools(sj.at("x_constant")), io::to_vec(sj.at("y_shift")),
                              io::to_vec(sj.at("y_scale")), io::bools(sj.at("y_constant"))};
    if (rec.x_shift.size() != p || rec.y_shift.size() != m) {
      throw FormatError("standardization record shape");
    }
    const auto layouts = layout_for(variant, d, m);
    const auto &subs = j.at("submodels");
    if (subs.size() != layouts.size()) throw FormatError("sub-model count");
    std::vector<SubModel> models;
    for (std::size_t s = 0; s < layouts.size(); ++s) {
      const auto &sub = subs[s];
      TrainingBlock b;
      b.unit_x = io::to_mat(sub.at("unit_x"), p);
      b.row_unit = sub.at("row_unit").get<std::vector<int>>();
      const auto actions = sub.at("row_action").get<std::vector<int>>();
      const auto outcomes = sub.at("row_outcome").get<std::vector<int>>();
      b.y = io::to_vec(sub.at("y"));
      if (actions.size() != b.row_unit.size() || outcomes.size() != b.row_unit.size() ||
          static_cast<Eigen::Index>(b.row_unit.size()) != b.y.size()) {
        throw FormatError("training block lengths");
      }
      for (std::size_t r = 0; r < actions.size(); ++r) {
        if (b.row_unit[r] < 0 || b.row_unit[r] >= b.unit_x.rows()) {
          throw FormatError("row_unit out of range");
        }
        b.row_task.push_back({actions[r], outcomes[r]});
      }
      auto theta = io::theta_from(sub.at("theta"));
      if (theta.kernel.num_tasks() != layouts[s].num_local_tasks() ||
          theta.mlp.has_value() != is_deep(variant)) {
        throw FormatError("parameters do not match the variant layout");
      }
      models.emplace_back(layouts[s], std::move(theta), std::move(b));
    }
    return TrainedModel(variant, d, m, std::move(rec), std::move(models),
                        j.value("nll_trajectory", std::vector<double>{}));
  } catch (const json::exception &e) {
    throw FormatError(std::string("malformed model file: ") + e.what());
  }
}

inline void save_model(const std::string &path, const TrainedModel &model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open '" + path + "' for writing");
  out << model_to_json(model).dump() << '\n';
}

inline TrainedModel load_model(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception &e) {
    throw FormatError(std::string("malformed model file: ") + e.what());
  }
  return model_from_json(j);
}

} // namespace cmgp

#endif
