#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "cmgp/adam.hpp"
#include "cmgp/gp_model.hpp"
#include "oracles.hpp"

using namespace cmgp;

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

Dataset make_data(std::uint64_t seed, int n, int p, int d, int m) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, d - 1);
  Dataset data;
  data.meta = {d, m, seed, "test"};
  data.X = oracle::random_matrix(rng, n, p, -2.0, 2.0);
  data.Y = oracle::random_matrix(rng, n, m, -2.0, 2.0);
  for (int i = 0; i < n; ++i) data.A.push_back(i < d ? i : pick(rng));
  return data;
}

// Unit signal variance, unit B: task covariance 1 exactly.
CoregionFactor unit_factor() {
  return {Matrix::Constant(1, 1, std::sqrt(1.0 - 1e-6)),
          Vector::Constant(1, kLogDiagFloor)};
}

ThetaParams one_task_theta(double log_noise) {
  ThetaParams t;
  KernelComponent c;
  c.kind = KernelKind::RBF;
  c.base = BaseKernelParams::defaults(1);
  c.action = unit_factor();
  t.kernel.components.push_back(c);
  t.log_noise = Vector::Constant(1, log_noise);
  return t;
}

Dataset one_row(double y) {
  Dataset d;
  d.meta = {1, 1, 0, "test"};
  d.X = Matrix::Zero(1, 1);
  d.A = {0};
  d.Y = Matrix::Constant(1, 1, y);
  return d;
}

ModelParams perturbed_params(ModelVariant v, const Dataset &data,
                             const ModelOptions &opt, std::uint64_t seed,
                             double scale) {
  auto params = initial_params(v, data.num_actions(), data.num_outcomes(),
                               static_cast<int>(data.num_covariates()), opt, seed);
  std::mt19937_64 rng(seed ^ 0x5151);
  std::normal_distribution<double> normal(0.0, scale);
  for (auto &theta : params) {
    Vector vals = flatten(theta);
    for (Eigen::Index i = 0; i < vals.size(); ++i) vals(i) += normal(rng);
    unflatten(theta, vals);
  }
  return params;
}

// Independent B from a factor: L L^T + diag(exp(max(ld, floor))).
Matrix oracle_B(const CoregionFactor &f) {
  Matrix b(f.L.rows(), f.L.rows());
  for (int i = 0; i < f.L.rows(); ++i) {
    for (int j = 0; j < f.L.rows(); ++j) {
      double s = 0.0;
      for (int r = 0; r < f.L.cols(); ++r) s += f.L(i, r) * f.L(j, r);
      if (i == j) s += std::exp(std::max(f.log_diag(i), std::log(1e-6)));
      b(i, j) = s;
    }
  }
  return b;
}

} // namespace

// --- negative log marginal likelihood --------------------------------------

TEST(Nll, SingleRowClosedForm) {
  const auto theta = one_task_theta(0.0);
  EXPECT_NEAR(nll({theta}, ModelVariant::GP, one_row(0.0)),
              0.5 * std::log(2.0) + kHalfLog2Pi, 1e-12);
  EXPECT_NEAR(nll({theta}, ModelVariant::GP, one_row(0.0)), 1.26551, 1e-5);
  EXPECT_NEAR(nll({theta}, ModelVariant::GP, one_row(2.0)), 2.26551, 1e-5);
}

TEST(Nll, DoublingNoiseChangesValue) {
  const auto data = make_data(3, 12, 2, 2, 1);
  auto params = perturbed_params(ModelVariant::CounterGP, data, {}, 3, 0.1);
  const double before = nll(params, ModelVariant::CounterGP, data);
  for (auto &t : params) t.log_noise.array() += std::log(2.0);
  EXPECT_NE(before, nll(params, ModelVariant::CounterGP, data));
}

TEST(Nll, IndependentVariantSumsSubModels) {
  const auto data = make_data(4, 15, 2, 2, 2);
  const auto params = perturbed_params(ModelVariant::GP, data, {}, 4, 0.2);
  double total = 0.0;
  const auto layouts = layout_for(ModelVariant::GP, 2, 2);
  for (std::size_t s = 0; s < layouts.size(); ++s) {
    total += evaluate_block(params[s], make_block(layouts[s], data), false).nll;
  }
  EXPECT_NEAR(nll(params, ModelVariant::GP, data), total, 1e-12);
}

TEST(Nll, RejectsMismatchedParams) {
  const auto data = make_data(5, 10, 2, 2, 1);
  auto params = perturbed_params(ModelVariant::GP, data, {}, 5, 0.1);
  params.pop_back();
  EXPECT_THROW(nll(params, ModelVariant::GP, data), DimensionMismatch);
}

// --- gradients ---------------------------------------------------------------

TEST(NllGrad, NoiseDerivativeSingleRow) {
  const auto theta = one_task_theta(0.0);
  const auto g = nll_grad({theta}, ModelVariant::GP, one_row(0.0));
  EXPECT_NEAR(g[0].log_noise(0), 0.5 * 1.0 / (1.0 + 1.0), 1e-12);
}

TEST(NllGrad, CoregionGradientSymmetricUnderTaskSwap) {
  Dataset d;
  d.meta = {2, 1, 0, "test"};
  d.X.resize(6, 1);
  d.X << 0.1, 0.5, -0.7, 0.1, 0.5, -0.7;
  d.A = {0, 0, 0, 1, 1, 1};
  d.Y = Matrix::Zero(6, 1);
  ThetaParams t;
  KernelComponent c;
  c.kind = KernelKind::RBF;
  c.base = BaseKernelParams::defaults(1);
  c.action.L.resize(2, 2);
  c.action.L << 1.0, 0.3, 0.3, 1.0;
  c.action.log_diag = Vector::Constant(2, std::log(0.01));
  t.kernel.components.push_back(c);
  t.log_noise = Vector::Constant(2, std::log(0.1));
  const auto g = nll_grad({t}, ModelVariant::CounterGP, d)[0].kernel.components[0].action;
  EXPECT_NEAR(g.L(0, 1), g.L(1, 0), 1e-10);
  EXPECT_NEAR(g.L(0, 0), g.L(1, 1), 1e-10);
  EXPECT_NEAR(g.log_diag(0), g.log_diag(1), 1e-10);
}

class GradientFd : public ::testing::TestWithParam<ModelVariant> {};

TEST_P(GradientFd, MatchesCentralDifferences) {
  const ModelVariant v = GetParam();
  ModelOptions opt;
  opt.hidden = {6, 4, 2};
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto data = make_data(seed, 20, 3, 2, 2);
    const auto params = perturbed_params(v, data, opt, seed, 0.2);
    const auto grads = nll_grad(params, v, data);
    for (std::size_t s = 0; s < params.size(); ++s) {
      const Vector analytic = flatten(grads[s]);
      const auto f = [&](const Vector &vals) {
        auto p = params;
        unflatten(p[s], vals);
        return nll(p, v, data);
      };
      const Vector fd = oracle::central_difference(f, flatten(params[s]), 1e-5);
      for (Eigen::Index i = 0; i < fd.size(); ++i) {
        EXPECT_NEAR(analytic(i), fd(i), 1e-4 * std::abs(fd(i)) + 1e-6)
            << to_string(v) << " seed " << seed << " sub-model " << s << " coord " << i;
      }
    }
  }
}

INSTANTIATE_TEST_SUITE_P(AllVariants, GradientFd, ::testing::ValuesIn(kAllVariants),
                         [](const auto &info) { return to_string(info.param); });

// --- standardization -------------------------------------------------------

TEST(Standardize, RoundTripAndConstantColumn) {
  auto data = make_data(6, 30, 3, 2, 2);
  data.X.col(1).setConstant(4.0);
  const auto [model, rec] = standardize(data);
  EXPECT_TRUE(rec.x_constant[1]);
  EXPECT_FALSE(rec.x_constant[0]);
  EXPECT_EQ(model.X.col(1), data.X.col(1));
  EXPECT_LT((rec.invert_y(model.Y) - data.Y).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(model.X.col(0).mean(), 0.0, 1e-12);
  EXPECT_NEAR(model.X.col(0).squaredNorm() / 29.0, 1.0, 1e-12);
  const auto [again, rec2] = standardize(model);
  EXPECT_LT((again.Y - model.Y).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((rec2.y_scale.array() - 1.0).abs().maxCoeff(), 1e-12);
}

TEST(Standardize, NeedsTwoUnits) {
  EXPECT_THROW(standardize(one_row(1.0)), EmptyDataset);
}

// --- fit ---------------------------------------------------------------------

TEST(Adam, FirstStepIsLearningRate) {
  Adam adam(3, 0.05);
  const Vector step = adam.step(Vector::Ones(3));
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(step(i), -0.05, 1e-8);
}

TEST(Fit, ZeroIterationsReturnsInitialization) {
  const auto data = make_data(7, 20, 2, 2, 2);
  FitConfig cfg;
  cfg.iterations = 0;
  cfg.seed = 11;
  ModelOptions opt;
  opt.hidden = {4, 2};
  for (auto v : kAllVariants) {
    const auto model = fit(v, data, cfg, opt);
    EXPECT_EQ(model.nll_trajectory().size(), 1u);
    const auto init = initial_params(v, 2, 2, 2, opt, 11);
    const auto got = model.params();
    ASSERT_EQ(got.size(), init.size());
    for (std::size_t s = 0; s < got.size(); ++s) {
      EXPECT_EQ(flatten(got[s]), flatten(init[s])) << to_string(v);
    }
  }
}

TEST(Fit, NoiseOnlyMatchesGridSearch) {
  std::mt19937_64 rng(8);
  Dataset data;
  data.meta = {1, 1, 0, "test"};
  data.X = oracle::random_matrix(rng, 30, 1, -3.0, 3.0);
  data.A.assign(30, 0);
  std::normal_distribution<double> noise(0.0, 0.3);
  data.Y.resize(30, 1);
  for (int i = 0; i < 30; ++i) data.Y(i, 0) = std::sin(data.X(i, 0)) + noise(rng);
  FitConfig cfg;
  cfg.trainable = kGroupNoise;
  cfg.iterations = 500;
  const auto model = fit(ModelVariant::GP, data, cfg);
  const auto &traj = model.nll_trajectory();
  const double best = *std::min_element(traj.begin(), traj.end());

  const auto model_data = standardize(data).first;
  auto params = initial_params(ModelVariant::GP, 1, 1, 1, {}, cfg.seed);
  double grid_min = std::numeric_limits<double>::infinity();
  for (int k = 0; k <= 8000; ++k) {
    params[0].log_noise(0) = -6.0 + 8.0 * k / 8000.0;
    grid_min = std::min(grid_min, nll(params, ModelVariant::GP, model_data));
  }
  EXPECT_NEAR(best, grid_min, 1e-3);
  EXPECT_NEAR(nll(model.params(), ModelVariant::GP, model_data), best, 1e-9);
}

TEST(Fit, TrajectoryFiniteAndNotWorseThanInit) {
  const auto data = make_data(9, 25, 2, 2, 2);
  FitConfig cfg;
  cfg.iterations = 15;
  cfg.seed = 2;
  ModelOptions opt;
  opt.hidden = {5, 2};
  const auto model_data = standardize(data).first;
  for (auto v : kAllVariants) {
    const auto model = fit(v, data, cfg, opt);
    const auto &traj = model.nll_trajectory();
    ASSERT_EQ(traj.size(), 16u);
    for (double x : traj) EXPECT_TRUE(std::isfinite(x));
    EXPECT_LE(nll(model.params(), v, model_data), traj.front() + 1e-9) << to_string(v);
  }
}

TEST(Fit, DeterministicPerSeed) {
  const auto data = make_data(10, 20, 2, 2, 1);
  FitConfig cfg;
  cfg.iterations = 10;
  cfg.seed = 5;
  ModelOptions opt;
  opt.hidden = {4, 2};
  const auto a = fit(ModelVariant::CounterDKL, data, cfg, opt);
  const auto b = fit(ModelVariant::CounterDKL, data, cfg, opt);
  EXPECT_EQ(a.nll_trajectory(), b.nll_trajectory());
  EXPECT_EQ(flatten(a.params()[0]), flatten(b.params()[0]));
}

TEST(Fit, RejectsInvalidConfig) {
  FitConfig cfg;
  cfg.adam_beta1 = 1.0;
  EXPECT_THROW(fit(ModelVariant::GP, make_data(1, 10, 1, 2, 1), cfg), InvalidArgument);
}

// --- prediction --------------------------------------------------------------

TEST(Predict, NearInterpolationOfSinglePoint) {
  const auto model = assemble_model(ModelVariant::GP, one_row(1.7),
                                    StandardizationRecord::identity(1, 1),
                                    {one_task_theta(std::log(1e-10))});
  const auto p = model.predict(Vector::Zero(1), {0, 0});
  EXPECT_NEAR(p.mean, 1.7, 1e-4);
  EXPECT_NEAR(p.lower95, p.mean - 1.96 * std::sqrt(p.variance), 1e-12);
  EXPECT_NEAR(p.upper95, p.mean + 1.96 * std::sqrt(p.variance), 1e-12);
}

TEST(Predict, RevertsToPriorFarAway) {
  const auto data = make_data(12, 10, 2, 2, 1);
  const auto params = perturbed_params(ModelVariant::CounterGP, data, {}, 12, 0.2);
  const auto model = assemble_model(ModelVariant::CounterGP, data,
                                    StandardizationRecord::identity(2, 1), params);
  const Matrix b = oracle_B(params[0].kernel.components[0].action);
  const double s2 = params[0].kernel.components[0].base.signal_variance();
  const auto p = model.predict(Vector::Constant(2, 1e6), {1, 0});
  EXPECT_NEAR(p.mean, 0.0, 1e-12);
  EXPECT_NEAR(p.variance, s2 * b(1, 1), 1e-10);
}

TEST(Predict, TaskOutOfRange) {
  const auto data = make_data(13, 10, 2, 2, 1);
  const auto model = fit(ModelVariant::GP, data, FitConfig{.iterations = 0});
  EXPECT_THROW(model.predict(Vector::Zero(2), {2, 0}), TaskOutOfRange);
  EXPECT_THROW(model.predict(Vector::Zero(2), {0, 1}), TaskOutOfRange);
}

// Dense posterior built from scratch: own standardization, closed-form RBF,
// explicit B, adjugate inverse.
TEST(Predict, MatchesDenseOracle) {
  for (auto v : {ModelVariant::GP, ModelVariant::CounterGP, ModelVariant::MOGP}) {
    for (std::uint64_t seed = 20; seed < 25; ++seed) {
      const int d = 2, m = v == ModelVariant::MOGP ? 2 : 1, p = 2;
      const auto raw = make_data(seed, 8, p, d, m);
      const auto params = perturbed_params(v, raw, {}, seed, 0.3);
      const auto model = make_model(v, raw, params);

      Vector xm(p), xs(p), ym(m), ys(m);
      for (int j = 0; j < p; ++j) {
        xm(j) = raw.X.col(j).mean();
        xs(j) = std::sqrt((raw.X.col(j).array() - xm(j)).square().sum() / 7.0);
      }
      for (int j = 0; j < m; ++j) {
        ym(j) = raw.Y.col(j).mean();
        ys(j) = std::sqrt((raw.Y.col(j).array() - ym(j)).square().sum() / 7.0);
      }
      std::mt19937_64 qrng(seed + 100);
      const Matrix xq = oracle::random_matrix(qrng, 3, p, -2.0, 2.0);

      const auto layouts = layout_for(v, d, m);
      for (std::size_t s = 0; s < layouts.size(); ++s) {
        const auto &theta = params[s];
        const auto &c = theta.kernel.components[0];
        const Vector ls = c.base.log_lengthscales.array().exp();
        const double s2 = c.base.signal_variance();
        Matrix ba = oracle_B(c.action);
        Matrix b = c.outcome ? Matrix(Eigen::kroneckerProduct(oracle_B(*c.outcome), ba))
                             : ba;
        const int la = static_cast<int>(layouts[s].actions.size());
        // rows in unit order, outcomes inner
        std::vector<Vector> rx;
        std::vector<int> rt;
        std::vector<double> ry;
        for (int i = 0; i < 8; ++i) {
          const auto loc = layouts[s].local({raw.A[i], layouts[s].outcomes[0]});
          if (!loc) continue;
          for (std::size_t k = 0; k < layouts[s].outcomes.size(); ++k) {
            rx.push_back(((raw.X.row(i).transpose() - xm).array() / xs.array()).matrix());
            rt.push_back(static_cast<int>(k) * la + loc->action);
            const int og = layouts[s].outcomes[k];
            ry.push_back((raw.Y(i, og) - ym(og)) / ys(og));
          }
        }
        const int n = static_cast<int>(ry.size());
        if (n == 0) continue;
        Matrix kk(n, n);
        Vector yv(n);
        for (int i = 0; i < n; ++i) {
          yv(i) = ry[i];
          for (int j = 0; j < n; ++j) kk(i, j) = b(rt[i], rt[j]) * oracle::rbf(s2, ls, rx[i], rx[j]);
          kk(i, i) += std::exp(theta.log_noise(rt[i]));
        }
        const Matrix h = oracle::adjugate_inverse(kk);
        for (int a : layouts[s].actions) {
          for (std::size_t k = 0; k < layouts[s].outcomes.size(); ++k) {
            const int og = layouts[s].outcomes[k];
            const int tq = static_cast<int>(k) * la + layouts[s].local({a, og})->action;
            for (int q = 0; q < 3; ++q) {
              const Vector z = ((xq.row(q).transpose() - xm).array() / xs.array()).matrix();
              Vector kq(n);
              for (int i = 0; i < n; ++i) kq(i) = b(tq, rt[i]) * oracle::rbf(s2, ls, z, rx[i]);
              const double mean = kq.dot(h * yv) * ys(og) + ym(og);
              const double var = (b(tq, tq) * s2 - kq.dot(h * kq)) * ys(og) * ys(og);
              const auto got = model.predict(xq.row(q).transpose(), {a, og});
              EXPECT_NEAR(got.mean, mean, 1e-8) << to_string(v);
              EXPECT_NEAR(got.variance, var, 1e-8) << to_string(v);
            }
          }
        }
      }
    }
  }
}

TEST(Predict, DiagonalCoregionMatchesIndependent) {
  for (auto [multi, indep] : {std::pair{ModelVariant::MOGP, ModelVariant::GP},
                              std::pair{ModelVariant::CounterGP, ModelVariant::GP}}) {
    const int d = 3, m = 2;
    const auto raw = make_data(31, 24, 2, d, m);
    auto mp = initial_params(multi, d, m, 2, {}, 31);
    const Vector ls = (Vector(2) << 0.3, -0.2).finished();
    std::vector<std::vector<double>> task_var(d, std::vector<double>(m));
    for (auto &theta : mp) {
      auto &c = theta.kernel.components[0];
      c.base.log_lengthscales = ls;
      c.base.log_signal_variance = 0.4;
      c.action.L.setZero();
      for (int a = 0; a < d; ++a) c.action.log_diag(a) = -0.5 + 0.3 * a;
      if (c.outcome) {
        c.outcome->L.setZero();
        c.outcome->log_diag << 0.2, -0.3;
      }
      for (Eigen::Index t = 0; t < theta.log_noise.size(); ++t)
        theta.log_noise(t) = -2.0 + 0.1 * static_cast<double>(t);
    }
    auto ip = initial_params(indep, d, m, 2, {}, 31);
    const auto layouts = layout_for(indep, d, m);
    const auto mlayouts = layout_for(multi, d, m);
    for (std::size_t s = 0; s < layouts.size(); ++s) {
      const int a = layouts[s].actions[0], o = layouts[s].outcomes[0];
      // locate the same task in the multitask parameters
      for (std::size_t ms = 0; ms < mlayouts.size(); ++ms) {
        const auto loc = mlayouts[ms].local({a, o});
        if (!loc) continue;
        const auto &mc = mp[ms].kernel.components[0];
        double ld = mc.action.log_diag(loc->action);
        if (mc.outcome) ld += mc.outcome->log_diag(loc->outcome);
        auto &c = ip[s].kernel.components[0];
        c.base.log_lengthscales = ls;
        c.base.log_signal_variance = 0.4;
        c.action.L.setZero();
        c.action.log_diag(0) = ld;
        const int la = static_cast<int>(mlayouts[ms].actions.size());
        ip[s].log_noise(0) = mp[ms].log_noise(loc->outcome * la + loc->action);
      }
    }
    const auto mm = make_model(multi, raw, mp);
    const auto im = make_model(indep, raw, ip);
    std::mt19937_64 rng(77);
    const Matrix xq = oracle::random_matrix(rng, 5, 2, -2.0, 2.0);
    for (int a = 0; a < d; ++a) {
      for (int o = 0; o < m; ++o) {
        const auto pm = mm.predict_many(xq, {a, o});
        const auto pi = im.predict_many(xq, {a, o});
        for (int q = 0; q < 5; ++q) {
          EXPECT_NEAR(pm[q].mean, pi[q].mean, 1e-6);
          EXPECT_NEAR(pm[q].variance, pi[q].variance, 1e-6);
        }
      }
    }
  }
}

TEST(Predict, VarianceNonIncreasingWhenAddingPoints) {
  for (auto v : kAllVariants) {
    ModelOptions opt;
    opt.hidden = {4, 2};
    for (std::uint64_t seed = 40; seed < 44; ++seed) {
      const auto full = make_data(seed, 12, 2, 2, 2);
      std::vector<Eigen::Index> rows(11);
      std::iota(rows.begin(), rows.end(), 0);
      const auto fewer = full.subset(rows);
      const auto params = perturbed_params(v, full, opt, seed, 0.2);
      const auto rec = StandardizationRecord::identity(2, 2);
      const auto big = assemble_model(v, full, rec, params);
      const auto small = assemble_model(v, fewer, rec, params);
      std::mt19937_64 rng(seed);
      const Matrix xq = oracle::random_matrix(rng, 6, 2, -2.0, 2.0);
      for (int a = 0; a < 2; ++a) {
        for (int o = 0; o < 2; ++o) {
          const auto pb = big.predict_many(xq, {a, o});
          const auto ps = small.predict_many(xq, {a, o});
          for (int q = 0; q < 6; ++q) {
            EXPECT_LE(pb[q].variance, ps[q].variance + 1e-8) << to_string(v);
          }
        }
      }
    }
  }
}

TEST(Predict, MeanInvariantToRowPermutation) {
  ModelOptions opt;
  opt.hidden = {4, 2};
  for (auto v : kAllVariants) {
    const auto raw = make_data(50, 14, 2, 2, 2);
    std::vector<Eigen::Index> perm(14);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(3));
    const auto params = perturbed_params(v, raw, opt, 50, 0.2);
    const auto m1 = make_model(v, raw, params);
    const auto m2 = make_model(v, raw.subset(perm), params);
    std::mt19937_64 rng(9);
    const Matrix xq = oracle::random_matrix(rng, 4, 2);
    for (int a = 0; a < 2; ++a) {
      const Vector u = m1.mean_many(xq, {a, 1});
      const Vector w = m2.mean_many(xq, {a, 1});
      EXPECT_LT((u - w).cwiseAbs().maxCoeff(), 1e-9) << to_string(v);
    }
  }
}

TEST(Predict, ContrastMatchesSeparatePredictionsAcrossSubModels) {
  const auto raw = make_data(60, 16, 2, 2, 1);
  const auto params = perturbed_params(ModelVariant::GP, raw, {}, 60, 0.2);
  const auto model = make_model(ModelVariant::GP, raw, params);
  const Matrix xq = Matrix::Constant(1, 2, 0.3);
  const auto c = model.contrast_many(xq, {1, 0}, {0, 0});
  const auto p1 = model.predict(xq.row(0).transpose(), {1, 0});
  const auto p0 = model.predict(xq.row(0).transpose(), {0, 0});
  EXPECT_NEAR(c[0].mean, p1.mean - p0.mean, 1e-10);
  EXPECT_NEAR(c[0].variance, p1.variance + p0.variance, 1e-10);
}
