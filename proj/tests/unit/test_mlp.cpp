#include <gtest/gtest.h>

#include <random>

#include "cmgp/mlp.hpp"
#include "oracles.hpp"

using namespace cmgp;

namespace {

MlpParams random_net(std::mt19937_64 &rng, std::vector<int> sizes, Activation act) {
  MlpParams p;
  p.layer_sizes = sizes;
  p.activation = act;
  for (std::size_t k = 0; k + 1 < sizes.size(); ++k) {
    p.weights.push_back(oracle::random_matrix(rng, sizes[k + 1], sizes[k]));
    p.biases.push_back(oracle::random_matrix(rng, sizes[k + 1], 1));
  }
  return p;
}

double objective(const MlpParams &p, const Matrix &x, const Matrix &g) {
  return forward(p, x).first.cwiseProduct(g).sum();
}

} // namespace

TEST(MlpForward, ZeroWeightsGiveZeroFeatures) {
  std::mt19937_64 rng(1);
  MlpParams p = random_net(rng, {3, 4, 2}, Activation::Tanh);
  for (auto &w : p.weights) w.setZero();
  for (auto &b : p.biases) b.setZero();
  EXPECT_EQ(forward(p, oracle::random_matrix(rng, 5, 3)).first.cwiseAbs().maxCoeff(), 0.0);
}

TEST(MlpForward, IdentityReluLayer) {
  MlpParams p{{3, 3}, {Matrix::Identity(3, 3)}, {Vector::Zero(3)}, Activation::ReLU};
  std::mt19937_64 rng(3);
  const Matrix x = oracle::random_matrix(rng, 4, 3, 0.0, 2.0);
  EXPECT_EQ(forward(p, x).first, x);
}

TEST(MlpForward, MatchesLayerByLayerEvaluation) {
  std::mt19937_64 rng(4);
  for (auto act : {Activation::Tanh, Activation::ReLU}) {
    const auto p = random_net(rng, {3, 5, 2}, act);
    const Matrix x = oracle::random_matrix(rng, 6, 3);
    const Matrix h = forward(p, x).first;
    for (int i = 0; i < 6; ++i) {
      const Vector expected = oracle::mlp_forward(p.weights, p.biases, act == Activation::Tanh,
                                                  x.row(i).transpose());
      EXPECT_LT((h.row(i).transpose() - expected).cwiseAbs().maxCoeff(), 1e-14);
    }
    EXPECT_EQ(forward(p, x).first, h);
  }
  EXPECT_THROW(forward(random_net(rng, {3, 2}, Activation::Tanh), Matrix::Zero(2, 4)),
               DimensionMismatch);
}

TEST(MlpBackward, ZeroUpstreamGivesZeroGradients) {
  std::mt19937_64 rng(5);
  const auto p = random_net(rng, {3, 4, 2}, Activation::Tanh);
  const Matrix x = oracle::random_matrix(rng, 5, 3);
  const auto [h, trace] = forward(p, x);
  const auto g = backward(p, trace, Matrix::Zero(5, 2));
  for (const auto &w : g.weights) EXPECT_EQ(w.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(g.inputs.cwiseAbs().maxCoeff(), 0.0);
}

TEST(MlpBackward, LinearRegimeWeightGradient) {
  std::mt19937_64 rng(6);
  MlpParams p{{3, 2}, {oracle::random_matrix(rng, 2, 3, 0.1, 1.0)},
              {Vector::Constant(2, 5.0)}, Activation::ReLU};
  const Matrix x = oracle::random_matrix(rng, 4, 3, 0.0, 1.0);
  const Matrix up = oracle::random_matrix(rng, 4, 2);
  const auto [h, trace] = forward(p, x);
  const auto g = backward(p, trace, up);
  EXPECT_LT((g.weights[0] - up.transpose() * x).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(MlpBackward, TraceMismatchIsReported) {
  std::mt19937_64 rng(7);
  const auto p = random_net(rng, {3, 4, 2}, Activation::Tanh);
  const auto other = random_net(rng, {3, 5, 2}, Activation::Tanh);
  const auto [h, trace] = forward(other, oracle::random_matrix(rng, 2, 3));
  EXPECT_THROW(backward(p, trace, Matrix::Zero(2, 2)), TraceMismatch);
  ForwardTrace empty;
  EXPECT_THROW(backward(p, empty, Matrix::Zero(2, 2)), TraceMismatch);
}

TEST(MlpProperty, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> width(1, 4);
  const double h = 1e-5;
  for (int trial = 0; trial < 100; ++trial) {
    const auto act = trial % 4 == 3 ? Activation::ReLU : Activation::Tanh;
    auto p = random_net(rng, {width(rng), width(rng), width(rng)}, act);
    const Matrix x = oracle::random_matrix(rng, 3, p.input_dim());
    const Matrix up = oracle::random_matrix(rng, 3, p.output_dim());
    const auto [out, trace] = forward(p, x);
    const auto g = backward(p, trace, up);
    for (std::size_t k = 0; k < p.weights.size(); ++k) {
      for (Eigen::Index i = 0; i < p.weights[k].size(); ++i) {
        auto pp = p, pm = p;
        pp.weights[k](i) += h;
        pm.weights[k](i) -= h;
        const double fd = (objective(pp, x, up) - objective(pm, x, up)) / (2 * h);
        EXPECT_NEAR(g.weights[k](i), fd, 1e-5);
      }
      for (Eigen::Index i = 0; i < p.biases[k].size(); ++i) {
        auto pp = p, pm = p;
        pp.biases[k](i) += h;
        pm.biases[k](i) -= h;
        const double fd = (objective(pp, x, up) - objective(pm, x, up)) / (2 * h);
        EXPECT_NEAR(g.biases[k](i), fd, 1e-5);
      }
    }
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      Matrix xp = x, xm = x;
      xp(i) += h;
      xm(i) -= h;
      EXPECT_NEAR(g.inputs(i), (objective(p, xp, up) - objective(p, xm, up)) / (2 * h), 1e-5);
    }
  }
}

TEST(MlpProperty, TanhOutputsBounded) {
  std::mt19937_64 rng(9);
  auto p = MlpParams::glorot({4, 50, 50, 2}, Activation::Tanh, rng);
  const Matrix h = forward(p, oracle::random_matrix(rng, 100, 4, -10, 10)).first;
  EXPECT_LT(h.cwiseAbs().maxCoeff(), 1.0);
}
