#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "crowdest/mlp.hpp"
#include "support/grad_check.hpp"

using namespace crowdest::mlp;
namespace fs = std::filesystem;

using crowdest::testing::random_input;
using crowdest::testing::random_model;
using crowdest::testing::flatten;

TEST(Forward, ZeroWeightsGiveZero) {
  const MlpModel m = make_model({6, 400, 1});
  const std::vector<double> x{3, 4, 1, 2, 5, 60};
  EXPECT_EQ(forward(m, x), 0.0);
}

TEST(Forward, LinearChainSumsInputs) {
  MlpModel m = make_model({6, 1, 1}, Activation::linear);
  for (auto& l : m.layers) std::fill(l.w.begin(), l.w.end(), 1.0);
  const std::vector<double> x{1.5, -2, 3, 0.25, 7, 10};
  EXPECT_DOUBLE_EQ(forward(m, x), 19.75);
}

TEST(Forward, RejectsWrongArity) {
  const MlpModel m = make_model({6, 4, 1});
  const std::vector<double> x{1, 2, 3};
  EXPECT_THROW(forward(m, x), std::invalid_argument);
}

TEST(Forward, AppliesStoredNormalization) {
  MlpModel m = make_model({2, 1}, Activation::linear);
  m.layers[0].w = {1.0, 1.0};
  set_norm(m, {{0.0, 10.0}, {2.0, 4.0}});
  const std::vector<double> x{5.0, 3.0};
  EXPECT_DOUBLE_EQ(forward(m, x), 0.5 + 0.5);
  EXPECT_THROW(set_norm(m, {{1.0, 1.0}, {0.0, 1.0}}), std::invalid_argument);
}

TEST(MseLoss, Basics) {
  const std::vector<double> a{1, 2, 3};
  EXPECT_EQ(mse_loss(a, a), 0.0);
  EXPECT_EQ(mse_loss(std::vector<double>{2}, std::vector<double>{0}), 4.0);
  EXPECT_THROW(mse_loss(std::vector<double>{}, std::vector<double>{}), std::invalid_argument);
  EXPECT_THROW(mse_loss(std::vector<double>{1}, std::vector<double>{1, 2}), std::invalid_argument);
}

TEST(MseLoss, MatchesDirectSum) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 50; ++t) {
    const auto p = random_input(rng, 1 + t);
    const auto q = random_input(rng, 1 + t);
    long double s = 0;
    for (std::size_t i = 0; i < p.size(); ++i) s += (long double)(p[i] - q[i]) * (p[i] - q[i]);
    EXPECT_NEAR(mse_loss(p, q), static_cast<double>(s / p.size()), 1e-12);
  }
}

TEST(Backward, ZeroErrorGivesZeroGradient) {
  std::mt19937_64 rng(2);
  MlpModel m = random_model(rng);
  const auto x = random_input(rng, 6);
  const Gradient g = backward(m, x, forward(m, x));
  for (double v : flatten(g)) EXPECT_EQ(v, 0.0);
}

TEST(Backward, LinearModelClosedForm) {
  MlpModel m = make_model({6, 1}, Activation::linear);
  std::mt19937_64 rng(3);
  m.layers[0].w = random_input(rng, 6);
  const auto x = random_input(rng, 6);
  const double y = 0.7;
  const double pred = forward(m, x);
  const Gradient g = backward(m, x, y);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(g.layers[0].w[i], 2.0 * (pred - y) * x[i], 1e-14);
}

TEST(Backward, MatchesCentralDifferences) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 120; ++trial) {
    const MlpModel m = random_model(rng);
    const auto x = random_input(rng, 6);
    const double y = random_input(rng, 1)[0] * 3.0;
    const auto errs = crowdest::testing::gradient_errors(m, x, y);
    ASSERT_EQ(errs.size(), crowdest::testing::flatten(backward(m, x, y)).size());
    for (std::size_t k = 0; k < errs.size(); ++k) EXPECT_LT(errs[k], 1e-4) << "trial " << trial << " param " << k;
  }
}

namespace {

std::vector<Sample> toy_rows() {
  std::vector<Sample> rows;
  std::mt19937_64 rng(5);
  for (int i = 0; i < 10; ++i) {
    Sample s;
    s.x = random_input(rng, 6);
    s.y = std::sin(s.x[0] * 2) + s.x[1] * s.x[2];
    rows.push_back(s);
  }
  return rows;
}

}  // namespace

TEST(TrainSgd, OverfitsToySet) {
  const auto rows = toy_rows();
  MlpModel m = make_model({6, 16, 1}, Activation::sigmoid, true);
  init_weights(m, 8);
  TrainConfig cfg;
  cfg.epochs = 2000;
  cfg.learning_rate = 0.05;
  const auto rep = train_sgd(m, rows, {}, cfg);
  ASSERT_EQ(rep.train_loss.size(), 2000u);
  const double initial = [&] {
    MlpModel fresh = make_model({6, 16, 1}, Activation::sigmoid, true);
    init_weights(fresh, 8);
    return dataset_loss(fresh, rows);
  }();
  EXPECT_LT(rep.train_loss.back(), 0.01 * initial);
}

TEST(TrainSgd, ZeroRateLeavesModelUnchanged) {
  const auto rows = toy_rows();
  MlpModel m = make_model({6, 8, 1});
  init_weights(m, 1);
  const MlpModel before = m;
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.learning_rate = 0.0;
  const auto rep = train_sgd(m, rows, {}, cfg);
  EXPECT_EQ(m, before);
  for (double l : rep.train_loss) EXPECT_EQ(l, rep.train_loss.front());
}

TEST(TrainSgd, DeterministicForFixedSeeds) {
  const auto rows = toy_rows();
  const auto run = [&] {
    MlpModel m = make_model({6, 8, 1});
    init_weights(m, 3);
    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.learning_rate = 0.01;
    cfg.shuffle_seed = 99;
    train_sgd(m, rows, {}, cfg);
    return m;
  };
  EXPECT_EQ(run(), run());
}

TEST(TrainSgd, PlateauHalvesRateAndStops) {
  const auto rows = toy_rows();
  // Validation targets unrelated to training: improvement stalls quickly.
  auto val = toy_rows();
  for (auto& s : val) s.y = -s.y + 5.0;
  MlpModel m = make_model({6, 8, 1}, Activation::tanh, true);
  init_weights(m, 6);
  TrainConfig cfg;
  cfg.epochs = 500;
  cfg.learning_rate = 0.05;
  cfg.patience = 3;
  cfg.max_halvings = 2;
  const auto rep = train_sgd(m, rows, val, cfg);
  EXPECT_TRUE(rep.stopped_on_plateau);
  EXPECT_EQ(rep.halvings, 2u);
  EXPECT_LT(rep.train_loss.size(), 500u);
  for (std::size_t i = 1; i < rep.learning_rate.size(); ++i) EXPECT_LE(rep.learning_rate[i], rep.learning_rate[i - 1]);
  // Best-validation weights are restored.
  EXPECT_NEAR(dataset_loss(m, val), rep.validation_loss[rep.best_epoch], 1e-12);
}

TEST(TrainSgd, DivergenceIsReported) {
  const auto rows = toy_rows();
  MlpModel m = make_model({6, 8, 1}, Activation::linear);
  init_weights(m, 2);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.learning_rate = 1e6;
  EXPECT_THROW(train_sgd(m, rows, {}, cfg), std::runtime_error);
}

TEST(Score, Counts) {
  MlpModel ident = make_model({1, 1}, Activation::linear);
  ident.layers[0].w = {1.0};
  const std::vector<Sample> rows{{{105.0}, 100.0}, {{109.0}, 100.0}, {{120.0}, 100.0}, {{3.0}, 0.0}};
  const Score s = score_below_threshold(ident, rows);
  EXPECT_EQ(s.scored, 3u);
  EXPECT_EQ(s.below, 2u);
  EXPECT_EQ(s.zero_targets, 1u);
  EXPECT_DOUBLE_EQ(s.fraction, 2.0 / 3.0);

  const std::vector<Sample> exact{{{5.0}, 5.0}, {{7.0}, 7.0}};
  EXPECT_EQ(score_below_threshold(ident, exact).fraction, 1.0);
  const MlpModel zero = make_model({1, 1});
  EXPECT_EQ(score_below_threshold(zero, exact).fraction, 0.0);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  std::mt19937_64 rng(12);
  const fs::path path = fs::temp_directory_path() / "crowdest_model_rt.json";
  for (int t = 0; t < 10; ++t) {
    const MlpModel m = random_model(rng);
    save(m, path);
    const MlpModel back = load(path);
    EXPECT_EQ(back, m);
    const auto x = random_input(rng, 6);
    EXPECT_EQ(forward(back, x), forward(m, x));
  }
  fs::remove(path);
}

TEST(Checkpoint, RejectsTruncatedAndWrongVersion) {
  std::mt19937_64 rng(13);
  const fs::path path = fs::temp_directory_path() / "crowdest_model_bad.json";
  const MlpModel m = random_model(rng);
  const std::string text = to_json(m).dump();
  {
    std::ofstream out(path);
    out << text.substr(0, text.size() / 2);
  }
  EXPECT_THROW(load(path), std::runtime_error);
  auto j = to_json(m);
  j["version"] = 99;
  {
    std::ofstream out(path);
    out << j.dump();
  }
  try {
    load(path);
    FAIL() << "version mismatch accepted";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
  fs::remove(path);
}
