#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <random>

#include "doctest.h"
#include "support/fixture.hpp"
#include "zarm/trainer.hpp"

using namespace zarm;
using zarm::testsupport::fixture_config;
using zarm::testsupport::fixture_dataset;
using zarm::testsupport::fixture_model;

TEST_CASE("one Adam step with zero gradients is a no-op") {
  ParamStore<double> store;
  Parameter<double>* p = store.add("p", {2, 2});
  p->value.v = {1.0, -2.0, 3.0, -4.0};
  AdamOptimizer<double> adam(store, AdamConfig{});
  store.zero_grads();
  adam.step();
  CHECK(p->value.v == std::vector<double>{1.0, -2.0, 3.0, -4.0});
}

TEST_CASE("Adam takes a bias-corrected first step of size lr") {
  ParamStore<double> store;
  Parameter<double>* p = store.add("p", {1});
  p->value[0] = 1.0;
  AdamConfig cfg;
  cfg.lr = 0.1;
  AdamOptimizer<double> adam(store, cfg);
  p->grad[0] = 0.5;
  adam.step();
  // First step: mhat = g, vhat = g^2, update ~ lr * g/|g| = lr.
  CHECK(p->value[0] == doctest::Approx(1.0 - 0.1).epsilon(1e-6));
}

TEST_CASE("Adam skips frozen rows") {
  ParamStore<double> store;
  Parameter<double>* p = store.add("p", {2, 2});
  p->frozen_rows = {1, 0};
  p->grad.v = {1.0, 1.0, 1.0, 1.0};
  AdamOptimizer<double> adam(store, AdamConfig{});
  adam.step();
  CHECK(p->value.at(0, 0) == 0.0);
  CHECK(p->value.at(0, 1) == 0.0);
  CHECK(p->value.at(1, 0) != 0.0);
}

TEST_CASE("evaluation is the mean squared error, order-independent") {
  RunConfig cfg = fixture_config();
  Dataset data = fixture_dataset(cfg);
  auto model = fixture_model<double>(cfg, data);

  const double mse = evaluate(model, data, data.valid);
  CHECK(std::isfinite(mse));

  std::vector<RatingExample> shuffled = data.valid;
  std::reverse(shuffled.begin(), shuffled.end());
  CHECK(evaluate(model, data, shuffled) == doctest::Approx(mse).epsilon(1e-12));

  CHECK_THROWS_AS(evaluate(model, data, {}), DataError);

  // Hand-check against a scalar loop over individual predictions.
  double acc = 0;
  for (const RatingExample& ex : data.valid) {
    Graph<double> g;
    ForwardTrace<double> t;
    model.forward(g, make_input(data, ex, false), Mode::eval, nullptr, &t);
    acc += (t.yhat - ex.rating) * (t.yhat - ex.rating);
  }
  CHECK(mse == doctest::Approx(acc / data.valid.size()).epsilon(1e-12));
}

TEST_CASE("zero epochs returns the initialized parameters untouched") {
  RunConfig cfg = fixture_config();
  Dataset data = fixture_dataset(cfg);
  auto model = fixture_model<double>(cfg, data);
  auto before = snapshot_params(model.params());
  TrainOptions opts;
  opts.epochs = 0;
  opts.seed = cfg.seed;
  TrainResult<double> r = train(model, data, opts);
  CHECK(r.metrics.empty());
  auto after = snapshot_params(model.params());
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i].v == after[i].v);
}

TEST_CASE("training is bitwise deterministic for a fixed seed") {
  RunConfig cfg = fixture_config();
  cfg.epochs = 3;
  Dataset data1 = fixture_dataset(cfg);
  Dataset data2 = fixture_dataset(cfg);
  auto m1 = fixture_model<double>(cfg, data1);
  auto m2 = fixture_model<double>(cfg, data2);
  TrainOptions opts;
  opts.adam.lr = cfg.lr;
  opts.batch_size = cfg.batch_size;
  opts.epochs = cfg.epochs;
  opts.seed = cfg.seed;
  TrainResult<double> r1 = train(m1, data1, opts);
  TrainResult<double> r2 = train(m2, data2, opts);
  REQUIRE(r1.metrics.size() == r2.metrics.size());
  for (std::size_t e = 0; e < r1.metrics.size(); ++e) {
    CHECK(r1.metrics[e].train_loss == r2.metrics[e].train_loss);
    CHECK(r1.metrics[e].valid_mse == r2.metrics[e].valid_mse);
  }
  for (std::size_t i = 0; i < m1.params().size(); ++i)
    CHECK(m1.params()[i].value.v == m2.params()[i].value.v);
}

TEST_CASE("parallel workers reproduce the single-threaded run") {
  RunConfig cfg = fixture_config();
  cfg.epochs = 2;
  Dataset data1 = fixture_dataset(cfg);
  Dataset data2 = fixture_dataset(cfg);
  auto m1 = fixture_model<double>(cfg, data1);
  auto m2 = fixture_model<double>(cfg, data2);
  TrainOptions opts;
  opts.batch_size = cfg.batch_size;
  opts.epochs = cfg.epochs;
  opts.seed = cfg.seed;
  opts.workers = 1;
  TrainResult<double> r1 = train(m1, data1, opts);
  opts.workers = 3;
  TrainResult<double> r2 = train(m2, data2, opts);
  for (std::size_t e = 0; e < r1.metrics.size(); ++e)
    CHECK(r1.metrics[e].valid_mse == doctest::Approx(r2.metrics[e].valid_mse).epsilon(1e-9));
}

TEST_CASE("the first-batch loss decreases within 20 steps") {
  RunConfig cfg = fixture_config();
  Dataset data = fixture_dataset(cfg);
  auto model = fixture_model<double>(cfg, data);
  TrainOptions opts;
  opts.adam.lr = cfg.lr;
  opts.batch_size = data.train.size();  // one batch per epoch = one step each
  opts.epochs = 20;
  opts.seed = cfg.seed;
  TrainResult<double> r = train(model, data, opts);
  CHECK(r.metrics.back().train_loss < r.metrics.front().train_loss);
}

TEST_CASE("best-validation snapshot is kept") {
  RunConfig cfg = fixture_config();
  cfg.epochs = 5;
  Dataset data = fixture_dataset(cfg);
  auto model = fixture_model<double>(cfg, data);
  TrainOptions opts;
  opts.batch_size = cfg.batch_size;
  opts.epochs = cfg.epochs;
  opts.seed = cfg.seed;
  TrainResult<double> r = train(model, data, opts);
  REQUIRE(r.metrics.size() == 5);
  double best = r.metrics[0].valid_mse;
  for (const auto& m : r.metrics) best = std::min(best, m.valid_mse);
  CHECK(r.best_valid_mse == doctest::Approx(best));
  CHECK(r.best_params.size() == model.params().size());

  // Restoring the snapshot reproduces the recorded validation MSE.
  restore_params(model.params(), r.best_params);
  CHECK(evaluate(model, data, data.valid) == doctest::Approx(r.best_valid_mse).epsilon(1e-12));
}
