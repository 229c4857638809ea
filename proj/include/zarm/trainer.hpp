#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "zarm/model.hpp"

namespace zarm {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename S>
class AdamOptimizer {
 public:
  AdamOptimizer(ParamStore<S>& params, AdamConfig cfg) : params_(params), cfg_(cfg) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_.push_back(Tensor<S>::zeros(params[i].value.shape));
      v_.push_back(Tensor<S>::zeros(params[i].value.shape));
    }
  }

  void step() {
    ++t_;
    const S c1 = S(1) - std::pow(S(cfg_.beta1), S(t_));
    const S c2 = S(1) - std::pow(S(cfg_.beta2), S(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Parameter<S>& p = params_[i];
      const std::size_t cols = p.value.cols();
      for (std::size_t j = 0; j < p.value.size(); ++j) {
        if (p.row_frozen(j / cols)) continue;
        const S g = p.grad[j];
        m_[i][j] = S(cfg_.beta1) * m_[i][j] + (S(1) - S(cfg_.beta1)) * g;
        v_[i][j] = S(cfg_.beta2) * v_[i][j] + (S(1) - S(cfg_.beta2)) * g * g;
        const S mhat = m_[i][j] / c1;
        const S vhat = v_[i][j] / c2;
        p.value[j] -= S(cfg_.lr) * mhat / (std::sqrt(vhat) + S(cfg_.eps));
      }
    }
  }

  std::size_t steps() const { return t_; }

 private:
  ParamStore<S>& params_;
  AdamConfig cfg_;
  std::vector<Tensor<S>> m_, v_;
  std::size_t t_ = 0;
};

struct TrainOptions {
  AdamConfig adam;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  int workers = 1;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double valid_mse = 0.0;
  double seconds = 0.0;
};

template <typename S>
struct TrainResult {
  std::vector<EpochMetrics> metrics;
  std::vector<Tensor<S>> best_params;  // snapshot at best validation MSE
  double best_valid_mse = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
};

template <typename S>
double evaluate(const ZarmModel<S>& model, const Dataset& data,
                const std::vector<RatingExample>& examples) {
  if (examples.empty()) throw DataError("evaluate: empty dataset");
  double acc = 0.0;
  for (const RatingExample& ex : examples) {
    Graph<S> g;
    ExampleInput in = make_input(data, ex, /*with_queries=*/false);
    ForwardResult<S> out = model.forward(g, in, Mode::eval);
    const double err = static_cast<double>(out.yhat->value[0]) - ex.rating;
    acc += err * err;
  }
  return acc / static_cast<double>(examples.size());
}

template <typename S>
std::vector<Tensor<S>> snapshot_params(const ParamStore<S>& params) {
  std::vector<Tensor<S>> out;
  out.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) out.push_back(params[i].value);
  return out;
}

template <typename S>
void restore_params(ParamStore<S>& params, const std::vector<Tensor<S>>& snap) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i].value = snap[i];
}

// Epoch loop: seeded shuffle, fresh negative queries, mean batch loss,
// Adam step. RNG draw order per epoch is shuffle, then one dropout seed per
// example, then negatives. Keeps the parameters with the best validation
// MSE; aborts on NaN with the offending tensor named.
template <typename S>
TrainResult<S> train(ZarmModel<S>& model, Dataset& data, const TrainOptions& opts,
                     const std::function<void(const EpochMetrics&)>& on_epoch = nullptr) {
  if (data.train.empty() || data.valid.empty())
    throw DataError("train: needs non-empty train and validation sets");
  ParamStore<S>& params = model.params();
  AdamOptimizer<S> adam(params, opts.adam);
  std::mt19937_64 rng(opts.seed);

  TrainResult<S> result;
  result.best_params = snapshot_params(params);
  std::vector<Tensor<S>> last_good = result.best_params;

  const std::size_t n = data.train.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::uint64_t> dropout_seeds(n);
    for (auto& s : dropout_seeds) s = rng();
    for (RatingExample& ex : data.train) ex.negative = sample_negative(data, ex, rng);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += opts.batch_size) {
      const std::size_t count = std::min(opts.batch_size, n - start);
      params.zero_grads();
      double batch_loss = 0.0;

      auto run_example = [&](std::size_t k, std::vector<Tensor<S>>* sink, double* loss_out) {
        const std::size_t idx = order[start + k];
        const RatingExample& ex = data.train[idx];
        Graph<S> g;
        std::mt19937_64 ex_rng(dropout_seeds[idx]);
        ExampleInput in = make_input(data, ex, model.config().flags.use_aux_loss);
        Var<S> loss = model.example_loss(g, in, Mode::train, &ex_rng);
        *loss_out = static_cast<double>(loss->value[0]);
        g.backward(loss, sink);
      };

      if (opts.workers <= 1) {
        for (std::size_t k = 0; k < count; ++k) {
          double l = 0.0;
          run_example(k, nullptr, &l);
          batch_loss += l;
        }
      } else {
        const int nw = std::min<int>(opts.workers, static_cast<int>(count));
        std::vector<std::vector<Tensor<S>>> sinks(nw);
        std::vector<std::vector<double>> losses(nw);
        std::vector<std::exception_ptr> errors(nw);
        std::vector<std::thread> threads;
        for (int w = 0; w < nw; ++w) {
          sinks[w].reserve(params.size());
          for (std::size_t i = 0; i < params.size(); ++i)
            sinks[w].push_back(Tensor<S>::zeros(params[i].value.shape));
          threads.emplace_back([&, w] {
            try {
              for (std::size_t k = w; k < count; k += nw) {
                double l = 0.0;
                run_example(k, &sinks[w], &l);
                losses[w].push_back(l);
              }
            } catch (...) {
              errors[w] = std::current_exception();
            }
          });
        }
        for (auto& th : threads) th.join();
        for (auto& e : errors)
          if (e) std::rethrow_exception(e);
        // Single synchronization point: merge in worker order.
        for (int w = 0; w < nw; ++w) {
          for (std::size_t i = 0; i < params.size(); ++i)
            for (std::size_t j = 0; j < sinks[w][i].size(); ++j)
              params[i].grad[j] += sinks[w][i][j];
          for (double l : losses[w]) batch_loss += l;
        }
      }

      const S inv = S(1) / static_cast<S>(count);
      for (std::size_t i = 0; i < params.size(); ++i)
        for (S& gv : params[i].grad.v) gv *= inv;

      if (!std::isfinite(batch_loss)) {
        restore_params(params, last_good);
        throw NumericError("train: NaN loss at epoch " + std::to_string(epoch) +
                           "; parameters restored to last good state");
      }
      adam.step();
      for (std::size_t i = 0; i < params.size(); ++i)
        for (S x : params[i].value.v)
          if (!std::isfinite(x)) {
            restore_params(params, last_good);
            throw NumericError("train: non-finite parameter in " + params[i].path);
          }
      epoch_loss += batch_loss;
    }
    last_good = snapshot_params(params);

    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = epoch_loss / static_cast<double>(n);
    m.valid_mse = evaluate(model, data, data.valid);
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (m.valid_mse < result.best_valid_mse) {
      result.best_valid_mse = m.valid_mse;
      result.best_epoch = epoch;
      result.best_params = snapshot_params(params);
    }
    if (on_epoch) on_epoch(m);
    result.metrics.push_back(m);
  }
  return result;
}

}  // namespace zarm
