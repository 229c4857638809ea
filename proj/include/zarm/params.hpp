#pragma once

#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "zarm/tensor.hpp"

namespace zarm {

// One learnable array, addressable by path for checkpointing and gradient
// checking. `frozen_rows` marks rows that are never updated (the PAD
// embedding row stays at zero).
template <typename S>
struct Parameter {
  std::string path;
  Tensor<S> value;
  Tensor<S> grad;
  std::vector<std::uint8_t> frozen_rows;  // empty = nothing frozen
  std::size_t index = 0;                  // position in the owning store

  bool row_frozen(std::size_t r) const {
    return !frozen_rows.empty() && frozen_rows[r] != 0;
  }
};

enum class InitKind { glorot_uniform, zeros, embedding_normal };

// Ordered parameter storage. Creation order is the documented order in which
// initialization draws from the run RNG, so identical configs and seeds give
// bitwise-identical parameters.
template <typename S>
class ParamStore {
 public:
  Parameter<S>* add(const std::string& path, Shape shape) {
    if (by_path_.count(path)) throw ConfigError("duplicate parameter path: " + path);
    auto p = std::make_unique<Parameter<S>>();
    p->path = path;
    p->value = Tensor<S>(shape);
    p->grad = Tensor<S>(std::move(shape));
    p->index = params_.size();
    Parameter<S>* raw = p.get();
    by_path_[path] = raw;
    params_.push_back(std::move(p));
    return raw;
  }

  Parameter<S>* find(const std::string& path) const {
    auto it = by_path_.find(path);
    return it == by_path_.end() ? nullptr : it->second;
  }

  std::size_t size() const { return params_.size(); }
  Parameter<S>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<S>& operator[](std::size_t i) const { return *params_[i]; }

  void zero_grads() {
    for (auto& p : params_) p->grad.fill(S(0));
  }

  static void initialize(Parameter<S>& p, InitKind kind, std::mt19937_64& rng) {
    switch (kind) {
      case InitKind::zeros:
        p.value.fill(S(0));
        break;
      case InitKind::glorot_uniform: {
        double fan_out = static_cast<double>(p.value.rows());
        double fan_in = static_cast<double>(p.value.cols());
        double bound = std::sqrt(6.0 / (fan_in + fan_out));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (S& x : p.value.v) x = static_cast<S>(dist(rng));
        break;
      }
      case InitKind::embedding_normal: {
        std::normal_distribution<double> dist(0.0, 0.01);
        for (S& x : p.value.v) x = static_cast<S>(dist(rng));
        break;
      }
    }
    for (std::size_t r = 0; r < p.value.rows(); ++r)
      if (p.row_frozen(r))
        for (std::size_t c = 0; c < p.value.cols(); ++c) p.value.at(r, c) = S(0);
  }

 private:
  std::vector<std::unique_ptr<Parameter<S>>> params_;
  std::unordered_map<std::string, Parameter<S>*> by_path_;
};

}  // namespace zarm
