#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "zarm/params.hpp"

namespace zarm {

struct GradCheckEntry {
  std::string path;
  double max_rel_err = 0.0;
  std::size_t checked = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool pass = false;
  double tol = 0.0;

  const GradCheckEntry& worst() const {
    std::size_t w = 0;
    for (std::size_t i = 1; i < entries.size(); ++i)
      if (entries[i].max_rel_err > entries[w].max_rel_err) w = i;
    return entries[w];
  }
};

// Central-difference check of the analytic gradients. loss_fn must be a pure
// function of the parameter values (dropout off); it is evaluated twice up
// front to detect non-determinism. Tensors with at most max_samples entries
// are checked exhaustively, larger ones on max_samples random entries.
//
// Relative error uses a unit floor in the denominator so near-zero gradient
// pairs compare absolutely.
inline double rel_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1.0});
}

inline GradCheckReport grad_check(ParamStore<double>& params,
                                  const std::function<double()>& loss_fn,
                                  const std::function<void()>& loss_backward_fn,
                                  double h, double tol, std::uint64_t seed,
                                  std::size_t max_samples = 64) {
  const double l1 = loss_fn();
  const double l2 = loss_fn();
  if (l1 != l2)
    throw Error("grad_check: loss function is not deterministic (" +
                std::to_string(l1) + " vs " + std::to_string(l2) + ")");

  params.zero_grads();
  loss_backward_fn();

  std::mt19937_64 rng(seed);
  GradCheckReport report;
  report.tol = tol;
  report.pass = true;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter<double>& p = params[pi];
    std::vector<std::size_t> picks;
    if (p.value.size() <= max_samples) {
      picks.resize(p.value.size());
      for (std::size_t i = 0; i < picks.size(); ++i) picks[i] = i;
    } else {
      std::uniform_int_distribution<std::size_t> dist(0, p.value.size() - 1);
      for (std::size_t i = 0; i < max_samples; ++i) picks.push_back(dist(rng));
    }
    GradCheckEntry entry;
    entry.path = p.path;
    for (std::size_t i : picks) {
      const double saved = p.value[i];
      p.value[i] = saved + h;
      const double lp = loss_fn();
      p.value[i] = saved - h;
      const double lm = loss_fn();
      p.value[i] = saved;
      const double fd = (lp - lm) / (2.0 * h);
      entry.max_rel_err = std::max(entry.max_rel_err, rel_error(p.grad[i], fd));
      ++entry.checked;
    }
    if (entry.max_rel_err >= tol) report.pass = false;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace zarm
