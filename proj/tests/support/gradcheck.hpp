#pragma once

// Central finite differences against the tape's analytic gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "tracecal/estimator.hpp"
#include "tracecal/nn/autograd.hpp"
#include "tracecal/random.hpp"

namespace tracecal::test {

struct GradCheck {
  double max_rel_error = 0;
  std::size_t checked = 0;
};

inline double rel_error(double a, double b) {
  const double den = std::max({std::abs(a), std::abs(b), 1e-7});
  return std::abs(a - b) / den;
}

// Compares d loss / d p for `samples` randomly chosen scalar entries of the
// given parameters. `loss` must rebuild the graph on every call.
inline GradCheck check_gradients(const std::vector<nn::Var>& params, const std::function<nn::Var()>& loss,
                                 std::size_t samples, Rng& rng, double h = 1e-6) {
  for (auto p : params) p.zero_grad();
  nn::backward(loss());
  std::vector<std::pair<std::size_t, Eigen::Index>> picks;
  std::size_t total = 0;
  for (const auto& p : params) total += static_cast<std::size_t>(p.value().size());
  for (std::size_t s = 0; s < samples; ++s) {
    std::size_t flat = rng.uniform_index(total);
    std::size_t which = 0;
    while (flat >= static_cast<std::size_t>(params[which].value().size())) {
      flat -= static_cast<std::size_t>(params[which].value().size());
      ++which;
    }
    picks.emplace_back(which, static_cast<Eigen::Index>(flat));
  }
  GradCheck out;
  for (const auto& [which, idx] : picks) {
    nn::Var p = params[which];
    const double analytic = p.grad().size() ? p.grad().data()[idx] : 0.0;
    double* slot = p.mutable_value().data() + idx;
    const double orig = *slot;
    double plus = 0, minus = 0;
    {
      nn::NoGradGuard guard;
      *slot = orig + h;
      plus = loss().item();
      *slot = orig - h;
      minus = loss().item();
    }
    *slot = orig;
    const double numeric = (plus - minus) / (2 * h);
    out.max_rel_error = std::max(out.max_rel_error, rel_error(analytic, numeric));
    ++out.checked;
  }
  return out;
}

// Mean BCE over traces of an estimator's trace-level logits, dropout off.
inline nn::Var trace_loss(const NeuralEstimator& est, std::span<const TraceExample* const> examples) {
  Rng rng(0);
  std::vector<nn::Var> logits;
  std::vector<double> targets;
  for (const auto* ex : examples) {
    logits.push_back(est.forward(*ex, false, rng));
    targets.push_back(ex->label);
  }
  return nn::bce_with_logits(nn::concat_rows(logits), targets);
}

}  // namespace tracecal::test
