#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "leaffine/graph.hpp"

namespace leaffine {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::vector<double> analytic;
  std::vector<double> numeric;
};

/// Compares the tape gradient of a scalar function with central differences,
/// perturbing `target` in place (and restoring it). `f` must record a fresh forward
/// pass that binds `target` as a parameter leaf. The error of element i is
/// |analytic - numeric| / max(1, |numeric|); the report carries the maximum.
template <typename T>
GradCheckReport finite_diff_report(const std::function<Var(Graph<T>&)>& f, Tensor<T>& target, double eps) {
  if (!(eps > 0.0)) throw ConfigError("finite_diff_check: eps must be positive");
  auto evaluate = [&f]() {
    Graph<T> g;
    const double v = static_cast<double>(g.value(f(g)).item());
    if (!std::isfinite(v)) throw NumericError("finite_diff_check: f(x) is not finite");
    return v;
  };

  const bool had_grad = target.has_grad();
  std::vector<T> saved_grad;
  if (had_grad) saved_grad.assign(target.grad().begin(), target.grad().end());
  target.clear_grad();
  {
    Graph<T> g;
    Var out = f(g);
    if (!std::isfinite(static_cast<double>(g.value(out).item()))) {
      throw NumericError("finite_diff_check: f(x) is not finite");
    }
    g.backward(out);
  }
  GradCheckReport report;
  report.analytic.assign(target.size(), 0.0);
  if (target.has_grad()) {
    for (std::size_t i = 0; i < target.size(); ++i) report.analytic[i] = target.grad()[i];
  }
  target.clear_grad();
  if (had_grad) std::copy(saved_grad.begin(), saved_grad.end(), target.ensure_grad().begin());

  report.numeric.resize(target.size());
  for (std::size_t i = 0; i < target.size(); ++i) {
    const T original = target[i];
    // Divide by the step actually representable in T, not the nominal 2 * eps.
    const T up = static_cast<T>(original + eps);
    const T down = static_cast<T>(original - eps);
    target[i] = up;
    const double plus = evaluate();
    target[i] = down;
    const double minus = evaluate();
    target[i] = original;
    report.numeric[i] = (plus - minus) / (static_cast<double>(up) - static_cast<double>(down));
    const double err = std::abs(report.analytic[i] - report.numeric[i]) / std::max(1.0, std::abs(report.numeric[i]));
    report.max_rel_error = std::max(report.max_rel_error, err);
  }
  return report;
}

/// Maximum relative error between the analytic and central-difference gradient of
/// `f` at `x`. `f` receives a graph and the node bound to x.
template <typename T>
double finite_diff_check(const std::function<Var(Graph<T>&, Var)>& f, const Tensor<T>& x, double eps) {
  Tensor<T> point = x;
  point.clear_grad();
  std::function<Var(Graph<T>&)> bound = [&](Graph<T>& g) { return f(g, g.parameter(point)); };
  return finite_diff_report<T>(bound, point, eps).max_rel_error;
}

}  // namespace leaffine
