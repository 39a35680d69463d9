#pragma once

#include <functional>
#include <set>
#include <sstream>
#include <string>

#include "zsp/adam.hpp"

namespace zsp {

struct GradCheckReport {
  double tolerance = 0.0;
  double max_rel_error = 0.0;
  std::string worst_coordinate;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates_checked = 0;
  bool passed = false;

  std::string summary() const {
    std::ostringstream os;
    os << (passed ? "PASS" : "FAIL") << " max_rel_error=" << max_rel_error
       << " tolerance=" << tolerance << " coordinates=" << coordinates_checked
       << " worst=" << worst_coordinate << " analytic=" << worst_analytic
       << " numeric=" << worst_numeric;
    return os.str();
  }
};

struct GradCheckOptions {
  std::size_t coordinates = 200;
  std::uint64_t seed = 0;
  double step = 1e-5;  // scaled by max(1, |theta|)
  /// Denominator floor for the relative error, so coordinates whose true
  /// gradient is ~0 are judged on absolute error instead.
  double abs_floor = 1e-7;
};

/// Compares reverse-mode gradients of `loss_fn` against central differences
/// on a seeded sample of coordinates. Every parameter contributes at least
/// one coordinate when the budget allows. Parameter values are restored.
inline GradCheckReport gradient_check(const std::function<Tensor()>& loss_fn, ParamStore& point,
                                      double tolerance, const GradCheckOptions& opt = {}) {
  GradCheckReport report;
  report.tolerance = tolerance;

  point.zero_grad();
  Tensor loss = loss_fn();
  if (!std::isfinite(loss.item())) throw ContractError("gradient_check: non-finite loss at the base point");
  backward(loss);

  struct Coord {
    std::size_t entry, index;
  };
  std::vector<Coord> coords;
  auto& entries = point.entries();
  std::size_t total = 0;
  for (const auto& e : entries) total += e.tensor.size();
  Rng rng(opt.seed);
  std::set<std::pair<std::size_t, std::size_t>> chosen;
  const std::size_t budget = std::min(opt.coordinates, total);
  if (budget >= entries.size())
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const std::size_t idx = rng.below(entries[i].tensor.size());
      chosen.insert({i, idx});
      coords.push_back({i, idx});
    }
  while (coords.size() < budget) {
    std::size_t flat = rng.below(total), e = 0;
    while (flat >= entries[e].tensor.size()) flat -= entries[e++].tensor.size();
    if (chosen.insert({e, flat}).second) coords.push_back({e, flat});
  }

  std::vector<std::vector<double>> analytic;
  for (const auto& e : entries) {
    if (e.tensor.has_grad())
      analytic.emplace_back(e.tensor.grad().begin(), e.tensor.grad().end());
    else
      analytic.emplace_back(e.tensor.size(), 0.0);
  }
  point.zero_grad();

  for (const Coord& c : coords) {
    auto& entry = entries[c.entry];
    auto vals = entry.tensor.mutable_values();
    const double theta = vals[c.index];
    const double h = opt.step * std::max(1.0, std::abs(theta));
    const std::string name = entry.name + "[" + std::to_string(c.index) + "]";
    auto eval = [&](double x) {
      vals[c.index] = x;
      double f;
      try {
        f = loss_fn().item();
      } catch (const ContractError& err) {
        vals[c.index] = theta;
        throw ContractError("gradient_check: " + std::string(err.what()) + " at coordinate " + name);
      }
      if (!std::isfinite(f)) {
        vals[c.index] = theta;
        throw ContractError("gradient_check: non-finite loss at coordinate " + name);
      }
      return f;
    };
    const double fp = eval(theta + h);
    const double fm = eval(theta - h);
    vals[c.index] = theta;
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = analytic[c.entry][c.index];
    const double denom = std::max({std::abs(a), std::abs(numeric), opt.abs_floor});
    const double rel = std::abs(a - numeric) / denom;
    if (report.coordinates_checked == 0 || rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_coordinate = name;
      report.worst_analytic = a;
      report.worst_numeric = numeric;
    }
    ++report.coordinates_checked;
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

}  // namespace zsp
