#include "fedil/convergence.hpp"

#include <algorithm>
#include <cmath>

#include "fedil/errors.hpp"

namespace fedil {

ConvergenceTrace::ConvergenceTrace(std::size_t window) : window_(window == 0 ? 1 : window) {}

void ConvergenceTrace::record(std::span<const double> delta) {
  double s = 0.0;
  for (double x : delta) s += x * x;
  record_norm(std::sqrt(s));
}

void ConvergenceTrace::record_norm(double norm) {
  if (!(norm >= 0.0)) throw InputError("update norm must be non-negative");
  if (norms_.empty() || norms_.back() == 0.0) {
    ratios_.push_back(std::nullopt);
  } else {
    ratios_.push_back(norm / norms_.back());
  }
  norms_.push_back(norm);
  const std::size_t n = norms_.size();
  const std::size_t w = std::min(window_, n);
  double sum = 0.0;
  for (std::size_t k = n - w; k < n; ++k) sum += norms_[k];
  moving_avg_.push_back(sum / static_cast<double>(w));
}

std::vector<double> moving_average(std::span<const double> series, std::size_t window) {
  if (window == 0) throw InputError("moving average window must be positive");
  std::vector<double> out;
  out.reserve(series.size());
  for (std::size_t n = 1; n <= series.size(); ++n) {
    const std::size_t w = std::min(window, n);
    double sum = 0.0;
    for (std::size_t k = n - w; k < n; ++k) sum += series[k];
    out.push_back(sum / static_cast<double>(w));
  }
  return out;
}

std::optional<ContractionVerdict> contraction_verdict(std::span<const double> norms, std::size_t window) {
  if (window < 2 || norms.size() < window) return std::nullopt;
  const std::vector<double> avg = moving_average(norms, window);
  const std::size_t n = norms.size();
  const std::size_t first = n - window;

  ContractionVerdict v;
  bool non_increasing = true;
  for (std::size_t k = std::max<std::size_t>(first, 1); k < n; ++k) {
    if (avg[k] > avg[k - 1]) non_increasing = false;
  }
  for (std::size_t k = std::max<std::size_t>(first, 1); k < n; ++k) {
    if (norms[k - 1] == 0.0) continue;
    const double q = norms[k] / norms[k - 1];
    v.q_max = v.q_max ? std::max(*v.q_max, q) : q;
  }
  v.contracting = non_increasing && (!v.q_max || *v.q_max < 1.0);
  return v;
}

std::optional<ContractionVerdict> contraction_verdict(const ConvergenceTrace& trace, std::size_t window) {
  return contraction_verdict(trace.norms(), window);
}

BanachResult banach_demo(double a, double b, double x0, std::size_t iterations) {
  if (!(std::abs(a) < 1.0)) throw PreconditionError("affine map is not a contraction: |a| >= 1");
  BanachResult r;
  r.fixed_point = b / (1.0 - a);
  r.trajectory.reserve(iterations + 1);
  r.trajectory.push_back(x0);
  double x = x0;
  for (std::size_t k = 0; k < iterations; ++k) {
    x = a * x + b;
    r.trajectory.push_back(x);
  }
  for (std::size_t k = 2; k < r.trajectory.size(); ++k) {
    const double prev = std::abs(r.trajectory[k - 1] - r.trajectory[k - 2]);
    if (prev == 0.0) continue;
    r.step_ratios.push_back(std::abs(r.trajectory[k] - r.trajectory[k - 1]) / prev);
  }
  r.estimate = x;
  return r;
}

}  // namespace fedil
