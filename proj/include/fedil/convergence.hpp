#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace fedil {

/// Append-only history of ||delta theta(t)|| with derived quantities.
class ConvergenceTrace {
 public:
  explicit ConvergenceTrace(std::size_t window = 20);

  /// Records the Euclidean norm of an aggregated update.
  void record(std::span<const double> delta);
  void record_norm(double norm);

  std::size_t size() const noexcept { return norms_.size(); }
  std::size_t window() const noexcept { return window_; }
  const std::vector<double>& norms() const noexcept { return norms_; }
  /// Trailing mean over the last min(window, t) norms, one per round.
  const std::vector<double>& moving_average() const noexcept { return moving_avg_; }
  /// norm(t) / norm(t-1); absent for the first round and zero denominators.
  const std::vector<std::optional<double>>& ratios() const noexcept { return ratios_; }

 private:
  std::size_t window_;
  std::vector<double> norms_;
  std::vector<double> moving_avg_;
  std::vector<std::optional<double>> ratios_;
};

struct ContractionVerdict {
  bool contracting = false;
  std::optional<double> q_max;
};

/// Discrete contraction test over the trailing `window` rounds: the
/// window-length moving average must be non-increasing there and every
/// defined successive ratio must stay below 1. Absent when fewer than
/// `window` rounds are recorded or window < 2.
std::optional<ContractionVerdict> contraction_verdict(std::span<const double> norms, std::size_t window);
std::optional<ContractionVerdict> contraction_verdict(const ConvergenceTrace& trace, std::size_t window);

/// Trailing moving average of a series with the given window.
std::vector<double> moving_average(std::span<const double> series, std::size_t window);

struct BanachResult {
  std::vector<double> trajectory;  // x_0, x_1, ..., x_n
  double fixed_point = 0.0;        // analytic b / (1 - a)
  double estimate = 0.0;           // last iterate
  std::vector<double> step_ratios; // |x_{k+1} - x_k| / |x_k - x_{k-1}| where defined
};

/// Iterates x -> a*x + b from x0. Throws PreconditionError unless |a| < 1.
BanachResult banach_demo(double a, double b, double x0, std::size_t iterations);

}  // namespace fedil
