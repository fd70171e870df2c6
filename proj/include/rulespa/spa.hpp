#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "rulespa/backtest.hpp"
#include "rulespa/random.hpp"

namespace rulespa {

inline constexpr std::size_t kDefaultReplicates = 500;
inline constexpr double kVarianceFloor = 1e-12;  // relative to gamma_0
inline constexpr std::array<double, 7> kDefaultQGrid = {0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0};

struct BootstrapParams {
  double q = 0.1;
  std::size_t replicates = kDefaultReplicates;
  std::uint64_t seed = 0;

  /// Throws ErrorCode::InvalidArgument unless 0 < q <= 1 and replicates >= 1.
  void validate() const;
};

/// Recentering of the bootstrap statistic. Lower uses max(x, 0), Upper uses
/// x, Consistent zeroes means far below zero; p_lower <= p_consistent <= p_upper.
enum class Recentering : std::uint8_t { Lower, Consistent, Upper };
inline constexpr std::array<Recentering, 3> kRecenterings = {Recentering::Lower, Recentering::Consistent,
                                                             Recentering::Upper};
std::string_view to_string(Recentering r) noexcept;

struct SpaResult {
  double q = 0.0;
  double statistic = 0.0;  // T_l
  double p_lower = 0.0;
  double p_consistent = 0.0;
  double p_upper = 0.0;
  std::size_t replicates = 0;
  std::uint64_t seed = 0;
  std::size_t days = 0;
  /// omega_k per column (0 for excluded columns).
  std::vector<double> omegas;
  /// Columns left out of every maximum: zero variance or flagged degenerate.
  std::vector<std::size_t> excluded;
  /// No column competes, or T_l = 0 with every replicate statistic zero.
  bool degenerate = false;

  [[nodiscard]] double p(Recentering r) const noexcept {
    return r == Recentering::Lower ? p_lower : r == Recentering::Consistent ? p_consistent : p_upper;
  }
};

struct SpaOptions {
  unsigned workers = 0;
  double variance_floor = kVarianceFloor;
};

/// Stationary bootstrap over the index range [first, last]: each step draws a
/// fresh uniform index with probability q, otherwise takes the successor of
/// the previous index (wrapping from last to first).
std::vector<std::size_t> stationary_bootstrap_indices(std::size_t first, std::size_t last, double q, Rng& rng);

/// kappa(n, t) = ((n - t) / n)(1 - q)^t + (t / n)(1 - q)^(n - t).
double kernel_weight(std::size_t n, std::size_t lag, double q);

/// Divide-by-n sample autocovariances for lags 0..n-1 (FFT based).
std::vector<double> autocovariances(std::span<const double> x);

/// gamma_0 + 2 sum_t kappa(n, t) gamma_t, floored at floor * gamma_0 when the
/// weighted sum is not above that level. Returns 0 for a constant column.
double long_run_variance(std::span<const double> column, double q, double floor = kVarianceFloor);

/// Long-run variance for several q from one autocovariance pass.
std::vector<double> long_run_variances(std::span<const double> column, std::span<const double> qs,
                                       double floor = kVarianceFloor);

/// max(max_k sqrt(n) mean_k / omega_k, 0) over columns not listed in `excluded`.
double spa_statistic(std::span<const double> means, std::span<const double> omegas, std::size_t n,
                     std::span<const std::size_t> excluded = {});

/// g(mean) for one recentering; n >= 3.
double recenter(double mean, double omega, std::size_t n, Recentering variant);

/// T_l* for one resampled index sequence (0-based matrix rows), applied
/// to every column.
double bootstrap_statistic(const PerformanceMatrix& m, std::span<const std::size_t> indices,
                           std::span<const double> means, std::span<const double> omegas, Recentering variant,
                           std::span<const std::size_t> excluded = {});

SpaResult spa_pvalue(const PerformanceMatrix& m, const BootstrapParams& params, const SpaOptions& options = {});

/// One result per q; the replicate streams of each q depend on (seed, q) only.
std::vector<SpaResult> spa_sweep(const PerformanceMatrix& m, std::span<const double> q_grid, std::size_t replicates,
                                 std::uint64_t seed, const SpaOptions& options = {});

struct CheckpointResult {
  std::size_t rules = 0;
  SpaResult result;
};

/// SPA results for the leading `checkpoints[i]` columns of m, all computed
/// from the same replicate index sequences.
std::vector<CheckpointResult> spa_checkpoints(const PerformanceMatrix& m, const BootstrapParams& params,
                                              std::span<const std::size_t> checkpoints,
                                              const SpaOptions& options = {});

/// {q, T_l, p_lower, p_consistent, p_upper, B, seed}
void write_spa_csv(std::span<const SpaResult> results, std::ostream& out);
void write_spa_json(std::span<const SpaResult> results, std::ostream& out);

}  // namespace rulespa
