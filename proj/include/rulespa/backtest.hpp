#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "rulespa/market_data.hpp"
#include "rulespa/rules.hpp"

namespace rulespa {

inline constexpr double kTradingDaysPerYear = 252.0;
inline constexpr std::size_t kDefaultWarmup = 250;

enum class Benchmark : std::uint8_t { OutOfMarket, BuyAndHold };
enum class PerformanceKind : std::uint8_t { Return, Sharpe };

std::string_view to_string(Benchmark b) noexcept;
std::string_view to_string(PerformanceKind k) noexcept;

/// Daily risk-free rate: a constant, or one value per return of the series
/// being backtested.
struct RiskFree {
  double constant = 0.0;
  std::vector<double> daily;

  [[nodiscard]] double at(std::size_t j) const { return daily.empty() ? constant : daily.at(j); }
};

/// f^r = ln(1 + r I) - ln(1 + r I0), elementwise over aligned spans.
/// Throws ErrorCode::Degenerate when a log argument is not positive.
std::vector<double> return_performance(std::span<const double> returns, std::span<const Position> positions,
                                       Benchmark benchmark);

struct SharpeColumn {
  std::vector<double> values;
  /// Rule return series has zero variance; values are all zero.
  bool degenerate = false;
};

/// f^s = (r_k - rf) / sigma_k - (r_0 - rf) / sigma_0 with population standard
/// deviations over the given window. With the out-of-market benchmark the
/// second term is dropped.
SharpeColumn sharpe_performance(std::span<const double> returns, std::span<const Position> positions,
                                Benchmark benchmark, std::span<const double> risk_free);

/// n x l matrix of daily relative performance over the scored window
/// (rows are days, columns are rules); stored column-major.
class PerformanceMatrix {
 public:
  PerformanceMatrix() = default;
  PerformanceMatrix(std::size_t days, std::size_t rules, std::size_t warmup, PerformanceKind kind);

  /// Builds from full-length daily columns, dropping the first warmup - 1
  /// entries of each (the pre-scoring days).
  static PerformanceMatrix from_daily_series(std::span<const std::vector<double>> columns, std::size_t warmup,
                                             PerformanceKind kind);

  [[nodiscard]] std::size_t days() const noexcept { return days_; }
  [[nodiscard]] std::size_t rules() const noexcept { return rules_; }
  [[nodiscard]] std::size_t warmup() const noexcept { return warmup_; }
  [[nodiscard]] PerformanceKind kind() const noexcept { return kind_; }

  [[nodiscard]] std::span<const double> column(std::size_t k) const {
    return {values_.data() + k * days_, days_};
  }
  [[nodiscard]] std::span<double> column(std::size_t k) { return {values_.data() + k * days_, days_}; }
  [[nodiscard]] double operator()(std::size_t t, std::size_t k) const { return values_[k * days_ + t]; }
  double& operator()(std::size_t t, std::size_t k) { return values_[k * days_ + t]; }

  [[nodiscard]] bool degenerate(std::size_t k) const { return degenerate_[k] != 0; }
  void set_degenerate(std::size_t k, bool flag) { degenerate_[k] = flag ? 1 : 0; }
  [[nodiscard]] std::size_t degenerate_count() const noexcept;

  /// Universe ids of the columns (0..l-1 unless the matrix is a subset).
  [[nodiscard]] std::span<const std::size_t> rule_ids() const noexcept { return rule_ids_; }
  void set_rule_ids(std::vector<std::size_t> ids);

  /// First `count` columns.
  [[nodiscard]] PerformanceMatrix leading_columns(std::size_t count) const;

  friend bool operator==(const PerformanceMatrix&, const PerformanceMatrix&) = default;

 private:
  std::size_t days_ = 0;
  std::size_t rules_ = 0;
  std::size_t warmup_ = kDefaultWarmup;
  PerformanceKind kind_ = PerformanceKind::Return;
  std::vector<double> values_;
  std::vector<std::uint8_t> degenerate_;
  std::vector<std::size_t> rule_ids_;
};

struct BacktestOptions {
  Benchmark benchmark = Benchmark::OutOfMarket;
  bool allow_short = true;
  /// The position decided at close R-1 (0-based) earns the first scored
  /// return, so n = N - R for a series of N closes.
  std::size_t warmup = kDefaultWarmup;
  RiskFree risk_free;
  PositionOptions positions;
  unsigned workers = 0;  // 0 = hardware concurrency
};

/// Column k holds the scored performance of rules[k] on `prices`.
PerformanceMatrix build_performance_matrix(const PriceSeries& prices, std::span<const RuleSpec> rules,
                                           PerformanceKind kind, const BacktestOptions& options = {});

struct RulePerformance {
  std::size_t rule_id = 0;
  double mean = 0.0;        // mean daily performance
  double annualized = 0.0;  // 252 x mean for returns, mean for Sharpe
};

std::vector<RulePerformance> mean_performance(const PerformanceMatrix& m);

/// Maximal mean; ties go to the lowest rule id.
RulePerformance best_rule(std::span<const RulePerformance> perfs);

/// Element i is the maximum mean over rules 0..i.
std::vector<double> max_trajectory(std::span<const RulePerformance> perfs);

// Binary cache: magic "RSPAPMAT", u32 version, u64 n, u64 l, u64 R, u32 kind,
// then n x l little-endian float64 in row-major order.
void save_matrix(const PerformanceMatrix& m, const std::filesystem::path& path);
PerformanceMatrix load_matrix(const std::filesystem::path& path);
void write_matrix_csv(const PerformanceMatrix& m, std::ostream& out);

}  // namespace rulespa
