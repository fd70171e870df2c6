#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rulespa/backtest.hpp"
#include "rulespa/market_data.hpp"
#include "rulespa/spa.hpp"

namespace rulespa {

struct Period {
  std::string label;  // empty: derived from the clipped bounds
  Date start;
  Date end;
};

/// "YYYYMMDD-YYYYMMDD".
std::string period_label(Date start, Date end);

/// Parses "YYYYMMDD-YYYYMMDD" or "YYYY-MM-DD:YYYY-MM-DD".
Period parse_period(std::string_view text);

struct RollingSpec {
  int window_years = 5;
  int step_years = 1;
};

/// Parses "5y:1y" (the "y" suffixes are optional).
RollingSpec parse_rolling(std::string_view text);

/// First window starts at `first`; later windows start on January 1 of every
/// step_years-th following year. Each ends on December 31 of its
/// window_years-th calendar year, truncated at `last`. Windows whose nominal
/// end year lies past year(last) are dropped.
std::vector<Period> rolling_windows(Date first, Date last, int window_years, int step_years);

struct ExperimentConfig {
  std::filesystem::path data;
  ColumnMapping columns;
  std::vector<Period> periods;
  std::optional<RollingSpec> rolling;
  std::vector<PerformanceKind> kinds = {PerformanceKind::Return};
  Benchmark benchmark = Benchmark::OutOfMarket;
  bool allow_short = true;
  double risk_free = 0.0;  // daily rate
  std::vector<double> q_grid{kDefaultQGrid.begin(), kDefaultQGrid.end()};
  std::size_t replicates = kDefaultReplicates;
  std::uint64_t seed = 0;
  std::size_t warmup = kDefaultWarmup;
  bool channel_uses_high_low = false;
  /// P-value trajectory at trajectory_q, sampled every
  /// trajectory_step rules (0 disables).
  double trajectory_q = 0.1;
  std::size_t trajectory_step = 10;
  std::filesystem::path output_dir = "rulespa_out";
  std::filesystem::path cache_dir;  // empty: no cache
  unsigned workers = 0;

  /// Throws ErrorCode::Validation on inconsistent settings.
  void validate() const;
};

ExperimentConfig parse_config(std::string_view json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const ExperimentConfig& cfg);

/// Explicit periods followed by rolling windows over the data range; the
/// full data range when neither is given.
std::vector<Period> resolve_periods(const ExperimentConfig& cfg, const PriceSeries& prices);

struct ReportRow {
  std::string period;
  PerformanceKind kind = PerformanceKind::Return;
  std::size_t days = 0;  // scored days n
  std::size_t best_rule = 0;
  std::string best_rule_label;
  double max_statistic = 0.0;  // annualized return or mean Sharpe statistic
  std::vector<SpaResult> spa;  // one per q, in grid order
  bool degenerate = false;
  std::string error;  // non-empty when the period could not be evaluated
};

/// "***" for p <= 0.01, "**" for p <= 0.05, "*" for p <= 0.10.
std::string_view significance_stars(double p) noexcept;
/// Two decimals plus stars, e.g. "0.00***".
std::string format_pvalue(double p);

struct PeriodOutcome {
  ReportRow row;
  std::vector<RulePerformance> perfs;
  std::vector<bool> degenerate_rules;
  std::vector<CheckpointResult> trajectory;
};

std::vector<std::size_t> trajectory_checkpoints(std::size_t rules, std::size_t step);

/// SPA p-values on the leading checkpoints[i] columns of m.
std::vector<CheckpointResult> pvalue_trajectory(const PerformanceMatrix& m, const BootstrapParams& params,
                                                std::span<const std::size_t> checkpoints,
                                                const SpaOptions& options = {});

using ProgressFn = std::function<void(std::string_view)>;

/// Periods run in order; a period too short for the warmup and the longest
/// rule lookback yields a row with `error` set instead of aborting the run.
std::vector<PeriodOutcome> run_experiment(const ExperimentConfig& cfg, const PriceSeries& prices,
                                          const ProgressFn& progress = {});
std::vector<PeriodOutcome> run_experiment(const ExperimentConfig& cfg, const ProgressFn& progress = {});

/// Backtest of the whole universe for one period, reusing cfg.cache_dir.
PerformanceMatrix period_matrix(const ExperimentConfig& cfg, const PriceSeries& period_prices, PerformanceKind kind,
                                std::uint64_t data_hash);

std::string matrix_cache_key(std::uint64_t data_hash, const Period& period, PerformanceKind kind,
                             const ExperimentConfig& cfg);

enum class ReportFormat : std::uint8_t { Table, Csv };

void write_report(std::span<const ReportRow> rows, std::span<const double> q_grid, ReportFormat format,
                  std::ostream& out);
/// report.txt and report.csv under out_dir.
void emit_report(std::span<const ReportRow> rows, std::span<const double> q_grid, const std::filesystem::path& out_dir);

/// Per period and kind: scatter_*.csv (rule, statistic), running_max_*.csv
/// and trajectory_*.csv (rules, p_lower, p_consistent, p_upper).
void emit_figure_data(std::span<const PeriodOutcome> outcomes, const std::filesystem::path& out_dir);

// Synthetic size and power calibration.

struct CalibrationSpec {
  std::size_t rules = 50;
  std::size_t days = 500;
  std::size_t replicates = 500;
  std::size_t trials = 200;
  double q = 0.1;
  double level = 0.10;
  /// Mean of column 0 in units of omega / sqrt(n); 0 for the size study.
  double planted_effect = 0.0;
  /// AR(1) coefficient of every column (0 gives iid draws).
  double autocorrelation = 0.0;
  std::uint64_t seed = 0;
  unsigned workers = 0;
};

struct CalibrationResult {
  std::size_t trials = 0;
  std::size_t rejections = 0;
  double rate = 0.0;
  std::vector<double> p_values;  // consistent p per trial
};

/// Zero-mean unit-variance Gaussian matrix, column 0 shifted by
/// planted_effect * omega / sqrt(n) where omega is the true long-run SD.
PerformanceMatrix gaussian_matrix(std::size_t days, std::size_t rules, double planted_effect, double autocorrelation,
                                  std::uint64_t seed);

/// Rejects when the consistent p-value is at most `level`.
CalibrationResult calibrate(const CalibrationSpec& spec);

}  // namespace rulespa
