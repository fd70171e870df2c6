#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rulespa {

/// Calendar date stored as days since 1970-01-01.
class Date {
 public:
  constexpr Date() = default;
  static Date from_ymd(int year, unsigned month, unsigned day);
  static constexpr Date from_days(std::int32_t days) noexcept { return Date(days); }
  /// Accepts `YYYY-MM-DD` and the compact `YYYYMMDD`.
  static Date parse(std::string_view text);

  [[nodiscard]] constexpr std::int32_t days() const noexcept { return days_; }
  [[nodiscard]] int year() const noexcept;
  [[nodiscard]] std::string iso() const;      // 2005-04-08
  [[nodiscard]] std::string compact() const;  // 20050408

  friend constexpr auto operator<=>(Date, Date) = default;

 private:
  explicit constexpr Date(std::int32_t days) : days_(days) {}
  std::int32_t days_ = 0;
};

/// Column names of a vendor CSV file. Empty optional names mean "absent".
struct ColumnMapping {
  std::string date = "date";
  std::string close = "close";
  std::optional<std::string> open = "open";
  std::optional<std::string> high = "high";
  std::optional<std::string> low = "low";
  std::optional<std::string> volume = "volume";
};

/// Daily OHLCV observations of one index. Construction validates ordering,
/// positivity and the OHLC envelope; an instance is immutable afterwards.
class PriceSeries {
 public:
  PriceSeries(std::vector<Date> dates, std::vector<double> close,
              std::optional<std::vector<double>> open = std::nullopt,
              std::optional<std::vector<double>> high = std::nullopt,
              std::optional<std::vector<double>> low = std::nullopt,
              std::optional<std::vector<double>> volume = std::nullopt);

  [[nodiscard]] std::size_t size() const noexcept { return dates_.size(); }
  [[nodiscard]] std::span<const Date> dates() const noexcept { return dates_; }
  [[nodiscard]] std::span<const double> close() const noexcept { return close_; }

  [[nodiscard]] bool has_open() const noexcept { return open_.has_value(); }
  [[nodiscard]] bool has_high_low() const noexcept { return high_.has_value() && low_.has_value(); }
  [[nodiscard]] bool has_volume() const noexcept { return volume_.has_value(); }

  // Throw ErrorCode::Validation when the column is absent.
  [[nodiscard]] std::span<const double> open() const;
  [[nodiscard]] std::span<const double> high() const;
  [[nodiscard]] std::span<const double> low() const;
  [[nodiscard]] std::span<const double> volume() const;

  /// Rows [first, last) as a new series.
  [[nodiscard]] PriceSeries rows(std::size_t first, std::size_t last) const;

  friend bool operator==(const PriceSeries&, const PriceSeries&) = default;

 private:
  std::vector<Date> dates_;
  std::vector<double> close_;
  std::optional<std::vector<double>> open_;
  std::optional<std::vector<double>> high_;
  std::optional<std::vector<double>> low_;
  std::optional<std::vector<double>> volume_;
};

enum class ReturnKind { Simple, Log };

/// values[j] is the return from close j to close j+1 and is dated at j+1.
struct ReturnSeries {
  std::vector<Date> dates;
  std::vector<double> values;
  ReturnKind kind = ReturnKind::Simple;
};

struct DescriptiveStats {
  std::size_t count = 0;
  double max_return = 0.0;
  double min_return = 0.0;
  double skewness = 0.0;
  double kurtosis = 0.0;  // non-excess, normal = 3
};

PriceSeries load_csv(const std::filesystem::path& path, const ColumnMapping& columns = {});
PriceSeries parse_csv(std::string_view text, const ColumnMapping& columns = {});
void write_csv(const PriceSeries& series, const std::filesystem::path& path);
std::string to_csv(const PriceSeries& series);

ReturnSeries simple_returns(const PriceSeries& prices);
ReturnSeries log_returns(const PriceSeries& prices);

DescriptiveStats descriptive_stats(std::span<const double> returns);
inline DescriptiveStats descriptive_stats(const ReturnSeries& r) { return descriptive_stats(r.values); }

/// Rows with start <= date <= end.
PriceSeries slice_period(const PriceSeries& prices, Date start, Date end);

/// Stable 64-bit content hash (FNV-1a over the canonical CSV rendering).
std::uint64_t content_hash(const PriceSeries& prices);

struct SyntheticSpec {
  std::size_t days = 1500;
  double start_price = 1000.0;
  double drift = 0.0002;       // per day, log scale
  double volatility = 0.015;   // per day
  double autocorrelation = 0.05;
  double mean_volume = 1.0e8;
  std::uint64_t seed = 1;
  Date start = Date::from_ymd(2000, 1, 3);
};

/// Seeded OHLCV random walk on business days, used by demos and tests.
PriceSeries synthetic_series(const SyntheticSpec& spec);

}  // namespace rulespa
