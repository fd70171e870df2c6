#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "rulespa/market_data.hpp"

namespace rulespa {

enum class Family : std::uint8_t {
  Filter,
  MovingAverage,
  SupportResistance,
  ChannelBreakout,
  ObvAverage,
};

inline constexpr std::array<Family, 5> kFamilies = {Family::Filter, Family::MovingAverage,
                                                    Family::SupportResistance,
                                                    Family::ChannelBreakout, Family::ObvAverage};

std::string_view to_string(Family family) noexcept;

/// Parameter grids of the five rule families.
namespace grids {
inline constexpr std::array<double, 24> filter_x = {0.005, 0.01, 0.015, 0.02, 0.025, 0.03, 0.035, 0.04,
                                                    0.045, 0.05, 0.06,  0.07, 0.08,  0.09, 0.1,   0.12,
                                                    0.14,  0.16, 0.18,  0.2,  0.25,  0.3,  0.4,   0.5};
inline constexpr std::array<double, 12> filter_b = {0.005, 0.01, 0.015, 0.02, 0.025, 0.03,
                                                    0.04,  0.05, 0.075, 0.1,  0.15,  0.2};
inline constexpr std::array<int, 8> filter_e = {1, 2, 3, 4, 5, 10, 15, 20};
inline constexpr std::array<int, 4> holding = {5, 10, 25, 50};

inline constexpr std::array<int, 15> ma_n = {2, 5, 10, 15, 20, 25, 30, 40, 50, 75, 100, 125, 150, 200, 250};
inline constexpr std::array<double, 8> band = {0.001, 0.005, 0.01, 0.015, 0.02, 0.03, 0.04, 0.05};
inline constexpr std::array<int, 4> delay = {2, 3, 4, 5};
inline constexpr std::array<int, 3> brock_short = {1, 2, 5};
inline constexpr std::array<int, 3> brock_long = {50, 150, 200};

inline constexpr std::array<int, 10> sr_n = {5, 10, 15, 20, 25, 50, 100, 150, 200, 250};
inline constexpr std::array<int, 10> sr_e = {2, 3, 4, 5, 10, 20, 25, 50, 100, 200};

inline constexpr std::array<int, 10> channel_n = {5, 10, 15, 20, 25, 50, 100, 150, 200, 250};
inline constexpr std::array<double, 8> channel_x = {0.005, 0.01, 0.02, 0.03, 0.05, 0.075, 0.1, 0.15};
}  // namespace grids

/// Fama-Blume x-percent filter. At most one of b, e, c is set in the
/// enumerated universe; each is a distinct rule variant.
struct FilterRule {
  double x = 0.0;
  std::optional<double> b;  // liquidation change
  std::optional<int> e;     // subsequent-extremum lookback
  std::optional<int> c;     // holding days
  friend bool operator==(const FilterRule&, const FilterRule&) = default;
};

/// Short average vs long average of closes. short_n = 1 compares the close
/// itself with the long average.
struct MovingAverageRule {
  int short_n = 1;
  int long_n = 2;
  std::optional<double> band;
  std::optional<int> delay;
  std::optional<int> hold;
  friend bool operator==(const MovingAverageRule&, const MovingAverageRule&) = default;
};

struct SupportResistanceRule {
  enum class Reference : std::uint8_t {
    Window,     // max/min close over the previous `lookback` days
    Extremum,   // most recent close beyond its `lookback` predecessors
  };
  Reference reference = Reference::Window;
  int lookback = 5;
  std::optional<double> band;
  std::optional<int> delay;
  std::optional<int> hold;
  friend bool operator==(const SupportResistanceRule&, const SupportResistanceRule&) = default;
};

struct ChannelBreakoutRule {
  int lookback = 5;
  double width = 0.01;
  std::optional<double> band;
  std::optional<int> hold;
  friend bool operator==(const ChannelBreakoutRule&, const ChannelBreakoutRule&) = default;
};

/// Moving-average rule applied to on-balance volume instead of price.
struct ObvAverageRule {
  int short_n = 1;
  int long_n = 2;
  std::optional<double> band;
  std::optional<int> delay;
  std::optional<int> hold;
  friend bool operator==(const ObvAverageRule&, const ObvAverageRule&) = default;
};

using RuleSpec = std::variant<FilterRule, MovingAverageRule, SupportResistanceRule,
                              ChannelBreakoutRule, ObvAverageRule>;

Family family_of(const RuleSpec& rule) noexcept;

/// Human-readable label, e.g. "MA(short=2,long=20)".
std::string describe(const RuleSpec& rule);

/// Minimum number of observations generate_positions() accepts.
std::size_t min_observations(const RuleSpec& rule) noexcept;

/// Throws ErrorCode::InvalidArgument when a parameter is outside its domain
/// (non-positive day counts, short >= long, fractions outside (0, 1)).
void validate(const RuleSpec& rule);

/// True when every parameter value is drawn from the family's grid.
bool on_grid(const RuleSpec& rule) noexcept;

/// The 7846-rule universe: families in order Filter, MovingAverage,
/// SupportResistance, ChannelBreakout, ObvAverage; lexicographic parameter
/// order within a family (an absent optional sorts before any value).
const std::vector<RuleSpec>& enumerate_universe();

struct FamilyCount {
  Family family;
  std::size_t count;
};
std::array<FamilyCount, 5> family_counts(std::span<const RuleSpec> rules) noexcept;

/// One row per rule: id,family,x,b,e,c,d,n,short,long,width,reference,label.
void write_universe_csv(std::span<const RuleSpec> rules, std::ostream& out);

using Position = std::int8_t;

/// values[t] is the position held from close t to close t+1, decided from
/// data with index <= t. The vector is aligned to the PriceSeries dates.
struct PositionSeries {
  std::vector<Position> values;
  friend bool operator==(const PositionSeries&, const PositionSeries&) = default;
};

struct PositionOptions {
  /// Channel extremes from the high/low columns instead of closes.
  bool channel_uses_high_low = false;
};

PositionSeries generate_positions(const RuleSpec& rule, const PriceSeries& prices,
                                  const PositionOptions& options = {});

/// OBV[0] = volume[0]; adds (subtracts) the day's volume on up (down) closes.
std::vector<double> compute_obv(const PriceSeries& prices);

enum class ExtremumDirection { High, Low };

/// For each day, the most recent close at or before it that is strictly
/// greater (High) or less (Low) than each of its own `e` preceding closes.
std::vector<std::optional<double>> subsequent_extremum(std::span<const double> closes, int e,
                                                       ExtremumDirection direction);

}  // namespace rulespa
