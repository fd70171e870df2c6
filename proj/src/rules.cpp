#include "rulespa/rules.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <ostream>
#include <sstream>
#include <tuple>

#include "rulespa/error.hpp"

namespace rulespa {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::string num(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

template <typename T>
void append_opt(std::string& out, const char* name, const std::optional<T>& v) {
  if (v) out += std::string(",") + name + "=" + num(static_cast<double>(*v));
}

template <typename T, std::size_t N>
bool in_grid(const std::array<T, N>& grid, T v) {
  return std::find(grid.begin(), grid.end(), v) != grid.end();
}

template <typename T, std::size_t N>
bool opt_in_grid(const std::array<T, N>& grid, const std::optional<T>& v) {
  return !v || in_grid(grid, *v);
}

}  // namespace

std::string_view to_string(Family family) noexcept {
  switch (family) {
    case Family::Filter: return "Filter";
    case Family::MovingAverage: return "MovingAverage";
    case Family::SupportResistance: return "SupportResistance";
    case Family::ChannelBreakout: return "ChannelBreakout";
    case Family::ObvAverage: return "ObvAverage";
  }
  return "Unknown";
}

Family family_of(const RuleSpec& rule) noexcept { return static_cast<Family>(rule.index()); }

std::string describe(const RuleSpec& rule) {
  return std::visit(
      overloaded{
          [](const FilterRule& r) {
            std::string s = "Filter(x=" + num(r.x);
            append_opt(s, "b", r.b);
            append_opt(s, "e", r.e);
            append_opt(s, "c", r.c);
            return s + ")";
          },
          [](const MovingAverageRule& r) {
            std::string s = "MA(short=" + std::to_string(r.short_n) + ",long=" + std::to_string(r.long_n);
            append_opt(s, "b", r.band);
            append_opt(s, "d", r.delay);
            append_opt(s, "c", r.hold);
            return s + ")";
          },
          [](const SupportResistanceRule& r) {
            std::string s = r.reference == SupportResistanceRule::Reference::Window
                                ? "SR(n=" + std::to_string(r.lookback)
                                : "SR(e=" + std::to_string(r.lookback);
            append_opt(s, "b", r.band);
            append_opt(s, "d", r.delay);
            append_opt(s, "c", r.hold);
            return s + ")";
          },
          [](const ChannelBreakoutRule& r) {
            std::string s = "CB(n=" + std::to_string(r.lookback) + ",x=" + num(r.width);
            append_opt(s, "b", r.band);
            append_opt(s, "c", r.hold);
            return s + ")";
          },
          [](const ObvAverageRule& r) {
            std::string s = "OBV(short=" + std::to_string(r.short_n) + ",long=" + std::to_string(r.long_n);
            append_opt(s, "b", r.band);
            append_opt(s, "d", r.delay);
            append_opt(s, "c", r.hold);
            return s + ")";
          },
      },
      rule);
}

std::size_t min_observations(const RuleSpec& rule) noexcept {
  return std::visit(overloaded{
                        [](const FilterRule& r) -> std::size_t { return r.e ? static_cast<std::size_t>(*r.e) + 1 : 1; },
                        [](const MovingAverageRule& r) -> std::size_t { return static_cast<std::size_t>(r.long_n); },
                        [](const SupportResistanceRule& r) -> std::size_t { return static_cast<std::size_t>(r.lookback) + 1; },
                        [](const ChannelBreakoutRule& r) -> std::size_t { return static_cast<std::size_t>(r.lookback) + 1; },
                        [](const ObvAverageRule& r) -> std::size_t { return static_cast<std::size_t>(r.long_n); },
                    },
                    rule);
}

namespace {

void check_days(const std::optional<int>& v, const char* name) {
  if (v && *v < 1) throw Error(ErrorCode::InvalidArgument, std::string(name) + " must be a positive day count");
}

void check_fraction(double v, const char* name) {
  if (!(v > 0.0 && v < 1.0)) throw Error(ErrorCode::InvalidArgument, std::string(name) + " must lie in (0, 1)");
}

void check_fraction(const std::optional<double>& v, const char* name) {
  if (v) check_fraction(*v, name);
}

void check_averages(int short_n, int long_n) {
  if (short_n < 1 || long_n < 1 || short_n >= long_n) {
    throw Error(ErrorCode::InvalidArgument, "moving averages need 1 <= short < long");
  }
}

}  // namespace

void validate(const RuleSpec& rule) {
  std::visit(overloaded{
                 [](const FilterRule& r) {
                   check_fraction(r.x, "x");
                   check_fraction(r.b, "b");
                   check_days(r.e, "e");
                   check_days(r.c, "c");
                 },
                 [](const MovingAverageRule& r) {
                   check_averages(r.short_n, r.long_n);
                   check_fraction(r.band, "band");
                   check_days(r.delay, "delay");
                   check_days(r.hold, "hold");
                 },
                 [](const SupportResistanceRule& r) {
                   check_days(r.lookback, "lookback");
                   check_fraction(r.band, "band");
                   check_days(r.delay, "delay");
                   check_days(r.hold, "hold");
                 },
                 [](const ChannelBreakoutRule& r) {
                   check_days(r.lookback, "lookback");
                   check_fraction(r.width, "width");
                   check_fraction(r.band, "band");
                   check_days(r.hold, "hold");
                 },
                 [](const ObvAverageRule& r) {
                   check_averages(r.short_n, r.long_n);
                   check_fraction(r.band, "band");
                   check_days(r.delay, "delay");
                   check_days(r.hold, "hold");
                 },
             },
             rule);
}

bool on_grid(const RuleSpec& rule) noexcept {
  using namespace grids;
  auto averages = [](int s, int l, const std::optional<double>& b, const std::optional<int>& c, bool brock_ok) {
    const bool plain = (s == 1 || in_grid(ma_n, s)) && in_grid(ma_n, l) && s < l;
    const bool brock = brock_ok && in_grid(brock_short, s) && in_grid(brock_long, l) && b == 0.01 && c == 10;
    return plain || brock;
  };
  return std::visit(
      overloaded{
          [](const FilterRule& r) {
            return in_grid(filter_x, r.x) && opt_in_grid(filter_b, r.b) && opt_in_grid(filter_e, r.e) &&
                   opt_in_grid(holding, r.c);
          },
          [&](const MovingAverageRule& r) {
            return averages(r.short_n, r.long_n, r.band, r.hold, true) && opt_in_grid(band, r.band) &&
                   opt_in_grid(delay, r.delay) && opt_in_grid(holding, r.hold);
          },
          [](const SupportResistanceRule& r) {
            const bool ref = r.reference == SupportResistanceRule::Reference::Window ? in_grid(sr_n, r.lookback)
                                                                                     : in_grid(sr_e, r.lookback);
            return ref && opt_in_grid(band, r.band) && opt_in_grid(delay, r.delay) && opt_in_grid(holding, r.hold);
          },
          [](const ChannelBreakoutRule& r) {
            return in_grid(channel_n, r.lookback) && in_grid(channel_x, r.width) && opt_in_grid(band, r.band) &&
                   opt_in_grid(holding, r.hold);
          },
          [&](const ObvAverageRule& r) {
            return averages(r.short_n, r.long_n, r.band, r.hold, false) && opt_in_grid(band, r.band) &&
                   opt_in_grid(delay, r.delay) && opt_in_grid(holding, r.hold);
          },
      },
      rule);
}

// ---------------------------------------------------------------------------
// Universe

namespace {

// Every (short, long) averaging pair: a single average against the close
// (short = 1) for each grid length, then each short < long grid pair.
std::vector<std::pair<int, int>> average_pairs() {
  std::vector<std::pair<int, int>> out;
  for (int n : grids::ma_n) out.emplace_back(1, n);
  for (std::size_t i = 0; i < grids::ma_n.size(); ++i) {
    for (std::size_t j = i + 1; j < grids::ma_n.size(); ++j) out.emplace_back(grids::ma_n[i], grids::ma_n[j]);
  }
  return out;
}

// Plain, band-only, delay-only and hold-only variants of one averaging pair.
template <typename Rule>
void push_average_variants(std::vector<RuleSpec>& out, int s, int l) {
  out.push_back(Rule{s, l, std::nullopt, std::nullopt, std::nullopt});
  for (double b : grids::band) out.push_back(Rule{s, l, b, std::nullopt, std::nullopt});
  for (int d : grids::delay) out.push_back(Rule{s, l, std::nullopt, d, std::nullopt});
  for (int c : grids::holding) out.push_back(Rule{s, l, std::nullopt, std::nullopt, c});
}

auto sort_key(const RuleSpec& rule) {
  using Key = std::tuple<int, int, std::optional<double>, std::optional<double>, std::optional<double>,
                         std::optional<double>, std::optional<double>>;
  return std::visit(
      overloaded{
          [](const FilterRule& r) -> Key {
            return {0, 0, r.x, r.b, r.e ? std::optional<double>(*r.e) : std::nullopt,
                    r.c ? std::optional<double>(*r.c) : std::nullopt, std::nullopt};
          },
          [](const MovingAverageRule& r) -> Key {
            return {1, r.short_n, static_cast<double>(r.long_n), r.band,
                    r.delay ? std::optional<double>(*r.delay) : std::nullopt,
                    r.hold ? std::optional<double>(*r.hold) : std::nullopt, std::nullopt};
          },
          [](const SupportResistanceRule& r) -> Key {
            return {2, static_cast<int>(r.reference), static_cast<double>(r.lookback), r.band,
                    r.delay ? std::optional<double>(*r.delay) : std::nullopt,
                    r.hold ? std::optional<double>(*r.hold) : std::nullopt, std::nullopt};
          },
          [](const ChannelBreakoutRule& r) -> Key {
            return {3, r.lookback, r.width, r.band, r.hold ? std::optional<double>(*r.hold) : std::nullopt,
                    std::nullopt, std::nullopt};
          },
          [](const ObvAverageRule& r) -> Key {
            return {4, r.short_n, static_cast<double>(r.long_n), r.band,
                    r.delay ? std::optional<double>(*r.delay) : std::nullopt,
                    r.hold ? std::optional<double>(*r.hold) : std::nullopt, std::nullopt};
          },
      },
      rule);
}

std::vector<RuleSpec> build_universe() {
  using namespace grids;
  std::vector<RuleSpec> out;
  out.reserve(7846);

  // Filter: x alone, x with a smaller liquidation b, x with e, x with c.
  for (double x : filter_x) {
    out.push_back(FilterRule{x, std::nullopt, std::nullopt, std::nullopt});
    for (double b : filter_b) {
      if (b < x) out.push_back(FilterRule{x, b, std::nullopt, std::nullopt});
    }
    for (int e : filter_e) out.push_back(FilterRule{x, std::nullopt, e, std::nullopt});
    for (int c : holding) out.push_back(FilterRule{x, std::nullopt, std::nullopt, c});
  }

  const auto pairs = average_pairs();
  for (auto [s, l] : pairs) push_average_variants<MovingAverageRule>(out, s, l);
  for (int s : brock_short) {
    for (int l : brock_long) out.push_back(MovingAverageRule{s, l, 0.01, std::nullopt, 10});
  }

  // Support/resistance: for each reference, plain, band, hold, band+hold and
  // delay+hold.
  using Ref = SupportResistanceRule::Reference;
  auto sr_variants = [&](Ref ref, int k) {
    out.push_back(SupportResistanceRule{ref, k, std::nullopt, std::nullopt, std::nullopt});
    for (double b : band) out.push_back(SupportResistanceRule{ref, k, b, std::nullopt, std::nullopt});
    for (int c : holding) {
      out.push_back(SupportResistanceRule{ref, k, std::nullopt, std::nullopt, c});
      for (double b : band) out.push_back(SupportResistanceRule{ref, k, b, std::nullopt, c});
      for (int d : delay) out.push_back(SupportResistanceRule{ref, k, std::nullopt, d, c});
    }
  };
  for (int n : sr_n) sr_variants(Ref::Window, n);
  for (int e : sr_e) sr_variants(Ref::Extremum, e);

  // Channel breakouts always carry a holding period; bands narrower than the
  // channel only.
  for (int n : channel_n) {
    for (double x : channel_x) {
      for (int c : holding) {
        out.push_back(ChannelBreakoutRule{n, x, std::nullopt, c});
        for (double b : band) {
          if (b < x) out.push_back(ChannelBreakoutRule{n, x, b, c});
        }
      }
    }
  }

  for (auto [s, l] : pairs) push_average_variants<ObvAverageRule>(out, s, l);

  std::stable_sort(out.begin(), out.end(),
                   [](const RuleSpec& a, const RuleSpec& b) { return sort_key(a) < sort_key(b); });
  return out;
}

}  // namespace

const std::vector<RuleSpec>& enumerate_universe() {
  static const std::vector<RuleSpec> universe = build_universe();
  return universe;
}

std::array<FamilyCount, 5> family_counts(std::span<const RuleSpec> rules) noexcept {
  std::array<FamilyCount, 5> counts{};
  for (std::size_t i = 0; i < kFamilies.size(); ++i) counts[i] = {kFamilies[i], 0};
  for (const auto& r : rules) ++counts[r.index()].count;
  return counts;
}

void write_universe_csv(std::span<const RuleSpec> rules, std::ostream& out) {
  out << "id,family,x,b,e,c,d,n,short,long,width,reference,label\n";
  auto opt = [](const auto& v) { return v ? num(static_cast<double>(*v)) : std::string(); };
  for (std::size_t id = 0; id < rules.size(); ++id) {
    std::string x, b, e, c, d, n, s, l, w, ref;
    std::visit(overloaded{
                   [&](const FilterRule& r) {
                     x = num(r.x);
                     b = opt(r.b);
                     e = opt(r.e);
                     c = opt(r.c);
                   },
                   [&](const MovingAverageRule& r) {
                     s = std::to_string(r.short_n);
                     l = std::to_string(r.long_n);
                     b = opt(r.band);
                     d = opt(r.delay);
                     c = opt(r.hold);
                   },
                   [&](const SupportResistanceRule& r) {
                     if (r.reference == SupportResistanceRule::Reference::Window) {
                       n = std::to_string(r.lookback);
                       ref = "window";
                     } else {
                       e = std::to_string(r.lookback);
                       ref = "extremum";
                     }
                     b = opt(r.band);
                     d = opt(r.delay);
                     c = opt(r.hold);
                   },
                   [&](const ChannelBreakoutRule& r) {
                     n = std::to_string(r.lookback);
                     w = num(r.width);
                     b = opt(r.band);
                     c = opt(r.hold);
                   },
                   [&](const ObvAverageRule& r) {
                     s = std::to_string(r.short_n);
                     l = std::to_string(r.long_n);
                     b = opt(r.band);
                     d = opt(r.delay);
                     c = opt(r.hold);
                   },
               },
               rules[id]);
    out << id << ',' << to_string(family_of(rules[id])) << ',' << x << ',' << b << ',' << e << ',' << c << ','
        << d << ',' << n << ',' << s << ',' << l << ',' << w << ',' << ref << ",\"" << describe(rules[id])
        << "\"\n";
  }
}

// ---------------------------------------------------------------------------
// Indicators

namespace {

// out[t] = max (or min) of v[t-w .. t-1] for t >= w, NaN before.
std::vector<double> previous_window_extreme(std::span<const double> v, std::size_t w, bool maximum) {
  std::vector<double> out(v.size(), kNaN);
  std::deque<std::size_t> q;
  for (std::size_t t = 0; t < v.size(); ++t) {
    if (t >= w) {
      while (!q.empty() && q.front() + w < t) q.pop_front();
      out[t] = v[q.front()];
    }
    while (!q.empty() && (maximum ? v[q.back()] <= v[t] : v[q.back()] >= v[t])) q.pop_back();
    q.push_back(t);
  }
  return out;
}

// out[t] = mean of v[t-w+1 .. t] for t >= w-1, NaN before.
std::vector<double> trailing_mean(std::span<const double> v, std::size_t w) {
  std::vector<double> out(v.size(), kNaN);
  if (w == 1) {
    std::copy(v.begin(), v.end(), out.begin());
    return out;
  }
  std::vector<double> prefix(v.size() + 1, 0.0);
  for (std::size_t t = 0; t < v.size(); ++t) prefix[t + 1] = prefix[t] + v[t];
  const double inv = 1.0 / static_cast<double>(w);
  for (std::size_t t = w - 1; t < v.size(); ++t) out[t] = (prefix[t + 1] - prefix[t + 1 - w]) * inv;
  return out;
}

// Extremum level per day as NaN-or-value.
std::vector<double> extremum_levels(std::span<const double> closes, std::size_t e, ExtremumDirection dir) {
  const bool high = dir == ExtremumDirection::High;
  const auto prev = previous_window_extreme(closes, e, high);
  std::vector<double> out(closes.size(), kNaN);
  double level = kNaN;
  for (std::size_t t = 0; t < closes.size(); ++t) {
    if (t >= e && (high ? closes[t] > prev[t] : closes[t] < prev[t])) level = closes[t];
    out[t] = level;
  }
  return out;
}

// Breakout of a reference level with an optional proportional band. The
// strict test keeps the zero-band rule meaningful; `>=` on the banded level
// makes the threshold itself a trigger.
inline bool above(double value, double level, double band) {
  return value > level && value >= level + band * std::abs(level);
}
inline bool below(double value, double level, double band) {
  return value < level && value <= level - band * std::abs(level);
}

inline Position signal(bool buy, bool sell) {
  if (buy == sell) return 0;  // neither, or conflicting
  return buy ? 1 : -1;
}

std::vector<Position> average_triggers(std::span<const double> series, int short_n, int long_n, double band) {
  const auto s = trailing_mean(series, static_cast<std::size_t>(short_n));
  const auto l = trailing_mean(series, static_cast<std::size_t>(long_n));
  std::vector<Position> out(series.size(), 0);
  for (std::size_t t = static_cast<std::size_t>(long_n) - 1; t < series.size(); ++t) {
    out[t] = signal(above(s[t], l[t], band), below(s[t], l[t], band));
  }
  return out;
}

std::vector<Position> support_resistance_triggers(std::span<const double> closes, const SupportResistanceRule& r) {
  const double band = r.band.value_or(0.0);
  std::vector<double> hi, lo;
  if (r.reference == SupportResistanceRule::Reference::Window) {
    hi = previous_window_extreme(closes, static_cast<std::size_t>(r.lookback), true);
    lo = previous_window_extreme(closes, static_cast<std::size_t>(r.lookback), false);
  } else {
    // Level established strictly before today.
    const auto eh = extremum_levels(closes, static_cast<std::size_t>(r.lookback), ExtremumDirection::High);
    const auto el = extremum_levels(closes, static_cast<std::size_t>(r.lookback), ExtremumDirection::Low);
    hi.assign(closes.size(), kNaN);
    lo.assign(closes.size(), kNaN);
    for (std::size_t t = 1; t < closes.size(); ++t) {
      hi[t] = eh[t - 1];
      lo[t] = el[t - 1];
    }
  }
  std::vector<Position> out(closes.size(), 0);
  for (std::size_t t = 0; t < closes.size(); ++t) {
    // Comparisons with NaN are false, so undefined levels never trigger.
    out[t] = signal(above(closes[t], hi[t], band), below(closes[t], lo[t], band));
  }
  return out;
}

std::vector<Position> channel_triggers(const PriceSeries& p, const ChannelBreakoutRule& r,
                                       const PositionOptions& options) {
  const auto closes = p.close();
  const auto w = static_cast<std::size_t>(r.lookback);
  std::vector<double> hi, lo;
  if (options.channel_uses_high_low) {
    hi = previous_window_extreme(p.high(), w, true);
    lo = previous_window_extreme(p.low(), w, false);
  } else {
    hi = previous_window_extreme(closes, w, true);
    lo = previous_window_extreme(closes, w, false);
  }
  const double band = r.band.value_or(0.0);
  std::vector<Position> out(closes.size(), 0);
  for (std::size_t t = w; t < closes.size(); ++t) {
    const bool channel = hi[t] - lo[t] <= r.width * lo[t];
    if (!channel) continue;
    out[t] = signal(above(closes[t], hi[t], band), below(closes[t], lo[t], band));
  }
  return out;
}

// A trigger survives only after holding on `d` consecutive days.
std::vector<Position> apply_delay(const std::vector<Position>& trig, int d) {
  std::vector<Position> out(trig.size(), 0);
  int run = 0;
  for (std::size_t t = 0; t < trig.size(); ++t) {
    run = (trig[t] != 0 && t > 0 && trig[t] == trig[t - 1]) ? run + 1 : (trig[t] != 0 ? 1 : 0);
    if (run >= d) out[t] = trig[t];
  }
  return out;
}

// Position follows the latest nonzero trigger.
std::vector<Position> latch(const std::vector<Position>& trig) {
  std::vector<Position> out(trig.size(), 0);
  Position state = 0;
  for (std::size_t t = 0; t < trig.size(); ++t) {
    if (trig[t] != 0) state = trig[t];
    out[t] = state;
  }
  return out;
}

// A fresh trigger (nonzero and different from the previous day's trigger)
// opens a position that is kept for exactly `c` days regardless of other
// signals; the day after it is flat, then a new trigger may open again.
std::vector<Position> apply_hold(const std::vector<Position>& trig, int c) {
  std::vector<Position> out(trig.size(), 0);
  std::size_t open_end = 0;  // first day after the held position
  bool held = false;
  Position value = 0;
  for (std::size_t t = 0; t < trig.size(); ++t) {
    if (held && t < open_end) {
      out[t] = value;
      continue;
    }
    if (held && t == open_end) {
      held = false;
      continue;
    }
    const Position prev = t > 0 ? trig[t - 1] : 0;
    if (trig[t] != 0 && trig[t] != prev) {
      value = trig[t];
      open_end = t + static_cast<std::size_t>(c);
      held = true;
      out[t] = value;
    }
  }
  return out;
}

std::vector<Position> filter_positions(std::span<const double> closes, const FilterRule& r) {
  const std::size_t n = closes.size();
  std::vector<Position> out(n, 0);
  if (n == 0) return out;
  std::vector<double> ext_hi, ext_lo;
  if (r.e) {
    ext_hi = extremum_levels(closes, static_cast<std::size_t>(*r.e), ExtremumDirection::High);
    ext_lo = extremum_levels(closes, static_cast<std::size_t>(*r.e), ExtremumDirection::Low);
  }
  Position state = 0;
  double hi = closes[0];
  double lo = closes[0];
  for (std::size_t t = 1; t < n; ++t) {
    const double c = closes[t];
    hi = std::max(hi, c);
    lo = std::min(lo, c);
    const double ref_hi = r.e ? ext_hi[t] : hi;
    const double ref_lo = r.e ? ext_lo[t] : lo;
    const bool buy = c >= ref_lo * (1.0 + r.x);
    const bool sell = c <= ref_hi * (1.0 - r.x);
    Position next = state;
    if (state == 0) {
      next = signal(buy, sell);
    } else if (state == 1) {
      if (r.b && c <= ref_hi * (1.0 - *r.b)) {
        next = 0;
      } else if (sell) {
        next = -1;
      }
    } else {
      if (r.b && c >= ref_lo * (1.0 + *r.b)) {
        next = 0;
      } else if (buy) {
        next = 1;
      }
    }
    if (next != state) {
      state = next;
      hi = lo = c;
    }
    out[t] = state;
  }
  return out;
}

}  // namespace

std::vector<double> compute_obv(const PriceSeries& prices) {
  const auto c = prices.close();
  const auto v = prices.volume();
  std::vector<double> obv(c.size());
  if (c.empty()) return obv;
  obv[0] = v[0];
  for (std::size_t t = 1; t < c.size(); ++t) {
    obv[t] = obv[t - 1];
    if (c[t] > c[t - 1]) {
      obv[t] += v[t];
    } else if (c[t] < c[t - 1]) {
      obv[t] -= v[t];
    }
  }
  return obv;
}

std::vector<std::optional<double>> subsequent_extremum(std::span<const double> closes, int e,
                                                       ExtremumDirection direction) {
  if (e < 1) throw Error(ErrorCode::InvalidArgument, "extremum lookback must be >= 1");
  const auto levels = extremum_levels(closes, static_cast<std::size_t>(e), direction);
  std::vector<std::optional<double>> out(levels.size());
  for (std::size_t t = 0; t < levels.size(); ++t) {
    if (!std::isnan(levels[t])) out[t] = levels[t];
  }
  return out;
}

PositionSeries generate_positions(const RuleSpec& rule, const PriceSeries& prices, const PositionOptions& options) {
  validate(rule);
  const std::size_t need = min_observations(rule);
  if (prices.size() < need) {
    throw Error(ErrorCode::InvalidArgument, describe(rule) + " needs at least " + std::to_string(need) +
                                                " observations, series has " + std::to_string(prices.size()));
  }
  const auto closes = prices.close();

  auto finish = [](std::vector<Position> trig, const std::optional<int>& delay, const std::optional<int>& hold,
                   bool persistent) {
    if (delay) trig = apply_delay(trig, *delay);
    if (hold) return apply_hold(trig, *hold);
    return persistent ? latch(trig) : trig;
  };

  std::vector<Position> values = std::visit(
      overloaded{
          [&](const FilterRule& r) {
            auto base = filter_positions(closes, r);
            return r.c ? apply_hold(base, *r.c) : base;
          },
          [&](const MovingAverageRule& r) {
            return finish(average_triggers(closes, r.short_n, r.long_n, r.band.value_or(0.0)), r.delay, r.hold,
                          false);
          },
          [&](const SupportResistanceRule& r) {
            return finish(support_resistance_triggers(closes, r), r.delay, r.hold, true);
          },
          [&](const ChannelBreakoutRule& r) {
            return finish(channel_triggers(prices, r, options), std::nullopt, r.hold, true);
          },
          [&](const ObvAverageRule& r) {
            const auto obv = compute_obv(prices);
            return finish(average_triggers(obv, r.short_n, r.long_n, r.band.value_or(0.0)), r.delay, r.hold, false);
          },
      },
      rule);
  return PositionSeries{std::move(values)};
}

}  // namespace rulespa
