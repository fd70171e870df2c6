#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>

namespace oracle {

using namespace rulespa;

namespace {

double mean_of(std::span<const double> v, std::size_t t, std::size_t w) {
  double s = 0.0;
  for (std::size_t i = t + 1 - w; i <= t; ++i) s += v[i];
  return s / static_cast<double>(w);
}

double max_of(std::span<const double> v, std::size_t from, std::size_t to) {
  double m = v[from];
  for (std::size_t i = from; i < to; ++i) m = std::max(m, v[i]);
  return m;
}

double min_of(std::span<const double> v, std::size_t from, std::size_t to) {
  double m = v[from];
  for (std::size_t i = from; i < to; ++i) m = std::min(m, v[i]);
  return m;
}

int decide(bool buy, bool sell) {
  if (buy && !sell) return 1;
  if (sell && !buy) return -1;
  return 0;
}

bool breaks_up(double v, double level, double band) { return v > level && v >= level + band * std::fabs(level); }
bool breaks_down(double v, double level, double band) {
  return v < level && v <= level - band * std::fabs(level);
}

// Latest close at or before day u that beats each of its e predecessors.
std::optional<double> extremum_at(std::span<const double> c, std::size_t u, std::size_t e, bool high) {
  for (std::size_t j = u + 1; j-- > e;) {
    bool beats = true;
    for (std::size_t i = j - e; i < j; ++i) {
      if (high ? !(c[j] > c[i]) : !(c[j] < c[i])) {
        beats = false;
        break;
      }
    }
    if (beats) return c[j];
  }
  return std::nullopt;
}

std::vector<double> obv(const PriceSeries& p) {
  const auto c = p.close();
  const auto v = p.volume();
  std::vector<double> out(c.size());
  double level = v[0];
  out[0] = level;
  for (std::size_t t = 1; t < c.size(); ++t) {
    if (c[t] > c[t - 1]) level += v[t];
    if (c[t] < c[t - 1]) level -= v[t];
    out[t] = level;
  }
  return out;
}

std::vector<int> average_raw(std::span<const double> v, int s, int l, double band) {
  std::vector<int> out(v.size(), 0);
  for (std::size_t t = 0; t < v.size(); ++t) {
    if (t + 1 < static_cast<std::size_t>(l)) continue;
    const double sm = mean_of(v, t, static_cast<std::size_t>(s));
    const double lm = mean_of(v, t, static_cast<std::size_t>(l));
    out[t] = decide(breaks_up(sm, lm, band), breaks_down(sm, lm, band));
  }
  return out;
}

std::vector<int> delayed(const std::vector<int>& trig, int d) {
  std::vector<int> out(trig.size(), 0);
  for (std::size_t t = 0; t < trig.size(); ++t) {
    if (trig[t] == 0 || t + 1 < static_cast<std::size_t>(d)) continue;
    bool same = true;
    for (std::size_t i = t + 1 - static_cast<std::size_t>(d); i <= t; ++i) same = same && trig[i] == trig[t];
    if (same) out[t] = trig[t];
  }
  return out;
}

std::vector<int> latched(const std::vector<int>& trig) {
  std::vector<int> out(trig.size(), 0);
  for (std::size_t t = 0; t < trig.size(); ++t) {
    for (std::size_t i = t + 1; i-- > 0;) {
      if (trig[i] != 0) {
        out[t] = trig[i];
        break;
      }
    }
  }
  return out;
}

std::vector<int> held(const std::vector<int>& trig, int c) {
  std::vector<int> out(trig.size(), 0);
  int remaining = 0;
  int value = 0;
  bool cooldown = false;
  for (std::size_t t = 0; t < trig.size(); ++t) {
    if (remaining > 0) {
      out[t] = value;
      if (--remaining == 0) cooldown = true;
      continue;
    }
    if (cooldown) {
      cooldown = false;
      continue;
    }
    const int prev = t == 0 ? 0 : trig[t - 1];
    if (trig[t] != 0 && trig[t] != prev) {
      value = trig[t];
      out[t] = value;
      remaining = c - 1;
      if (remaining == 0) cooldown = true;
    }
  }
  return out;
}

std::vector<int> filter(std::span<const double> c, const FilterRule& r) {
  std::vector<int> out(c.size(), 0);
  int state = 0;
  std::size_t since = 0;
  for (std::size_t t = 1; t < c.size(); ++t) {
    std::optional<double> ref_hi, ref_lo;
    if (r.e) {
      ref_hi = extremum_at(c, t, static_cast<std::size_t>(*r.e), true);
      ref_lo = extremum_at(c, t, static_cast<std::size_t>(*r.e), false);
    } else {
      ref_hi = max_of(c, since, t + 1);
      ref_lo = min_of(c, since, t + 1);
    }
    const bool buy = ref_lo && c[t] >= *ref_lo * (1.0 + r.x);
    const bool sell = ref_hi && c[t] <= *ref_hi * (1.0 - r.x);
    int next = state;
    if (state == 0) {
      next = decide(buy, sell);
    } else if (state == 1) {
      if (r.b && ref_hi && c[t] <= *ref_hi * (1.0 - *r.b)) {
        next = 0;
      } else if (sell) {
        next = -1;
      }
    } else {
      if (r.b && ref_lo && c[t] >= *ref_lo * (1.0 + *r.b)) {
        next = 0;
      } else if (buy) {
        next = 1;
      }
    }
    if (next != state) {
      state = next;
      since = t;
    }
    out[t] = state;
  }
  return out;
}

}  // namespace

std::vector<int> positions(const RuleSpec& rule, const PriceSeries& prices, bool channel_uses_high_low) {
  const auto c = prices.close();
  const std::size_t n = c.size();
  if (const auto* r = std::get_if<FilterRule>(&rule)) {
    auto base = filter(c, *r);
    return r->c ? held(base, *r->c) : base;
  }
  if (const auto* r = std::get_if<MovingAverageRule>(&rule)) {
    auto trig = average_raw(c, r->short_n, r->long_n, r->band.value_or(0.0));
    if (r->delay) trig = delayed(trig, *r->delay);
    return r->hold ? held(trig, *r->hold) : trig;
  }
  if (const auto* r = std::get_if<ObvAverageRule>(&rule)) {
    const auto o = obv(prices);
    auto trig = average_raw(o, r->short_n, r->long_n, r->band.value_or(0.0));
    if (r->delay) trig = delayed(trig, *r->delay);
    return r->hold ? held(trig, *r->hold) : trig;
  }
  if (const auto* r = std::get_if<SupportResistanceRule>(&rule)) {
    const double band = r->band.value_or(0.0);
    const auto k = static_cast<std::size_t>(r->lookback);
    std::vector<int> trig(n, 0);
    for (std::size_t t = 0; t < n; ++t) {
      std::optional<double> hi, lo;
      if (r->reference == SupportResistanceRule::Reference::Window) {
        if (t < k) continue;
        hi = max_of(c, t - k, t);
        lo = min_of(c, t - k, t);
      } else {
        if (t == 0) continue;
        hi = extremum_at(c, t - 1, k, true);
        lo = extremum_at(c, t - 1, k, false);
      }
      const bool buy = hi && breaks_up(c[t], *hi, band);
      const bool sell = lo && breaks_down(c[t], *lo, band);
      trig[t] = decide(buy, sell);
    }
    if (r->delay) trig = delayed(trig, *r->delay);
    return r->hold ? held(trig, *r->hold) : latched(trig);
  }
  const auto& r = std::get<ChannelBreakoutRule>(rule);
  const double band = r.band.value_or(0.0);
  const auto k = static_cast<std::size_t>(r.lookback);
  const auto hs = channel_uses_high_low ? prices.high() : c;
  const auto ls = channel_uses_high_low ? prices.low() : c;
  std::vector<int> trig(n, 0);
  for (std::size_t t = k; t < n; ++t) {
    const double hi = max_of(hs, t - k, t);
    const double lo = min_of(ls, t - k, t);
    if (hi - lo > r.width * lo) continue;
    trig[t] = decide(breaks_up(c[t], hi, band), breaks_down(c[t], lo, band));
  }
  return r.hold ? held(trig, *r.hold) : latched(trig);
}

std::vector<double> autocovariances(std::span<const double> x) {
  const std::size_t n = x.size();
  long double mean = 0.0L;
  for (double v : x) mean += v;
  mean /= static_cast<long double>(n);
  std::vector<double> out(n);
  for (std::size_t t = 0; t < n; ++t) {
    long double s = 0.0L;
    for (std::size_t j = 0; j + t < n; ++j) s += (x[j] - mean) * (x[j + t] - mean);
    out[t] = static_cast<double>(s / static_cast<long double>(n));
  }
  return out;
}

double long_run_variance(std::span<const double> x, double q) {
  const auto g = autocovariances(x);
  const double n = static_cast<double>(x.size());
  double s = g[0];
  for (std::size_t t = 1; t < x.size(); ++t) {
    const double td = static_cast<double>(t);
    const double kappa = (n - td) / n * std::pow(1.0 - q, td) + td / n * std::pow(1.0 - q, n - td);
    s += 2.0 * kappa * g[t];
  }
  return s;
}

std::vector<std::size_t> bootstrap_indices(std::size_t n, double q, Rng& rng) {
  std::vector<std::size_t> idx;
  idx.reserve(n);
  idx.push_back(uniform_index(rng, 0, n - 1));
  while (idx.size() < n) {
    if (uniform01(rng) < q) {
      idx.push_back(uniform_index(rng, 0, n - 1));
    } else {
      idx.push_back((idx.back() + 1) % n);
    }
  }
  return idx;
}

double resampled_statistic(const PerformanceMatrix& m, std::span<const std::size_t> idx,
                           std::span<const double> means, std::span<const double> omegas, Recentering variant) {
  const std::size_t n = m.days();
  const double sqrt_n = std::sqrt(static_cast<double>(n));
  const double thr = std::sqrt(2.0 * std::log(std::log(static_cast<double>(n))));
  double best = 0.0;
  for (std::size_t k = 0; k < means.size(); ++k) {
    if (!(omegas[k] > 0.0)) continue;
    long double s = 0.0L;
    for (std::size_t t = 0; t < n; ++t) s += m(idx[t], k);
    const double star = static_cast<double>(s / static_cast<long double>(n));
    double g = means[k];
    if (variant == Recentering::Lower) g = std::max(means[k], 0.0);
    if (variant == Recentering::Consistent) g = sqrt_n * means[k] >= -omegas[k] * thr ? means[k] : 0.0;
    best = std::max(best, sqrt_n * (star - g) / omegas[k]);
  }
  return best;
}

SpaResult spa_pvalue(const PerformanceMatrix& m, std::size_t columns, double q, std::size_t replicates,
                     std::uint64_t seed) {
  const std::size_t n = m.days();
  std::vector<double> means(columns), omegas(columns);
  double stat = 0.0;
  for (std::size_t k = 0; k < columns; ++k) {
    const auto col = m.column(k);
    long double s = 0.0L;
    for (double v : col) s += v;
    means[k] = static_cast<double>(s / static_cast<long double>(n));
    omegas[k] = m.degenerate(k) ? 0.0 : std::sqrt(std::max(0.0, long_run_variance(col, q)));
    if (omegas[k] > 0.0) stat = std::max(stat, std::sqrt(static_cast<double>(n)) * means[k] / omegas[k]);
  }
  SpaResult r;
  r.q = q;
  r.statistic = stat;
  r.replicates = replicates;
  r.seed = seed;
  r.days = n;
  std::size_t lo = 0, co = 0, up = 0;
  for (std::size_t b = 0; b < replicates; ++b) {
    Rng rng(replicate_seed(seed, q, b));
    const auto idx = bootstrap_indices(n, q, rng);
    lo += resampled_statistic(m, idx, means, omegas, Recentering::Lower) > stat;
    co += resampled_statistic(m, idx, means, omegas, Recentering::Consistent) > stat;
    up += resampled_statistic(m, idx, means, omegas, Recentering::Upper) > stat;
  }
  const double B = static_cast<double>(replicates);
  r.p_lower = static_cast<double>(lo) / B;
  r.p_consistent = static_cast<double>(co) / B;
  r.p_upper = static_cast<double>(up) / B;
  r.omegas = omegas;
  return r;
}

Moments moments(std::span<const double> x) {
  const long double n = static_cast<long double>(x.size());
  long double mean = 0.0L;
  for (double v : x) mean += v;
  mean /= n;
  long double m2 = 0.0L, m3 = 0.0L, m4 = 0.0L;
  for (double v : x) {
    const long double d = v - mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  return {static_cast<double>(m3 / std::pow(m2, 1.5L)), static_cast<double>(m4 / (m2 * m2))};
}

PriceSeries random_ohlcv(std::size_t days, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> step(0.0, 0.02);
  std::uniform_real_distribution<double> spread(0.0, 0.01);
  std::uniform_real_distribution<double> vol(1e5, 1e6);
  std::vector<Date> dates;
  std::vector<double> open, high, low, close, volume;
  double price = 100.0;
  for (std::size_t t = 0; t < days; ++t) {
    const double o = price;
    price *= std::exp(step(rng));
    dates.push_back(Date::from_days(static_cast<std::int32_t>(12000 + t)));
    open.push_back(o);
    close.push_back(price);
    high.push_back(std::max(o, price) * (1.0 + spread(rng)));
    low.push_back(std::min(o, price) * (1.0 - spread(rng)));
    volume.push_back(std::round(vol(rng)));
  }
  return PriceSeries(std::move(dates), std::move(close), std::move(open), std::move(high), std::move(low),
                     std::move(volume));
}

}  // namespace oracle
