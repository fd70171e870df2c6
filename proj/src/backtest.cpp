#include "rulespa/backtest.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <ostream>

#include "rulespa/error.hpp"
#include "rulespa/parallel.hpp"

namespace rulespa {

std::string_view to_string(Benchmark b) noexcept {
  return b == Benchmark::OutOfMarket ? "out" : "hold";
}

std::string_view to_string(PerformanceKind k) noexcept {
  return k == PerformanceKind::Return ? "return" : "sharpe";
}

namespace {

void require_aligned(std::size_t returns, std::size_t positions) {
  if (returns != positions) {
    throw Error(ErrorCode::InvalidArgument, "returns (" + std::to_string(returns) + ") and positions (" +
                                                std::to_string(positions) + ") are not aligned");
  }
}

double benchmark_position(Benchmark b) { return b == Benchmark::BuyAndHold ? 1.0 : 0.0; }

double population_sd(std::span<const double> x) {
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / n);
}

}  // namespace

std::vector<double> return_performance(std::span<const double> returns, std::span<const Position> positions,
                                       Benchmark benchmark) {
  require_aligned(returns.size(), positions.size());
  const double i0 = benchmark_position(benchmark);
  std::vector<double> f(returns.size());
  for (std::size_t t = 0; t < returns.size(); ++t) {
    const double rule_arg = 1.0 + returns[t] * positions[t];
    const double bench_arg = 1.0 + returns[t] * i0;
    if (!(rule_arg > 0.0) || !(bench_arg > 0.0)) {
      throw Error(ErrorCode::Degenerate, "non-positive log argument at day " + std::to_string(t));
    }
    // ln(1) is exactly zero, so flat days contribute exact zeros.
    f[t] = (positions[t] == 0 ? 0.0 : std::log(rule_arg)) - (i0 == 0.0 ? 0.0 : std::log(bench_arg));
  }
  return f;
}

SharpeColumn sharpe_performance(std::span<const double> returns, std::span<const Position> positions,
                                Benchmark benchmark, std::span<const double> risk_free) {
  require_aligned(returns.size(), positions.size());
  if (risk_free.size() != returns.size()) {
    throw Error(ErrorCode::InvalidArgument, "risk-free series not aligned with returns");
  }
  SharpeColumn col;
  col.values.assign(returns.size(), 0.0);
  if (returns.empty()) {
    col.degenerate = true;
    return col;
  }
  std::vector<double> rule(returns.size());
  for (std::size_t t = 0; t < returns.size(); ++t) rule[t] = returns[t] * positions[t];
  const double sd_rule = population_sd(rule);
  if (!(sd_rule > 0.0)) {
    col.degenerate = true;
    return col;
  }
  double sd_bench = 0.0;
  if (benchmark == Benchmark::BuyAndHold) {
    sd_bench = population_sd(returns);
    if (!(sd_bench > 0.0)) {
      col.degenerate = true;
      return col;
    }
  }
  for (std::size_t t = 0; t < returns.size(); ++t) {
    double v = (rule[t] - risk_free[t]) / sd_rule;
    if (benchmark == Benchmark::BuyAndHold) v -= (returns[t] - risk_free[t]) / sd_bench;
    col.values[t] = v;
  }
  return col;
}

// ---------------------------------------------------------------------------
// PerformanceMatrix

PerformanceMatrix::PerformanceMatrix(std::size_t days, std::size_t rules, std::size_t warmup, PerformanceKind kind)
    : days_(days),
      rules_(rules),
      warmup_(warmup),
      kind_(kind),
      values_(days * rules, 0.0),
      degenerate_(rules, 0),
      rule_ids_(rules) {
  std::iota(rule_ids_.begin(), rule_ids_.end(), std::size_t{0});
}

PerformanceMatrix PerformanceMatrix::from_daily_series(std::span<const std::vector<double>> columns,
                                                       std::size_t warmup, PerformanceKind kind) {
  if (columns.empty()) throw Error(ErrorCode::InvalidArgument, "no columns");
  if (warmup < 1) throw Error(ErrorCode::InvalidArgument, "warmup must be >= 1");
  const std::size_t len = columns.front().size();
  if (len < warmup) throw Error(ErrorCode::InvalidArgument, "columns shorter than the warmup");
  const std::size_t skip = warmup - 1;
  PerformanceMatrix m(len - skip, columns.size(), warmup, kind);
  for (std::size_t k = 0; k < columns.size(); ++k) {
    if (columns[k].size() != len) throw Error(ErrorCode::InvalidArgument, "ragged columns");
    std::copy(columns[k].begin() + static_cast<std::ptrdiff_t>(skip), columns[k].end(), m.column(k).begin());
  }
  return m;
}

std::size_t PerformanceMatrix::degenerate_count() const noexcept {
  return static_cast<std::size_t>(std::count(degenerate_.begin(), degenerate_.end(), std::uint8_t{1}));
}

void PerformanceMatrix::set_rule_ids(std::vector<std::size_t> ids) {
  if (ids.size() != rules_) throw Error(ErrorCode::InvalidArgument, "rule id count mismatch");
  rule_ids_ = std::move(ids);
}

PerformanceMatrix PerformanceMatrix::leading_columns(std::size_t count) const {
  if (count == 0 || count > rules_) throw Error(ErrorCode::OutOfRange, "column count outside matrix");
  PerformanceMatrix m(days_, count, warmup_, kind_);
  std::copy(values_.begin(), values_.begin() + static_cast<std::ptrdiff_t>(count * days_), m.values_.begin());
  std::copy(degenerate_.begin(), degenerate_.begin() + static_cast<std::ptrdiff_t>(count), m.degenerate_.begin());
  std::copy(rule_ids_.begin(), rule_ids_.begin() + static_cast<std::ptrdiff_t>(count), m.rule_ids_.begin());
  return m;
}

PerformanceMatrix build_performance_matrix(const PriceSeries& prices, std::span<const RuleSpec> rules,
                                           PerformanceKind kind, const BacktestOptions& options) {
  if (rules.empty()) throw Error(ErrorCode::InvalidArgument, "no rules to backtest");
  if (options.warmup < 1) throw Error(ErrorCode::InvalidArgument, "warmup must be >= 1");
  if (prices.size() < options.warmup + 1) {
    throw Error(ErrorCode::InvalidArgument, "series of " + std::to_string(prices.size()) +
                                                " observations leaves no scored days after warmup " +
                                                std::to_string(options.warmup));
  }
  const auto returns = simple_returns(prices);
  const std::size_t first = options.warmup - 1;
  const std::size_t n = returns.values.size() - first;
  const std::span<const double> scored(returns.values.data() + first, n);

  std::vector<double> rf(n);
  if (!options.risk_free.daily.empty() && options.risk_free.daily.size() != returns.values.size()) {
    throw Error(ErrorCode::InvalidArgument, "risk-free series length " +
                                                std::to_string(options.risk_free.daily.size()) +
                                                " != return count " + std::to_string(returns.values.size()));
  }
  for (std::size_t t = 0; t < n; ++t) rf[t] = options.risk_free.at(first + t);

  PerformanceMatrix m(n, rules.size(), options.warmup, kind);
  parallel_for(rules.size(), options.workers, [&](unsigned, std::size_t k) {
    auto pos = generate_positions(rules[k], prices, options.positions).values;
    if (!options.allow_short) std::replace(pos.begin(), pos.end(), Position{-1}, Position{0});
    const std::span<const Position> scored_pos(pos.data() + first, n);
    auto out = m.column(k);
    if (kind == PerformanceKind::Return) {
      const auto f = return_performance(scored, scored_pos, options.benchmark);
      std::copy(f.begin(), f.end(), out.begin());
    } else {
      const auto col = sharpe_performance(scored, scored_pos, options.benchmark, rf);
      std::copy(col.values.begin(), col.values.end(), out.begin());
      m.set_degenerate(k, col.degenerate);
    }
  });
  return m;
}

// ---------------------------------------------------------------------------
// Aggregation

std::vector<RulePerformance> mean_performance(const PerformanceMatrix& m) {
  if (m.rules() == 0 || m.days() == 0) throw Error(ErrorCode::InvalidArgument, "empty performance matrix");
  std::vector<RulePerformance> out(m.rules());
  const double scale = m.kind() == PerformanceKind::Return ? kTradingDaysPerYear : 1.0;
  for (std::size_t k = 0; k < m.rules(); ++k) {
    const auto col = m.column(k);
    double sum = 0.0;
    for (double v : col) sum += v;
    const double mean = sum / static_cast<double>(m.days());
    out[k] = RulePerformance{m.rule_ids()[k], mean, scale * mean};
  }
  return out;
}

RulePerformance best_rule(std::span<const RulePerformance> perfs) {
  if (perfs.empty()) throw Error(ErrorCode::InvalidArgument, "no rule performances");
  const RulePerformance* best = &perfs.front();
  for (const auto& p : perfs) {
    if (p.mean > best->mean || (p.mean == best->mean && p.rule_id < best->rule_id)) best = &p;
  }
  return *best;
}

std::vector<double> max_trajectory(std::span<const RulePerformance> perfs) {
  if (perfs.empty()) throw Error(ErrorCode::InvalidArgument, "no rule performances");
  std::vector<double> out(perfs.size());
  double running = perfs.front().mean;
  for (std::size_t i = 0; i < perfs.size(); ++i) {
    running = std::max(running, perfs[i].mean);
    out[i] = running;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

constexpr char kMagic[8] = {'R', 'S', 'P', 'A', 'P', 'M', 'A', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(bytes), std::end(bytes));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw Error(ErrorCode::Parse, "truncated matrix file " + path.string());
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(bytes), std::end(bytes));
  T v;
  std::memcpy(&v, bytes, sizeof(T));
  return v;
}

}  // namespace

void save_matrix(const PerformanceMatrix& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, m.days());
  put<std::uint64_t>(out, m.rules());
  put<std::uint64_t>(out, m.warmup());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(m.kind()));
  for (std::size_t t = 0; t < m.days(); ++t) {
    for (std::size_t k = 0; k < m.rules(); ++k) put<double>(out, m(t, k));
  }
  if (!out) throw Error(ErrorCode::Io, "failed writing " + path.string());
}

PerformanceMatrix load_matrix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorCode::Parse, path.string() + " is not a performance matrix file");
  }
  const auto version = get<std::uint32_t>(in, path);
  if (version != kVersion) {
    throw Error(ErrorCode::Parse, "unsupported matrix file version " + std::to_string(version));
  }
  const auto n = get<std::uint64_t>(in, path);
  const auto l = get<std::uint64_t>(in, path);
  const auto warmup = get<std::uint64_t>(in, path);
  const auto kind = get<std::uint32_t>(in, path);
  if (kind > 1) throw Error(ErrorCode::Parse, "unknown performance kind in " + path.string());
  PerformanceMatrix m(n, l, warmup, static_cast<PerformanceKind>(kind));
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t k = 0; k < l; ++k) m(t, k) = get<double>(in, path);
  }
  if (m.kind() == PerformanceKind::Sharpe) {
    // Degenerate Sharpe columns are stored as exact zeros.
    for (std::size_t k = 0; k < l; ++k) {
      const auto col = m.column(k);
      m.set_degenerate(k, std::all_of(col.begin(), col.end(), [](double v) { return v == 0.0; }));
    }
  }
  return m;
}

void write_matrix_csv(const PerformanceMatrix& m, std::ostream& out) {
  out << "day";
  for (std::size_t k = 0; k < m.rules(); ++k) out << ",rule_" << m.rule_ids()[k];
  out << '\n';
  out.precision(17);
  for (std::size_t t = 0; t < m.days(); ++t) {
    out << t;
    for (std::size_t k = 0; k < m.rules(); ++k) out << ',' << m(t, k);
    out << '\n';
  }
}

}  // namespace rulespa
