#include "rulespa/experiment.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>

#include "rulespa/error.hpp"
#include "rulespa/rules.hpp"

namespace rulespa {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Periods

std::string period_label(Date start, Date end) { return start.compact() + "-" + end.compact(); }

Period parse_period(std::string_view text) {
  std::size_t sep = text.find(':');
  if (sep == std::string_view::npos) sep = text.find('-') == 8 ? 8 : std::string_view::npos;
  if (sep == std::string_view::npos) {
    throw Error(ErrorCode::Parse, "period '" + std::string(text) + "' is not START-END or START:END");
  }
  Period p{"", Date::parse(text.substr(0, sep)), Date::parse(text.substr(sep + 1))};
  if (p.end < p.start) throw Error(ErrorCode::Validation, "period '" + std::string(text) + "' ends before it starts");
  return p;
}

namespace {

int parse_years(std::string_view s, std::string_view whole) {
  if (!s.empty() && (s.back() == 'y' || s.back() == 'Y')) s.remove_suffix(1);
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw Error(ErrorCode::Parse, "rolling spec '" + std::string(whole) + "' is not WINDOWy:STEPy");
  }
  return v;
}

}  // namespace

RollingSpec parse_rolling(std::string_view text) {
  const auto sep = text.find(':');
  if (sep == std::string_view::npos) {
    throw Error(ErrorCode::Parse, "rolling spec '" + std::string(text) + "' is not WINDOWy:STEPy");
  }
  return {parse_years(text.substr(0, sep), text), parse_years(text.substr(sep + 1), text)};
}

std::vector<Period> rolling_windows(Date first, Date last, int window_years, int step_years) {
  if (window_years < 1 || step_years < 1) {
    throw Error(ErrorCode::InvalidArgument, "window and step must be at least one year");
  }
  if (last < first) throw Error(ErrorCode::InvalidArgument, "rolling range ends before it starts");
  const int first_year = first.year();
  const int last_year = last.year();
  std::vector<Period> out;
  for (int y = first_year; y + window_years - 1 <= last_year; y += step_years) {
    const Date start = y == first_year ? first : Date::from_ymd(y, 1, 1);
    const Date end = std::min(Date::from_ymd(y + window_years - 1, 12, 31), last);
    out.push_back({period_label(start, end), start, end});
  }
  if (out.empty()) {
    throw Error(ErrorCode::InvalidArgument, "no " + std::to_string(window_years) + "-year window fits in " +
                                                period_label(first, last));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Config

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::Validation, m); };
  if (rolling && !(rolling->window_years > rolling->step_years && rolling->step_years > 0)) {
    fail("rolling spec needs window > step > 0");
  }
  for (const auto& p : periods) {
    if (p.end < p.start) fail("period " + period_label(p.start, p.end) + " ends before it starts");
  }
  if (kinds.empty()) fail("no performance kind selected");
  if (q_grid.empty()) fail("q grid is empty");
  for (double q : q_grid) {
    if (!(q > 0.0 && q <= 1.0)) fail("q grid values must lie in (0, 1]");
  }
  if (replicates < 1) fail("replicates must be >= 1");
  if (warmup < 1) fail("warmup must be >= 1");
  if (trajectory_step > 0 && !(trajectory_q > 0.0 && trajectory_q <= 1.0)) fail("trajectory_q must lie in (0, 1]");
  if (!(risk_free > -1.0)) fail("risk_free must exceed -1");
}

namespace {

PerformanceKind parse_kind(const std::string& s) {
  if (s == "return") return PerformanceKind::Return;
  if (s == "sharpe") return PerformanceKind::Sharpe;
  throw Error(ErrorCode::Validation, "unknown performance kind '" + s + "'");
}

Benchmark parse_benchmark(const std::string& s) {
  if (s == "out") return Benchmark::OutOfMarket;
  if (s == "hold") return Benchmark::BuyAndHold;
  throw Error(ErrorCode::Validation, "unknown benchmark '" + s + "' (expected out or hold)");
}

Period period_from_json(const json& j) {
  if (j.is_string()) return parse_period(j.get<std::string>());
  if (!j.is_object() || !j.contains("start") || !j.contains("end")) {
    throw Error(ErrorCode::Validation, "period entries need start and end");
  }
  Period p{j.value("label", std::string()), Date::parse(j.at("start").get<std::string>()),
           Date::parse(j.at("end").get<std::string>())};
  return p;
}

std::optional<std::string> optional_name(const json& j, const char* key, std::optional<std::string> fallback) {
  if (!j.contains(key)) return fallback;
  if (j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<std::string>();
}

}  // namespace

ExperimentConfig parse_config(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::Parse, std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::Parse, "config must be a JSON object");

  static const std::set<std::string> known = {
      "data",   "columns", "periods", "rolling", "kinds",     "benchmark",  "allow_short",           "risk_free",
      "q_grid", "replicates", "seed", "warmup",  "output_dir", "cache_dir", "channel_uses_high_low", "trajectory_q",
      "trajectory_step", "workers"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw Error(ErrorCode::Validation, "unknown config key '" + key + "'");
  }

  ExperimentConfig cfg;
  try {
    if (j.contains("data")) cfg.data = j.at("data").get<std::string>();
    if (j.contains("columns")) {
      const auto& c = j.at("columns");
      cfg.columns.date = c.value("date", cfg.columns.date);
      cfg.columns.close = c.value("close", cfg.columns.close);
      cfg.columns.open = optional_name(c, "open", cfg.columns.open);
      cfg.columns.high = optional_name(c, "high", cfg.columns.high);
      cfg.columns.low = optional_name(c, "low", cfg.columns.low);
      cfg.columns.volume = optional_name(c, "volume", cfg.columns.volume);
    }
    if (j.contains("periods")) {
      for (const auto& p : j.at("periods")) cfg.periods.push_back(period_from_json(p));
    }
    if (j.contains("rolling")) {
      const auto& r = j.at("rolling");
      if (r.is_string()) {
        cfg.rolling = parse_rolling(r.get<std::string>());
      } else if (!r.is_null()) {
        cfg.rolling = RollingSpec{r.value("window_years", 5), r.value("step_years", 1)};
      }
    }
    if (j.contains("kinds")) {
      const auto& k = j.at("kinds");
      cfg.kinds.clear();
      if (k.is_string() && k.get<std::string>() == "both") {
        cfg.kinds = {PerformanceKind::Return, PerformanceKind::Sharpe};
      } else if (k.is_string()) {
        cfg.kinds = {parse_kind(k.get<std::string>())};
      } else {
        for (const auto& v : k) cfg.kinds.push_back(parse_kind(v.get<std::string>()));
      }
    }
    if (j.contains("benchmark")) cfg.benchmark = parse_benchmark(j.at("benchmark").get<std::string>());
    cfg.allow_short = j.value("allow_short", cfg.allow_short);
    cfg.risk_free = j.value("risk_free", cfg.risk_free);
    if (j.contains("q_grid")) cfg.q_grid = j.at("q_grid").get<std::vector<double>>();
    cfg.replicates = j.value("replicates", cfg.replicates);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.warmup = j.value("warmup", cfg.warmup);
    cfg.channel_uses_high_low = j.value("channel_uses_high_low", cfg.channel_uses_high_low);
    cfg.trajectory_q = j.value("trajectory_q", cfg.trajectory_q);
    cfg.trajectory_step = j.value("trajectory_step", cfg.trajectory_step);
    if (j.contains("output_dir")) cfg.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("cache_dir")) cfg.cache_dir = j.at("cache_dir").get<std::string>();
    cfg.workers = j.value("workers", cfg.workers);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Validation, std::string("bad config value: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  ExperimentConfig cfg = parse_config(ss.str());
  if (!cfg.data.empty() && cfg.data.is_relative()) cfg.data = path.parent_path() / cfg.data;
  return cfg;
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["data"] = cfg.data.string();
  json cols;
  cols["date"] = cfg.columns.date;
  cols["close"] = cfg.columns.close;
  auto put = [&](const char* key, const std::optional<std::string>& v) {
    cols[key] = v ? json(*v) : json(nullptr);
  };
  put("open", cfg.columns.open);
  put("high", cfg.columns.high);
  put("low", cfg.columns.low);
  put("volume", cfg.columns.volume);
  j["columns"] = cols;
  j["periods"] = json::array();
  for (const auto& p : cfg.periods) {
    j["periods"].push_back({{"label", p.label}, {"start", p.start.iso()}, {"end", p.end.iso()}});
  }
  if (cfg.rolling) {
    j["rolling"] = {{"window_years", cfg.rolling->window_years}, {"step_years", cfg.rolling->step_years}};
  }
  j["kinds"] = json::array();
  for (auto k : cfg.kinds) j["kinds"].push_back(std::string(to_string(k)));
  j["benchmark"] = std::string(to_string(cfg.benchmark));
  j["allow_short"] = cfg.allow_short;
  j["risk_free"] = cfg.risk_free;
  j["q_grid"] = cfg.q_grid;
  j["replicates"] = cfg.replicates;
  j["seed"] = cfg.seed;
  j["warmup"] = cfg.warmup;
  j["channel_uses_high_low"] = cfg.channel_uses_high_low;
  j["trajectory_q"] = cfg.trajectory_q;
  j["trajectory_step"] = cfg.trajectory_step;
  j["output_dir"] = cfg.output_dir.string();
  j["cache_dir"] = cfg.cache_dir.string();
  j["workers"] = cfg.workers;
  return j.dump(2);
}

std::vector<Period> resolve_periods(const ExperimentConfig& cfg, const PriceSeries& prices) {
  if (prices.size() == 0) throw Error(ErrorCode::Validation, "price series is empty");
  const Date first = prices.dates().front();
  const Date last = prices.dates().back();
  std::vector<Period> out;
  for (Period p : cfg.periods) {
    if (p.label.empty()) p.label = period_label(std::max(p.start, first), std::min(p.end, last));
    out.push_back(std::move(p));
  }
  if (cfg.rolling) {
    auto windows = rolling_windows(first, last, cfg.rolling->window_years, cfg.rolling->step_years);
    out.insert(out.end(), windows.begin(), windows.end());
  }
  if (out.empty()) out.push_back({period_label(first, last), first, last});
  return out;
}

// ---------------------------------------------------------------------------
// Report formatting

std::string_view significance_stars(double p) noexcept {
  if (p <= 0.01) return "***";
  if (p <= 0.05) return "**";
  if (p <= 0.10) return "*";
  return "";
}

std::string format_pvalue(double p) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", p);
  return std::string(buf) + std::string(significance_stars(p));
}

namespace {

std::string format_statistic(double v, PerformanceKind kind) {
  char buf[48];
  if (kind == PerformanceKind::Return) {
    std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * v);
  } else {
    std::snprintf(buf, sizeof buf, "%.4f", v);
  }
  return buf;
}

std::string format_number(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string q_header(double q) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", q);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

void write_report(std::span<const ReportRow> rows, std::span<const double> q_grid, ReportFormat format,
                  std::ostream& out) {
  if (rows.empty()) throw Error(ErrorCode::InvalidArgument, "no report rows");
  if (format == ReportFormat::Csv) {
    out << "period,kind,days,best_rule,best_rule_label,max_statistic,degenerate";
    for (double q : q_grid) {
      const auto h = q_header(q);
      out << ",p_q" << h << ",p_lower_q" << h << ",p_upper_q" << h << ",stars_q" << h;
    }
    out << ",error\n";
    for (const auto& r : rows) {
      out << r.period << ',' << to_string(r.kind) << ',' << r.days << ',' << r.best_rule << ','
          << csv_field(r.best_rule_label) << ',' << format_number(r.max_statistic) << ',' << (r.degenerate ? 1 : 0);
      for (std::size_t i = 0; i < q_grid.size(); ++i) {
        if (i < r.spa.size()) {
          const auto& s = r.spa[i];
          out << ',' << format_number(s.p_consistent) << ',' << format_number(s.p_lower) << ','
              << format_number(s.p_upper) << ',' << significance_stars(s.p_consistent);
        } else {
          out << ",,,,";
        }
      }
      out << ',' << csv_field(r.error) << '\n';
    }
    return;
  }

  std::vector<std::string> header = {"period", "kind", "max"};
  for (double q : q_grid) header.push_back("q=" + q_header(q));
  header.push_back("best rule");
  std::vector<std::vector<std::string>> cells;
  for (const auto& r : rows) {
    std::vector<std::string> line = {r.period, std::string(to_string(r.kind))};
    if (!r.error.empty()) {
      line.push_back("-");
      for (std::size_t i = 0; i < q_grid.size(); ++i) line.push_back("-");
      line.push_back("error: " + r.error);
    } else {
      line.push_back(format_statistic(r.max_statistic, r.kind));
      for (std::size_t i = 0; i < q_grid.size(); ++i) {
        line.push_back(i < r.spa.size() ? format_pvalue(r.spa[i].p_consistent) : "-");
      }
      line.push_back(r.best_rule_label + (r.degenerate ? " (degenerate)" : ""));
    }
    cells.push_back(std::move(line));
  }
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) {
    width[c] = header[c].size();
    for (const auto& line : cells) width[c] = std::max(width[c], line[c].size());
  }
  auto emit = [&](const std::vector<std::string>& line) {
    for (std::size_t c = 0; c < line.size(); ++c) {
      const bool last = c + 1 == line.size();
      if (c == 0 || last) {
        out << std::left << std::setw(last ? 0 : static_cast<int>(width[c])) << line[c];
      } else {
        out << std::right << std::setw(static_cast<int>(width[c])) << line[c];
      }
      if (!last) out << "  ";
    }
    out << '\n';
  };
  emit(header);
  std::size_t total = 0;
  for (auto w : width) total += w + 2;
  out << std::string(total - 2, '-') << '\n';
  for (const auto& line : cells) emit(line);
  out << std::left;
}

namespace {

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw Error(ErrorCode::Io, "cannot create output directory " + dir.string());
  }
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  return out;
}

}  // namespace

void emit_report(std::span<const ReportRow> rows, std::span<const double> q_grid,
                 const std::filesystem::path& out_dir) {
  ensure_dir(out_dir);
  {
    auto out = open_out(out_dir / "report.txt");
    write_report(rows, q_grid, ReportFormat::Table, out);
  }
  auto out = open_out(out_dir / "report.csv");
  write_report(rows, q_grid, ReportFormat::Csv, out);
}

void emit_figure_data(std::span<const PeriodOutcome> outcomes, const std::filesystem::path& out_dir) {
  ensure_dir(out_dir);
  for (const auto& o : outcomes) {
    if (!o.row.error.empty()) continue;
    const std::string stem = o.row.period + "_" + std::string(to_string(o.row.kind));
    const bool sharpe = o.row.kind == PerformanceKind::Sharpe;
    {
      auto out = open_out(out_dir / ("scatter_" + stem + ".csv"));
      out << "rule,statistic\n";
      for (std::size_t i = 0; i < o.perfs.size(); ++i) {
        const auto& p = o.perfs[i];
        if (sharpe) {
          const bool flagged = i < o.degenerate_rules.size() && o.degenerate_rules[i];
          if (flagged || p.annualized < -0.2) continue;
        }
        out << p.rule_id << ',' << format_number(p.annualized) << '\n';
      }
    }
    {
      auto out = open_out(out_dir / ("running_max_" + stem + ".csv"));
      out << "rules,max_statistic\n";
      const auto traj = max_trajectory(o.perfs);
      const double scale = sharpe ? 1.0 : kTradingDaysPerYear;
      for (std::size_t i = 0; i < traj.size(); ++i) out << i + 1 << ',' << format_number(scale * traj[i]) << '\n';
    }
    if (!o.trajectory.empty()) {
      auto out = open_out(out_dir / ("trajectory_" + stem + ".csv"));
      out << "rules,p_lower,p_consistent,p_upper\n";
      for (const auto& c : o.trajectory) {
        out << c.rules << ',' << format_number(c.result.p_lower) << ',' << format_number(c.result.p_consistent)
            << ',' << format_number(c.result.p_upper) << '\n';
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Pipeline

std::vector<std::size_t> trajectory_checkpoints(std::size_t rules, std::size_t step) {
  if (rules == 0) return {};
  std::vector<std::size_t> out;
  if (step == 0) step = rules;
  for (std::size_t c = std::min(step, rules); c < rules; c += step) out.push_back(c);
  out.push_back(rules);
  if (out.front() != 1) out.insert(out.begin(), 1);
  return out;
}

std::vector<CheckpointResult> pvalue_trajectory(const PerformanceMatrix& m, const BootstrapParams& params,
                                                std::span<const std::size_t> checkpoints,
                                                const SpaOptions& options) {
  return spa_checkpoints(m, params, checkpoints, options);
}

std::string matrix_cache_key(std::uint64_t data_hash, const Period& period, PerformanceKind kind,
                             const ExperimentConfig& cfg) {
  std::ostringstream key;
  key << std::hex << std::setw(16) << std::setfill('0') << data_hash << std::dec << '_' << period.start.compact()
      << '_' << period.end.compact() << '_' << to_string(kind) << '_' << to_string(cfg.benchmark) << '_'
      << (cfg.allow_short ? "short" : "long") << "_R" << cfg.warmup << (cfg.channel_uses_high_low ? "_hl" : "");
  if (cfg.risk_free != 0.0) {
    std::ostringstream rf;
    rf << std::setprecision(17) << cfg.risk_free;
    key << "_rf" << rf.str();
  }
  return key.str();
}

PerformanceMatrix period_matrix(const ExperimentConfig& cfg, const PriceSeries& period_prices, PerformanceKind kind,
                                std::uint64_t data_hash) {
  const Period span{"", period_prices.dates().front(), period_prices.dates().back()};
  std::filesystem::path cache_file;
  if (!cfg.cache_dir.empty()) {
    cache_file = cfg.cache_dir / ("pm_" + matrix_cache_key(data_hash, span, kind, cfg) + ".bin");
    if (std::filesystem::exists(cache_file)) {
      auto m = load_matrix(cache_file);
      if (m.days() + cfg.warmup == period_prices.size() && m.rules() == enumerate_universe().size() &&
          m.kind() == kind) {
        return m;
      }
    }
  }
  BacktestOptions opts;
  opts.benchmark = cfg.benchmark;
  opts.allow_short = cfg.allow_short;
  opts.warmup = cfg.warmup;
  opts.risk_free.constant = cfg.risk_free;
  opts.positions.channel_uses_high_low = cfg.channel_uses_high_low;
  opts.workers = cfg.workers;
  auto m = build_performance_matrix(period_prices, enumerate_universe(), kind, opts);
  if (!cache_file.empty()) {
    ensure_dir(cfg.cache_dir);
    save_matrix(m, cache_file);
  }
  return m;
}

namespace {

std::size_t required_closes(std::size_t warmup) {
  std::size_t longest = 0;
  for (const auto& r : enumerate_universe()) longest = std::max(longest, min_observations(r));
  return std::max(warmup + 3, longest);
}

}  // namespace

std::vector<PeriodOutcome> run_experiment(const ExperimentConfig& cfg, const PriceSeries& prices,
                                          const ProgressFn& progress) {
  cfg.validate();
  const auto periods = resolve_periods(cfg, prices);
  const std::uint64_t hash = content_hash(prices);
  const std::size_t need = required_closes(cfg.warmup);
  const auto& universe = enumerate_universe();
  const SpaOptions spa_opts{cfg.workers, kVarianceFloor};

  std::vector<PeriodOutcome> out;
  for (const auto& period : periods) {
    std::optional<PriceSeries> slice;
    std::string slice_error;
    try {
      slice = slice_period(prices, period.start, period.end);
      if (slice->size() < need) {
        slice_error = "period has " + std::to_string(slice->size()) + " observations, needs at least " +
                      std::to_string(need) + " (warmup " + std::to_string(cfg.warmup) + " plus scored days)";
      }
    } catch (const Error& e) {
      slice_error = e.what();
    }
    for (auto kind : cfg.kinds) {
      PeriodOutcome o;
      o.row.period = period.label;
      o.row.kind = kind;
      if (!slice_error.empty()) {
        o.row.error = slice_error;
        out.push_back(std::move(o));
        continue;
      }
      if (progress) progress("backtest " + period.label + " " + std::string(to_string(kind)));
      const auto m = period_matrix(cfg, *slice, kind, hash);
      o.perfs = mean_performance(m);
      o.degenerate_rules.resize(m.rules());
      for (std::size_t k = 0; k < m.rules(); ++k) o.degenerate_rules[k] = m.degenerate(k);
      const auto best = best_rule(o.perfs);
      o.row.days = m.days();
      o.row.best_rule = best.rule_id;
      o.row.best_rule_label = describe(universe.at(best.rule_id));
      o.row.max_statistic = best.annualized;
      if (progress) progress("spa " + period.label + " " + std::string(to_string(kind)));
      o.row.spa = spa_sweep(m, cfg.q_grid, cfg.replicates, cfg.seed, spa_opts);
      o.row.degenerate = std::any_of(o.row.spa.begin(), o.row.spa.end(), [](const auto& s) { return s.degenerate; });
      if (cfg.trajectory_step > 0) {
        const auto cps = trajectory_checkpoints(m.rules(), cfg.trajectory_step);
        o.trajectory = pvalue_trajectory(m, BootstrapParams{cfg.trajectory_q, cfg.replicates, cfg.seed}, cps,
                                         spa_opts);
      }
      out.push_back(std::move(o));
    }
  }
  return out;
}

std::vector<PeriodOutcome> run_experiment(const ExperimentConfig& cfg, const ProgressFn& progress) {
  if (cfg.data.empty()) throw Error(ErrorCode::Validation, "config has no data file");
  return run_experiment(cfg, load_csv(cfg.data, cfg.columns), progress);
}

// ---------------------------------------------------------------------------
// Calibration

PerformanceMatrix gaussian_matrix(std::size_t days, std::size_t rules, double planted_effect, double autocorrelation,
                                  std::uint64_t seed) {
  if (days < 3 || rules < 1) throw Error(ErrorCode::InvalidArgument, "gaussian matrix needs n >= 3 and l >= 1");
  if (!(std::abs(autocorrelation) < 1.0)) throw Error(ErrorCode::InvalidArgument, "|autocorrelation| must be < 1");
  PerformanceMatrix m(days, rules, kDefaultWarmup, PerformanceKind::Return);
  const double phi = autocorrelation;
  const double innovation_sd = std::sqrt(1.0 - phi * phi);
  const double omega = std::sqrt((1.0 + phi) / (1.0 - phi));
  const double shift = planted_effect * omega / std::sqrt(static_cast<double>(days));
  for (std::size_t k = 0; k < rules; ++k) {
    Rng rng(replicate_seed(seed, 0.0, k));
    std::normal_distribution<double> normal(0.0, 1.0);
    auto col = m.column(k);
    double x = normal(rng);
    for (std::size_t t = 0; t < days; ++t) {
      if (t > 0) x = phi * x + innovation_sd * normal(rng);
      col[t] = x + (k == 0 ? shift : 0.0);
    }
  }
  return m;
}

CalibrationResult calibrate(const CalibrationSpec& spec) {
  if (spec.trials < 1) throw Error(ErrorCode::InvalidArgument, "calibration needs at least one trial");
  if (!(spec.level > 0.0 && spec.level < 1.0)) throw Error(ErrorCode::InvalidArgument, "level must lie in (0, 1)");
  CalibrationResult r;
  r.trials = spec.trials;
  r.p_values.resize(spec.trials);
  const SpaOptions opts{spec.workers, kVarianceFloor};
  for (std::size_t i = 0; i < spec.trials; ++i) {
    const std::uint64_t trial_seed = splitmix64(spec.seed ^ splitmix64(i + 1));
    const auto m = gaussian_matrix(spec.days, spec.rules, spec.planted_effect, spec.autocorrelation, trial_seed);
    const auto res = spa_pvalue(m, BootstrapParams{spec.q, spec.replicates, trial_seed}, opts);
    r.p_values[i] = res.p_consistent;
    if (res.p_consistent <= spec.level) ++r.rejections;
  }
  r.rate = static_cast<double>(r.rejections) / static_cast<double>(r.trials);
  return r;
}

}  // namespace rulespa
