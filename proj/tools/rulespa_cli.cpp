#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "rulespa/backtest.hpp"
#include "rulespa/error.hpp"
#include "rulespa/experiment.hpp"
#include "rulespa/market_data.hpp"
#include "rulespa/rules.hpp"
#include "rulespa/spa.hpp"

using namespace rulespa;

namespace {

void print_error(std::string_view code, std::string_view message) {
  nlohmann::json j = {{"error", code}, {"message", message}};
  std::cerr << j.dump() << '\n';
}

std::vector<double> parse_q_grid(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error(ErrorCode::Parse, "bad q-grid entry '" + item + "'");
    }
  }
  if (out.empty()) throw Error(ErrorCode::Parse, "empty q grid");
  return out;
}

std::vector<PerformanceKind> parse_kinds(const std::string& s) {
  if (s == "both") return {PerformanceKind::Return, PerformanceKind::Sharpe};
  if (s == "return") return {PerformanceKind::Return};
  if (s == "sharpe") return {PerformanceKind::Sharpe};
  throw Error(ErrorCode::Validation, "unknown kind '" + s + "'");
}

struct CommonFlags {
  std::string data;
  std::string config;
  std::vector<std::string> periods;
  std::string rolling;
  std::string kind = "return";
  std::string benchmark = "out";
  bool no_short = false;
  std::string q_grid;
  std::size_t replicates = kDefaultReplicates;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::string cache_dir;
  unsigned workers = 0;
  std::size_t warmup = kDefaultWarmup;

  CLI::Option* kind_opt = nullptr;
  CLI::Option* bench_opt = nullptr;
  CLI::Option* q_opt = nullptr;
  CLI::Option* reps_opt = nullptr;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* out_opt = nullptr;
  CLI::Option* cache_opt = nullptr;
  CLI::Option* workers_opt = nullptr;
  CLI::Option* warmup_opt = nullptr;
  CLI::Option* short_opt = nullptr;
};

void add_data_flags(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--data", f.data, "Daily OHLCV CSV file");
  cmd->add_option("--config", f.config, "JSON experiment config");
  cmd->add_option("--periods", f.periods, "Periods as YYYYMMDD-YYYYMMDD")->delimiter(',');
  cmd->add_option("--rolling", f.rolling, "Rolling windows, e.g. 5y:1y");
  f.kind_opt = cmd->add_option("--kind", f.kind, "return, sharpe or both");
  f.bench_opt = cmd->add_option("--benchmark", f.benchmark, "out or hold");
  f.short_opt = cmd->add_flag("--no-short", f.no_short, "Map short positions to flat");
  f.cache_opt = cmd->add_option("--cache-dir", f.cache_dir, "Performance matrix cache directory");
  f.workers_opt = cmd->add_option("--workers", f.workers, "Worker threads (0 = all cores)");
  f.warmup_opt = cmd->add_option("--warmup", f.warmup, "Warmup observations R");
}

void add_spa_flags(CLI::App* cmd, CommonFlags& f) {
  f.q_opt = cmd->add_option("--q-grid", f.q_grid, "Comma-separated q values");
  f.reps_opt = cmd->add_option("--replicates", f.replicates, "Bootstrap replicates B");
  f.seed_opt = cmd->add_option("--seed", f.seed, "Master seed");
}

ExperimentConfig make_config(const CommonFlags& f) {
  ExperimentConfig cfg = f.config.empty() ? ExperimentConfig{} : load_config(f.config);
  if (!f.data.empty()) cfg.data = f.data;
  for (const auto& p : f.periods) cfg.periods.push_back(parse_period(p));
  if (!f.rolling.empty()) cfg.rolling = parse_rolling(f.rolling);
  if (f.kind_opt && f.kind_opt->count()) cfg.kinds = parse_kinds(f.kind);
  if (f.bench_opt && f.bench_opt->count()) {
    if (f.benchmark == "out") {
      cfg.benchmark = Benchmark::OutOfMarket;
    } else if (f.benchmark == "hold") {
      cfg.benchmark = Benchmark::BuyAndHold;
    } else {
      throw Error(ErrorCode::Validation, "unknown benchmark '" + f.benchmark + "'");
    }
  }
  if (f.no_short) cfg.allow_short = false;
  if (f.q_opt && f.q_opt->count()) cfg.q_grid = parse_q_grid(f.q_grid);
  if (f.reps_opt && f.reps_opt->count()) cfg.replicates = f.replicates;
  if (f.seed_opt && f.seed_opt->count()) cfg.seed = f.seed;
  if (f.out_opt && f.out_opt->count()) cfg.output_dir = f.out_dir;
  if (f.cache_opt && f.cache_opt->count()) cfg.cache_dir = f.cache_dir;
  if (f.workers_opt && f.workers_opt->count()) cfg.workers = f.workers;
  if (f.warmup_opt && f.warmup_opt->count()) cfg.warmup = f.warmup;
  cfg.validate();
  if (cfg.data.empty()) throw Error(ErrorCode::Validation, "no data file given (--data or config)");
  return cfg;
}

std::ostream& output_stream(const std::string& path, std::ofstream& file) {
  if (path.empty() || path == "-") return std::cout;
  file.open(path, std::ios::binary);
  if (!file) throw Error(ErrorCode::Io, "cannot write " + path);
  return file;
}

int run(int argc, char** argv) {
  CLI::App app{"Technical trading rule universe backtests with the SPA test"};
  app.require_subcommand(1);

  // universe
  auto* universe = app.add_subcommand("universe", "Write the rule universe as CSV");
  std::string universe_out;
  bool universe_counts = false;
  universe->add_option("--out", universe_out, "Output file (default stdout)");
  universe->add_flag("--counts", universe_counts, "Print per-family counts as JSON instead");

  // backtest
  CommonFlags bt;
  auto* backtest = app.add_subcommand("backtest", "Build and cache the performance matrix of one period");
  add_data_flags(backtest, bt);
  std::string matrix_out;
  std::string matrix_csv;
  backtest->add_option("--out", matrix_out, "Binary matrix file")->required();
  backtest->add_option("--csv", matrix_csv, "Also write the matrix as CSV");

  // spa
  CommonFlags sp;
  auto* spa = app.add_subcommand("spa", "Run the SPA test on a saved performance matrix");
  std::string matrix_in;
  std::string spa_format = "csv";
  std::string spa_out;
  spa->add_option("--matrix", matrix_in, "Binary matrix file")->required();
  spa->add_option("--format", spa_format, "csv or json");
  spa->add_option("--out", spa_out, "Output file (default stdout)");
  spa->add_option("--workers", sp.workers, "Worker threads (0 = all cores)");
  add_spa_flags(spa, sp);

  // report
  CommonFlags rp;
  auto* report = app.add_subcommand("report", "Full pipeline: backtests, SPA sweeps, tables and figure data");
  add_data_flags(report, rp);
  add_spa_flags(report, rp);
  rp.out_opt = report->add_option("--out-dir", rp.out_dir, "Output directory");
  bool quiet = false;
  report->add_flag("--quiet", quiet, "No progress messages");

  // calibrate
  auto* calib = app.add_subcommand("calibrate", "Size and power of the SPA test on synthetic Gaussian matrices");
  CalibrationSpec cs;
  std::vector<double> effects = {0.0, 3.0};
  calib->add_option("--rules", cs.rules, "Columns l");
  calib->add_option("--days", cs.days, "Rows n");
  calib->add_option("--replicates", cs.replicates, "Bootstrap replicates B");
  calib->add_option("--trials", cs.trials, "Trials per effect size");
  calib->add_option("--q", cs.q, "Stationary bootstrap q");
  calib->add_option("--level", cs.level, "Rejection level");
  calib->add_option("--effects", effects, "Planted means in omega/sqrt(n) units")->delimiter(',');
  calib->add_option("--autocorrelation", cs.autocorrelation, "AR(1) coefficient of each column");
  calib->add_option("--seed", cs.seed, "Master seed");
  calib->add_option("--workers", cs.workers, "Worker threads");

  // synth
  auto* synth = app.add_subcommand("synth", "Write a seeded synthetic OHLCV series");
  SyntheticSpec ss;
  std::string synth_out;
  synth->add_option("--days", ss.days, "Number of trading days");
  synth->add_option("--seed", ss.seed, "Seed");
  synth->add_option("--drift", ss.drift, "Daily log drift");
  synth->add_option("--volatility", ss.volatility, "Daily volatility");
  synth->add_option("--autocorrelation", ss.autocorrelation, "Return autocorrelation");
  synth->add_option("--out", synth_out, "Output CSV (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  }

  if (universe->parsed()) {
    const auto& rules = enumerate_universe();
    std::ofstream file;
    auto& out = output_stream(universe_out, file);
    if (universe_counts) {
      nlohmann::json j = nlohmann::json::object();
      for (const auto& c : family_counts(rules)) j[std::string(to_string(c.family))] = c.count;
      j["total"] = rules.size();
      out << j.dump() << '\n';
    } else {
      write_universe_csv(rules, out);
    }
    return 0;
  }

  if (backtest->parsed()) {
    auto cfg = make_config(bt);
    if (cfg.kinds.size() != 1) throw Error(ErrorCode::Validation, "backtest takes a single --kind");
    const auto prices = load_csv(cfg.data, cfg.columns);
    const auto periods = resolve_periods(cfg, prices);
    if (periods.size() != 1) throw Error(ErrorCode::Validation, "backtest takes a single period");
    const auto slice = slice_period(prices, periods[0].start, periods[0].end);
    const auto m = period_matrix(cfg, slice, cfg.kinds[0], content_hash(prices));
    save_matrix(m, matrix_out);
    if (!matrix_csv.empty()) {
      std::ofstream out(matrix_csv, std::ios::binary);
      if (!out) throw Error(ErrorCode::Io, "cannot write " + matrix_csv);
      write_matrix_csv(m, out);
    }
    const auto best = best_rule(mean_performance(m));
    nlohmann::json j = {{"period", periods[0].label}, {"days", m.days()},      {"rules", m.rules()},
                        {"best_rule", best.rule_id},  {"best_rule_label", describe(enumerate_universe().at(best.rule_id))},
                        {"max_statistic", best.annualized}};
    std::cout << j.dump() << '\n';
    return 0;
  }

  if (spa->parsed()) {
    const auto m = load_matrix(matrix_in);
    std::vector<double> grid(kDefaultQGrid.begin(), kDefaultQGrid.end());
    if (sp.q_opt->count()) grid = parse_q_grid(sp.q_grid);
    const auto results = spa_sweep(m, grid, sp.replicates, sp.seed, SpaOptions{sp.workers, kVarianceFloor});
    std::ofstream file;
    auto& out = output_stream(spa_out, file);
    if (spa_format == "json") {
      write_spa_json(results, out);
    } else if (spa_format == "csv") {
      write_spa_csv(results, out);
    } else {
      throw Error(ErrorCode::Validation, "unknown format '" + spa_format + "'");
    }
    return 0;
  }

  if (report->parsed()) {
    const auto cfg = make_config(rp);
    ProgressFn progress;
    if (!quiet) progress = [](std::string_view msg) { std::cerr << msg << '\n'; };
    const auto outcomes = run_experiment(cfg, progress);
    std::vector<ReportRow> rows;
    for (const auto& o : outcomes) rows.push_back(o.row);
    emit_report(rows, cfg.q_grid, cfg.output_dir);
    emit_figure_data(outcomes, cfg.output_dir / "figures");
    write_report(rows, cfg.q_grid, ReportFormat::Table, std::cout);
    return 0;
  }

  if (calib->parsed()) {
    std::cout << "effect,trials,rejections,rate\n";
    for (double e : effects) {
      CalibrationSpec spec = cs;
      spec.planted_effect = e;
      const auto r = calibrate(spec);
      std::cout << e << ',' << r.trials << ',' << r.rejections << ',' << r.rate << '\n';
    }
    return 0;
  }

  if (synth->parsed()) {
    const auto series = synthetic_series(ss);
    if (synth_out.empty() || synth_out == "-") {
      std::cout << to_csv(series);
    } else {
      write_csv(series, synth_out);
    }
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const Error& e) {
    print_error(to_string(e.code()), e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
}
