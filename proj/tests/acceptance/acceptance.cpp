// One line per acceptance criterion: PASS, FAIL or SKIP plus the measured
// quantity. Exits non-zero when a criterion fails, unless that criterion is
// listed with --known-failure (it is still reported as FAIL).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "rulespa/error.hpp"
#include "rulespa/experiment.hpp"

using namespace rulespa;
namespace fs = std::filesystem;

namespace {

enum class Status { Pass, Fail, Skip };

struct Outcome {
  Status status;
  std::string detail;
};

Outcome pass_if(bool ok, std::string detail) { return {ok ? Status::Pass : Status::Fail, std::move(detail)}; }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Outcome universe_conformance() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& u = enumerate_universe();
  std::ostringstream csv;
  write_universe_csv(u, csv);
  const double secs = seconds_since(t0);
  const auto c = family_counts(u);
  std::size_t brock = 0;
  for (int s : {1, 2, 5}) {
    for (int l : {50, 150, 200}) {
      const RuleSpec r = MovingAverageRule{s, l, 0.01, std::nullopt, 10};
      brock += static_cast<std::size_t>(std::count(u.begin(), u.end(), r));
    }
  }
  const bool ok = u.size() == 7846 && c[0].count == 497 && c[1].count == 2049 && c[2].count == 1220 &&
                  c[3].count == 2040 && c[4].count == 2040 && brock == 9 && secs < 1.0;
  return pass_if(ok, fmt("%zu rules (%zu/%zu/%zu/%zu/%zu), %zu Brock rules, %.3f s", u.size(), c[0].count, c[1].count,
                         c[2].count, c[3].count, c[4].count, brock, secs));
}

Outcome signal_oracle() {
  SyntheticSpec spec;
  spec.days = 30;
  spec.volatility = 0.03;
  spec.seed = 17;
  const auto prices = synthetic_series(spec);
  const std::vector<RuleSpec> rules = {
      FilterRule{0.02, 0.01, std::nullopt, std::nullopt},
      MovingAverageRule{2, 10, 0.001, std::nullopt, std::nullopt},
      SupportResistanceRule{SupportResistanceRule::Reference::Window, 5, std::nullopt, 2, std::nullopt},
      ChannelBreakoutRule{5, 0.10, std::nullopt, 5},
      ObvAverageRule{2, 10, std::nullopt, std::nullopt, std::nullopt},
  };
  std::size_t mismatched = 0;
  std::string active;
  for (const auto& r : rules) {
    const auto fast = generate_positions(r, prices).values;
    const auto slow = oracle::positions(r, prices);
    if (!std::equal(fast.begin(), fast.end(), slow.begin(), slow.end())) ++mismatched;
    const auto busy = std::count_if(fast.begin(), fast.end(), [](Position p) { return p != 0; });
    active += (active.empty() ? "" : ",") + std::to_string(busy);
  }
  return pass_if(mismatched == 0, fmt("%zu of 5 rules differ over 30 days (active days %s)", mismatched, active.c_str()));
}

Outcome no_lookahead() {
  const auto prices = oracle::random_ohlcv(600, 5);
  const auto& u = enumerate_universe();
  std::mt19937_64 rng(2718);
  std::size_t bad = 0;
  for (int i = 0; i < 50; ++i) {
    const auto& r = u[std::uniform_int_distribution<std::size_t>(0, u.size() - 1)(rng)];
    const std::size_t len = std::uniform_int_distribution<std::size_t>(min_observations(r), prices.size())(rng);
    const auto full = generate_positions(r, prices).values;
    const auto prefix = generate_positions(r, prices.rows(0, len)).values;
    if (!std::equal(prefix.begin(), prefix.end(), full.begin())) ++bad;
  }
  return pass_if(bad == 0, fmt("%zu of 50 prefix pairs differ", bad));
}

Outcome kernel_reductions() {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> d(0.0, 0.01);
  double worst_kappa = 0.0;
  double worst_var = 0.0;
  for (int c = 0; c < 100; ++c) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(5, 2000)(rng);
    std::vector<double> x(n);
    for (auto& v : x) v = d(rng);
    const double q = std::uniform_real_distribution<double>(0.01, 1.0)(rng);
    worst_kappa = std::max(worst_kappa, std::abs(kernel_weight(n, 0, q) - 1.0));
    const double g0 = autocovariances(x)[0];
    worst_var = std::max(worst_var, std::abs(long_run_variance(x, 1.0) - g0) / g0);
  }
  return pass_if(worst_kappa <= 1e-12 && worst_var <= 1e-12,
                 fmt("max |kappa(n,0)-1| = %.2e, max relative |omega^2-gamma_0| at q=1 = %.2e", worst_kappa, worst_var));
}

Outcome block_length() {
  const std::size_t steps = 1'000'000;
  Rng rng(12345);
  const auto idx = stationary_bootstrap_indices(0, steps - 1, 0.1, rng);
  std::size_t runs = 1;
  for (std::size_t t = 1; t < steps; ++t) {
    if (idx[t] != (idx[t - 1] + 1) % steps) ++runs;
  }
  const double mean = static_cast<double>(steps) / static_cast<double>(runs);
  return pass_if(std::abs(mean - 10.0) <= 0.5, fmt("mean run length %.4f over %zu steps", mean, steps));
}

Outcome pvalue_ordering() {
  std::mt19937_64 rng(4242);
  std::size_t violations = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(50, 400)(rng);
    const std::size_t l = std::uniform_int_distribution<std::size_t>(1, 40)(rng);
    const double phi = std::uniform_real_distribution<double>(-0.3, 0.8)(rng);
    PerformanceMatrix m(n, l, kDefaultWarmup, PerformanceKind::Return);
    std::normal_distribution<double> z;
    for (std::size_t k = 0; k < l; ++k) {
      const double drift = std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
      double a = 0.0;
      for (auto& v : m.column(k)) {
        a = phi * a + z(rng);
        v = 0.01 * (a + drift);
      }
    }
    const BootstrapParams p{std::uniform_real_distribution<double>(0.02, 1.0)(rng), 200,
                            static_cast<std::uint64_t>(trial)};
    const auto r = spa_pvalue(m, p);
    if (!(r.p_lower <= r.p_consistent && r.p_consistent <= r.p_upper)) ++violations;
  }
  return pass_if(violations == 0, fmt("%zu violations over 200 matrices", violations));
}

CalibrationSpec calibration_setup() {
  CalibrationSpec spec;
  spec.rules = 50;
  spec.days = 500;
  spec.replicates = 500;
  spec.trials = 200;
  spec.q = 0.1;
  spec.level = 0.10;
  spec.seed = 20131231;
  return spec;
}

Outcome size_calibration() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = calibrate(calibration_setup());
  const double secs = seconds_since(t0);
  return pass_if(r.rate >= 0.05 && r.rate <= 0.16 && secs < 600.0,
                 fmt("rejection rate %.3f (%zu/%zu), %.1f s", r.rate, r.rejections, r.trials, secs));
}

Outcome power() {
  auto spec = calibration_setup();
  spec.planted_effect = 3.0;
  const auto r = calibrate(spec);
  return pass_if(r.rate >= 0.90, fmt("rejection rate %.3f (%zu/%zu)", r.rate, r.rejections, r.trials));
}

Outcome determinism() {
  SyntheticSpec spec;
  spec.days = 1000;
  spec.seed = 8;
  const auto prices = synthetic_series(spec);
  ExperimentConfig cfg;
  cfg.kinds = {PerformanceKind::Return, PerformanceKind::Sharpe};
  cfg.rolling = RollingSpec{3, 1};
  cfg.replicates = 200;
  cfg.seed = 77;
  cfg.trajectory_step = 0;
  const fs::path root = fs::temp_directory_path() / "rulespa_acceptance_determinism";
  fs::remove_all(root);
  std::vector<std::string> reports;
  for (unsigned workers : {1u, 4u, 1u}) {
    cfg.workers = workers;
    const auto outcomes = run_experiment(cfg, prices);
    std::vector<ReportRow> rows;
    for (const auto& o : outcomes) rows.push_back(o.row);
    const fs::path dir = root / std::to_string(reports.size());
    emit_report(rows, cfg.q_grid, dir);
    std::ifstream in(dir / "report.csv", std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    reports.push_back(ss.str());
  }
  fs::remove_all(root);
  const bool same = reports[0] == reports[1] && reports[1] == reports[2] && !reports[0].empty();
  const auto lines = std::count(reports[0].begin(), reports[0].end(), '\n');
  return pass_if(same, fmt("3 runs (workers 1, 4, 1), %ld-line report CSV, %s", static_cast<long>(lines),
                           same ? "byte-identical" : "differ"));
}

Outcome conditional_reproduction() {
  const char* ssci = std::getenv("RULESPA_SSCI_CSV");
  if (!ssci || !*ssci) return {Status::Skip, "set RULESPA_SSCI_CSV (and optionally RULESPA_SHSZ_CSV) to run"};
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig cfg;
  cfg.periods = {{"", Date::parse("1992-05-21"), Date::parse("2013-06-30")}};
  cfg.trajectory_step = 0;
  const auto prices = load_csv(ssci, cfg.columns);
  const auto out = run_experiment(cfg, prices);
  const double secs = seconds_since(t0);
  const auto& row = out.at(0).row;
  if (!row.error.empty()) return {Status::Fail, row.error};
  const auto& best = enumerate_universe().at(row.best_rule);
  const auto* ma = std::get_if<MovingAverageRule>(&best);
  const bool ma_2_20 = ma && ma->short_n == 2 && ma->long_n == 20;
  const bool close = std::abs(row.max_statistic - 0.2613) <= 0.01;
  bool significant = true;
  for (const auto& s : row.spa) significant = significant && s.p_consistent <= 0.05;
  bool ok = ma_2_20 && close && significant && secs < 1800.0;
  std::string detail = fmt("best %s at %.2f%%, max p %.3f, %.0f s", row.best_rule_label.c_str(),
                           100.0 * row.max_statistic,
                           std::max_element(row.spa.begin(), row.spa.end(), [](const auto& a, const auto& b) {
                             return a.p_consistent < b.p_consistent;
                           })->p_consistent,
                           secs);
  if (const char* shsz = std::getenv("RULESPA_SHSZ_CSV"); shsz && *shsz) {
    ExperimentConfig c2;
    c2.trajectory_step = 0;
    const auto r2 = run_experiment(c2, load_csv(shsz, c2.columns)).at(0).row;
    bool insignificant = r2.error.empty();
    for (const auto& s : r2.spa) {
      if (s.q <= 0.5) insignificant = insignificant && s.p_consistent >= 0.10;
    }
    ok = ok && insignificant;
    detail += insignificant ? "; second index insignificant for q <= 0.5" : "; second index significant for some q <= 0.5";
  }
  return pass_if(ok, detail);
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> known;
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--known-failure") known.insert(std::atoi(argv[++i]));
  }
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"universe conformance", universe_conformance},
      {"signal oracle equivalence", signal_oracle},
      {"no lookahead", no_lookahead},
      {"kernel and variance reductions", kernel_reductions},
      {"bootstrap block length", block_length},
      {"p-value ordering", pvalue_ordering},
      {"size calibration", size_calibration},
      {"power", power},
      {"determinism", determinism},
      {"conditional reproduction", conditional_reproduction},
  };
  int unexpected = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {Status::Fail, std::string("exception: ") + e.what()};
    }
    const char* tag = o.status == Status::Pass ? "PASS" : o.status == Status::Fail ? "FAIL" : "SKIP";
    const bool excused = o.status == Status::Fail && known.count(id);
    std::printf("%s %2d %s: %s%s\n", tag, id, criteria[i].first, o.detail.c_str(),
                excused ? " [known failure]" : "");
    std::fflush(stdout);
    if (o.status == Status::Fail && !excused) ++unexpected;
  }
  return unexpected == 0 ? 0 : 1;
}
