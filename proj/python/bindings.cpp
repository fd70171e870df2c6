#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>

#include "rulespa/error.hpp"
#include "rulespa/experiment.hpp"

namespace py = pybind11;
using namespace rulespa;

namespace {

template <typename T>
py::array_t<T> to_array(std::span<const T> v) {
  py::array_t<T> out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

py::array_t<double> matrix_to_numpy(const PerformanceMatrix& m) {
  py::array_t<double> out({static_cast<py::ssize_t>(m.days()), static_cast<py::ssize_t>(m.rules())});
  auto a = out.mutable_unchecked<2>();
  for (std::size_t k = 0; k < m.rules(); ++k) {
    const auto col = m.column(k);
    for (std::size_t t = 0; t < m.days(); ++t) a(t, k) = col[t];
  }
  return out;
}

PerformanceMatrix matrix_from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& values,
                                    PerformanceKind kind) {
  if (values.ndim() != 2) throw Error(ErrorCode::InvalidArgument, "matrix must be two-dimensional (days x rules)");
  const auto days = static_cast<std::size_t>(values.shape(0));
  const auto rules = static_cast<std::size_t>(values.shape(1));
  PerformanceMatrix m(days, rules, kDefaultWarmup, kind);
  const auto a = values.unchecked<2>();
  for (std::size_t k = 0; k < rules; ++k) {
    auto col = m.column(k);
    for (std::size_t t = 0; t < days; ++t) col[t] = a(t, k);
  }
  return m;
}

PerformanceKind parse_kind(const std::string& s) {
  if (s == "return") return PerformanceKind::Return;
  if (s == "sharpe") return PerformanceKind::Sharpe;
  throw Error(ErrorCode::InvalidArgument, "kind must be 'return' or 'sharpe', got '" + s + "'");
}

Benchmark parse_benchmark(const std::string& s) {
  if (s == "out") return Benchmark::OutOfMarket;
  if (s == "hold") return Benchmark::BuyAndHold;
  throw Error(ErrorCode::InvalidArgument, "benchmark must be 'out' or 'hold', got '" + s + "'");
}

std::vector<std::string> iso_dates(const PriceSeries& p) {
  std::vector<std::string> out;
  out.reserve(p.size());
  for (const Date d : p.dates()) out.push_back(d.iso());
  return out;
}

py::dict spa_to_dict(const SpaResult& r) {
  py::dict d;
  d["q"] = r.q;
  d["statistic"] = r.statistic;
  d["p_lower"] = r.p_lower;
  d["p_consistent"] = r.p_consistent;
  d["p_upper"] = r.p_upper;
  d["replicates"] = r.replicates;
  d["seed"] = r.seed;
  d["days"] = r.days;
  d["excluded"] = r.excluded;
  d["degenerate"] = r.degenerate;
  return d;
}

py::dict row_to_dict(const ReportRow& row) {
  py::dict d;
  d["period"] = row.period;
  d["kind"] = std::string(to_string(row.kind));
  d["days"] = row.days;
  d["best_rule"] = row.best_rule;
  d["best_rule_label"] = row.best_rule_label;
  d["max_statistic"] = row.max_statistic;
  py::list spa;
  for (const auto& s : row.spa) spa.append(spa_to_dict(s));
  d["spa"] = spa;
  d["degenerate"] = row.degenerate;
  d["error"] = row.error;
  return d;
}

const RuleSpec& rule_at(std::size_t id) {
  const auto& u = enumerate_universe();
  if (id >= u.size()) throw Error(ErrorCode::OutOfRange, "rule id " + std::to_string(id) + " is outside the universe");
  return u[id];
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Technical trading rule backtests and SPA bootstrap tests";

  static py::exception<Error> error(m, "RulespaError", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error, (std::string(to_string(e.code())) + ": " + e.what()).c_str());
    }
  });

  py::class_<PriceSeries>(m, "PriceSeries")
      .def("__len__", &PriceSeries::size)
      .def_property_readonly("dates", &iso_dates)
      .def_property_readonly("close", [](const PriceSeries& p) { return to_array(p.close()); })
      .def_property_readonly("volume", [](const PriceSeries& p) { return to_array(p.volume()); })
      .def_property_readonly("has_volume", &PriceSeries::has_volume)
      .def_property_readonly("has_high_low", &PriceSeries::has_high_low)
      .def("slice", [](const PriceSeries& p, const std::string& start, const std::string& end) {
        return slice_period(p, Date::parse(start), Date::parse(end));
      })
      .def("to_csv", [](const PriceSeries& p) { return to_csv(p); })
      .def("content_hash", [](const PriceSeries& p) { return content_hash(p); });

  m.def("parse_csv", [](const std::string& text) { return parse_csv(text); }, py::arg("text"),
        "Parse daily prices from CSV text with date, close and optional open/high/low/volume columns.");
  m.def("load_csv", [](const std::filesystem::path& path) { return load_csv(path); }, py::arg("path"));
  m.def(
      "synthetic_series",
      [](std::size_t days, std::uint64_t seed, double drift, double volatility, double autocorrelation) {
        SyntheticSpec s;
        s.days = days;
        s.seed = seed;
        s.drift = drift;
        s.volatility = volatility;
        s.autocorrelation = autocorrelation;
        return synthetic_series(s);
      },
      py::arg("days") = 1500, py::arg("seed") = 1, py::arg("drift") = 0.0002, py::arg("volatility") = 0.015,
      py::arg("autocorrelation") = 0.05);
  m.def("simple_returns", [](const PriceSeries& p) { return to_array<double>(simple_returns(p).values); });

  m.def("universe_size", [] { return enumerate_universe().size(); });
  m.def("universe_labels", [] {
    std::vector<std::string> out;
    for (const auto& r : enumerate_universe()) out.push_back(describe(r));
    return out;
  });
  m.def("family_counts", [] {
    py::dict d;
    for (const auto& c : family_counts(enumerate_universe())) d[py::str(std::string(to_string(c.family)))] = c.count;
    return d;
  });
  m.def("describe_rule", [](std::size_t id) { return describe(rule_at(id)); }, py::arg("rule_id"));
  m.def(
      "generate_positions",
      [](std::size_t id, const PriceSeries& p, bool hl) {
        PositionOptions o;
        o.channel_uses_high_low = hl;
        return to_array<Position>(generate_positions(rule_at(id), p, o).values);
      },
      py::arg("rule_id"), py::arg("prices"), py::arg("channel_uses_high_low") = false);

  m.def(
      "performance_matrix",
      [](const PriceSeries& p, const std::string& kind, std::optional<std::vector<std::size_t>> rule_ids,
         const std::string& benchmark, bool allow_short, std::size_t warmup, unsigned workers) {
        std::vector<RuleSpec> rules;
        if (rule_ids) {
          for (std::size_t id : *rule_ids) rules.push_back(rule_at(id));
        } else {
          rules = enumerate_universe();
        }
        BacktestOptions o;
        o.benchmark = parse_benchmark(benchmark);
        o.allow_short = allow_short;
        o.warmup = warmup;
        o.workers = workers;
        const auto k = parse_kind(kind);
        PerformanceMatrix mat;
        {
          py::gil_scoped_release release;
          mat = build_performance_matrix(p, rules, k, o);
        }
        return matrix_to_numpy(mat);
      },
      py::arg("prices"), py::arg("kind") = "return", py::arg("rule_ids") = py::none(), py::arg("benchmark") = "out",
      py::arg("allow_short") = true, py::arg("warmup") = kDefaultWarmup, py::arg("workers") = 0,
      "Scored days x rules matrix of daily performance differentials.");

  m.def("long_run_variance", [](std::vector<double> x, double q) { return long_run_variance(x, q); }, py::arg("x"),
        py::arg("q"));
  m.def(
      "spa_pvalue",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& values, double q,
         std::size_t replicates, std::uint64_t seed, unsigned workers) {
        const auto mat = matrix_from_numpy(values, PerformanceKind::Return);
        SpaOptions o;
        o.workers = workers;
        SpaResult r;
        {
          py::gil_scoped_release release;
          r = spa_pvalue(mat, BootstrapParams{q, replicates, seed}, o);
        }
        return spa_to_dict(r);
      },
      py::arg("matrix"), py::arg("q") = 0.1, py::arg("replicates") = kDefaultReplicates, py::arg("seed") = 0,
      py::arg("workers") = 0);
  m.def(
      "spa_sweep",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& values, std::vector<double> q_grid,
         std::size_t replicates, std::uint64_t seed, unsigned workers) {
        const auto mat = matrix_from_numpy(values, PerformanceKind::Return);
        SpaOptions o;
        o.workers = workers;
        std::vector<SpaResult> rs;
        {
          py::gil_scoped_release release;
          rs = spa_sweep(mat, q_grid, replicates, seed, o);
        }
        py::list out;
        for (const auto& r : rs) out.append(spa_to_dict(r));
        return out;
      },
      py::arg("matrix"), py::arg("q_grid") = std::vector<double>(kDefaultQGrid.begin(), kDefaultQGrid.end()),
      py::arg("replicates") = kDefaultReplicates, py::arg("seed") = 0, py::arg("workers") = 0);

  m.def(
      "rolling_windows",
      [](const std::string& first, const std::string& last, int window_years, int step_years) {
        std::vector<std::tuple<std::string, std::string, std::string>> out;
        for (const auto& p : rolling_windows(Date::parse(first), Date::parse(last), window_years, step_years)) {
          out.emplace_back(p.label, p.start.iso(), p.end.iso());
        }
        return out;
      },
      py::arg("first"), py::arg("last"), py::arg("window_years") = 5, py::arg("step_years") = 1);

  m.def(
      "run_experiment",
      [](const PriceSeries& prices, const std::string& config_json) {
        const auto cfg = parse_config(config_json);
        std::vector<PeriodOutcome> outcomes;
        {
          py::gil_scoped_release release;
          outcomes = run_experiment(cfg, prices);
        }
        py::list rows;
        for (const auto& o : outcomes) rows.append(row_to_dict(o.row));
        return rows;
      },
      py::arg("prices"), py::arg("config_json") = "{}",
      "Run backtests and SPA sweeps for every configured period; returns one dict per period and kind.");
  m.def("format_pvalue", &format_pvalue, py::arg("p"));

  m.def(
      "calibrate",
      [](std::size_t rules, std::size_t days, std::size_t replicates, std::size_t trials, double q, double level,
         double planted_effect, double autocorrelation, std::uint64_t seed, unsigned workers) {
        CalibrationSpec s;
        s.rules = rules;
        s.days = days;
        s.replicates = replicates;
        s.trials = trials;
        s.q = q;
        s.level = level;
        s.planted_effect = planted_effect;
        s.autocorrelation = autocorrelation;
        s.seed = seed;
        s.workers = workers;
        CalibrationResult r;
        {
          py::gil_scoped_release release;
          r = calibrate(s);
        }
        py::dict d;
        d["trials"] = r.trials;
        d["rejections"] = r.rejections;
        d["rate"] = r.rate;
        d["p_values"] = r.p_values;
        return d;
      },
      py::arg("rules") = 50, py::arg("days") = 500, py::arg("replicates") = 500, py::arg("trials") = 200,
      py::arg("q") = 0.1, py::arg("level") = 0.10, py::arg("planted_effect") = 0.0, py::arg("autocorrelation") = 0.0,
      py::arg("seed") = 0, py::arg("workers") = 0);
}
