#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "oracles.hpp"
#include "rulespa/error.hpp"
#include "rulespa/market_data.hpp"

using namespace rulespa;

namespace {

PriceSeries closes_only(std::vector<double> c) {
  std::vector<Date> d;
  for (std::size_t i = 0; i < c.size(); ++i) d.push_back(Date::from_days(static_cast<std::int32_t>(10000 + i)));
  return PriceSeries(std::move(d), std::move(c));
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::InvalidArgument;
}

std::string message_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("dates parse in both layouts") {
  CHECK(Date::parse("2005-04-08") == Date::parse("20050408"));
  CHECK(Date::parse("1970-01-01").days() == 0);
  CHECK(Date::parse("1992-05-21").compact() == "19920521");
  CHECK(Date::parse("2013-06-30").iso() == "2013-06-30");
  CHECK(Date::parse("2000-02-29").year() == 2000);
  CHECK(code_of([] { Date::parse("2001-02-29"); }) == ErrorCode::Parse);
  CHECK(code_of([] { Date::parse("2001/02/01"); }) == ErrorCode::Parse);
}

TEST_CASE("csv loading") {
  SUBCASE("three rows") {
    const auto p = parse_csv("date,close\n2005-04-08,1000\n2005-04-11,1010\n2005-04-12,1005\n");
    REQUIRE(p.size() == 3);
    CHECK(p.close()[1] == 1010.0);
    CHECK_FALSE(p.has_volume());
  }
  SUBCASE("duplicate date names the row") {
    const auto msg = message_of([] { parse_csv("date,close\n2005-04-08,1000\n2005-04-08,1010\n"); });
    CHECK(msg.find("duplicate date") != std::string::npos);
    CHECK(msg.find("at row 3") != std::string::npos);
  }
  SUBCASE("missing close column") {
    CHECK(code_of([] { parse_csv("date,open\n2005-04-08,1000\n"); }) == ErrorCode::Validation);
  }
  SUBCASE("bad number names the row") {
    const auto msg = message_of([] { parse_csv("date,close\n2005-04-08,1000\n2005-04-09,abc\n"); });
    CHECK(msg.find("at row 3") != std::string::npos);
  }
  SUBCASE("bad date") { CHECK(code_of([] { parse_csv("date,close\n2005-13-08,1000\n"); }) == ErrorCode::Parse); }
  SUBCASE("non-positive price") {
    const auto msg = message_of([] { parse_csv("date,close\n2005-04-08,1000\n2005-04-09,0\n"); });
    CHECK(msg.find("non-positive") != std::string::npos);
    CHECK(msg.find("at row 3") != std::string::npos);
  }
  SUBCASE("OHLC envelope") {
    CHECK(code_of([] {
            parse_csv("date,open,high,low,close\n2005-04-08,10,9,8,9.5\n");
          }) == ErrorCode::Validation);
  }
  SUBCASE("rows are sorted") {
    const auto p = parse_csv("date,close\n2005-04-11,2\n2005-04-08,1\n");
    CHECK(p.dates()[0] == Date::parse("2005-04-08"));
    CHECK(p.close()[0] == 1.0);
  }
  SUBCASE("custom column names") {
    ColumnMapping m;
    m.date = "Date";
    m.close = "Adj Close";
    m.volume = "Vol";
    const auto p = parse_csv("Date,Adj Close,Vol\n20050408,5,100\n20050411,6,200\n", m);
    CHECK(p.size() == 2);
    CHECK(p.volume()[1] == 200.0);
  }
}

TEST_CASE("csv round trip") {
  const auto p = oracle::random_ohlcv(200, 7);
  CHECK(parse_csv(to_csv(p)) == p);
  const auto path = std::filesystem::temp_directory_path() / "rulespa_roundtrip.csv";
  write_csv(p, path);
  CHECK(load_csv(path) == p);
  std::filesystem::remove(path);
  CHECK(code_of([] { load_csv("/nonexistent/file.csv"); }) == ErrorCode::Io);
}

TEST_CASE("simple returns") {
  CHECK(simple_returns(closes_only({100, 110})).values[0] == doctest::Approx(0.10).epsilon(1e-15));
  const auto flat = simple_returns(closes_only({50, 50, 50}));
  CHECK(flat.values == std::vector<double>{0.0, 0.0});
  const auto r = simple_returns(closes_only({100, 90, 99}));
  CHECK(r.values[0] == doctest::Approx(-0.10).epsilon(1e-15));
  CHECK(r.values[1] == doctest::Approx(0.10).epsilon(1e-15));
  CHECK(r.dates.size() == 2);
  CHECK(r.kind == ReturnKind::Simple);
  CHECK(code_of([] { simple_returns(closes_only({100})); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("log returns") {
  CHECK(log_returns(closes_only({100, 100 * std::exp(1.0)})).values[0] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(log_returns(closes_only({100, 110})).values[0] == doctest::Approx(0.0953101798).epsilon(1e-9));
  CHECK(log_returns(closes_only({100, 90})).values[0] == doctest::Approx(-0.1053605157).epsilon(1e-9));
}

TEST_CASE("return series properties") {
  const auto p = oracle::random_ohlcv(500, 3);
  const auto s = simple_returns(p);
  const auto l = log_returns(p);
  CHECK(s.values.size() == p.size() - 1);
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    CHECK(s.values[i] > -1.0);
    const double r = s.values[i];
    if (r > 0) {
      const double gap = r - l.values[i];
      CHECK(gap >= r * r / (2.0 * (1.0 + r)) * (1.0 - 1e-6));
      CHECK(gap <= r * r / 2.0 * (1.0 + 1e-6));
    }
  }
}

TEST_CASE("descriptive statistics") {
  SUBCASE("two-point symmetric sample") {
    std::vector<double> x;
    for (int i = 0; i < 10; ++i) x.push_back(i % 2 ? 1.0 : -1.0);
    const auto d = descriptive_stats(x);
    CHECK(d.skewness == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(d.kurtosis == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(d.max_return == 1.0);
    CHECK(d.min_return == -1.0);
    CHECK(d.count == 10);
  }
  SUBCASE("constant sample") {
    const std::vector<double> x(8, 0.01);
    CHECK(code_of([&] { descriptive_stats(x); }) == ErrorCode::Degenerate);
  }
  SUBCASE("too short") {
    const std::vector<double> x = {1, 2, 3};
    CHECK(code_of([&] { descriptive_stats(x); }) == ErrorCode::InvalidArgument);
  }
  SUBCASE("matches long double oracle and moment bound") {
    std::mt19937_64 rng(11);
    std::student_t_distribution<double> t(4.0);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> x(300);
      for (auto& v : x) v = 0.01 * t(rng);
      const auto d = descriptive_stats(x);
      const auto o = oracle::moments(x);
      CHECK(d.skewness == doctest::Approx(o.skewness).epsilon(1e-10));
      CHECK(d.kurtosis == doctest::Approx(o.kurtosis).epsilon(1e-10));
      CHECK(d.kurtosis >= 1.0 + d.skewness * d.skewness);
    }
  }
  SUBCASE("outlier raises kurtosis") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0.0, 0.01);
    std::vector<double> x(400);
    for (auto& v : x) v = n(rng);
    const double base = descriptive_stats(x).kurtosis;
    x.push_back(0.2);
    CHECK(descriptive_stats(x).kurtosis > base);
  }
}

TEST_CASE("slice_period") {
  const auto p = oracle::random_ohlcv(100, 1);
  const Date first = p.dates().front();
  const Date last = p.dates().back();
  CHECK(slice_period(p, first, last) == p);
  const auto s = slice_period(p, p.dates()[10], p.dates()[19]);
  CHECK(s.size() == 10);
  CHECK(s.close()[0] == p.close()[10]);
  CHECK(s.dates().back() == p.dates()[19]);
  CHECK(slice_period(p, Date::from_days(first.days() - 100), Date::from_days(last.days() + 100)) == p);
  CHECK(code_of([&] { slice_period(p, Date::from_days(last.days() + 1), Date::from_days(last.days() + 9)); }) ==
        ErrorCode::OutOfRange);
  CHECK(code_of([&] { slice_period(p, last, first); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("content hash and synthetic data") {
  SyntheticSpec spec;
  spec.days = 300;
  const auto a = synthetic_series(spec);
  const auto b = synthetic_series(spec);
  CHECK(a == b);
  CHECK(content_hash(a) == content_hash(b));
  spec.seed = 2;
  const auto c = synthetic_series(spec);
  CHECK(content_hash(a) != content_hash(c));
  CHECK(a.size() == 300);
  CHECK(a.has_high_low());
  CHECK(a.has_volume());
  for (std::size_t i = 1; i < a.size(); ++i) {
    const int wd = ((a.dates()[i].days() % 7) + 7 + 4) % 7;  // 0 = Sunday
    CHECK(wd != 0);
    CHECK(wd != 6);
  }
}

TEST_CASE("missing optional columns fail fast") {
  const auto p = closes_only({1, 2, 3});
  CHECK(code_of([&] { (void)p.volume(); }) == ErrorCode::Validation);
  CHECK(code_of([&] { (void)p.high(); }) == ErrorCode::Validation);
}
