#include "rulespa/market_data.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

#include "rulespa/error.hpp"

namespace rulespa {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::Parse: return "parse";
    case ErrorCode::Validation: return "validation";
    case ErrorCode::Degenerate: return "degenerate";
    case ErrorCode::Io: return "io";
    case ErrorCode::OutOfRange: return "out_of_range";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Date

Date Date::from_ymd(int year, unsigned month, unsigned day) {
  using namespace std::chrono;
  const year_month_day ymd{std::chrono::year{year}, std::chrono::month{month}, std::chrono::day{day}};
  if (!ymd.ok()) {
    throw Error(ErrorCode::Parse, "invalid calendar date " + std::to_string(year) + "-" +
                                      std::to_string(month) + "-" + std::to_string(day));
  }
  return Date(static_cast<std::int32_t>(sys_days{ymd}.time_since_epoch().count()));
}

namespace {

template <typename Int>
bool parse_int(std::string_view s, Int& out) {
  if (s.empty()) return false;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc{} && ptr == end;
}

std::chrono::year_month_day to_ymd(std::int32_t days) {
  return std::chrono::year_month_day{std::chrono::sys_days{std::chrono::days{days}}};
}

std::string pad(unsigned value, int width) {
  std::string s = std::to_string(value);
  if (static_cast<int>(s.size()) < width) s.insert(0, static_cast<std::size_t>(width) - s.size(), '0');
  return s;
}

}  // namespace

Date Date::parse(std::string_view text) {
  int y = 0;
  unsigned m = 0, d = 0;
  bool ok = false;
  if (text.size() == 10 && text[4] == '-' && text[7] == '-') {
    ok = parse_int(text.substr(0, 4), y) && parse_int(text.substr(5, 2), m) &&
         parse_int(text.substr(8, 2), d);
  } else if (text.size() == 8) {
    ok = parse_int(text.substr(0, 4), y) && parse_int(text.substr(4, 2), m) &&
         parse_int(text.substr(6, 2), d);
  }
  if (!ok) throw Error(ErrorCode::Parse, "unparsable date '" + std::string(text) + "'");
  return from_ymd(y, m, d);
}

int Date::year() const noexcept { return static_cast<int>(to_ymd(days_).year()); }

std::string Date::iso() const {
  const auto ymd = to_ymd(days_);
  return pad(static_cast<unsigned>(static_cast<int>(ymd.year())), 4) + "-" +
         pad(static_cast<unsigned>(ymd.month()), 2) + "-" + pad(static_cast<unsigned>(ymd.day()), 2);
}

std::string Date::compact() const {
  const auto ymd = to_ymd(days_);
  return pad(static_cast<unsigned>(static_cast<int>(ymd.year())), 4) +
         pad(static_cast<unsigned>(ymd.month()), 2) + pad(static_cast<unsigned>(ymd.day()), 2);
}

// ---------------------------------------------------------------------------
// PriceSeries

namespace {

void check_column(const std::optional<std::vector<double>>& col, std::size_t n, const char* name) {
  if (col && col->size() != n) {
    throw Error(ErrorCode::Validation, std::string("column '") + name + "' length " +
                                           std::to_string(col->size()) + " != " + std::to_string(n));
  }
}

void check_prices(const std::optional<std::vector<double>>& col, const char* name) {
  if (!col) return;
  for (std::size_t i = 0; i < col->size(); ++i) {
    const double v = (*col)[i];
    if (!std::isfinite(v) || v <= 0.0) {
      throw Error(ErrorCode::Validation, std::string("non-positive ") + name + " price at index " +
                                             std::to_string(i));
    }
  }
}

std::span<const double> require(const std::optional<std::vector<double>>& col, const char* name) {
  if (!col) throw Error(ErrorCode::Validation, std::string("price series has no '") + name + "' column");
  return *col;
}

template <typename T>
std::optional<std::vector<T>> sub(const std::optional<std::vector<T>>& col, std::size_t first,
                                  std::size_t last) {
  if (!col) return std::nullopt;
  return std::vector<T>(col->begin() + static_cast<std::ptrdiff_t>(first),
                        col->begin() + static_cast<std::ptrdiff_t>(last));
}

}  // namespace

PriceSeries::PriceSeries(std::vector<Date> dates, std::vector<double> close,
                         std::optional<std::vector<double>> open,
                         std::optional<std::vector<double>> high,
                         std::optional<std::vector<double>> low,
                         std::optional<std::vector<double>> volume)
    : dates_(std::move(dates)),
      close_(std::move(close)),
      open_(std::move(open)),
      high_(std::move(high)),
      low_(std::move(low)),
      volume_(std::move(volume)) {
  const std::size_t n = dates_.size();
  if (close_.size() != n) {
    throw Error(ErrorCode::Validation, "close length " + std::to_string(close_.size()) +
                                           " != date length " + std::to_string(n));
  }
  check_column(open_, n, "open");
  check_column(high_, n, "high");
  check_column(low_, n, "low");
  check_column(volume_, n, "volume");
  for (std::size_t i = 1; i < n; ++i) {
    if (!(dates_[i - 1] < dates_[i])) {
      throw Error(ErrorCode::Validation, "dates not strictly increasing at index " + std::to_string(i) +
                                             " (" + dates_[i].iso() + ")");
    }
  }
  check_prices(close_, "close");
  check_prices(open_, "open");
  check_prices(high_, "high");
  check_prices(low_, "low");
  if (volume_) {
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite((*volume_)[i]) || (*volume_)[i] < 0.0) {
        throw Error(ErrorCode::Validation, "negative volume at index " + std::to_string(i));
      }
    }
  }
  if (open_ && high_ && low_) {
    for (std::size_t i = 0; i < n; ++i) {
      const double lo_body = std::min((*open_)[i], close_[i]);
      const double hi_body = std::max((*open_)[i], close_[i]);
      if ((*low_)[i] > lo_body || hi_body > (*high_)[i]) {
        throw Error(ErrorCode::Validation, "OHLC envelope violated at index " + std::to_string(i) +
                                               " (" + dates_[i].iso() + ")");
      }
    }
  }
}

std::span<const double> PriceSeries::open() const { return require(open_, "open"); }
std::span<const double> PriceSeries::high() const { return require(high_, "high"); }
std::span<const double> PriceSeries::low() const { return require(low_, "low"); }
std::span<const double> PriceSeries::volume() const { return require(volume_, "volume"); }

PriceSeries PriceSeries::rows(std::size_t first, std::size_t last) const {
  if (first > last || last > size()) {
    throw Error(ErrorCode::OutOfRange, "row range [" + std::to_string(first) + ", " +
                                           std::to_string(last) + ") outside series");
  }
  return PriceSeries(*sub(std::optional(dates_), first, last), *sub(std::optional(close_), first, last),
                     sub(open_, first, last), sub(high_, first, last), sub(low_, first, last),
                     sub(volume_, first, last));
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '"')) {
    s.remove_suffix(1);
  }
  return s;
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return out;
}

std::string row_tag(std::size_t row) { return " at row " + std::to_string(row); }

double parse_number(std::string_view field, std::size_t row, const std::string& column) {
  double v = 0.0;
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (field.empty() || ec != std::errc{} || ptr != end) {
    throw Error(ErrorCode::Parse, "unparsable number '" + std::string(field) + "' in column '" +
                                      column + "'" + row_tag(row));
  }
  return v;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

struct ParsedRow {
  std::size_t line;
  Date date;
  double close;
  double open, high, low, volume;
};

}  // namespace

PriceSeries parse_csv(std::string_view text, const ColumnMapping& columns) {
  std::vector<std::string_view> lines;
  {
    std::size_t start = 0;
    while (start <= text.size()) {
      auto pos = text.find('\n', start);
      if (pos == std::string_view::npos) pos = text.size();
      lines.push_back(text.substr(start, pos - start));
      start = pos + 1;
    }
  }
  std::size_t header_line = 0;
  while (header_line < lines.size() && trim(lines[header_line]).empty()) ++header_line;
  if (header_line == lines.size()) throw Error(ErrorCode::Parse, "empty CSV input");

  const auto header = split(lines[header_line]);
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < header.size(); ++i) {
    std::string name(header[i]);
    if (i == 0 && name.size() >= 3 && name.compare(0, 3, "\xEF\xBB\xBF") == 0) name.erase(0, 3);
    index.emplace(std::move(name), i);
  }
  auto find = [&](const std::optional<std::string>& name) -> std::optional<std::size_t> {
    if (!name) return std::nullopt;
    auto it = index.find(*name);
    if (it == index.end()) return std::nullopt;
    return it->second;
  };
  const auto date_col = find(columns.date);
  const auto close_col = find(columns.close);
  if (!date_col) throw Error(ErrorCode::Validation, "missing required column '" + columns.date + "'");
  if (!close_col) throw Error(ErrorCode::Validation, "missing required column '" + columns.close + "'");
  const auto open_col = find(columns.open);
  const auto high_col = find(columns.high);
  const auto low_col = find(columns.low);
  const auto volume_col = find(columns.volume);

  std::vector<ParsedRow> rows;
  for (std::size_t li = header_line + 1; li < lines.size(); ++li) {
    if (trim(lines[li]).empty()) continue;
    const std::size_t row = li + 1;
    const auto fields = split(lines[li]);
    auto field = [&](std::size_t col, const std::string& name) {
      if (col >= fields.size()) {
        throw Error(ErrorCode::Parse, "missing field '" + name + "'" + row_tag(row));
      }
      return fields[col];
    };
    ParsedRow r{row, {}, 0, 0, 0, 0, 0};
    try {
      r.date = Date::parse(field(*date_col, columns.date));
    } catch (const Error& e) {
      throw Error(ErrorCode::Parse, std::string(e.what()) + row_tag(row));
    }
    r.close = parse_number(field(*close_col, columns.close), row, columns.close);
    auto price = [&](double v, const std::string& name) {
      if (!std::isfinite(v) || v <= 0.0) {
        throw Error(ErrorCode::Validation, "non-positive price in column '" + name + "'" + row_tag(row));
      }
      return v;
    };
    price(r.close, columns.close);
    if (open_col) r.open = price(parse_number(field(*open_col, *columns.open), row, *columns.open), *columns.open);
    if (high_col) r.high = price(parse_number(field(*high_col, *columns.high), row, *columns.high), *columns.high);
    if (low_col) r.low = price(parse_number(field(*low_col, *columns.low), row, *columns.low), *columns.low);
    if (volume_col) {
      r.volume = parse_number(field(*volume_col, *columns.volume), row, *columns.volume);
      if (!std::isfinite(r.volume) || r.volume < 0.0) {
        throw Error(ErrorCode::Validation, "negative volume" + row_tag(row));
      }
    }
    if (open_col && high_col && low_col) {
      if (r.low > std::min(r.open, r.close) || std::max(r.open, r.close) > r.high) {
        throw Error(ErrorCode::Validation, "OHLC envelope violated" + row_tag(row));
      }
    }
    rows.push_back(r);
  }
  if (rows.empty()) throw Error(ErrorCode::Validation, "CSV contains no data rows");

  std::stable_sort(rows.begin(), rows.end(),
                   [](const ParsedRow& a, const ParsedRow& b) { return a.date < b.date; });
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].date == rows[i - 1].date) {
      throw Error(ErrorCode::Validation,
                  "duplicate date " + rows[i].date.iso() + row_tag(std::max(rows[i].line, rows[i - 1].line)));
    }
  }

  const std::size_t n = rows.size();
  std::vector<Date> dates(n);
  std::vector<double> close(n);
  std::optional<std::vector<double>> open, high, low, volume;
  if (open_col) open.emplace(n);
  if (high_col) high.emplace(n);
  if (low_col) low.emplace(n);
  if (volume_col) volume.emplace(n);
  for (std::size_t i = 0; i < n; ++i) {
    dates[i] = rows[i].date;
    close[i] = rows[i].close;
    if (open) (*open)[i] = rows[i].open;
    if (high) (*high)[i] = rows[i].high;
    if (low) (*low)[i] = rows[i].low;
    if (volume) (*volume)[i] = rows[i].volume;
  }
  return PriceSeries(std::move(dates), std::move(close), std::move(open), std::move(high),
                     std::move(low), std::move(volume));
}

PriceSeries load_csv(const std::filesystem::path& path, const ColumnMapping& columns) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str(), columns);
}

std::string to_csv(const PriceSeries& s) {
  std::string out = "date";
  if (s.has_open()) out += ",open";
  const bool hl = s.has_high_low();
  if (hl) out += ",high,low";
  out += ",close";
  if (s.has_volume()) out += ",volume";
  out += '\n';
  for (std::size_t i = 0; i < s.size(); ++i) {
    out += s.dates()[i].iso();
    if (s.has_open()) out += "," + format_double(s.open()[i]);
    if (hl) out += "," + format_double(s.high()[i]) + "," + format_double(s.low()[i]);
    out += "," + format_double(s.close()[i]);
    if (s.has_volume()) out += "," + format_double(s.volume()[i]);
    out += '\n';
  }
  return out;
}

void write_csv(const PriceSeries& series, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << to_csv(series);
}

// ---------------------------------------------------------------------------
// Returns and statistics

namespace {

void require_returns(const PriceSeries& p) {
  if (p.size() < 2) {
    throw Error(ErrorCode::InvalidArgument, "need at least 2 prices for returns, got " + std::to_string(p.size()));
  }
}

}  // namespace

ReturnSeries simple_returns(const PriceSeries& p) {
  require_returns(p);
  ReturnSeries r;
  r.kind = ReturnKind::Simple;
  const auto c = p.close();
  r.dates.assign(p.dates().begin() + 1, p.dates().end());
  r.values.resize(p.size() - 1);
  for (std::size_t j = 0; j + 1 < p.size(); ++j) r.values[j] = (c[j + 1] - c[j]) / c[j];
  return r;
}

ReturnSeries log_returns(const PriceSeries& p) {
  require_returns(p);
  ReturnSeries r;
  r.kind = ReturnKind::Log;
  const auto c = p.close();
  r.dates.assign(p.dates().begin() + 1, p.dates().end());
  r.values.resize(p.size() - 1);
  for (std::size_t j = 0; j + 1 < p.size(); ++j) r.values[j] = std::log(c[j + 1]) - std::log(c[j]);
  return r;
}

DescriptiveStats descriptive_stats(std::span<const double> x) {
  if (x.size() < 4) {
    throw Error(ErrorCode::InvalidArgument, "descriptive statistics need at least 4 observations");
  }
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double m2 = 0, m3 = 0, m4 = 0;
  for (double v : x) {
    const double d = v - mean;
    const double d2 = d * d;
    m2 += d2;
    m3 += d2 * d;
    m4 += d2 * d2;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  if (!(m2 > 0.0)) throw Error(ErrorCode::Degenerate, "degenerate sample: zero variance");
  DescriptiveStats s;
  s.count = x.size();
  s.max_return = *std::max_element(x.begin(), x.end());
  s.min_return = *std::min_element(x.begin(), x.end());
  s.skewness = m3 / std::pow(m2, 1.5);
  s.kurtosis = m4 / (m2 * m2);
  return s;
}

PriceSeries slice_period(const PriceSeries& p, Date start, Date end) {
  if (end < start) throw Error(ErrorCode::InvalidArgument, "slice start " + start.iso() + " after end " + end.iso());
  const auto d = p.dates();
  const auto first = static_cast<std::size_t>(std::lower_bound(d.begin(), d.end(), start) - d.begin());
  const auto last = static_cast<std::size_t>(std::upper_bound(d.begin(), d.end(), end) - d.begin());
  if (first >= last) {
    throw Error(ErrorCode::OutOfRange, "empty slice for period " + start.iso() + ".." + end.iso());
  }
  return p.rows(first, last);
}

std::uint64_t content_hash(const PriceSeries& prices) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_csv(prices)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

PriceSeries synthetic_series(const SyntheticSpec& spec) {
  if (spec.days < 2) throw Error(ErrorCode::InvalidArgument, "synthetic series needs at least 2 days");
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<Date> dates;
  std::vector<double> open, high, low, close, volume;
  dates.reserve(spec.days);
  std::int32_t day = spec.start.days();
  double prev_close = spec.start_price;
  double prev_ret = 0.0;
  while (dates.size() < spec.days) {
    // 1970-01-01 was a Thursday; skip Saturdays and Sundays.
    const int weekday = ((day % 7) + 7 + 4) % 7;
    if (weekday == 0 || weekday == 6) {
      ++day;
      continue;
    }
    const double ret = spec.drift + spec.autocorrelation * (prev_ret - spec.drift) + spec.volatility * z(rng);
    const double o = prev_close * std::exp(0.25 * spec.volatility * z(rng));
    const double c = prev_close * std::exp(ret);
    const double wick = std::abs(0.5 * spec.volatility * z(rng));
    dates.push_back(Date::from_days(day));
    open.push_back(o);
    close.push_back(c);
    high.push_back(std::max(o, c) * std::exp(wick));
    low.push_back(std::min(o, c) * std::exp(-wick));
    volume.push_back(std::round(spec.mean_volume * std::exp(0.3 * z(rng) - 0.045)));
    prev_close = c;
    prev_ret = ret;
    ++day;
  }
  return PriceSeries(std::move(dates), std::move(close), std::move(open), std::move(high), std::move(low),
                     std::move(volume));
}

}  // namespace rulespa
