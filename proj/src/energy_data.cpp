#include "gridtrade/energy_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace gridtrade {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? comma : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && p == s.data() + s.size() && std::isfinite(out);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataError::Kind::FileMissing, 0, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("IoError", "cannot write " + tmp.string());
    out << text;
  }
  std::filesystem::rename(tmp, path);
}

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string kind_name(DataError::Kind kind) {
  switch (kind) {
    case DataError::Kind::MalformedRow: return "MalformedRow";
    case DataError::Kind::NonMonotonicTimestamp: return "NonMonotonicTimestamp";
    case DataError::Kind::NegativeValue: return "NegativeValue";
    case DataError::Kind::InvalidValue: return "InvalidValue";
    case DataError::Kind::EmptySeries: return "EmptySeries";
    case DataError::Kind::NoOverlap: return "NoOverlap";
    case DataError::Kind::OutOfRange: return "OutOfRange";
    case DataError::Kind::FileMissing: return "DataMissing";
  }
  return "DataError";
}

// Iterates data lines after the header, skipping blank lines. `fn` gets the
// 1-based line number.
template <typename Fn>
void for_each_row(const std::string& text, std::string_view header, Fn&& fn) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = line;
    if (line_no == 1 && view.starts_with("\xEF\xBB\xBF")) view.remove_prefix(3);
    view = trim(view);
    if (view.empty()) continue;
    if (!saw_header) {
      if (view != header)
        throw DataError(DataError::Kind::MalformedRow, line_no,
                        "expected header '" + std::string(header) + "'");
      saw_header = true;
      continue;
    }
    fn(view, line_no);
  }
  if (!saw_header)
    throw DataError(DataError::Kind::MalformedRow, 1, "missing header '" + std::string(header) + "'");
}

constexpr std::string_view kPowerHeader = "timestamp,value_w";
constexpr std::string_view kWeatherHeader =
    "timestamp,irradiance_wm2,air_temp_c,rel_humidity_pct,rainfall_mm";

}  // namespace

DataError::DataError(Kind kind, std::size_t line, const std::string& message)
    : Error(kind_name(kind), line ? "line " + std::to_string(line) + ": " + message : message),
      kind_(kind),
      line_(line) {}

std::string to_string(SeriesKind kind) {
  return kind == SeriesKind::generation ? "generation" : "consumption";
}

SeriesKind series_kind_from_string(const std::string& text) {
  if (text == "generation") return SeriesKind::generation;
  if (text == "consumption") return SeriesKind::consumption;
  throw Error("ConfigInvalid", "unknown series kind '" + text + "'");
}

double PowerSeries::value_at(Instant t) const {
  if (samples.empty() || t < front_time() || t > back_time())
    throw DataError(DataError::Kind::OutOfRange, 0,
                    "clock " + format_iso8601(t) + " outside series of " + node_id);
  auto it = std::lower_bound(samples.begin(), samples.end(), t,
                             [](const PowerSample& s, Instant v) { return s.timestamp < v; });
  if (it->timestamp == t) return it->value_w;
  const auto& hi = *it;
  const auto& lo = *(it - 1);
  const double frac = static_cast<double>((t - lo.timestamp).count()) /
                      static_cast<double>((hi.timestamp - lo.timestamp).count());
  return lo.value_w + frac * (hi.value_w - lo.value_w);
}

FeatureRow features_of(const WeatherRecord& r) {
  return {r.irradiance, r.air_temp, r.rel_humidity, r.rainfall};
}

PowerSeries parse_power_csv(const std::string& text, const std::string& node_id, SeriesKind kind) {
  PowerSeries series{node_id, kind, {}, Seconds{0}};
  for_each_row(text, kPowerHeader, [&](std::string_view row, std::size_t line) {
    const auto fields = split_fields(row);
    if (fields.size() != 2) throw DataError(DataError::Kind::MalformedRow, line, "expected 2 fields");
    const auto ts = parse_iso8601(fields[0]);
    double value = 0;
    if (!ts) throw DataError(DataError::Kind::MalformedRow, line, "bad timestamp");
    if (!parse_double(fields[1], value))
      throw DataError(DataError::Kind::MalformedRow, line, "bad value");
    if (value < 0)
      throw DataError(DataError::Kind::NegativeValue, line, "negative power " + std::string(fields[1]));
    if (!series.samples.empty() && *ts <= series.samples.back().timestamp)
      throw DataError(DataError::Kind::NonMonotonicTimestamp, line,
                      "timestamp " + std::string(fields[0]) + " not after previous");
    series.samples.push_back({*ts, value});
  });
  for (std::size_t i = 1; i < series.samples.size(); ++i) {
    const auto gap = series.samples[i].timestamp - series.samples[i - 1].timestamp;
    if (series.interval.count() == 0 || gap < series.interval) series.interval = gap;
  }
  return series;
}

PowerSeries load_power_csv(const std::filesystem::path& path, const std::string& node_id,
                           SeriesKind kind) {
  return parse_power_csv(read_file(path), node_id, kind);
}

std::string format_power_csv(const PowerSeries& series) {
  std::string out(kPowerHeader);
  out += '\n';
  for (const auto& s : series.samples) {
    out += format_iso8601(s.timestamp);
    out += ',';
    out += format_double(s.value_w);
    out += '\n';
  }
  return out;
}

void write_power_csv(const std::filesystem::path& path, const PowerSeries& series) {
  write_file_atomic(path, format_power_csv(series));
}

WeatherLoad parse_weather_csv(const std::string& text) {
  WeatherLoad load;
  for_each_row(text, kWeatherHeader, [&](std::string_view row, std::size_t line) {
    const auto fields = split_fields(row);
    if (fields.size() != 5) throw DataError(DataError::Kind::MalformedRow, line, "expected 5 fields");
    const auto ts = parse_iso8601(fields[0]);
    if (!ts) throw DataError(DataError::Kind::MalformedRow, line, "bad timestamp");
    if (std::any_of(fields.begin() + 1, fields.end(), [](auto f) { return f.empty(); })) {
      ++load.dropped;
      return;
    }
    std::array<double, 4> v{};
    for (std::size_t i = 0; i < 4; ++i)
      if (!parse_double(fields[i + 1], v[i]))
        throw DataError(DataError::Kind::MalformedRow, line, "bad number in column " + std::to_string(i + 2));
    if (v[0] < 0) throw DataError(DataError::Kind::InvalidValue, line, "negative irradiance");
    if (v[2] < 0 || v[2] > 100) throw DataError(DataError::Kind::InvalidValue, line, "humidity outside [0,100]");
    if (v[3] < 0) throw DataError(DataError::Kind::InvalidValue, line, "negative rainfall");
    if (!load.records.empty() && *ts <= load.records.back().timestamp)
      throw DataError(DataError::Kind::NonMonotonicTimestamp, line, "timestamp not after previous");
    load.records.push_back({*ts, v[0], v[1], v[2], v[3]});
  });
  return load;
}

WeatherLoad load_weather_csv(const std::filesystem::path& path) {
  return parse_weather_csv(read_file(path));
}

std::string format_weather_csv(const std::vector<WeatherRecord>& records) {
  std::string out(kWeatherHeader);
  out += '\n';
  for (const auto& r : records) {
    out += format_iso8601(r.timestamp) + ',' + format_double(r.irradiance) + ',' +
           format_double(r.air_temp) + ',' + format_double(r.rel_humidity) + ',' +
           format_double(r.rainfall) + '\n';
  }
  return out;
}

void write_weather_csv(const std::filesystem::path& path, const std::vector<WeatherRecord>& records) {
  write_file_atomic(path, format_weather_csv(records));
}

PowerSeries resample(const PowerSeries& series, Seconds interval) {
  if (interval.count() <= 0) throw Error("InvalidInterval", "resample interval must be positive");
  if (series.empty()) throw DataError(DataError::Kind::EmptySeries, 0, "cannot resample an empty series");

  const auto step = interval.count();
  const auto first = to_unix(series.front_time());
  const auto last = to_unix(series.back_time());
  // Grid is aligned to midnight; interval need not divide a day evenly, so
  // align relative to the midnight of the first sample.
  const auto midnight = to_unix(start_of_day(series.front_time()));
  auto grid_start = midnight + ((first - midnight + step - 1) / step) * step;

  PowerSeries out{series.node_id, series.kind, {}, interval};
  std::size_t hi = 0;
  for (auto t = grid_start; t <= last; t += step) {
    const Instant at = from_unix(t);
    while (hi < series.samples.size() && series.samples[hi].timestamp < at) ++hi;
    double value = 0;
    if (series.samples[hi].timestamp == at) {
      value = series.samples[hi].value_w;
    } else {
      const auto& a = series.samples[hi - 1];
      const auto& b = series.samples[hi];
      const auto gap = (b.timestamp - a.timestamp).count();
      if (gap <= 2 * step) {
        const double frac = static_cast<double>((at - a.timestamp).count()) / static_cast<double>(gap);
        value = a.value_w + frac * (b.value_w - a.value_w);
      } else {
        value = series.kind == SeriesKind::generation ? 0.0 : a.value_w;
      }
    }
    out.samples.push_back({at, value});
  }
  return out;
}

JoinResult build_dataset(const std::vector<WeatherRecord>& weather, const PowerSeries& target) {
  JoinResult result;
  const bool disjoint = weather.empty() || target.empty() ||
                        weather.back().timestamp < target.front_time() ||
                        target.back_time() < weather.front().timestamp;
  if (disjoint) throw DataError(DataError::Kind::NoOverlap, 0, "weather and target do not overlap");

  std::map<Instant, double> by_time;
  for (const auto& s : target.samples) by_time.emplace(s.timestamp, s.value_w);
  for (const auto& w : weather) {
    auto it = by_time.find(w.timestamp);
    if (it == by_time.end()) continue;
    result.dataset.timestamps.push_back(w.timestamp);
    result.dataset.features.push_back(features_of(w));
    result.dataset.targets.push_back(it->second);
  }
  const auto matched = result.dataset.rows();
  if (matched == 0) throw DataError(DataError::Kind::NoOverlap, 0, "no matching timestamps");
  result.dropped = weather.size() + target.samples.size() - 2 * matched;
  return result;
}

std::vector<WeatherRecord> weather_day_grid(const std::vector<WeatherRecord>& weather, Instant day) {
  const auto start = start_of_day(day);
  const auto end = start + kMinuteAheadStep * static_cast<long>(kMinuteAheadSteps - 1);
  std::vector<WeatherRecord> out;
  for (const auto& w : weather)
    if (w.timestamp >= start && w.timestamp <= end && (w.timestamp - start) % kMinuteAheadStep == Seconds{0})
      out.push_back(w);
  return out;
}

}  // namespace gridtrade
