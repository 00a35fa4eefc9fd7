#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "gridtrade/error.hpp"
#include "gridtrade/time.hpp"

namespace gridtrade {

enum class SeriesKind { generation, consumption };

std::string to_string(SeriesKind kind);
SeriesKind series_kind_from_string(const std::string& text);

struct PowerSample {
  Instant timestamp;
  double value_w = 0.0;

  friend bool operator==(const PowerSample&, const PowerSample&) = default;
};

/// Timestamps strictly increasing, values non-negative. `interval` is the
/// grid spacing after resample(), or the smallest observed gap after load.
struct PowerSeries {
  std::string node_id;
  SeriesKind kind = SeriesKind::generation;
  std::vector<PowerSample> samples;
  Seconds interval{0};

  bool empty() const noexcept { return samples.empty(); }
  Instant front_time() const { return samples.front().timestamp; }
  Instant back_time() const { return samples.back().timestamp; }

  /// Linear interpolation between neighbouring samples. Throws
  /// DataError(OutOfRange) outside [front_time, back_time].
  double value_at(Instant t) const;

  friend bool operator==(const PowerSeries&, const PowerSeries&) = default;
};

struct WeatherRecord {
  Instant timestamp;
  double irradiance = 0.0;    // W/m^2
  double air_temp = 0.0;      // degC
  double rel_humidity = 0.0;  // percent
  double rainfall = 0.0;      // mm
};

inline constexpr std::size_t kFeatureCount = 4;
using FeatureRow = std::array<double, kFeatureCount>;

FeatureRow features_of(const WeatherRecord& record);

struct Dataset {
  std::vector<Instant> timestamps;
  std::vector<FeatureRow> features;
  std::vector<double> targets;

  std::size_t rows() const noexcept { return targets.size(); }
};

struct JoinResult {
  Dataset dataset;
  std::size_t dropped = 0;
};

struct WeatherLoad {
  std::vector<WeatherRecord> records;
  std::size_t dropped = 0;  // rows with an empty field
};

class DataError : public Error {
 public:
  enum class Kind {
    MalformedRow,
    NonMonotonicTimestamp,
    NegativeValue,
    InvalidValue,
    EmptySeries,
    NoOverlap,
    OutOfRange,
    FileMissing,
  };

  DataError(Kind kind, std::size_t line, const std::string& message);

  Kind kind() const noexcept { return kind_; }
  /// 1-based file line, 0 when not tied to a line.
  std::size_t line() const noexcept { return line_; }

 private:
  Kind kind_;
  std::size_t line_;
};

/// Reads `timestamp,value_w`. Rejects unsorted or duplicate timestamps.
PowerSeries load_power_csv(const std::filesystem::path& path, const std::string& node_id,
                           SeriesKind kind);
PowerSeries parse_power_csv(const std::string& text, const std::string& node_id, SeriesKind kind);
void write_power_csv(const std::filesystem::path& path, const PowerSeries& series);
std::string format_power_csv(const PowerSeries& series);

/// Reads `timestamp,irradiance_wm2,air_temp_c,rel_humidity_pct,rainfall_mm`.
WeatherLoad load_weather_csv(const std::filesystem::path& path);
WeatherLoad parse_weather_csv(const std::string& text);
void write_weather_csv(const std::filesystem::path& path, const std::vector<WeatherRecord>& records);
std::string format_weather_csv(const std::vector<WeatherRecord>& records);

/// Uniform grid aligned to midnight UTC, spanning the grid points that fall
/// inside the series. Gaps up to 2*interval are interpolated linearly;
/// longer gaps read 0 for generation and hold the previous value for
/// consumption.
PowerSeries resample(const PowerSeries& series, Seconds interval);

/// Inner join on exact timestamp.
JoinResult build_dataset(const std::vector<WeatherRecord>& weather, const PowerSeries& target);

/// Records at 5-minute spacing from 00:00:00 to 23:45:00 of the given day.
std::vector<WeatherRecord> weather_day_grid(const std::vector<WeatherRecord>& weather,
                                            Instant day);

inline constexpr Seconds kMinuteAheadStep{300};
inline constexpr std::size_t kMinuteAheadSteps = 286;

}  // namespace gridtrade
