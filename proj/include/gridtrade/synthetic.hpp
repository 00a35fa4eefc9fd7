#pragma once

#include <cstdint>
#include <vector>

#include "gridtrade/energy_data.hpp"

namespace gridtrade::synthetic {

/// Clear-sky style bell: peak_w * exp(-(h - center)^2 / (2 sigma^2)) between
/// sunrise and sunset hours, zero outside.
struct SolarShape {
  double peak_w = 8000.0;
  double center_hour = 12.0;
  double sigma_hours = 2.5;
  double sunrise_hour = 6.0;
  double sunset_hour = 18.5;
};

PowerSeries solar_day(const std::string& node_id, Instant day, const SolarShape& shape, Seconds interval);

/// base_w outside [from_hour, to_hour), peak_w inside.
PowerSeries load_day(const std::string& node_id, Instant day, double base_w, double peak_w, double from_hour,
                     double to_hour, Seconds interval);

/// Weather on a regular grid: irradiance follows the same bell as
/// solar_day (peak irradiance_peak), temperature and humidity swing with
/// the sun, rainfall is drawn from the seed.
std::vector<WeatherRecord> weather_day(Instant day, double irradiance_peak, Seconds interval, std::uint64_t seed);

/// Daily-resolution PV dataset with target
///   capacity * (irr / 1000) * (1 - 0.004 * (T - 25)) + N(0, (noise * capacity)^2),
/// clamped at zero. About 15% of rows are night rows (irradiance 0).
Dataset pv_dataset(std::size_t rows, double capacity_w, double noise_fraction, std::uint64_t seed);

/// Noise-free target of pv_dataset().
double pv_power(double capacity_w, double irradiance, double air_temp);

}  // namespace gridtrade::synthetic
