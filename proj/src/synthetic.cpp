#include "gridtrade/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace gridtrade::synthetic {
namespace {

double bell(double hour, const SolarShape& s) {
  if (hour < s.sunrise_hour || hour > s.sunset_hour) return 0.0;
  const double z = (hour - s.center_hour) / s.sigma_hours;
  return s.peak_w * std::exp(-0.5 * z * z);
}

}  // namespace

PowerSeries solar_day(const std::string& node_id, Instant day, const SolarShape& shape, Seconds interval) {
  PowerSeries out{node_id, SeriesKind::generation, {}, interval};
  const auto start = start_of_day(day);
  for (auto t = start; t < start + std::chrono::hours(24); t += interval) {
    const double hour = static_cast<double>((t - start).count()) / 3600.0;
    out.samples.push_back({t, bell(hour, shape)});
  }
  return out;
}

PowerSeries load_day(const std::string& node_id, Instant day, double base_w, double peak_w, double from_hour,
                     double to_hour, Seconds interval) {
  PowerSeries out{node_id, SeriesKind::consumption, {}, interval};
  const auto start = start_of_day(day);
  for (auto t = start; t < start + std::chrono::hours(24); t += interval) {
    const double hour = static_cast<double>((t - start).count()) / 3600.0;
    out.samples.push_back({t, hour >= from_hour && hour < to_hour ? peak_w : base_w});
  }
  return out;
}

std::vector<WeatherRecord> weather_day(Instant day, double irradiance_peak, Seconds interval, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-0.5, 0.5);
  std::bernoulli_distribution rains(0.05);
  std::exponential_distribution<double> rain_mm(2.0);
  const SolarShape shape{irradiance_peak, 12.0, 2.5, 6.0, 18.5};
  std::vector<WeatherRecord> out;
  const auto start = start_of_day(day);
  for (auto t = start; t < start + std::chrono::hours(24); t += interval) {
    const double hour = static_cast<double>((t - start).count()) / 3600.0;
    const double irr = bell(hour, shape);
    const double sun = irradiance_peak > 0 ? irr / irradiance_peak : 0.0;
    WeatherRecord r;
    r.timestamp = t;
    r.irradiance = irr;
    r.air_temp = 26.0 + 7.0 * sun + jitter(rng);
    r.rel_humidity = std::clamp(85.0 - 30.0 * sun + 2.0 * jitter(rng), 0.0, 100.0);
    r.rainfall = rains(rng) ? rain_mm(rng) : 0.0;
    out.push_back(r);
  }
  return out;
}

double pv_power(double capacity_w, double irradiance, double air_temp) {
  return capacity_w * (irradiance / 1000.0) * (1.0 - 0.004 * (air_temp - 25.0));
}

Dataset pv_dataset(std::size_t rows, double capacity_w, double noise_fraction, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> irr(50.0, 1100.0);
  std::uniform_real_distribution<double> temp(22.0, 38.0);
  std::uniform_real_distribution<double> hum(40.0, 95.0);
  std::exponential_distribution<double> rain(0.5);
  std::bernoulli_distribution night(0.15);
  std::bernoulli_distribution wet(0.3);
  std::normal_distribution<double> noise(0.0, noise_fraction * capacity_w);
  Dataset d;
  const Instant t0 = from_unix(1525132800);  // 2018-05-01
  for (std::size_t i = 0; i < rows; ++i) {
    const bool dark = night(rng);
    const double x1 = dark ? 0.0 : irr(rng);
    const double x2 = temp(rng);
    const double x3 = hum(rng);
    const double x4 = wet(rng) ? rain(rng) : 0.0;
    const double p = dark ? 0.0 : std::max(0.0, pv_power(capacity_w, x1, x2) + noise(rng));
    d.timestamps.push_back(t0 + std::chrono::hours(24 * static_cast<long>(i)));
    d.features.push_back({x1, x2, x3, x4});
    d.targets.push_back(p);
  }
  return d;
}

}  // namespace gridtrade::synthetic
