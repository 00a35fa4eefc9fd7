#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "gridtrade/energy_data.hpp"
#include "gridtrade/synthetic.hpp"

using namespace gridtrade;

namespace {

Instant at(const char* iso) { return *parse_iso8601(iso); }

DataError::Kind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const DataError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected DataError";
  return DataError::Kind::FileMissing;
}

PowerSeries series_of(SeriesKind kind, std::initializer_list<std::pair<std::int64_t, double>> pts) {
  PowerSeries s{"n", kind, {}, Seconds{0}};
  for (auto [t, v] : pts) s.samples.push_back({from_unix(t), v});
  return s;
}

}  // namespace

TEST(LoadPowerCsv, HeaderOnlyGivesEmptySeries) {
  const auto s = parse_power_csv("timestamp,value_w\n", "ET", SeriesKind::generation);
  EXPECT_TRUE(s.empty());
}

TEST(LoadPowerCsv, TwoRowsInferFiveMinuteInterval) {
  const auto s = parse_power_csv(
      "timestamp,value_w\n2019-10-09T09:00:00Z,8000\n2019-10-09T09:05:00Z,7900\n", "ET", SeriesKind::generation);
  ASSERT_EQ(s.samples.size(), 2u);
  EXPECT_EQ(s.interval, Seconds{300});
  EXPECT_DOUBLE_EQ(s.samples[1].value_w, 7900);
  EXPECT_EQ(s.node_id, "ET");
}

TEST(LoadPowerCsv, RejectsNegativeMalformedAndNonMonotonic) {
  const std::string head = "timestamp,value_w\n";
  try {
    parse_power_csv(head + "2019-10-09T09:00:00Z,-5\n", "ET", SeriesKind::generation);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.kind(), DataError::Kind::NegativeValue);
    EXPECT_EQ(e.line(), 2u);
  }
  EXPECT_EQ(kind_of([&] { parse_power_csv(head + "yesterday,5\n", "ET", SeriesKind::generation); }),
            DataError::Kind::MalformedRow);
  EXPECT_EQ(kind_of([&] { parse_power_csv(head + "2019-10-09T09:00:00Z,5,6\n", "ET", SeriesKind::generation); }),
            DataError::Kind::MalformedRow);
  EXPECT_EQ(kind_of([&] { parse_power_csv("time,value\n", "ET", SeriesKind::generation); }),
            DataError::Kind::MalformedRow);
  EXPECT_EQ(kind_of([&] {
              parse_power_csv(head + "2019-10-09T09:05:00Z,5\n2019-10-09T09:00:00Z,5\n", "ET", SeriesKind::generation);
            }),
            DataError::Kind::NonMonotonicTimestamp);
  EXPECT_EQ(kind_of([&] {
              parse_power_csv(head + "2019-10-09T09:00:00Z,5\n2019-10-09T09:00:00Z,6\n", "ET", SeriesKind::generation);
            }),
            DataError::Kind::NonMonotonicTimestamp);
  EXPECT_EQ(kind_of([] { load_power_csv("/nonexistent/power.csv", "ET", SeriesKind::generation); }),
            DataError::Kind::FileMissing);
}

TEST(LoadPowerCsv, FileRoundTripPreservesSeries) {
  const auto path = std::filesystem::temp_directory_path() / "gridtrade_roundtrip.csv";
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> v(0, 12000);
  PowerSeries s{"ET", SeriesKind::generation, {}, Seconds{300}};
  for (int i = 0; i < 200; ++i) s.samples.push_back({from_unix(1570579200 + 300 * i), v(rng)});
  write_power_csv(path, s);
  const auto back = load_power_csv(path, "ET", SeriesKind::generation);
  EXPECT_EQ(back, s);
  std::filesystem::remove(path);
}

TEST(Resample, UniformSeriesIsUnchanged) {
  auto s = series_of(SeriesKind::generation, {{0, 1}, {300, 2}, {600, 3}, {900, 4}});
  s.interval = Seconds{300};
  EXPECT_EQ(resample(s, Seconds{300}), s);
}

TEST(Resample, LinearMidpoint) {
  const auto s = series_of(SeriesKind::generation, {{0, 0}, {600, 1000}});
  const auto r = resample(s, Seconds{300});
  ASSERT_EQ(r.samples.size(), 3u);
  EXPECT_DOUBLE_EQ(r.samples[1].value_w, 500.0);
  EXPECT_EQ(r.interval, Seconds{300});
}

TEST(Resample, FullDayGridHas286Steps) {
  PowerSeries s{"ET", SeriesKind::generation, {}, Seconds{60}};
  const auto day = at("2019-10-09T00:00:00Z");
  for (auto t = day; t <= at("2019-10-09T23:45:00Z"); t += Seconds{60}) s.samples.push_back({t, 1.0});
  const auto r = resample(s, Seconds{300});
  EXPECT_EQ(r.samples.size(), 286u);
  EXPECT_EQ(r.front_time(), day);
  EXPECT_EQ(r.back_time(), at("2019-10-09T23:45:00Z"));
}

TEST(Resample, AlignsToMidnightAndAppliesGapPolicy) {
  // Samples at 00:01 and 00:31: the 00:05..00:30 points sit in a 30-minute gap.
  const auto gen = series_of(SeriesKind::generation, {{60, 100}, {1860, 700}});
  const auto r = resample(gen, Seconds{300});
  ASSERT_EQ(r.samples.size(), 6u);
  EXPECT_EQ(to_unix(r.front_time()), 300);
  for (const auto& p : r.samples) EXPECT_EQ(p.value_w, 0.0);

  auto load = gen;
  load.kind = SeriesKind::consumption;
  for (const auto& p : resample(load, Seconds{300}).samples) EXPECT_EQ(p.value_w, 100.0);
}

TEST(Resample, RejectsEmptyAndNonPositiveInterval) {
  EXPECT_EQ(kind_of([] { resample(series_of(SeriesKind::generation, {}), Seconds{300}); }),
            DataError::Kind::EmptySeries);
  EXPECT_THROW(resample(series_of(SeriesKind::generation, {{0, 1}}), Seconds{0}), Error);
}

TEST(Resample, IsIdempotentOnRandomSeries) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> gap(1, 1500);
  std::uniform_real_distribution<double> v(0, 5000);
  for (int trial = 0; trial < 200; ++trial) {
    const auto kind = trial % 2 ? SeriesKind::generation : SeriesKind::consumption;
    PowerSeries s{"n", kind, {}, Seconds{0}};
    std::int64_t t = 1570579200 + gap(rng);
    for (int i = 0; i < 40; ++i, t += gap(rng)) s.samples.push_back({from_unix(t), v(rng)});
    const Seconds step{std::vector<int>{60, 300, 900}[trial % 3]};
    if (s.back_time() - s.front_time() < step * 2) continue;
    const auto once = resample(s, step);
    if (once.empty()) continue;
    EXPECT_EQ(resample(once, step), once) << "trial " << trial;
  }
}

TEST(Weather, ParsesDropsGapsAndValidatesRanges) {
  const std::string head = "timestamp,irradiance_wm2,air_temp_c,rel_humidity_pct,rainfall_mm\n";
  const auto load = parse_weather_csv(head +
                                      "2019-10-09T00:00:00Z,0,25,80,0\n"
                                      "2019-10-09T00:05:00Z,,25,80,0\n"
                                      "2019-10-09T00:10:00Z,10,25.5,81,0.2\n");
  EXPECT_EQ(load.records.size(), 2u);
  EXPECT_EQ(load.dropped, 1u);
  EXPECT_DOUBLE_EQ(load.records[1].rainfall, 0.2);
  EXPECT_EQ(kind_of([&] { parse_weather_csv(head + "2019-10-09T00:00:00Z,0,25,101,0\n"); }),
            DataError::Kind::InvalidValue);
  EXPECT_EQ(kind_of([&] { parse_weather_csv(head + "2019-10-09T00:00:00Z,-1,25,50,0\n"); }),
            DataError::Kind::InvalidValue);
  EXPECT_EQ(kind_of([&] { parse_weather_csv(head + "2019-10-09T00:00:00Z,1,25,50,-2\n"); }),
            DataError::Kind::InvalidValue);
}

namespace {

// `matched` shared daily timestamps plus a few unmatched rows on each side.
std::pair<std::vector<WeatherRecord>, PowerSeries> joinable(std::size_t matched) {
  std::vector<WeatherRecord> w;
  PowerSeries target{"ET", SeriesKind::generation, {}, Seconds{86400}};
  const std::int64_t t0 = 1525132800;
  for (std::size_t i = 0; i < matched + 3; ++i) {
    const auto t = from_unix(t0 + 86400 * static_cast<std::int64_t>(i));
    if (i != 1) w.push_back({t, 500.0 + static_cast<double>(i), 30, 70, 0});  // skip day 1
    if (i != 2 && i != 3) target.samples.push_back({t, 1000.0 + static_cast<double>(i)});
  }
  // Day 1 is target-only; days 2 and 3 are weather-only.
  return {w, target};
}

}  // namespace

TEST(BuildDataset, DailyScaleHas601Rows) {
  auto [w, target] = joinable(601);
  const auto r = build_dataset(w, target);
  EXPECT_EQ(r.dataset.rows(), 601u);
  EXPECT_EQ(r.dataset.features.size(), r.dataset.rows());
  EXPECT_EQ(r.dropped, 3u);
  EXPECT_EQ(r.dataset.features[0].size(), 4u);
}

TEST(BuildDataset, SmallerSiteHas357Rows) {
  auto [w, target] = joinable(357);
  const auto r = build_dataset(w, target);
  EXPECT_EQ(r.dataset.rows(), 357u);
  EXPECT_LE(r.dataset.rows(), std::min(w.size(), target.samples.size()));
  EXPECT_DOUBLE_EQ(r.dataset.targets[0], 1000.0);
  EXPECT_DOUBLE_EQ(r.dataset.features[0][0], 500.0);
}

TEST(BuildDataset, DisjointRangesThrowNoOverlap) {
  std::vector<WeatherRecord> w{{from_unix(0), 1, 1, 1, 0}};
  const auto target = series_of(SeriesKind::generation, {{86400, 5}});
  EXPECT_EQ(kind_of([&] { build_dataset(w, target); }), DataError::Kind::NoOverlap);
}

TEST(WeatherDayGrid, SelectsThe286MinuteAheadSteps) {
  const auto day = at("2019-10-09T00:00:00Z");
  const auto w = synthetic::weather_day(day, 900, Seconds{300}, 1);
  EXPECT_EQ(w.size(), 288u);
  const auto grid = weather_day_grid(w, day + std::chrono::hours(13));
  ASSERT_EQ(grid.size(), kMinuteAheadSteps);
  EXPECT_EQ(grid.back().timestamp, at("2019-10-09T23:45:00Z"));
}
