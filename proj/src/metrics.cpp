#include "gridtrade/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "gridtrade/error.hpp"

namespace gridtrade {
namespace {

std::string printf_value(const char* format, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, value);
  return buf;
}

}  // namespace

MetricsReport compute_metrics(const std::vector<double>& actual, const std::vector<double>& predicted) {
  if (actual.size() != predicted.size() || actual.size() < 2)
    throw Error("LengthMismatch", "metrics need two equal-length series of at least 2 values (got " +
                                      std::to_string(actual.size()) + " and " + std::to_string(predicted.size()) +
                                      ")");
  const auto n = static_cast<double>(actual.size());
  MetricsReport r;
  double sum_abs = 0, sum_sq = 0, sum_abs_actual = 0, sum_pct = 0;
  double mean_a = 0, mean_p = 0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const double e = actual[i] - predicted[i];
    sum_abs += std::abs(e);
    sum_sq += e * e;
    sum_abs_actual += std::abs(actual[i]);
    if (actual[i] == 0.0)
      r.mpe_infinite = true;
    else
      sum_pct += e / actual[i];
    mean_a += actual[i];
    mean_p += predicted[i];
  }
  mean_a /= n;
  mean_p /= n;
  double cov = 0, var_a = 0, var_p = 0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const double da = actual[i] - mean_a, dp = predicted[i] - mean_p;
    cov += da * dp;
    var_a += da * da;
    var_p += dp * dp;
  }
  r.mae = sum_abs / n;
  r.mse = sum_sq / n;
  r.rmse = std::sqrt(r.mse);
  r.mafe = 100.0 * r.mae;
  r.mpe = r.mpe_infinite ? std::numeric_limits<double>::infinity() : 100.0 * sum_pct / n;
  if (sum_abs_actual > 0)
    r.accuracy_pct = std::clamp(100.0 * (1.0 - sum_abs / sum_abs_actual), 0.0, 100.0);
  else
    r.accuracy_pct = sum_abs == 0 ? 100.0 : 0.0;
  r.degenerate_actuals = var_a == 0.0;
  if (r.degenerate_actuals) {
    r.r2 = std::numeric_limits<double>::quiet_NaN();
    r.corr = std::numeric_limits<double>::quiet_NaN();
  } else {
    r.r2 = 1.0 - sum_sq / var_a;
    r.corr = var_p == 0.0 ? 0.0 : cov / std::sqrt(var_a * var_p);
  }
  return r;
}

std::string format_metrics_table(const std::vector<std::pair<std::string, MetricsReport>>& columns) {
  struct Row {
    const char* label;
    std::string (*render)(const MetricsReport&);
  };
  static const Row rows[] = {
      {"Correlation <Corr>:", [](const MetricsReport& m) { return printf_value("%.9g", m.corr); }},
      {"Mean Absolute Error <MAE> (Forecast):", [](const MetricsReport& m) { return printf_value("%.9g", m.mae); }},
      {"Root Mean Squared Error <RMSE>:", [](const MetricsReport& m) { return printf_value("%.9g", m.rmse); }},
      {"Mean Square Error <MSE>:", [](const MetricsReport& m) { return printf_value("%.3G", m.mse); }},
      {"Mean Percentage Error <MPE>:",
       [](const MetricsReport& m) { return m.mpe_infinite ? std::string("inf") : printf_value("%.9g", m.mpe); }},
      {"Mean Absolute Forecast Error <MAFE>:", [](const MetricsReport& m) { return printf_value("%.9g", m.mafe); }},
      {"Accuracy:", [](const MetricsReport& m) { return printf_value("%.2f%%", m.accuracy_pct); }},
      {"Coefficient of variation <R>:",
       [](const MetricsReport& m) {
         return m.degenerate_actuals ? std::string("undefined") : printf_value("%.4f", m.r2);
       }},
  };

  std::size_t label_width = 0;
  for (const auto& row : rows) label_width = std::max(label_width, std::string(row.label).size());
  std::vector<std::size_t> widths;
  for (const auto& [name, report] : columns) {
    std::size_t w = name.size();
    for (const auto& row : rows) w = std::max(w, row.render(report).size());
    widths.push_back(w);
  }
  const auto pad = [](std::string s, std::size_t w, bool right) {
    if (s.size() < w) s = right ? std::string(w - s.size(), ' ') + s : s + std::string(w - s.size(), ' ');
    return s;
  };
  std::string out = pad("", label_width, false);
  for (std::size_t c = 0; c < columns.size(); ++c) out += "  " + pad(columns[c].first, widths[c], true);
  out += '\n';
  for (const auto& row : rows) {
    out += pad(row.label, label_width, false);
    for (std::size_t c = 0; c < columns.size(); ++c) out += "  " + pad(row.render(columns[c].second), widths[c], true);
    out += '\n';
  }
  return out;
}

}  // namespace gridtrade
