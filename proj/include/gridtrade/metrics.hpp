#pragma once

#include <string>
#include <utility>
#include <vector>

namespace gridtrade {

/// Forecast quality. mse/rmse/mae in the units of the inputs; mafe, mpe and
/// accuracy in percent.
struct MetricsReport {
  double corr = 0.0;
  double mae = 0.0;
  double rmse = 0.0;
  double mse = 0.0;
  double mpe = 0.0;
  bool mpe_infinite = false;  // some actual value is zero
  double mafe = 0.0;          // 100 * mae
  double accuracy_pct = 0.0;  // 100 * (1 - sum|a-p| / sum|a|), clamped to [0, 100]
  double r2 = 0.0;
  bool degenerate_actuals = false;  // all actuals equal: r2 and corr undefined
};

/// Throws Error("LengthMismatch") on different lengths or fewer than 2 values.
MetricsReport compute_metrics(const std::vector<double>& actual, const std::vector<double>& predicted);

/// Aligned text table with one column per labelled report, using the row
/// names used in the minute-ahead evaluation reports.
std::string format_metrics_table(const std::vector<std::pair<std::string, MetricsReport>>& columns);

}  // namespace gridtrade
