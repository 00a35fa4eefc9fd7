#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "scenario.hpp"

namespace gridtrade::cli {

struct ReplayOptions {
  std::filesystem::path scenario;
  std::map<std::string, std::filesystem::path> configs;  // overrides scenario bindings
  std::filesystem::path workdir;                         // state, derived configs, logs
  std::filesystem::path executable;                      // binary that provides `run`
  double factor = 60.0;
  std::optional<unsigned> difficulty_bits;
  bool verbose = false;
};

/// Runs the scenario against freshly started node processes and writes
/// report.txt and report.json into the workdir. Returns the process exit
/// code: 0 when every trade committed and the audit agrees.
int run_replay(const ReplayOptions& options);

}  // namespace gridtrade::cli
