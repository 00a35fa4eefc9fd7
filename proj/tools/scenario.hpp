#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gridtrade/error.hpp"
#include "gridtrade/time.hpp"

namespace gridtrade::cli {

enum class ActionKind { request, approve };

struct Action {
  Instant at;
  std::string actor;
  ActionKind kind = ActionKind::request;
  std::uint64_t units = 0;
  std::size_t line = 0;
  /// request: index of the approve that answers it; approve: index of its request.
  std::optional<std::size_t> partner;
};

/// JSON lines. Action lines: {"at","actor","action","units"}. Binding lines:
/// {"bind": node_id, "config": path}, paths relative to the scenario file.
struct Scenario {
  std::vector<Action> actions;
  std::map<std::string, std::filesystem::path> configs;

  std::size_t trade_count() const;
  /// Sum of request units.
  std::uint64_t requested_units() const;
};

/// Error("ScenarioParse", "line N: ..."). Actions must be time-ordered and
/// every approve must answer an earlier unanswered request for the same
/// units (first come, first served); the approver becomes the seller.
Scenario parse_scenario(const std::string& text, const std::filesystem::path& base_dir);
Scenario load_scenario(const std::filesystem::path& path);

std::string format_scenario_line(const Action& action);

}  // namespace gridtrade::cli
