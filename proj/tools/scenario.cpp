#include "scenario.hpp"

#include <deque>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace gridtrade::cli {
namespace {

using json = nlohmann::json;

[[noreturn]] void bad(std::size_t line, const std::string& why) {
  throw Error("ScenarioParse", "line " + std::to_string(line) + ": " + why);
}

}  // namespace

std::size_t Scenario::trade_count() const {
  std::size_t n = 0;
  for (const auto& a : actions) n += a.kind == ActionKind::approve;
  return n;
}

std::uint64_t Scenario::requested_units() const {
  std::uint64_t sum = 0;
  for (const auto& a : actions)
    if (a.kind == ActionKind::request) sum += a.units;
  return sum;
}

Scenario parse_scenario(const std::string& text, const std::filesystem::path& base_dir) {
  Scenario s;
  std::istringstream in(text);
  std::string raw;
  std::deque<std::size_t> open;  // unanswered requests, oldest first
  for (std::size_t line = 1; std::getline(in, raw); ++line) {
    if (raw.find_first_not_of(" \t\r") == std::string::npos || raw.front() == '#') continue;
    const auto j = json::parse(raw, nullptr, false);
    if (j.is_discarded() || !j.is_object()) bad(line, "not a JSON object");

    if (j.contains("bind")) {
      if (!j["bind"].is_string() || !j.contains("config") || !j["config"].is_string())
        bad(line, "binding needs string \"bind\" and \"config\"");
      const std::filesystem::path p = j["config"].get<std::string>();
      if (!s.configs.emplace(j["bind"].get<std::string>(), p.is_absolute() ? p : base_dir / p).second)
        bad(line, "node " + j["bind"].get<std::string>() + " bound twice");
      continue;
    }

    Action a;
    a.line = line;
    if (!j.contains("at") || !j["at"].is_string()) bad(line, "missing \"at\"");
    const auto at = parse_iso8601(j["at"].get<std::string>());
    if (!at) bad(line, "bad timestamp " + j["at"].get<std::string>());
    a.at = *at;
    if (!j.contains("actor") || !j["actor"].is_string() || j["actor"].get<std::string>().empty())
      bad(line, "missing \"actor\"");
    a.actor = j["actor"];
    const auto action = j.value("action", std::string());
    if (action == "request") a.kind = ActionKind::request;
    else if (action == "approve") a.kind = ActionKind::approve;
    else bad(line, "action must be request or approve");
    if (!j.contains("units") || !j["units"].is_number_unsigned() || j["units"].get<std::uint64_t>() == 0)
      bad(line, "units must be a positive integer");
    a.units = j["units"];
    if (!s.actions.empty() && a.at < s.actions.back().at) bad(line, "actions out of time order");

    const auto index = s.actions.size();
    if (a.kind == ActionKind::approve) {
      auto it = open.begin();
      while (it != open.end() && s.actions[*it].units != a.units) ++it;
      if (it == open.end()) bad(line, "approve of " + std::to_string(a.units) + " units has no open request");
      if (s.actions[*it].actor == a.actor) bad(line, a.actor + " approves its own request");
      a.partner = *it;
      s.actions[*it].partner = index;
      open.erase(it);
    } else {
      open.push_back(index);
    }
    s.actions.push_back(std::move(a));
  }
  if (!open.empty()) bad(s.actions[open.front()].line, "request is never approved");
  return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("ScenarioParse", "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str(), path.parent_path());
}

std::string format_scenario_line(const Action& a) {
  return json{{"at", format_iso8601(a.at)},
              {"actor", a.actor},
              {"action", a.kind == ActionKind::request ? "request" : "approve"},
              {"units", a.units}}
      .dump();
}

}  // namespace gridtrade::cli
