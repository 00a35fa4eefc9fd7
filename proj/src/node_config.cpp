#include "gridtrade/node_config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "gridtrade/chain.hpp"

namespace gridtrade {
namespace {

[[noreturn]] void invalid(const std::string& why) { throw Error("ConfigInvalid", why); }

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string unquote(std::string s) {
  s = trim(s);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
  return s;
}

// Drops a trailing comment that is not inside quotes.
std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

std::vector<std::string> parse_list(std::string value) {
  value = trim(value);
  if (!value.empty() && value.front() == '[') {
    if (value.back() != ']') invalid("unterminated list: " + value);
    value = value.substr(1, value.size() - 2);
  }
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ','))
    if (auto v = unquote(item); !v.empty()) out.push_back(v);
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) invalid(key + ": not a valid number: '" + value + "'");
  return out;
}

std::uint16_t parse_port(const std::string& key, const std::string& value) {
  const auto n = parse_number<unsigned long>(key, value);
  if (n > 65535) invalid(key + ": port out of range: " + value);
  return static_cast<std::uint16_t>(n);
}

HostPort parse_host_port(const std::string& value) {
  const auto colon = value.rfind(':');
  if (colon == std::string::npos || colon == 0) invalid("peers: expected host:port, got '" + value + "'");
  return {value.substr(0, colon), parse_port("peers", value.substr(colon + 1))};
}

Instant parse_time(const std::string& key, const std::string& value) {
  const auto t = parse_iso8601(value);
  if (!t) invalid(key + ": not an ISO 8601 timestamp: '" + value + "'");
  return *t;
}

bool valid_node_id(const std::string& id) {
  if (id.empty() || id.size() > 64) return false;
  for (char c : id)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') return false;
  return true;
}

std::optional<std::uint16_t> env_port(const char* name) {
  const char* v = std::getenv(name);
  if (!v || !*v) return std::nullopt;
  return parse_port(name, v);
}

}  // namespace

std::string to_string(ClockMode mode) {
  switch (mode) {
    case ClockMode::realtime: return "realtime";
    case ClockMode::accelerated: return "accelerated";
    case ClockMode::replay: return "replay";
  }
  return "?";
}

NodeConfig parse_node_config(const std::string& text, const std::filesystem::path& base_dir) {
  NodeConfig cfg;
  cfg.genesis_time = default_genesis_time();
  const auto path = [&](const std::string& v) {
    const std::filesystem::path p(v);
    return p.is_absolute() ? p : base_dir / p;
  };
  const std::map<std::string, std::function<void(const std::string&)>> setters{
      {"node_id", [&](const std::string& v) { cfg.node_id = v; }},
      {"listen_port", [&](const std::string& v) { cfg.listen_port = parse_port("listen_port", v); }},
      {"api_port", [&](const std::string& v) { cfg.api_port = parse_port("api_port", v); }},
      {"peers",
       [&](const std::string& v) {
         for (const auto& item : parse_list(v)) cfg.peers.push_back(parse_host_port(item));
       }},
      {"members", [&](const std::string& v) { cfg.members = parse_list(v); }},
      {"seller", [&](const std::string& v) { cfg.seller = v; }},
      {"generation_path", [&](const std::string& v) { cfg.generation_path = path(v); }},
      {"consumption_path", [&](const std::string& v) { cfg.consumption_path = path(v); }},
      {"weather_path", [&](const std::string& v) { cfg.weather_path = path(v); }},
      {"model_path", [&](const std::string& v) { cfg.model_path = path(v); }},
      {"state_dir", [&](const std::string& v) { cfg.state_dir = path(v); }},
      {"endowment", [&](const std::string& v) { cfg.endowment = parse_number<Tokens>("endowment", v); }},
      {"difficulty_bits",
       [&](const std::string& v) {
         cfg.difficulty_bits = parse_number<unsigned>("difficulty_bits", v);
         if (cfg.difficulty_bits > 64) invalid("difficulty_bits must be at most 64");
       }},
      {"genesis_time", [&](const std::string& v) { cfg.genesis_time = parse_time("genesis_time", v); }},
      {"clock_mode",
       [&](const std::string& v) {
         const auto& m = v;
         if (m == "realtime") cfg.clock_mode = ClockMode::realtime;
         else if (m == "accelerated") cfg.clock_mode = ClockMode::accelerated;
         else if (m == "replay") cfg.clock_mode = ClockMode::replay;
         else invalid("clock_mode must be realtime, accelerated or replay, got '" + m + "'");
       }},
      {"clock_factor",
       [&](const std::string& v) {
         cfg.clock_factor = parse_number<double>("clock_factor", v);
         if (!(cfg.clock_factor > 0)) invalid("clock_factor must be positive");
       }},
      {"clock_start", [&](const std::string& v) { cfg.clock_start = parse_time("clock_start", v); }},
      {"clock_anchor", [&](const std::string& v) { cfg.clock_anchor = parse_time("clock_anchor", v); }},
      {"market_interval",
       [&](const std::string& v) {
         cfg.market_interval = Seconds(parse_number<long>("market_interval", v));
         if (cfg.market_interval.count() <= 0) invalid("market_interval must be positive");
       }},
      {"grid_import_limit",
       [&](const std::string& v) {
         cfg.grid_import_limit = parse_number<double>("grid_import_limit", v);
         if (!(cfg.grid_import_limit >= 0)) invalid("grid_import_limit must be non-negative");
       }},
      {"negotiation_timeout",
       [&](const std::string& v) {
         cfg.negotiation_timeout = std::chrono::milliseconds(
             static_cast<long>(1000 * parse_number<double>("negotiation_timeout", v)));
       }},
      {"handshake_timeout",
       [&](const std::string& v) {
         cfg.handshake_timeout =
             std::chrono::milliseconds(static_cast<long>(1000 * parse_number<double>("handshake_timeout", v)));
       }},
  };

  std::set<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  for (std::size_t line_no = 1; std::getline(in, raw); ++line_no) {
    const auto line = trim(strip_comment(raw));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) invalid("line " + std::to_string(line_no) + ": expected key = value");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end()) invalid("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) invalid("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    try {
      it->second(key == "peers" || key == "members" ? value : unquote(value));
    } catch (const Error& e) {
      throw Error("ConfigInvalid", "line " + std::to_string(line_no) + ": " + e.what());
    }
  }

  if (!valid_node_id(cfg.node_id)) invalid("node_id must be 1-64 letters, digits, '-' or '_'");
  if (cfg.generation_path.empty()) invalid("generation_path is required");
  if (cfg.consumption_path.empty()) invalid("consumption_path is required");
  for (const auto& m : cfg.members)
    if (!valid_node_id(m)) invalid("members: bad node id '" + m + "'");
  if (std::find(cfg.members.begin(), cfg.members.end(), cfg.node_id) == cfg.members.end())
    cfg.members.insert(cfg.members.begin(), cfg.node_id);
  if (cfg.state_dir.empty()) cfg.state_dir = base_dir / ("state-" + cfg.node_id);
  if (cfg.clock_mode == ClockMode::realtime) cfg.clock_factor = 1.0;
  return cfg;
}

std::string format_node_config(const NodeConfig& cfg) {
  std::ostringstream out;
  const auto quoted = [](const std::filesystem::path& p) {
    return "\"" + std::filesystem::absolute(p).lexically_normal().string() + "\"";
  };
  const auto list = [](const auto& items, const auto& show) {
    std::string s = "[";
    for (std::size_t i = 0; i < items.size(); ++i) s += (i ? ", \"" : "\"") + show(items[i]) + "\"";
    return s + "]";
  };
  char factor[32];
  std::snprintf(factor, sizeof factor, "%.17g", cfg.clock_factor);
  out << "node_id = " << cfg.node_id << "\n"
      << "listen_port = " << cfg.listen_port << "\n"
      << "api_port = " << cfg.api_port << "\n"
      << "members = " << list(cfg.members, [](const std::string& m) { return m; }) << "\n";
  if (!cfg.peers.empty())
    out << "peers = "
        << list(cfg.peers, [](const HostPort& h) { return h.host + ":" + std::to_string(h.port); }) << "\n";
  if (!cfg.seller.empty()) out << "seller = " << cfg.seller << "\n";
  out << "generation_path = " << quoted(cfg.generation_path) << "\n"
      << "consumption_path = " << quoted(cfg.consumption_path) << "\n";
  if (!cfg.weather_path.empty()) out << "weather_path = " << quoted(cfg.weather_path) << "\n";
  if (!cfg.model_path.empty()) out << "model_path = " << quoted(cfg.model_path) << "\n";
  out << "state_dir = " << quoted(cfg.state_dir) << "\n"
      << "endowment = " << cfg.endowment << "\n"
      << "difficulty_bits = " << cfg.difficulty_bits << "\n"
      << "genesis_time = " << format_iso8601(cfg.genesis_time) << "\n"
      << "clock_mode = " << to_string(cfg.clock_mode) << "\n"
      << "clock_factor = " << factor << "\n";
  if (cfg.clock_start) out << "clock_start = " << format_iso8601(*cfg.clock_start) << "\n";
  if (cfg.clock_anchor) out << "clock_anchor = " << format_iso8601(*cfg.clock_anchor) << "\n";
  out << "market_interval = " << cfg.market_interval.count() << "\n"
      << "grid_import_limit = " << cfg.grid_import_limit << "\n"
      << "negotiation_timeout = " << cfg.negotiation_timeout.count() / 1000.0 << "\n"
      << "handshake_timeout = " << cfg.handshake_timeout.count() / 1000.0 << "\n";
  return out.str();
}

NodeConfig load_node_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) invalid("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  auto cfg = parse_node_config(ss.str(), path.parent_path().empty() ? "." : path.parent_path());
  if (auto p = env_port("GRIDTRADE_LISTEN_PORT")) cfg.listen_port = *p;
  if (auto p = env_port("GRIDTRADE_API_PORT")) cfg.api_port = *p;
  return cfg;
}

}  // namespace gridtrade
