#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gridtrade/error.hpp"
#include "gridtrade/ledger.hpp"
#include "gridtrade/time.hpp"

namespace gridtrade {

enum class ClockMode { realtime, accelerated, replay };

struct HostPort {
  std::string host;
  std::uint16_t port = 0;
  friend bool operator==(const HostPort&, const HostPort&) = default;
};

struct NodeConfig {
  std::string node_id;
  std::uint16_t listen_port = 7401;
  std::uint16_t api_port = 8401;
  std::vector<HostPort> peers;
  std::vector<std::string> members;  // node ids endowed at genesis, self included
  std::string seller;                // default counterparty for requests

  std::filesystem::path generation_path;
  std::filesystem::path consumption_path;
  std::filesystem::path weather_path;  // optional
  std::filesystem::path model_path;    // optional
  std::filesystem::path state_dir;

  Tokens endowment = 100000;
  unsigned difficulty_bits = 12;
  Instant genesis_time;

  ClockMode clock_mode = ClockMode::realtime;
  double clock_factor = 1.0;
  std::optional<Instant> clock_start;
  /// Wall-clock instant at which the simulated clock reads clock_start.
  /// Nodes sharing an anchor share a clock; defaults to process start.
  std::optional<Instant> clock_anchor;

  Seconds market_interval{300};
  double grid_import_limit = 0.0;
  std::chrono::milliseconds negotiation_timeout{30000};
  std::chrono::milliseconds handshake_timeout{5000};

  bool echo_events = true;  // also print event lines to stdout
};

/// `key = value` lines; `#` starts a comment; values may be double-quoted;
/// lists are comma separated or written as ["a", "b"]. Relative paths are
/// taken relative to `base_dir`. Throws Error("ConfigInvalid").
NodeConfig parse_node_config(const std::string& text, const std::filesystem::path& base_dir);

/// Reads the file, then applies GRIDTRADE_LISTEN_PORT and GRIDTRADE_API_PORT
/// from the environment.
NodeConfig load_node_config(const std::filesystem::path& path);

/// Inverse of parse_node_config; paths are written absolute.
std::string format_node_config(const NodeConfig& cfg);

std::string to_string(ClockMode mode);

}  // namespace gridtrade
