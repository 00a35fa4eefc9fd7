#pragma once

#include <cstdint>
#include <memory>

#include "json.hpp"

#include "gridtrade/node.hpp"

namespace gridtrade {

nlohmann::json to_json(const TradeSession& session);
nlohmann::json to_json(const NodeEvent& event);
nlohmann::json to_json(const ForecastCurve& curve);
nlohmann::json status_json(const Node& node, const NodeSnapshot& snapshot, std::uint16_t api_port);

/// Local HTTP + WebSocket API on 127.0.0.1. One thread per connection.
///
///   GET  /status /chain /balance /sessions /forecast?date=YYYY-MM-DD
///   POST /trade/request {units[, seller]}  /trade/approve {order_id}
///        /peer/add {host, port}
///   WS   /events[?since=seq]
///
/// Errors come back as {"error": code, "message": text}.
class ApiServer {
 public:
  /// Binds immediately; port 0 picks a free one. Throws NetError(PortInUse).
  ApiServer(Node& node, std::uint16_t port);
  ~ApiServer();

  ApiServer(const ApiServer&) = delete;
  ApiServer& operator=(const ApiServer&) = delete;

  std::uint16_t port() const;
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace gridtrade
