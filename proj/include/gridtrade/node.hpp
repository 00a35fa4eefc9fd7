#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stop_token>
#include <string>
#include <vector>

#include "json.hpp"

#include "gridtrade/chain.hpp"
#include "gridtrade/market.hpp"
#include "gridtrade/node_config.hpp"
#include "gridtrade/peer_net.hpp"

namespace gridtrade {

enum class SessionRole { buyer, seller };
enum class SessionState { requested, accepted, mining, committed, rejected, timed_out };

std::string to_string(SessionRole role);
std::string to_string(SessionState state);

struct TradeSession {
  std::string order_id;
  SessionRole role = SessionRole::buyer;
  NodeId buyer;
  NodeId seller;
  Address buyer_address;
  Address seller_address;
  WattHours units = 0;
  Instant created_at{};
  SessionState state = SessionState::requested;
  std::string reject_reason;
  std::optional<std::uint64_t> block_index;
  std::string block_hash;
  int mining_attempts = 0;
  std::chrono::steady_clock::time_point touched{};

  bool open() const noexcept {
    return state == SessionState::requested || state == SessionState::accepted || state == SessionState::mining;
  }
};

struct NodeEvent {
  std::uint64_t seq = 0;
  Instant time{};  // simulation clock
  std::string type;
  std::string message;
  nlohmann::json data;
};

/// Thread-safe bounded event backlog with blocking reads for subscribers.
class EventHub {
 public:
  explicit EventHub(std::size_t capacity = 4096) : capacity_(capacity) {}

  void publish(NodeEvent event);
  /// Events with seq > after, waiting up to `timeout` for at least one.
  std::vector<NodeEvent> wait_after(std::uint64_t after, std::chrono::milliseconds timeout);
  std::uint64_t last_seq() const;
  void close();
  bool closed() const;

 private:
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<NodeEvent> events_;
  std::size_t capacity_;
  bool closed_ = false;
};

struct ForecastCurve {
  std::string date;
  std::vector<Instant> times;
  std::vector<double> watts;
};

/// Immutable view of node state for API reads.
struct NodeSnapshot {
  std::string node_id;
  Address address;
  std::uint16_t listen_port = 0;
  NodeMarketState market;
  bool market_data = false;  // false when the clock is outside the data
  Instant interval_start{};
  WattHours available_wh = 0;
  Tokens balance = 0;
  std::map<Address, Tokens> wallets;
  std::vector<Block> chain;
  std::vector<TradeSession> sessions;
  std::vector<PeerInfo> peers;
  std::optional<ForecastCurve> forecast;
  bool mining = false;
};

enum class BlockVerdict { applied, queued, rejected };
std::string to_string(BlockVerdict verdict);

using MinerFn = std::function<Block(const Block& prev, const MineRequest& request, std::stop_token stop)>;

/// One prosumer node. A single internal event loop owns chain, ledger,
/// market and sessions; public methods hand work to it and wait.
class Node {
 public:
  /// Loads data files and persisted state. Throws DataMissing,
  /// ConfigInvalid or ChainCorrupt.
  explicit Node(NodeConfig config, MinerFn miner = {});
  ~Node();

  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;

  /// Starts listening and dialing configured peers. Throws PortInUse.
  void start();
  void stop();

  const NodeConfig& config() const;
  std::uint16_t listen_port() const;
  Instant now() const;

  TradeSession request_trade(WattHours units, const std::string& seller = {});
  TradeSession approve_trade(const std::string& order_id);
  PeerInfo add_peer(const std::string& host, std::uint16_t port);
  BlockVerdict receive_block(const Block& block, const std::string& order_id, const std::string& from = {});

  std::shared_ptr<const NodeSnapshot> snapshot() const;
  /// 286-point minute-ahead curve for a day. Throws NoModel, NoWeather or
  /// GridShapeError.
  ForecastCurve forecast(Instant day) const;

  EventHub& events();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace gridtrade
