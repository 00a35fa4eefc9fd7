#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"

#include "gridtrade/chain.hpp"
#include "gridtrade/error.hpp"

namespace gridtrade {

class ProtocolError : public Error {
 public:
  enum class Kind { MalformedMessage, UnknownKind };

  ProtocolError(Kind kind, const std::string& message);
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

enum class RejectReason { insufficient_surplus, busy, unknown_order, mining_cancelled, insufficient_balance };

std::string_view to_string(RejectReason reason);

namespace msg {

struct AddClient {
  std::string node_id;
  std::uint16_t listen_port = 0;
  std::string address;
  friend bool operator==(const AddClient&, const AddClient&) = default;
};

struct AddClientAck {
  std::string node_id;
  std::string address;
  friend bool operator==(const AddClientAck&, const AddClientAck&) = default;
};

struct TradeRequest {
  std::string order_id;
  std::string buyer;
  std::string buyer_address;
  std::uint64_t units = 0;
  Instant created_at{};
  friend bool operator==(const TradeRequest&, const TradeRequest&) = default;
};

struct TradeAccept {
  std::string order_id;
  friend bool operator==(const TradeAccept&, const TradeAccept&) = default;
};

struct TradeReject {
  std::string order_id;
  RejectReason reason = RejectReason::busy;
  friend bool operator==(const TradeReject&, const TradeReject&) = default;
};

/// order_id is empty for blocks relayed outside a trade session.
struct BlockAnnounce {
  Block block;
  std::string order_id;
  friend bool operator==(const BlockAnnounce&, const BlockAnnounce&) = default;
};

struct ChainRequest {
  friend bool operator==(const ChainRequest&, const ChainRequest&) = default;
};

struct ChainResponse {
  std::vector<Block> blocks;
  friend bool operator==(const ChainResponse&, const ChainResponse&) = default;
};

struct Ping {
  friend bool operator==(const Ping&, const Ping&) = default;
};

}  // namespace msg

using PeerMessage = std::variant<msg::AddClient, msg::AddClientAck, msg::TradeRequest, msg::TradeAccept,
                                 msg::TradeReject, msg::BlockAnnounce, msg::ChainRequest, msg::ChainResponse,
                                 msg::Ping>;

/// Wire name, e.g. "TRADE_REQUEST".
std::string_view kind_name(const PeerMessage& message);

/// One JSON object, without the trailing newline.
std::string encode(const PeerMessage& message);

/// Total over arbitrary bytes: returns a message or throws ProtocolError.
/// Unknown extra fields are ignored.
PeerMessage decode(std::string_view line);

nlohmann::json block_to_json(const Block& block);
/// Throws ProtocolError(MalformedMessage) on missing or mistyped fields.
Block block_from_json(const nlohmann::json& j);

}  // namespace gridtrade
