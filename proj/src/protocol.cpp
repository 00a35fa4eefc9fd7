#include "gridtrade/protocol.hpp"

#include <array>

namespace gridtrade {
namespace {

using nlohmann::json;

constexpr std::array<std::string_view, 5> kReasonNames{"insufficient_surplus", "busy", "unknown_order",
                                                       "mining_cancelled", "insufficient_balance"};

[[noreturn]] void malformed(const std::string& why) {
  throw ProtocolError(ProtocolError::Kind::MalformedMessage, why);
}

const json& field(const json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end()) malformed(std::string("missing field '") + key + "'");
  return *it;
}

std::string get_string(const json& j, const char* key) {
  const auto& v = field(j, key);
  if (!v.is_string()) malformed(std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

std::uint64_t get_uint(const json& j, const char* key) {
  const auto& v = field(j, key);
  if (!v.is_number_unsigned()) malformed(std::string("field '") + key + "' must be a non-negative integer");
  return v.get<std::uint64_t>();
}

Instant get_instant(const json& j, const char* key) {
  const auto parsed = parse_iso8601(get_string(j, key));
  if (!parsed) malformed(std::string("field '") + key + "' is not an ISO 8601 timestamp");
  return *parsed;
}

RejectReason get_reason(const json& j) {
  const auto name = get_string(j, "reason");
  for (std::size_t i = 0; i < kReasonNames.size(); ++i)
    if (kReasonNames[i] == name) return static_cast<RejectReason>(i);
  malformed("unknown reject reason '" + name + "'");
}

struct Encoder {
  json& j;
  void operator()(const msg::AddClient& m) const {
    j["node_id"] = m.node_id;
    j["listen_port"] = m.listen_port;
    j["address"] = m.address;
  }
  void operator()(const msg::AddClientAck& m) const {
    j["node_id"] = m.node_id;
    j["address"] = m.address;
  }
  void operator()(const msg::TradeRequest& m) const {
    j["order_id"] = m.order_id;
    j["buyer"] = m.buyer;
    j["buyer_address"] = m.buyer_address;
    j["units"] = m.units;
    j["created_at"] = format_iso8601(m.created_at);
  }
  void operator()(const msg::TradeAccept& m) const { j["order_id"] = m.order_id; }
  void operator()(const msg::TradeReject& m) const {
    j["order_id"] = m.order_id;
    j["reason"] = std::string(to_string(m.reason));
  }
  void operator()(const msg::BlockAnnounce& m) const {
    j["block"] = block_to_json(m.block);
    j["order_id"] = m.order_id;
  }
  void operator()(const msg::ChainRequest&) const {}
  void operator()(const msg::ChainResponse& m) const {
    auto& arr = j["blocks"] = json::array();
    for (const auto& b : m.blocks) arr.push_back(block_to_json(b));
  }
  void operator()(const msg::Ping&) const {}
};

PeerMessage decode_object(const json& j) {
  const auto kind = get_string(j, "kind");
  if (kind == "ADD_CLIENT") {
    const auto port = get_uint(j, "listen_port");
    if (port > 65535) malformed("listen_port out of range");
    return msg::AddClient{get_string(j, "node_id"), static_cast<std::uint16_t>(port), get_string(j, "address")};
  }
  if (kind == "ADD_CLIENT_ACK") return msg::AddClientAck{get_string(j, "node_id"), get_string(j, "address")};
  if (kind == "TRADE_REQUEST")
    return msg::TradeRequest{get_string(j, "order_id"), get_string(j, "buyer"), get_string(j, "buyer_address"),
                             get_uint(j, "units"), get_instant(j, "created_at")};
  if (kind == "TRADE_ACCEPT") return msg::TradeAccept{get_string(j, "order_id")};
  if (kind == "TRADE_REJECT") return msg::TradeReject{get_string(j, "order_id"), get_reason(j)};
  if (kind == "BLOCK_ANNOUNCE") return msg::BlockAnnounce{block_from_json(field(j, "block")), get_string(j, "order_id")};
  if (kind == "CHAIN_REQUEST") return msg::ChainRequest{};
  if (kind == "CHAIN_RESPONSE") {
    const auto& arr = field(j, "blocks");
    if (!arr.is_array()) malformed("field 'blocks' must be an array");
    msg::ChainResponse r;
    r.blocks.reserve(arr.size());
    for (const auto& b : arr) r.blocks.push_back(block_from_json(b));
    return r;
  }
  if (kind == "PING") return msg::Ping{};
  throw ProtocolError(ProtocolError::Kind::UnknownKind, "unknown message kind '" + kind + "'");
}

}  // namespace

ProtocolError::ProtocolError(Kind kind, const std::string& message)
    : Error(kind == Kind::UnknownKind ? "UnknownKind" : "MalformedMessage", message), kind_(kind) {}

std::string_view to_string(RejectReason reason) { return kReasonNames.at(static_cast<std::size_t>(reason)); }

std::string_view kind_name(const PeerMessage& message) {
  static constexpr std::array<std::string_view, std::variant_size_v<PeerMessage>> names{
      "ADD_CLIENT",     "ADD_CLIENT_ACK", "TRADE_REQUEST", "TRADE_ACCEPT", "TRADE_REJECT",
      "BLOCK_ANNOUNCE", "CHAIN_REQUEST",  "CHAIN_RESPONSE", "PING"};
  return names[message.index()];
}

std::string encode(const PeerMessage& message) {
  json j;
  j["kind"] = std::string(kind_name(message));
  std::visit(Encoder{j}, message);
  return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

PeerMessage decode(std::string_view line) {
  if (!line.empty() && line.back() == '\n') line.remove_suffix(1);
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  const json j = json::parse(line.begin(), line.end(), nullptr, false);
  if (j.is_discarded()) malformed("not valid JSON");
  if (!j.is_object()) malformed("message must be a JSON object");
  try {
    return decode_object(j);
  } catch (const ProtocolError&) {
    throw;
  } catch (const std::exception& e) {
    malformed(e.what());
  }
}

json block_to_json(const Block& b) {
  return json{{"index", b.index},         {"timestamp", format_iso8601(b.timestamp)},
              {"sender", b.sender},       {"receiver", b.receiver},
              {"amount", b.amount},       {"nonce", b.nonce},
              {"prev_hash", b.prev_hash}, {"hash", b.hash}};
}

Block block_from_json(const json& j) {
  if (!j.is_object()) malformed("block must be a JSON object");
  Block b;
  b.index = get_uint(j, "index");
  b.timestamp = get_instant(j, "timestamp");
  b.sender = get_string(j, "sender");
  b.receiver = get_string(j, "receiver");
  b.amount = get_uint(j, "amount");
  b.nonce = get_uint(j, "nonce");
  b.prev_hash = get_string(j, "prev_hash");
  b.hash = get_string(j, "hash");
  return b;
}

}  // namespace gridtrade
