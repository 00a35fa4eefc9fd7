#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gridtrade/energy_data.hpp"
#include "gridtrade/error.hpp"
#include "gridtrade/time.hpp"

namespace gridtrade {

using NodeId = std::string;
using WattHours = std::uint64_t;

struct NodeMarketState {
  NodeId node_id;
  double gen_now = 0.0;            // W
  double demand_now = 0.0;         // W
  double grid_import_limit = 0.0;  // W
  double surplus_now = 0.0;        // W, always >= 0
  WattHours energy_sold_interval = 0;
  WattHours energy_bought_interval = 0;

  /// Whole Wh the node can still sell in the current interval.
  WattHours available_wh(double interval_hours) const;
};

using MarketStates = std::map<NodeId, NodeMarketState>;

/// units > 0 and buyer != seller, enforced by the constructor.
struct TradeOrder {
  TradeOrder(std::string order_id, NodeId buyer, NodeId seller, WattHours units, Instant created_at);

  std::string order_id;
  NodeId buyer;
  NodeId seller;
  WattHours units;
  Instant created_at;
};

class MarketError : public Error {
 public:
  enum class Kind { NegativeInput, InvalidOrder, InsufficientSurplus, UnknownNode, OutOfRange };

  MarketError(Kind kind, const std::string& message);

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class InsufficientSurplus : public MarketError {
 public:
  InsufficientSurplus(WattHours available, WattHours requested);

  WattHours available;
  WattHours requested;
};

/// Surplus left after own demand, where the grid covers at most
/// min(grid_import_limit, demand). Never negative.
double compute_surplus(double gen_w, double demand_w, double grid_import_limit_w);

/// All-or-nothing: the seller's remaining interval surplus must cover the
/// order. Deducts from the seller and credits the buyer if present.
void apply_trade(MarketStates& states, const TradeOrder& order, double interval_hours);

/// Records energy bought by `buyer` from a block mined elsewhere. The buyer
/// cannot see the seller's surplus, so there is no check here.
void credit_purchase(MarketStates& states, const NodeId& buyer, WattHours units);

/// Generation and consumption series for one node.
struct NodeSeries {
  PowerSeries generation;
  PowerSeries consumption;
  double grid_import_limit = 0.0;
};

/// Recomputes every node's gen/demand/surplus at `clock` and starts a new
/// accounting interval (sold/bought counters reset). Nodes in `states`
/// without series are left untouched apart from the counter reset.
void tick(MarketStates& states, Instant clock, const std::map<NodeId, NodeSeries>& series);

/// Convenience for a fresh map.
MarketStates tick(Instant clock, const std::map<NodeId, NodeSeries>& series);

}  // namespace gridtrade
