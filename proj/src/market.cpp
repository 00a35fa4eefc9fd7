#include "gridtrade/market.hpp"

#include <algorithm>
#include <cmath>

namespace gridtrade {
namespace {

std::string kind_name(MarketError::Kind kind) {
  switch (kind) {
    case MarketError::Kind::NegativeInput: return "NegativeInput";
    case MarketError::Kind::InvalidOrder: return "InvalidOrder";
    case MarketError::Kind::InsufficientSurplus: return "InsufficientSurplus";
    case MarketError::Kind::UnknownNode: return "UnknownNode";
    case MarketError::Kind::OutOfRange: return "OutOfRange";
  }
  return "MarketError";
}

}  // namespace

MarketError::MarketError(Kind kind, const std::string& message)
    : Error(kind_name(kind), message), kind_(kind) {}

InsufficientSurplus::InsufficientSurplus(WattHours avail, WattHours req)
    : MarketError(Kind::InsufficientSurplus,
                  "insufficient surplus: available " + std::to_string(avail) + " Wh, requested " +
                      std::to_string(req) + " Wh"),
      available(avail),
      requested(req) {}

TradeOrder::TradeOrder(std::string id, NodeId b, NodeId s, WattHours u, Instant at)
    : order_id(std::move(id)), buyer(std::move(b)), seller(std::move(s)), units(u), created_at(at) {
  if (units == 0) throw MarketError(MarketError::Kind::InvalidOrder, "order units must be positive");
  if (buyer == seller) throw MarketError(MarketError::Kind::InvalidOrder, "buyer and seller must differ");
}

WattHours NodeMarketState::available_wh(double interval_hours) const {
  const double energy = std::floor(surplus_now * interval_hours);
  const auto whole = energy <= 0 ? WattHours{0} : static_cast<WattHours>(energy);
  return whole > energy_sold_interval ? whole - energy_sold_interval : 0;
}

double compute_surplus(double gen, double demand, double grid) {
  if (!(gen >= 0) || !(demand >= 0) || !(grid >= 0))
    throw MarketError(MarketError::Kind::NegativeInput, "surplus inputs must be non-negative");
  const double p_grid = std::min(grid, demand);
  return std::max(gen - std::max(demand - p_grid, 0.0), 0.0);
}

void apply_trade(MarketStates& states, const TradeOrder& order, double interval_hours) {
  auto seller = states.find(order.seller);
  if (seller == states.end())
    throw MarketError(MarketError::Kind::UnknownNode, "unknown seller " + order.seller);
  const auto available = seller->second.available_wh(interval_hours);
  if (available < order.units) throw InsufficientSurplus(available, order.units);
  seller->second.energy_sold_interval += order.units;
  if (auto buyer = states.find(order.buyer); buyer != states.end())
    buyer->second.energy_bought_interval += order.units;
}

void credit_purchase(MarketStates& states, const NodeId& buyer, WattHours units) {
  auto it = states.find(buyer);
  if (it == states.end()) throw MarketError(MarketError::Kind::UnknownNode, "unknown buyer " + buyer);
  it->second.energy_bought_interval += units;
}

void tick(MarketStates& states, Instant clock, const std::map<NodeId, NodeSeries>& series) {
  // Validate every node first so a failure leaves states untouched.
  struct Reading {
    double gen, demand;
  };
  std::map<NodeId, Reading> readings;
  for (const auto& [id, s] : series) {
    for (const auto* ps : {&s.generation, &s.consumption})
      if (ps->empty() || clock < ps->front_time() || clock > ps->back_time())
        throw MarketError(MarketError::Kind::OutOfRange,
                          "clock " + format_iso8601(clock) + " outside " + to_string(ps->kind) +
                              " series of " + id);
    readings[id] = {s.generation.value_at(clock), s.consumption.value_at(clock)};
  }
  for (auto& [id, st] : states) {
    st.energy_sold_interval = 0;
    st.energy_bought_interval = 0;
  }
  for (const auto& [id, r] : readings) {
    auto& st = states[id];
    st.node_id = id;
    st.gen_now = r.gen;
    st.demand_now = r.demand;
    st.grid_import_limit = series.at(id).grid_import_limit;
    st.surplus_now = compute_surplus(r.gen, r.demand, st.grid_import_limit);
  }
}

MarketStates tick(Instant clock, const std::map<NodeId, NodeSeries>& series) {
  MarketStates states;
  tick(states, clock, series);
  return states;
}

}  // namespace gridtrade
