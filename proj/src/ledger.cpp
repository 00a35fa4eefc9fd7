#include "gridtrade/ledger.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "gridtrade/sha256.hpp"

namespace gridtrade {
namespace {

std::string kind_name(LedgerError::Kind kind) {
  switch (kind) {
    case LedgerError::Kind::InsufficientBalance: return "InsufficientBalance";
    case LedgerError::Kind::InsufficientAllowance: return "InsufficientAllowance";
    case LedgerError::Kind::InvalidAmount: return "InvalidAmount";
    case LedgerError::Kind::MintAfterGenesis: return "MintAfterGenesis";
    case LedgerError::Kind::InvalidAddress: return "InvalidAddress";
  }
  return "LedgerError";
}

}  // namespace

Address derive_address(const std::string& node_id) { return sha256_hex("gridtrade-node:" + node_id); }

bool is_valid_address(const std::string& address) { return is_lower_hex(address, 64); }

LedgerError::LedgerError(Kind kind, const std::string& message, Tokens have, Tokens need)
    : Error(kind_name(kind), message), kind_(kind), have_(have), need_(need) {}

void TokenLedger::require_address(const Address& a) const {
  if (!is_valid_address(a))
    throw LedgerError(LedgerError::Kind::InvalidAddress, "invalid address '" + a + "'");
}

Tokens TokenLedger::balance_of(const Address& address) const {
  auto it = balances_.find(address);
  return it == balances_.end() ? 0 : it->second;
}

Tokens TokenLedger::allowance(const Address& owner, const Address& spender) const {
  auto it = allowances_.find({owner, spender});
  return it == allowances_.end() ? 0 : it->second;
}

void TokenLedger::mint(const Address& to, Tokens amount) {
  require_address(to);
  if (sealed_) throw LedgerError(LedgerError::Kind::MintAfterGenesis, "mint after genesis");
  if (amount == 0) throw LedgerError(LedgerError::Kind::InvalidAmount, "mint amount must be positive");
  balances_[to] += amount;
  total_supply_ += amount;
}

TransferOutcome TokenLedger::transfer(const Address& from, const Address& to, Tokens amount) {
  require_address(from);
  require_address(to);
  if (amount == 0) throw LedgerError(LedgerError::Kind::InvalidAmount, "transfer amount must be positive");
  const Tokens have = balance_of(from);
  if (have < amount)
    throw LedgerError(LedgerError::Kind::InsufficientBalance,
                      "insufficient balance: have " + std::to_string(have) + ", need " + std::to_string(amount),
                      have, amount);
  if (from == to) return TransferOutcome::self_transfer_noop;
  balances_[from] = have - amount;
  balances_[to] += amount;
  return TransferOutcome::applied;
}

void TokenLedger::approve(const Address& owner, const Address& spender, Tokens amount) {
  require_address(owner);
  require_address(spender);
  if (amount == 0)
    allowances_.erase({owner, spender});
  else
    allowances_[{owner, spender}] = amount;
}

void TokenLedger::transfer_from(const Address& spender, const Address& owner, const Address& to, Tokens amount) {
  require_address(spender);
  require_address(owner);
  require_address(to);
  if (amount == 0) throw LedgerError(LedgerError::Kind::InvalidAmount, "transfer amount must be positive");
  const Tokens allowed = allowance(owner, spender);
  if (allowed < amount)
    throw LedgerError(LedgerError::Kind::InsufficientAllowance,
                      "insufficient allowance: have " + std::to_string(allowed) + ", need " + std::to_string(amount),
                      allowed, amount);
  const Tokens have = balance_of(owner);
  if (have < amount)
    throw LedgerError(LedgerError::Kind::InsufficientBalance,
                      "insufficient balance: have " + std::to_string(have) + ", need " + std::to_string(amount),
                      have, amount);
  if (allowed == amount)
    allowances_.erase({owner, spender});
  else
    allowances_[{owner, spender}] = allowed - amount;
  if (owner != to) {
    balances_[owner] = have - amount;
    balances_[to] += amount;
  }
}

std::string TokenLedger::to_wallets_text() const {
  std::string out;
  for (const auto& [address, balance] : balances_) out += address + ' ' + std::to_string(balance) + '\n';
  return out;
}

void TokenLedger::save_wallets(const std::filesystem::path& path) const {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("IoError", "cannot write " + tmp.string());
    out << to_wallets_text();
  }
  std::filesystem::rename(tmp, path);
}

std::map<Address, Tokens> parse_wallets_text(const std::string& text) {
  std::map<Address, Tokens> out;
  std::istringstream in(text);
  std::string address, amount;
  std::size_t line = 0;
  std::string row;
  while (std::getline(in, row)) {
    ++line;
    if (row.empty()) continue;
    std::istringstream fields(row);
    if (!(fields >> address >> amount) || !is_valid_address(address))
      throw Error("MalformedWallets", "wallets line " + std::to_string(line) + " malformed");
    Tokens value = 0;
    auto [p, ec] = std::from_chars(amount.data(), amount.data() + amount.size(), value);
    if (ec != std::errc{} || p != amount.data() + amount.size())
      throw Error("MalformedWallets", "wallets line " + std::to_string(line) + " bad amount");
    out[address] = value;
  }
  return out;
}

}  // namespace gridtrade
