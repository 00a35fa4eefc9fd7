#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>

#include "gridtrade/error.hpp"

namespace gridtrade {

/// 64 lowercase hex characters.
using Address = std::string;
using Tokens = std::uint64_t;

/// Address of a consortium member: SHA-256 of its node id.
Address derive_address(const std::string& node_id);
bool is_valid_address(const std::string& address);

class LedgerError : public Error {
 public:
  enum class Kind { InsufficientBalance, InsufficientAllowance, InvalidAmount, MintAfterGenesis, InvalidAddress };

  LedgerError(Kind kind, const std::string& message, Tokens have = 0, Tokens need = 0);

  Kind kind() const noexcept { return kind_; }
  Tokens have() const noexcept { return have_; }
  Tokens need() const noexcept { return need_; }

 private:
  Kind kind_;
  Tokens have_;
  Tokens need_;
};

enum class TransferOutcome { applied, self_transfer_noop };

/// Token accounts with approve/transfer_from allowances. Every mutator
/// either succeeds completely or throws with the ledger untouched.
/// Minting is only possible before seal().
class TokenLedger {
 public:
  Tokens balance_of(const Address& address) const;
  Tokens allowance(const Address& owner, const Address& spender) const;
  Tokens total_supply() const noexcept { return total_supply_; }

  void mint(const Address& to, Tokens amount);
  TransferOutcome transfer(const Address& from, const Address& to, Tokens amount);
  void approve(const Address& owner, const Address& spender, Tokens amount);
  void transfer_from(const Address& spender, const Address& owner, const Address& to, Tokens amount);

  /// Closes genesis; later mints throw MintAfterGenesis.
  void seal() noexcept { sealed_ = true; }
  bool sealed() const noexcept { return sealed_; }

  const std::map<Address, Tokens>& accounts() const noexcept { return balances_; }

  /// `address amount` per line, sorted by address.
  std::string to_wallets_text() const;
  /// Rewrites the file via a temporary and rename.
  void save_wallets(const std::filesystem::path& path) const;

  friend bool operator==(const TokenLedger&, const TokenLedger&) = default;

 private:
  void require_address(const Address& a) const;

  std::map<Address, Tokens> balances_;
  std::map<std::pair<Address, Address>, Tokens> allowances_;
  Tokens total_supply_ = 0;
  bool sealed_ = false;
};

/// Parses wallets.txt into address -> balance.
std::map<Address, Tokens> parse_wallets_text(const std::string& text);

}  // namespace gridtrade
