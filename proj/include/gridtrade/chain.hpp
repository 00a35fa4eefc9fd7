#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stop_token>
#include <string>
#include <vector>

#include "gridtrade/error.hpp"
#include "gridtrade/ledger.hpp"
#include "gridtrade/time.hpp"

namespace gridtrade {

/// One trade per block. `hash` is SHA-256 of preimage(), lowercase hex.
struct Block {
  std::uint64_t index = 0;
  Instant timestamp{};
  std::string sender;    // token payer (buyer)
  std::string receiver;  // token payee (seller)
  Tokens amount = 0;     // tokens == Wh
  std::uint64_t nonce = 0;
  std::string prev_hash;
  std::string hash;

  friend bool operator==(const Block&, const Block&) = default;
};

inline constexpr std::string_view kGenesisParty = "genesis";
inline constexpr std::string_view kGenesisTag = "The origin";
inline const std::string kZeroHash(64, '0');
inline constexpr unsigned kDefaultDifficultyBits = 12;
inline constexpr std::uint64_t kDefaultNonceCap = std::uint64_t{1} << 32;

/// 2020-01-01T00:00:00Z unless configured otherwise.
Instant default_genesis_time();

/// `index|timestamp|sender|receiver|amount|prev_hash|nonce`, with
/// `|The origin` appended for index 0.
std::string preimage(const Block& block);
std::string hash_block(const Block& block);
bool meets_difficulty(const std::string& hex_hash, unsigned difficulty_bits);

Block genesis(Instant timestamp = default_genesis_time());

class ChainError : public Error {
 public:
  enum class Kind { Cancelled, NonceExhausted, InvalidBlock, RemoteInvalid, Corrupt };

  ChainError(Kind kind, const std::string& message);
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

struct MineRequest {
  std::string sender;
  std::string receiver;
  Tokens amount = 0;
  unsigned difficulty_bits = kDefaultDifficultyBits;
  Instant clock{};
  std::uint64_t nonce_cap = kDefaultNonceCap;
};

/// Smallest nonce >= 0 whose hash has at least `difficulty_bits` leading
/// zero bits. Polls `stop` and throws ChainError(Cancelled) when asked.
Block mine(const Block& prev, const MineRequest& request, std::stop_token stop = {});

struct ChainVerdict {
  enum class Reason { ok, BadGenesis, BrokenLink, MalformedBlock, HashMismatch, DifficultyUnmet, TimestampRegression };

  Reason reason = Reason::ok;
  std::size_t index = 0;

  bool ok() const noexcept { return reason == Reason::ok; }
  std::string describe() const;
  friend bool operator==(const ChainVerdict&, const ChainVerdict&) = default;
};

std::string to_string(ChainVerdict::Reason reason);

struct Chain {
  std::vector<Block> blocks;
  unsigned difficulty_bits = kDefaultDifficultyBits;
  Instant genesis_time = default_genesis_time();

  static Chain fresh(unsigned difficulty_bits = kDefaultDifficultyBits,
                     Instant genesis_time = default_genesis_time());

  std::size_t height() const noexcept { return blocks.size(); }
  const Block& tip() const { return blocks.back(); }
};

/// Checks `next` as the successor of `prev` (linkage, form, hash, difficulty,
/// timestamp order). Returns the verdict with index = next.index.
ChainVerdict check_successor(const Block& prev, const Block& next, unsigned difficulty_bits);

ChainVerdict validate_chain(const Chain& chain);

/// Longer valid chain wins; ties keep local. Throws RemoteInvalid.
Chain choose_chain(const Chain& local, const Chain& remote);

/// `preimage<TAB>hash` per line.
std::string chain_record(const Block& block);
Block parse_chain_record(const std::string& line);
std::string format_chain_file(const Chain& chain);
void save_chain(const std::filesystem::path& path, const Chain& chain);
/// Parses and fully re-validates; throws ChainError(Corrupt).
Chain load_chain(const std::filesystem::path& path, unsigned difficulty_bits, Instant genesis_time);
Chain parse_chain_file(const std::string& text, unsigned difficulty_bits, Instant genesis_time);

/// Ledger after genesis endowments and every trade block, sealed once any
/// trade block is applied. Throws LedgerError if a block overspends.
TokenLedger fold_ledger(const Chain& chain, const std::vector<Address>& endowed, Tokens endowment);

}  // namespace gridtrade
