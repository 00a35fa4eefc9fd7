#include "gridtrade/chain.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "gridtrade/sha256.hpp"

namespace gridtrade {
namespace {

std::string kind_name(ChainError::Kind kind) {
  switch (kind) {
    case ChainError::Kind::Cancelled: return "MiningCancelled";
    case ChainError::Kind::NonceExhausted: return "NonceExhausted";
    case ChainError::Kind::InvalidBlock: return "InvalidBlock";
    case ChainError::Kind::RemoteInvalid: return "RemoteInvalid";
    case ChainError::Kind::Corrupt: return "ChainCorrupt";
  }
  return "ChainError";
}

std::string prefix_of(const Block& b) {
  std::string s = std::to_string(b.index);
  s += '|';
  s += format_iso8601(b.timestamp);
  s += '|';
  s += b.sender;
  s += '|';
  s += b.receiver;
  s += '|';
  s += std::to_string(b.amount);
  s += '|';
  s += b.prev_hash;
  s += '|';
  return s;
}

bool well_formed(const Block& b) {
  if (b.index == 0) return false;
  return is_valid_address(b.sender) && is_valid_address(b.receiver) && b.amount > 0 &&
         is_lower_hex(b.prev_hash, 64) && is_lower_hex(b.hash, 64);
}

bool parse_u64(std::string_view s, std::uint64_t& out) {
  if (s.empty()) return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && p == s.data() + s.size();
}

}  // namespace

ChainError::ChainError(Kind kind, const std::string& message) : Error(kind_name(kind), message), kind_(kind) {}

Instant default_genesis_time() { return from_unix(1577836800); }  // 2020-01-01T00:00:00Z

std::string preimage(const Block& block) {
  std::string s = prefix_of(block) + std::to_string(block.nonce);
  if (block.index == 0) {
    s += '|';
    s += kGenesisTag;
  }
  return s;
}

std::string hash_block(const Block& block) { return sha256_hex(preimage(block)); }

bool meets_difficulty(const std::string& hex_hash, unsigned difficulty_bits) {
  if (!is_lower_hex(hex_hash, 64)) return false;
  unsigned bits = 0;
  for (char c : hex_hash) {
    const unsigned v = c <= '9' ? static_cast<unsigned>(c - '0') : static_cast<unsigned>(c - 'a' + 10);
    if (v == 0) {
      bits += 4;
    } else {
      bits += v >= 8 ? 0 : v >= 4 ? 1 : v >= 2 ? 2 : 3;
      break;
    }
    if (bits >= difficulty_bits) break;
  }
  return bits >= difficulty_bits;
}

Block genesis(Instant timestamp) {
  Block b;
  b.index = 0;
  b.timestamp = timestamp;
  b.sender = std::string(kGenesisParty);
  b.receiver = std::string(kGenesisParty);
  b.amount = 0;
  b.nonce = 0;
  b.prev_hash = kZeroHash;
  b.hash = hash_block(b);
  return b;
}

Block mine(const Block& prev, const MineRequest& req, std::stop_token stop) {
  if (req.amount == 0) throw ChainError(ChainError::Kind::InvalidBlock, "block amount must be positive");
  if (!is_valid_address(req.sender) || !is_valid_address(req.receiver))
    throw ChainError(ChainError::Kind::InvalidBlock, "block parties must be valid addresses");
  Block b;
  b.index = prev.index + 1;
  b.timestamp = req.clock;
  b.sender = req.sender;
  b.receiver = req.receiver;
  b.amount = req.amount;
  b.prev_hash = prev.hash;
  const std::string prefix = prefix_of(b);
  std::string buffer;
  for (std::uint64_t nonce = 0; nonce < req.nonce_cap; ++nonce) {
    if ((nonce & 0x3FF) == 0 && stop.stop_requested())
      throw ChainError(ChainError::Kind::Cancelled, "mining cancelled at nonce " + std::to_string(nonce));
    buffer.assign(prefix);
    buffer += std::to_string(nonce);
    const auto digest = sha256(buffer);
    if (leading_zero_bits(digest) >= req.difficulty_bits) {
      b.nonce = nonce;
      b.hash = to_hex(digest);
      return b;
    }
  }
  throw ChainError(ChainError::Kind::NonceExhausted,
                   "no nonce below " + std::to_string(req.nonce_cap) + " meets difficulty " +
                       std::to_string(req.difficulty_bits));
}

std::string to_string(ChainVerdict::Reason reason) {
  switch (reason) {
    case ChainVerdict::Reason::ok: return "ok";
    case ChainVerdict::Reason::BadGenesis: return "BadGenesis";
    case ChainVerdict::Reason::BrokenLink: return "BrokenLink";
    case ChainVerdict::Reason::MalformedBlock: return "MalformedBlock";
    case ChainVerdict::Reason::HashMismatch: return "HashMismatch";
    case ChainVerdict::Reason::DifficultyUnmet: return "DifficultyUnmet";
    case ChainVerdict::Reason::TimestampRegression: return "TimestampRegression";
  }
  return "unknown";
}

std::string ChainVerdict::describe() const {
  if (ok()) return "ok";
  return to_string(reason) + "(" + std::to_string(index) + ")";
}

Chain Chain::fresh(unsigned difficulty_bits, Instant genesis_time) {
  return Chain{{genesis(genesis_time)}, difficulty_bits, genesis_time};
}

ChainVerdict check_successor(const Block& prev, const Block& next, unsigned difficulty_bits) {
  using R = ChainVerdict::Reason;
  const auto at = static_cast<std::size_t>(prev.index + 1);
  if (next.index != prev.index + 1 || next.prev_hash != prev.hash) return {R::BrokenLink, at};
  if (!well_formed(next)) return {R::MalformedBlock, at};
  if (hash_block(next) != next.hash) return {R::HashMismatch, at};
  if (!meets_difficulty(next.hash, difficulty_bits)) return {R::DifficultyUnmet, at};
  if (next.timestamp < prev.timestamp) return {R::TimestampRegression, at};
  return {};
}

ChainVerdict validate_chain(const Chain& chain) {
  using R = ChainVerdict::Reason;
  if (chain.blocks.empty() || chain.blocks.front() != genesis(chain.genesis_time)) return {R::BadGenesis, 0};
  for (std::size_t i = 1; i < chain.blocks.size(); ++i) {
    auto v = check_successor(chain.blocks[i - 1], chain.blocks[i], chain.difficulty_bits);
    if (!v.ok()) {
      v.index = i;
      return v;
    }
  }
  return {};
}

Chain choose_chain(const Chain& local, const Chain& remote) {
  Chain candidate = remote;
  candidate.difficulty_bits = local.difficulty_bits;
  candidate.genesis_time = local.genesis_time;
  const auto verdict = validate_chain(candidate);
  if (!verdict.ok()) throw ChainError(ChainError::Kind::RemoteInvalid, "remote chain invalid: " + verdict.describe());
  return candidate.height() > local.height() ? candidate : local;
}

std::string chain_record(const Block& block) { return preimage(block) + '\t' + block.hash; }

Block parse_chain_record(const std::string& line) {
  const auto bad = [&](const std::string& why) {
    return ChainError(ChainError::Kind::Corrupt, "bad chain record (" + why + "): " + line.substr(0, 200));
  };
  const auto tab = line.find('\t');
  if (tab == std::string::npos) throw bad("missing hash");
  std::vector<std::string_view> f;
  std::string_view pre(line.data(), tab);
  for (std::size_t start = 0;;) {
    const auto bar = pre.find('|', start);
    f.push_back(pre.substr(start, bar == std::string_view::npos ? bar : bar - start));
    if (bar == std::string_view::npos) break;
    start = bar + 1;
  }
  Block b;
  if (!parse_u64(f[0], b.index)) throw bad("index");
  const std::size_t expected = b.index == 0 ? 8 : 7;
  if (f.size() != expected) throw bad("field count");
  if (b.index == 0 && f[7] != kGenesisTag) throw bad("genesis tag");
  const auto ts = parse_iso8601(f[1]);
  if (!ts) throw bad("timestamp");
  b.timestamp = *ts;
  b.sender = f[2];
  b.receiver = f[3];
  if (!parse_u64(f[4], b.amount)) throw bad("amount");
  b.prev_hash = f[5];
  if (!parse_u64(f[6], b.nonce)) throw bad("nonce");
  b.hash = line.substr(tab + 1);
  if (!b.hash.empty() && b.hash.back() == '\r') b.hash.pop_back();
  return b;
}

std::string format_chain_file(const Chain& chain) {
  std::string out;
  for (const auto& b : chain.blocks) out += chain_record(b) + '\n';
  return out;
}

void save_chain(const std::filesystem::path& path, const Chain& chain) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("IoError", "cannot write " + tmp.string());
    out << format_chain_file(chain);
  }
  std::filesystem::rename(tmp, path);
}

Chain parse_chain_file(const std::string& text, unsigned difficulty_bits, Instant genesis_time) {
  Chain chain{{}, difficulty_bits, genesis_time};
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) chain.blocks.push_back(parse_chain_record(line));
  const auto verdict = validate_chain(chain);
  if (!verdict.ok()) throw ChainError(ChainError::Kind::Corrupt, "stored chain invalid: " + verdict.describe());
  return chain;
}

Chain load_chain(const std::filesystem::path& path, unsigned difficulty_bits, Instant genesis_time) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ChainError(ChainError::Kind::Corrupt, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_chain_file(ss.str(), difficulty_bits, genesis_time);
}

TokenLedger fold_ledger(const Chain& chain, const std::vector<Address>& endowed, Tokens endowment) {
  TokenLedger ledger;
  if (endowment > 0)
    for (const auto& a : endowed)
      if (ledger.balance_of(a) == 0) ledger.mint(a, endowment);
  for (std::size_t i = 1; i < chain.blocks.size(); ++i) {
    ledger.seal();
    ledger.transfer(chain.blocks[i].sender, chain.blocks[i].receiver, chain.blocks[i].amount);
  }
  return ledger;
}

}  // namespace gridtrade
