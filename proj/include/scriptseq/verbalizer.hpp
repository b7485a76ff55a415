#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "scriptseq/events.hpp"

namespace scriptseq {

using TokenId = std::int32_t;
using TokenIds = std::vector<TokenId>;
using Tokens = std::vector<std::string>;

namespace special {
inline constexpr TokenId kBos = 0;
inline constexpr TokenId kEos = 1;
inline constexpr TokenId kMask = 2;
inline constexpr TokenId kPad = 3;
inline constexpr TokenId kUnk = 4;
inline constexpr TokenId kSep = 5;
inline constexpr TokenId kCount = 6;

inline constexpr const char* kBosText = "<s>";
inline constexpr const char* kEosText = "</s>";
inline constexpr const char* kMaskText = "<MASK>";
inline constexpr const char* kPadText = "<pad>";
inline constexpr const char* kUnkText = "<unk>";
inline constexpr const char* kSepText = ".";
}  // namespace special

enum class NullStyle { kOmit, kLiteral };

// One slot of a serialized event sequence; nullopt stands for a masked event.
using Slot = std::optional<Event>;
inline constexpr std::nullopt_t kMaskSlot = std::nullopt;

// Word-level token table. Ids 0..5 are the fixed specials, followed by
// corpus tokens in order of first appearance.
class Vocabulary {
 public:
  Vocabulary();

  // Returns the id of `token`, adding it if absent.
  TokenId add(const std::string& token);

  TokenId id(const std::string& token) const;  // kUnk when unseen
  bool contains(const std::string& token) const;
  const std::string& token(TokenId id) const;  // throws IdOutOfRange
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);
  static Vocabulary from_tokens(const std::vector<std::string>& tokens);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

// Subject, predicate, object, indirect object; each field is lowercased and
// whitespace-split. Absent arguments are dropped (kOmit) or emitted as the
// word "null" (kLiteral).
Tokens verbalize_event(const Event& event, NullStyle null_style = NullStyle::kOmit);

// <s> item . item . ... item . </s>, where a masked slot is the single <MASK>
// token. Without BOS/EOS only the separated body is returned.
Tokens verbalize_sequence(std::span<const Slot> items, bool with_bos_eos = true,
                          NullStyle null_style = NullStyle::kOmit);
Tokens verbalize_events(std::span<const Event> events, bool with_bos_eos = true,
                        NullStyle null_style = NullStyle::kOmit);

// Specials first, then every token of every script event and candidate in
// order of first appearance. Throws EmptyCorpus.
Vocabulary build_vocab(std::span<const MCNCInstance> instances,
                       NullStyle null_style = NullStyle::kOmit);

TokenIds encode(const Vocabulary& vocab, const Tokens& tokens);
Tokens decode(const Vocabulary& vocab, std::span<const TokenId> ids);

}  // namespace scriptseq
