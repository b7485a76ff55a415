#include "scriptseq/verbalizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "scriptseq/errors.hpp"

namespace scriptseq {
namespace {

void append_field(Tokens& out, const std::string& field) {
  std::istringstream words(field);
  std::string w;
  while (words >> w) {
    std::transform(w.begin(), w.end(), w.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    out.push_back(std::move(w));
  }
}

void append_argument(Tokens& out, const Argument& arg, NullStyle style) {
  if (arg) {
    append_field(out, *arg);
  } else if (style == NullStyle::kLiteral) {
    out.emplace_back("null");
  }
}

}  // namespace

Vocabulary::Vocabulary() {
  for (const char* s : {special::kBosText, special::kEosText, special::kMaskText,
                        special::kPadText, special::kUnkText, special::kSepText})
    add(s);
}

TokenId Vocabulary::add(const std::string& token) {
  auto [it, inserted] =
      index_.try_emplace(token, static_cast<TokenId>(tokens_.size()));
  if (inserted) tokens_.push_back(token);
  return it->second;
}

TokenId Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? special::kUnk : it->second;
}

bool Vocabulary::contains(const std::string& token) const {
  return index_.contains(token);
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw IdOutOfRange(id, tokens_.size());
  return tokens_[id];
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  Vocabulary v;
  if (tokens.size() < static_cast<std::size_t>(special::kCount))
    throw DataError("vocabulary is missing the special tokens");
  for (TokenId i = 0; i < special::kCount; ++i) {
    if (tokens[i] != v.tokens_[i])
      throw DataError("vocabulary entry " + std::to_string(i) + " must be '" +
                      v.tokens_[i] + "'");
  }
  for (std::size_t i = special::kCount; i < tokens.size(); ++i) {
    if (v.contains(tokens[i]))
      throw DataError("duplicate vocabulary token '" + tokens[i] + "'");
    v.add(tokens[i]);
  }
  return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) tokens.push_back(line);
  return from_tokens(tokens);
}

Tokens verbalize_event(const Event& event, NullStyle null_style) {
  Tokens out;
  append_argument(out, event.subject, null_style);
  append_field(out, event.predicate);
  append_argument(out, event.object, null_style);
  append_argument(out, event.indirect_object, null_style);
  return out;
}

Tokens verbalize_sequence(std::span<const Slot> items, bool with_bos_eos,
                          NullStyle null_style) {
  Tokens out;
  if (with_bos_eos) out.emplace_back(special::kBosText);
  for (const auto& item : items) {
    if (item) {
      Tokens ev = verbalize_event(*item, null_style);
      out.insert(out.end(), std::make_move_iterator(ev.begin()),
                 std::make_move_iterator(ev.end()));
    } else {
      out.emplace_back(special::kMaskText);
    }
    out.emplace_back(special::kSepText);
  }
  if (with_bos_eos) out.emplace_back(special::kEosText);
  return out;
}

Tokens verbalize_events(std::span<const Event> events, bool with_bos_eos,
                        NullStyle null_style) {
  std::vector<Slot> slots(events.begin(), events.end());
  return verbalize_sequence(slots, with_bos_eos, null_style);
}

Vocabulary build_vocab(std::span<const MCNCInstance> instances,
                       NullStyle null_style) {
  if (instances.empty()) throw EmptyCorpus();
  Vocabulary vocab;
  auto add_event = [&](const Event& e) {
    for (const auto& t : verbalize_event(e, null_style)) vocab.add(t);
  };
  for (const auto& inst : instances) {
    for (const auto& e : inst.script.events) add_event(e);
    for (const auto& e : inst.candidates) add_event(e);
  }
  return vocab;
}

TokenIds encode(const Vocabulary& vocab, const Tokens& tokens) {
  TokenIds ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(vocab.id(t));
  return ids;
}

Tokens decode(const Vocabulary& vocab, std::span<const TokenId> ids) {
  Tokens out;
  out.reserve(ids.size());
  for (TokenId id : ids) out.push_back(vocab.token(id));
  return out;
}

}  // namespace scriptseq
