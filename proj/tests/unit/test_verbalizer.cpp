#include "doctest.h"
#include "scriptseq/errors.hpp"
#include "scriptseq/verbalizer.hpp"
#include "support/scratch.hpp"

using namespace scriptseq;

namespace {

Tokens toks(std::initializer_list<const char*> xs) { return Tokens(xs.begin(), xs.end()); }

const Event kOrder = make_event("jimmy", "order", "food", std::nullopt);
const Event kPay = make_event("jimmy", "pay", "bill", "waiter");
const Event kRain = make_event(std::nullopt, "rain", std::nullopt, std::nullopt);

}  // namespace

TEST_CASE("verbalize_event orders subject, predicate, object, indirect object") {
  CHECK(verbalize_event(kOrder) == toks({"jimmy", "order", "food"}));
  CHECK(verbalize_event(kPay) == toks({"jimmy", "pay", "bill", "waiter"}));
  CHECK(verbalize_event(kRain) == toks({"rain"}));
  CHECK(verbalize_event(kOrder, NullStyle::kLiteral) == toks({"jimmy", "order", "food", "null"}));
  CHECK(verbalize_event(make_event("Mary Ann", "Pick Up", "Box", {})) ==
        toks({"mary", "ann", "pick", "up", "box"}));
}

TEST_CASE("verbalize_sequence places masks inline with separators") {
  const std::vector<Slot> a = {kOrder, kMaskSlot};
  CHECK(verbalize_sequence(a) ==
        toks({"<s>", "jimmy", "order", "food", ".", "<MASK>", ".", "</s>"}));
  const std::vector<Slot> b = {kOrder};
  CHECK(verbalize_sequence(b) == toks({"<s>", "jimmy", "order", "food", ".", "</s>"}));
  const std::vector<Slot> c = {kMaskSlot, kMaskSlot};
  CHECK(verbalize_sequence(c) == toks({"<s>", "<MASK>", ".", "<MASK>", ".", "</s>"}));
  CHECK(verbalize_sequence(b, false) == toks({"jimmy", "order", "food", "."}));
}

TEST_CASE("special ids are fixed") {
  Vocabulary v;
  CHECK(v.size() == 6);
  CHECK(v.id("<s>") == special::kBos);
  CHECK(v.id("</s>") == special::kEos);
  CHECK(v.id("<MASK>") == special::kMask);
  CHECK(v.id(".") == special::kSep);
  CHECK(v.id("zzz") == special::kUnk);
}

TEST_CASE("build_vocab counts specials plus corpus tokens") {
  MCNCInstance inst;
  inst.script.events = {make_event({}, "a", {}, {})};
  inst.candidates = {make_event({}, "b", {}, {}), make_event({}, "a", {}, {})};
  const std::vector<MCNCInstance> corpus = {inst};
  const Vocabulary v = build_vocab(corpus);
  CHECK(v.size() == 8);
  CHECK(build_vocab(corpus) == v);
  CHECK_THROWS_AS(build_vocab(std::vector<MCNCInstance>{}), EmptyCorpus);
}

TEST_CASE("encode and decode") {
  Vocabulary v;
  v.add("jimmy");
  v.add("order");
  const Tokens t = toks({"<s>", "jimmy", "order", "zzz", "</s>"});
  const TokenIds ids = encode(v, t);
  CHECK(ids[3] == special::kUnk);
  CHECK(decode(v, ids) == toks({"<s>", "jimmy", "order", "<unk>", "</s>"}));
  const TokenIds bad = {static_cast<TokenId>(v.size() + 1)};
  CHECK_THROWS_AS(decode(v, bad), IdOutOfRange);
  CHECK_THROWS_AS(v.token(-1), IdOutOfRange);
}

TEST_CASE("vocabulary file round trip") {
  scratch::Dir dir("vocab");
  Vocabulary v;
  for (const char* w : {"x", "y", "z"}) v.add(w);
  v.save(dir / "vocab.txt");
  CHECK(Vocabulary::load(dir / "vocab.txt") == v);
  CHECK_THROWS_AS(Vocabulary::from_tokens({"a", "b"}), DataError);
}
