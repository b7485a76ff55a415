#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "doctest.h"
#include "scriptseq/corpus.hpp"
#include "scriptseq/errors.hpp"
#include "support/oracle.hpp"
#include "support/scratch.hpp"

using namespace scriptseq;

namespace {

const SchemaGrammar& grammar() {
  static const SchemaGrammar g = SchemaGrammar::load(oracle::grammar_path());
  return g;
}

std::size_t schema_index(const std::string& name) {
  for (std::size_t i = 0; i < grammar().schemas.size(); ++i)
    if (grammar().schemas[i].name == name) return i;
  FAIL("no schema " << name);
  return 0;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string predicates_of(const Script& s) {
  std::string out;
  for (const auto& e : s.events) out += e.predicate + " ";
  return out;
}

}  // namespace

TEST_CASE("restaurant chain follows its template") {
  const std::size_t r = schema_index("restaurant");
  Rng rng(7);
  const auto chain = generate_chain_for(grammar(), r, "jimmy", rng);
  REQUIRE(chain.chain.size() == 9);
  std::map<std::string, std::string> bound;
  const auto& pattern = grammar().schemas[r].events;
  for (std::size_t i = 0; i < chain.chain.size(); ++i) {
    const Event& e = chain.chain[i];
    CHECK(e.subject == "jimmy");
    CHECK(e.predicate == pattern[i].predicate);
    auto check_slot = [&](const SlotPattern& slot, const Argument& arg) {
      if (slot.absent()) {
        CHECK_FALSE(arg.has_value());
      } else if (slot.is_variable()) {
        REQUIRE(arg.has_value());
        const auto& pool = grammar().pools.at(slot.variable());
        CHECK(std::find(pool.begin(), pool.end(), *arg) != pool.end());
        auto [it, fresh] = bound.emplace(slot.variable(), *arg);
        CHECK(it->second == *arg);
      } else {
        CHECK(arg == slot.value);
      }
    };
    check_slot(pattern[i].object, e.object);
    check_slot(pattern[i].indirect_object, e.indirect_object);
  }
  CHECK(chain.document_events.size() == pattern.size() + 12);
}

TEST_CASE("equal seeds give equal chains") {
  Rng a(99), b(99);
  const auto x = generate_chain(grammar(), a);
  const auto y = generate_chain(grammar(), b);
  CHECK(x.chain == y.chain);
  CHECK(x.document_events == y.document_events);
}

TEST_CASE("short grammars are rejected") {
  nlohmann::json j = {
      {"entities", {{"protagonists", {"ann"}}, {"pools", nlohmann::json::object()}}},
      {"schemas",
       {{{"name", "tiny"},
         {"events",
          {{{"v", "a"}}, {{"v", "b"}}, {{"v", "c"}}, {{"v", "d"}}, {{"v", "e"}}}}}}}};
  const SchemaGrammar g = SchemaGrammar::from_json(j);
  Rng rng(1);
  CHECK_THROWS_AS(generate_chain(g, rng), GrammarTooShort);
  CHECK_THROWS_AS(build_dataset(g, {1, 1, 1, 0}), GrammarTooShort);
}

TEST_CASE("grammar validation") {
  CHECK_THROWS_AS(SchemaGrammar::load("/nonexistent/grammar.json"), ConfigError);
  nlohmann::json unbound = {
      {"entities", {{"protagonists", {"ann"}}, {"pools", nlohmann::json::object()}}},
      {"schemas", {{{"name", "s"}, {"events", {{{"v", "a"}, {"o", "$food"}}}}}}}};
  CHECK_THROWS_AS(SchemaGrammar::from_json(unbound), ConfigError);
}

TEST_CASE("negatives share the protagonist and the positive's arity") {
  Rng rng(5);
  auto chain = generate_chain(grammar(), rng, {8, 5, 12});
  const Event positive = chain.chain[8];
  REQUIRE(chain.document_events.size() >= 20);
  const std::vector<Event> doc(chain.document_events.begin(), chain.document_events.begin() + 20);
  const auto negs = sample_negatives(positive, doc, chain.protagonist, 4, rng);
  REQUIRE(negs.size() == 4);
  std::set<std::string> seen;
  for (const auto& n : negs) {
    CHECK(n.subject == chain.protagonist);
    CHECK(n != positive);
    CHECK(n.object.has_value() == positive.object.has_value());
    CHECK(n.indirect_object.has_value() == positive.indirect_object.has_value());
    seen.insert(event_to_json(n).dump());
  }
  CHECK(seen.size() == 4);
  CHECK(sample_negatives(positive, doc, chain.protagonist, 0, rng).empty());
}

TEST_CASE("a pool of copies of the positive is exhausted") {
  const Event p = make_event("ann", "eat", "soup", {});
  const std::vector<Event> doc(10, p);
  Rng rng(1);
  CHECK_THROWS_AS(sample_negatives(p, doc, "ann", 3, rng), PoolExhausted);
}

TEST_CASE("kKeep keeps the positive predicate") {
  Rng rng(2);
  CorpusOptions opts;
  opts.negative_predicate = NegativePredicate::kKeep;
  auto chain = generate_chain(grammar(), rng, opts);
  for (const auto& n :
       sample_negatives(chain.chain[8], chain.document_events, chain.protagonist, 4, rng, opts))
    CHECK(n.predicate == chain.chain[8].predicate);
}

TEST_CASE("instances hold one positive among m candidates") {
  Rng rng(11);
  auto chain = generate_chain(grammar(), rng);
  const MCNCInstance inst = make_instance(chain, rng);
  CHECK(inst.script.events.size() == 8);
  CHECK(inst.candidates.size() == 5);
  CHECK(inst.answer() == chain.chain[8]);
  CHECK(std::count(inst.candidates.begin(), inst.candidates.end(), chain.chain[8]) == 1);
}

TEST_CASE("answer positions are roughly balanced") {
  const auto splits = build_dataset(grammar(), {1000, 0, 0, 3});
  int hist[5] = {};
  for (const auto& inst : splits.train.instances) ++hist[inst.answer_index];
  for (int h : hist) CHECK(h == doctest::Approx(200).epsilon(0.25));
}

TEST_CASE("dataset files have the requested sizes and are reproducible") {
  scratch::Dir a("corpus-a"), b("corpus-b");
  const SplitSpec spec{2000, 200, 200, 13};
  write_dataset(a.path(), build_dataset(grammar(), spec));
  write_dataset(b.path(), build_dataset(grammar(), spec));
  for (auto [name, n] : {std::pair{"train.jsonl", 2000}, {"dev.jsonl", 200}, {"test.jsonl", 200}}) {
    const std::string text = slurp(a / name);
    // One header line, then one line per instance.
    CHECK(std::count(text.begin(), text.end(), '\n') == n + 1);
    CHECK(text == slurp(b / name));
  }
}

TEST_CASE("splits never share a schema and protagonist pair") {
  const auto splits = build_dataset(grammar(), {500, 100, 100, 13});
  auto keys = [](const Dataset& d) {
    std::set<std::string> out;
    for (const auto& inst : d.instances)
      out.insert(predicates_of(inst.script) + "|" + inst.script.protagonist);
    return out;
  };
  const auto tr = keys(splits.train), dv = keys(splits.dev), te = keys(splits.test);
  for (const auto& k : dv) CHECK(tr.count(k) == 0);
  for (const auto& k : te) {
    CHECK(tr.count(k) == 0);
    CHECK(dv.count(k) == 0);
  }
}

TEST_CASE("deterministic grammar fixes the answer given the script") {
  const auto splits = build_dataset(grammar(), {400, 0, 0, 21});
  std::map<std::string, std::string> answer_for;
  for (const auto& inst : splits.train.instances) {
    std::string key;
    for (const auto& e : inst.script.events) key += event_to_json(e).dump();
    const std::string ans = event_to_json(inst.answer()).dump();
    auto [it, fresh] = answer_for.emplace(key, ans);
    CHECK(it->second == ans);
  }
}
