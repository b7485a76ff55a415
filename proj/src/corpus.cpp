#include "scriptseq/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <span>

#include "scriptseq/errors.hpp"

namespace scriptseq {
namespace {

SlotPattern slot_from_json(const nlohmann::json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return {};
  if (!it->is_string() || it->get<std::string>().empty())
    throw ConfigError(std::string("grammar slot '") + key +
                      "' must be a non-empty string or null");
  return {it->get<std::string>()};
}

EventPattern pattern_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("grammar event must be an object");
  auto v = j.find("v");
  if (v == j.end() || !v->is_string() || v->get<std::string>().empty())
    throw ConfigError("grammar event needs a non-empty predicate 'v'");
  return {v->get<std::string>(), slot_from_json(j, "o"), slot_from_json(j, "i")};
}

using Bindings = std::map<std::string, std::string>;

Argument resolve(const SchemaGrammar& g, const SlotPattern& slot,
                 Bindings& bindings, Rng& rng) {
  if (slot.absent()) return std::nullopt;
  if (!slot.is_variable()) return *slot.value;
  const std::string var = slot.variable();
  if (auto it = bindings.find(var); it != bindings.end()) return it->second;
  const auto& pool = g.pools.at(var);
  std::string value = pool[uniform_index(rng, pool.size())];
  bindings.emplace(var, value);
  return value;
}

const EventPattern& pattern_at(const SchemaGrammar& g, std::size_t schema,
                               std::size_t position, Rng& rng) {
  if (!g.deterministic) {
    for (const auto& b : g.branches) {
      if (b.schema != schema || b.position != position) continue;
      double u = uniform01(rng);
      for (const auto& alt : b.alternatives) {
        if (u < alt.weight) return alt.event;
        u -= alt.weight;
      }
      return b.alternatives.back().event;
    }
  }
  return g.schemas[schema].events[position];
}

Event instantiate(const SchemaGrammar& g, const EventPattern& p,
                  const std::string& protagonist, Bindings& bindings, Rng& rng) {
  Argument object = resolve(g, p.object, bindings, rng);
  Argument iobject = resolve(g, p.indirect_object, bindings, rng);
  return make_event(protagonist, p.predicate, std::move(object), std::move(iobject));
}

std::vector<std::size_t> long_schemas(const SchemaGrammar& g, int chain_len) {
  std::vector<std::size_t> out;
  for (std::size_t s = 0; s < g.schemas.size(); ++s)
    if (static_cast<int>(g.schemas[s].events.size()) >= chain_len) out.push_back(s);
  return out;
}

template <typename T>
void push_unique(std::vector<T>& v, const T& x) {
  if (std::find(v.begin(), v.end(), x) == v.end()) v.push_back(x);
}

}  // namespace

SchemaGrammar SchemaGrammar::from_json(const nlohmann::json& j) {
  SchemaGrammar g;
  try {
    const auto& entities = j.at("entities");
    g.protagonists = entities.at("protagonists").get<std::vector<std::string>>();
    if (auto pools = entities.find("pools"); pools != entities.end())
      g.pools = pools->get<std::map<std::string, std::vector<std::string>>>();

    std::map<std::string, std::size_t> by_name;
    for (const auto& s : j.at("schemas")) {
      Schema schema;
      schema.name = s.at("name").get<std::string>();
      for (const auto& e : s.at("events")) schema.events.push_back(pattern_from_json(e));
      if (schema.events.empty())
        throw ConfigError("schema '" + schema.name + "' has no events");
      if (!by_name.emplace(schema.name, g.schemas.size()).second)
        throw ConfigError("duplicate schema name '" + schema.name + "'");
      g.schemas.push_back(std::move(schema));
    }

    if (auto branches = j.find("branches"); branches != j.end()) {
      for (const auto& b : *branches) {
        BranchPoint bp;
        const auto name = b.at("schema").get<std::string>();
        auto it = by_name.find(name);
        if (it == by_name.end()) throw ConfigError("branch names unknown schema '" + name + "'");
        bp.schema = it->second;
        bp.position = b.at("position").get<std::size_t>();
        if (bp.position >= g.schemas[bp.schema].events.size())
          throw ConfigError("branch position outside schema '" + name + "'");
        double total = 0.0;
        for (const auto& alt : b.at("alternatives")) {
          BranchAlternative a{pattern_from_json(alt), alt.at("weight").get<double>()};
          if (!(a.weight >= 0.0)) throw ConfigError("branch weights must be nonnegative");
          total += a.weight;
          bp.alternatives.push_back(std::move(a));
        }
        if (bp.alternatives.empty()) throw ConfigError("branch point without alternatives");
        if (std::abs(total - 1.0) > 1e-9)
          throw ConfigError("branch weights for '" + name + "' position " +
                            std::to_string(bp.position) + " sum to " +
                            std::to_string(total) + ", not 1");
        g.branches.push_back(std::move(bp));
      }
    }
    g.deterministic = j.value("deterministic", g.branches.empty());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed grammar: ") + e.what());
  }

  if (g.protagonists.empty()) throw ConfigError("grammar has no protagonists");
  if (g.schemas.empty()) throw ConfigError("grammar has no schemas");
  auto check_slot = [&](const SlotPattern& slot) {
    if (!slot.is_variable()) return;
    auto it = g.pools.find(slot.variable());
    if (it == g.pools.end() || it->second.empty())
      throw ConfigError("grammar variable '$" + slot.variable() + "' has no entity pool");
  };
  for (const auto& s : g.schemas) {
    for (const auto& e : s.events) {
      check_slot(e.object);
      check_slot(e.indirect_object);
    }
  }
  for (const auto& b : g.branches) {
    for (const auto& a : b.alternatives) {
      check_slot(a.event.object);
      check_slot(a.event.indirect_object);
    }
  }
  return g;
}

SchemaGrammar SchemaGrammar::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open grammar file '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("grammar file '" + path.string() + "': " + e.what());
  }
  return from_json(j);
}

GeneratedChain generate_chain_for(const SchemaGrammar& grammar, std::size_t schema,
                                  const std::string& protagonist, Rng& rng,
                                  const CorpusOptions& options) {
  const auto& events = grammar.schemas.at(schema).events;
  if (static_cast<int>(events.size()) < options.chain_len())
    throw GrammarTooShort("schema '" + grammar.schemas[schema].name + "' has " +
                          std::to_string(events.size()) + " events, need " +
                          std::to_string(options.chain_len()));

  GeneratedChain out;
  out.protagonist = protagonist;
  out.schema = schema;
  Bindings bindings;
  for (std::size_t p = 0; p < events.size(); ++p) {
    Event e = instantiate(grammar, pattern_at(grammar, schema, p, rng), protagonist,
                          bindings, rng);
    if (static_cast<int>(p) < options.chain_len()) out.chain.push_back(e);
    out.document_events.push_back(std::move(e));
  }

  std::vector<std::size_t> others;
  for (std::size_t s = 0; s < grammar.schemas.size(); ++s)
    if (s != schema) others.push_back(s);
  if (others.empty()) others.push_back(schema);
  for (int k = 0; k < options.distractors; ++k) {
    const std::size_t s = others[uniform_index(rng, others.size())];
    const std::size_t p = uniform_index(rng, grammar.schemas[s].events.size());
    Bindings fresh;
    out.document_events.push_back(
        instantiate(grammar, pattern_at(grammar, s, p, rng), protagonist, fresh, rng));
  }
  return out;
}

GeneratedChain generate_chain(const SchemaGrammar& grammar, Rng& rng,
                              const CorpusOptions& options) {
  const auto eligible = long_schemas(grammar, options.chain_len());
  if (eligible.empty())
    throw GrammarTooShort("no schema reaches " + std::to_string(options.chain_len()) +
                          " events");
  const std::size_t schema = eligible[uniform_index(rng, eligible.size())];
  const auto& protagonist =
      grammar.protagonists[uniform_index(rng, grammar.protagonists.size())];
  return generate_chain_for(grammar, schema, protagonist, rng, options);
}

std::vector<Event> sample_negatives(const Event& positive,
                                    const std::vector<Event>& document_events,
                                    const std::string& protagonist, int count,
                                    Rng& rng, const CorpusOptions& options) {
  std::vector<Event> out;
  if (count <= 0) return out;

  std::vector<std::string> predicates;
  std::vector<std::string> arguments;
  for (const auto& e : document_events) {
    push_unique(predicates, e.predicate);
    if (e.object) push_unique(arguments, *e.object);
    if (e.indirect_object) push_unique(arguments, *e.indirect_object);
  }
  const bool needs_args = positive.object || positive.indirect_object;
  if (predicates.empty() || (needs_args && arguments.empty()))
    throw PoolExhausted("document argument pool is empty");

  auto draw_arg = [&](const Argument& slot) -> Argument {
    if (!slot) return std::nullopt;
    return arguments[uniform_index(rng, arguments.size())];
  };

  for (int draw = 0; draw < options.max_draws && static_cast<int>(out.size()) < count;
       ++draw) {
    std::string predicate = options.negative_predicate == NegativePredicate::kKeep
                                ? positive.predicate
                                : predicates[uniform_index(rng, predicates.size())];
    Argument object = draw_arg(positive.object);
    Argument iobject = draw_arg(positive.indirect_object);
    Event neg = make_event(protagonist, std::move(predicate), std::move(object),
                           std::move(iobject));
    if (neg == positive || std::find(out.begin(), out.end(), neg) != out.end()) continue;
    out.push_back(std::move(neg));
  }
  if (static_cast<int>(out.size()) < count)
    throw PoolExhausted("found only " + std::to_string(out.size()) + " of " +
                        std::to_string(count) + " distinct negatives in " +
                        std::to_string(options.max_draws) + " draws");
  return out;
}

MCNCInstance make_instance(const GeneratedChain& generated, Rng& rng,
                           const CorpusOptions& options) {
  const auto script_len = static_cast<std::size_t>(options.script_len);
  MCNCInstance inst;
  inst.script.protagonist = generated.protagonist;
  inst.script.events.assign(generated.chain.begin(),
                            generated.chain.begin() + script_len);
  const Event& positive = generated.chain.at(script_len);

  std::vector<Event> candidates =
      sample_negatives(positive, generated.document_events, generated.protagonist,
                       options.m - 1, rng, options);
  candidates.push_back(positive);
  std::vector<std::size_t> order(candidates.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle_range(order.begin(), order.end(), rng);
  for (std::size_t slot = 0; slot < order.size(); ++slot) {
    inst.candidates.push_back(candidates[order[slot]]);
    if (order[slot] == candidates.size() - 1) inst.answer_index = static_cast<int>(slot);
  }
  return inst;
}

DatasetSplits build_dataset(const SchemaGrammar& grammar, const SplitSpec& spec,
                            const CorpusOptions& options) {
  if (spec.train_count < 0 || spec.dev_count < 0 || spec.test_count < 0)
    throw ConfigError("split counts must be nonnegative");
  if (options.m < 2) throw ConfigError("need at least two candidates per instance");

  const auto eligible = long_schemas(grammar, options.chain_len());
  if (eligible.empty())
    throw GrammarTooShort("no schema reaches " + std::to_string(options.chain_len()) +
                          " events");

  using Combo = std::pair<std::size_t, std::size_t>;  // schema, protagonist
  std::vector<Combo> combos;
  for (std::size_t s : eligible)
    for (std::size_t p = 0; p < grammar.protagonists.size(); ++p) combos.emplace_back(s, p);
  Rng partition_rng(derive_seed(spec.seed, 0xC0DB05));
  shuffle_range(combos.begin(), combos.end(), partition_rng);

  const long long counts[3] = {spec.train_count, spec.dev_count, spec.test_count};
  const long long total = counts[0] + counts[1] + counts[2];
  std::size_t share[3] = {0, 0, 0};
  const std::size_t c = combos.size();
  for (int k = 1; k < 3; ++k) {
    if (counts[k] == 0) continue;
    share[k] = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(static_cast<double>(c) * counts[k] /
                                                  static_cast<double>(total))));
  }
  if (counts[0] > 0) {
    if (share[1] + share[2] >= c)
      throw GenerationError("too few schema/protagonist combinations (" +
                            std::to_string(c) + ") to keep splits disjoint");
    share[0] = c - share[1] - share[2];
  }

  DatasetSplits out;
  Dataset* targets[3] = {&out.train, &out.dev, &out.test};
  std::size_t offset = 0;
  for (int k = 0; k < 3; ++k) {
    Dataset& d = *targets[k];
    d.meta = {options.m, options.script_len, spec.seed};
    const std::span<const Combo> own(combos.data() + offset, share[k]);
    offset += share[k];
    d.instances.reserve(static_cast<std::size_t>(counts[k]));
    for (long long i = 0; i < counts[k]; ++i) {
      Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(k + 1),
                          static_cast<std::uint64_t>(i)));
      const Combo& combo = own[uniform_index(rng, own.size())];
      auto chain = generate_chain_for(grammar, combo.first,
                                      grammar.protagonists[combo.second], rng, options);
      d.instances.push_back(make_instance(chain, rng, options));
    }
  }
  return out;
}

void write_dataset(const std::filesystem::path& dir, const DatasetSplits& splits) {
  std::filesystem::create_directories(dir);
  write_instances(dir / "train.jsonl", splits.train);
  write_instances(dir / "dev.jsonl", splits.dev);
  write_instances(dir / "test.jsonl", splits.test);
}

}  // namespace scriptseq
