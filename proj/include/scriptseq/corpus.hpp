#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "scriptseq/events.hpp"
#include "scriptseq/rng.hpp"

namespace scriptseq {

// A schema slot is a literal word, a "$name" variable bound once per schema
// instantiation from the entity pool `name`, or absent.
struct SlotPattern {
  std::optional<std::string> value;

  bool absent() const { return !value.has_value(); }
  bool is_variable() const { return value && !value->empty() && (*value)[0] == '$'; }
  std::string variable() const { return value->substr(1); }
};

struct EventPattern {
  std::string predicate;
  SlotPattern object;
  SlotPattern indirect_object;
};

struct Schema {
  std::string name;
  std::vector<EventPattern> events;
};

struct BranchAlternative {
  EventPattern event;
  double weight = 0.0;
};

// Replaces schema event `position` by one of the weighted alternatives.
struct BranchPoint {
  std::size_t schema = 0;
  std::size_t position = 0;
  std::vector<BranchAlternative> alternatives;
};

struct SchemaGrammar {
  std::vector<Schema> schemas;
  std::vector<std::string> protagonists;
  std::map<std::string, std::vector<std::string>> pools;
  std::vector<BranchPoint> branches;
  // Branches are ignored, so every chain event is a function of the schema
  // and the variable bindings.
  bool deterministic = true;

  static SchemaGrammar from_json(const nlohmann::json& j);
  static SchemaGrammar load(const std::filesystem::path& path);
};

enum class NegativePredicate { kResample, kKeep };

struct CorpusOptions {
  int script_len = 8;
  int m = 5;
  int distractors = 12;
  NegativePredicate negative_predicate = NegativePredicate::kResample;
  int max_draws = 1000;

  int chain_len() const { return script_len + 1; }
};

struct SplitSpec {
  long long train_count = 0;
  long long dev_count = 0;
  long long test_count = 0;
  std::uint64_t seed = 0;
};

struct GeneratedChain {
  std::vector<Event> document_events;
  std::vector<Event> chain;
  std::string protagonist;
  std::size_t schema = 0;
};

// Instantiates one schema for one protagonist: the chain is its first
// `chain_len` events, the document adds the remaining schema events and
// `distractors` events from other schemas.
GeneratedChain generate_chain_for(const SchemaGrammar& grammar, std::size_t schema,
                                  const std::string& protagonist, Rng& rng,
                                  const CorpusOptions& options = {});

// Same, with schema and protagonist drawn uniformly. Throws GrammarTooShort
// when no schema reaches `chain_len` events.
GeneratedChain generate_chain(const SchemaGrammar& grammar, Rng& rng,
                              const CorpusOptions& options = {});

// `count` distinct events, none equal to `positive`, each with the
// protagonist as subject, a document predicate (or the positive's, under
// kKeep) and document arguments in the positive's occupied slots. Throws
// PoolExhausted when `max_draws` draws do not yield enough.
std::vector<Event> sample_negatives(const Event& positive,
                                    const std::vector<Event>& document_events,
                                    const std::string& protagonist, int count,
                                    Rng& rng, const CorpusOptions& options = {});

MCNCInstance make_instance(const GeneratedChain& generated, Rng& rng,
                           const CorpusOptions& options = {});

struct DatasetSplits {
  Dataset train;
  Dataset dev;
  Dataset test;
};

// Schema/protagonist combinations are partitioned across the three splits;
// instance i of a split uses an rng derived from (seed, split, i).
DatasetSplits build_dataset(const SchemaGrammar& grammar, const SplitSpec& spec,
                            const CorpusOptions& options = {});

// Writes train.jsonl, dev.jsonl and test.jsonl under `dir`.
void write_dataset(const std::filesystem::path& dir, const DatasetSplits& splits);

}  // namespace scriptseq
