#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "json.hpp"
#include "scriptseq/corpus.hpp"
#include "scriptseq/model.hpp"
#include "scriptseq/training.hpp"

namespace scriptseq {

// A TOML subset: `[section]` headers, `key = value` lines, `#` comments.
// Values are double-quoted strings, booleans, integers or floats. Keys before
// the first header land in section "". Throws ConfigError with a line number.
using ConfigTable = std::map<std::string, std::map<std::string, nlohmann::json>>;
ConfigTable parse_config(const std::string& text);
ConfigTable load_config(const std::filesystem::path& path);

struct DataConfig {
  std::string grammar;
  long long train = 2000;
  long long dev = 200;
  long long test = 200;
  CorpusOptions corpus;
};

// Every setting a command can use, after file and flag merging.
struct RunConfig {
  std::uint64_t seed = 0;
  int threads = 1;
  ModelConfig model;
  TrainConfig pretrain = TrainConfig::pretrain_defaults();
  TrainConfig finetune = TrainConfig::finetune_defaults();
  DataConfig data;

  // Applies [model], [train], [pretrain], [finetune] and [data]. Keys in
  // [train] reach both stages; the stage sections override them. Unknown
  // sections or keys throw ConfigError.
  void apply(const ConfigTable& table);
  // Pushes `seed` and `threads` into every component.
  void propagate();
  void validate() const;
  nlohmann::json fingerprint() const;
};

}  // namespace scriptseq
