#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "scriptseq/events.hpp"
#include "scriptseq/model.hpp"
#include "scriptseq/scoring.hpp"
#include "scriptseq/training.hpp"

namespace scriptseq {

struct EvalRecord {
  int chosen = 0;
  int answer = 0;
  std::vector<double> o;
  std::vector<double> s;
};

struct EvalReport {
  double accuracy = 0.0;
  std::size_t n_instances = 0;
  std::size_t n_correct = 0;
  std::vector<EvalRecord> records;
  nlohmann::json fingerprint = nlohmann::json::object();

  // Summary only; records go to write_records.
  nlohmann::json to_json() const;
  void write_records(const std::filesystem::path& path) const;
};

// Throws EmptyCorpus on an empty set.
EvalReport evaluate(const SequenceScorer& model, const Vocabulary& vocab,
                    std::span<const MCNCInstance> instances,
                    const ScoringOptions& options = {}, int threads = 1);

template <typename T>
EvalReport evaluate_classifier(const Transformer<T>& model, const Vocabulary& vocab,
                               std::span<const MCNCInstance> instances,
                               NullStyle null_style = NullStyle::kOmit, int threads = 1);

struct TokenTraceEntry {
  std::string token;
  double nll = 0.0;
};

// Negative log-probability of every scored candidate token, </s> included.
struct TokenTrace {
  std::vector<TokenTraceEntry> entries;

  double total() const;
  std::string to_tsv() const;
};

TokenTrace token_trace(const SequenceScorer& model, const Vocabulary& vocab,
                       std::span<const Event> script, const Event& candidate,
                       NullStyle null_style = NullStyle::kOmit);

// Scores every target token by a fixed per-token log-probability, ignoring
// context. Unlisted tokens get `fallback`.
class LookupScorer : public SequenceScorer {
 public:
  explicit LookupScorer(std::vector<double> logprob_by_id, double fallback = -10.0);
  std::vector<double> target_logprobs(const TokenIds& source,
                                      const TokenIds& target) const override;

 private:
  std::vector<double> table_;
  double fallback_;
};

// Instances whose correct candidate carries one more argument than every
// distractor. All tokens score near `base`; the extra argument scores near
// `extra`, with extra > 0.8 * base so that mean scoring prefers the long
// candidate and sum scoring prefers a short one.
struct LengthBiasSet {
  Vocabulary vocab;
  std::vector<MCNCInstance> instances;
  std::vector<double> logprob_by_id;

  LookupScorer scorer() const { return LookupScorer(logprob_by_id); }
};

struct LengthBiasOptions {
  double base = -1.0;
  double extra = -0.5;
  double jitter = 0.05;
};

LengthBiasSet make_length_bias_set(std::size_t n, std::uint64_t seed,
                                   const LengthBiasOptions& options = {});

// ---------------------------------------------------------------------------
// Ablations

struct AblationVariant {
  std::string name;
  std::string label;
};

// Canonical order: full, no_pretrain, no_finetune, linear_classifier,
// random_span_mask, sum_logprob, cross_entropy, margin_ranking.
const std::vector<AblationVariant>& ablation_variants();

struct AblationSettings {
  ModelConfig model;
  TrainConfig pretrain = TrainConfig::pretrain_defaults();
  TrainConfig finetune = TrainConfig::finetune_defaults();
  // Subset of variant names to run; empty runs all.
  std::vector<std::string> variants;
  int threads = 1;
  std::optional<std::filesystem::path> out_dir;
  nlohmann::json fingerprint = nlohmann::json::object();
};

struct AblationRow {
  std::string name;
  std::string label;
  double accuracy = 0.0;
  std::vector<EpochRecord> pretrain_epochs;
  std::vector<EpochRecord> finetune_epochs;
};

struct AblationTable {
  std::vector<AblationRow> rows;
  nlohmann::json fingerprint = nlohmann::json::object();

  const AblationRow& row(const std::string& name) const;  // throws std::out_of_range
  nlohmann::json to_json(bool with_timing = false) const;
  std::string to_text() const;
};

AblationTable run_ablations(const AblationSettings& settings, const Vocabulary& vocab,
                            const Dataset& train, const Dataset& dev, const Dataset& test,
                            const std::function<void(const AblationRow&)>& on_row = {});

// Reads train.jsonl, dev.jsonl and test.jsonl under `dataset_dir` and builds
// the vocabulary from the training split.
AblationTable run_ablations(const AblationSettings& settings,
                            const std::filesystem::path& dataset_dir,
                            const std::function<void(const AblationRow&)>& on_row = {});

}  // namespace scriptseq
