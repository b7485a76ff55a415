#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "scriptseq/adam.hpp"
#include "scriptseq/events.hpp"
#include "scriptseq/masking.hpp"
#include "scriptseq/model.hpp"
#include "scriptseq/scoring.hpp"

namespace scriptseq {

enum class Stage { kPretrain, kFinetune };
// How stage 2 scores candidates: by sequence likelihood, or through the
// linear head on the encoder state.
enum class Head { kGenerative, kClassifier };

const char* to_string(Stage v);
const char* to_string(Head v);
const char* to_string(MaskStyle v);
const char* to_string(DecayMode v);
Head parse_head(const std::string& s);  // parse_* throw ConfigError
MaskStyle parse_mask_style(const std::string& s);
DecayMode parse_decay(const std::string& s);

struct TrainConfig {
  Stage stage = Stage::kPretrain;
  LossOptions loss;
  ScoringOptions scoring;
  Head head = Head::kGenerative;
  MaskStyle mask_style = MaskStyle::kEvent;
  MaskingOptions masking;
  AdamConfig adam;
  int batch_size = 32;
  int max_epochs = 50;
  int patience = 5;
  std::uint64_t seed = 0;
  int threads = 1;

  static TrainConfig pretrain_defaults();
  static TrainConfig finetune_defaults();

  // Throws ConfigError. A learning rate of 0 is accepted as a frozen run.
  void validate() const;
  nlohmann::json to_json() const;
};

struct EpochRecord {
  Stage stage = Stage::kPretrain;
  int epoch = 0;
  double train_loss = 0.0;
  double dev_metric = 0.0;
  std::optional<double> test_acc;
  double seconds = 0.0;

  nlohmann::json to_json(bool with_timing = true) const;
};

struct TrainReport {
  Stage stage = Stage::kPretrain;
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_dev_metric = 0.0;
  std::string best_checkpoint;
  bool stopped_early = false;

  nlohmann::json to_json(bool with_timing = true) const;
};

struct TrainHooks {
  // Scored each epoch for logging only; never used for selection.
  const Dataset* test = nullptr;
  // Receives stage{1,2}-epoch{N}.ckpt and best.ckpt when set.
  std::optional<std::filesystem::path> out_dir;
  // One JSON line per epoch is appended here when set.
  std::optional<std::filesystem::path> metrics_log;
  bool log_timing = true;
  // Copied into checkpoint metadata.
  nlohmann::json fingerprint = nlohmann::json::object();
  std::function<void(const EpochRecord&)> on_epoch;
};

// Stage 1: event-level blank infilling with masks re-drawn every epoch.
// Dev metric is mean infill NLL over fixed dev samples; lower is better.
// The model is left at its best-dev-epoch parameters.
TrainReport pretrain(Transformer<float>& model, const Vocabulary& vocab, const Dataset& train,
                     const Dataset& dev, const TrainConfig& config,
                     const TrainHooks& hooks = {});

// Stage 2: contrastive fine-tuning over the candidate scores, or
// cross-entropy through the classifier head. Dev metric is accuracy.
TrainReport finetune(Transformer<float>& model, const Vocabulary& vocab, const Dataset& train,
                     const Dataset& dev, const TrainConfig& config,
                     const TrainHooks& hooks = {});

// Copy of `model` with a fresh classes-wide head drawn from `seed`.
Transformer<float> attach_classifier_head(const Transformer<float>& model, int classes,
                                          std::uint64_t seed);

// Mean infill NLL of fixed samples.
double mean_infill_nll(const SequenceScorer& model, std::span<const InfillSample> samples,
                       Norm norm, int threads = 1);

// Fixed evaluation samples: instance i masked with rng (seed, 0xDE7, i).
std::vector<InfillSample> fixed_infill_samples(const Dataset& data, const Vocabulary& vocab,
                                               MaskStyle style, const MaskingOptions& masking,
                                               std::uint64_t seed);

nlohmann::json checkpoint_meta(const Vocabulary& vocab, const nlohmann::json& fingerprint);
Vocabulary vocab_from_meta(const nlohmann::json& meta);  // throws CheckpointError

}  // namespace scriptseq
