#include "scriptseq/training.hpp"

#include <chrono>
#include <fstream>
#include <numeric>

#include "scriptseq/checkpoint.hpp"
#include "scriptseq/errors.hpp"
#include "scriptseq/eval.hpp"
#include "scriptseq/parallel.hpp"

namespace scriptseq {
namespace {

// Stream tags keep the per-purpose rng streams apart.
constexpr std::uint64_t kOrderTag = 0x0DE5;
constexpr std::uint64_t kMaskTag = 0x3A5C;
constexpr std::uint64_t kDropoutTag = 0xD60F;
constexpr std::uint64_t kDevMaskTag = 0xDE7;

using Clock = std::chrono::steady_clock;

struct Batchable {
  // Builds the loss of sample `index` (position in the epoch order) on `fp`.
  std::function<ad::Var(ForwardPass<float>&, std::size_t index, std::size_t epoch)> loss;
  std::size_t count = 0;
};

void add_into(Gradients<float>& acc, const Gradients<float>& g) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
}

void append_line(const std::filesystem::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw ConfigError("cannot open metrics log '" + path.string() + "'");
  out << line << '\n';
}

void save_stage_checkpoint(const std::filesystem::path& path, const Transformer<float>& model,
                           const AdamState<float>* state, const Vocabulary& vocab,
                           const TrainHooks& hooks, Stage stage, int epoch) {
  Checkpoint<float> ckpt;
  ckpt.config = model.config();
  ckpt.params = model.params();
  if (state) ckpt.optimizer = *state;
  ckpt.meta = checkpoint_meta(vocab, hooks.fingerprint);
  ckpt.meta["stage"] = to_string(stage);
  ckpt.meta["epoch"] = epoch;
  save_checkpoint(path, ckpt);
}

// Shared epoch loop: shuffled order, summed per-sample gradients scaled by
// 1/B, Adam, dev evaluation, early stopping and best-epoch restore.
TrainReport run_stage(Transformer<float>& model, const Vocabulary& vocab, const Batchable& work,
                      const TrainConfig& config, const TrainHooks& hooks,
                      const std::function<double()>& dev_metric, bool higher_is_better,
                      const std::function<std::optional<double>()>& test_metric) {
  config.validate();
  const int stage_no = config.stage == Stage::kPretrain ? 1 : 2;
  if (hooks.out_dir) std::filesystem::create_directories(*hooks.out_dir);

  TrainReport report;
  report.stage = config.stage;
  AdamState<float> state = AdamState<float>::zeros_like(model.params());
  ModelParams<float> best = model.params();
  const double rate = model.config().dropout;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto start = Clock::now();
    const auto e = static_cast<std::uint64_t>(epoch);
    std::vector<std::size_t> order(work.count);
    std::iota(order.begin(), order.end(), 0);
    Rng order_rng(derive_seed(config.seed, kOrderTag, e));
    shuffle_range(order.begin(), order.end(), order_rng);

    double loss_total = 0.0;
    const auto b = static_cast<std::size_t>(config.batch_size);
    for (std::size_t lo = 0; lo < order.size(); lo += b) {
      const std::size_t hi = std::min(order.size(), lo + b);
      std::vector<Gradients<float>> grads(hi - lo);
      std::vector<double> losses(hi - lo, 0.0);
      parallel_for(hi - lo, config.threads, [&](std::size_t k) {
        const std::size_t idx = order[lo + k];
        Rng drop_rng(derive_seed(config.seed ^ kDropoutTag, e, idx));
        ad::DropoutContext ctx{rate, &drop_rng};
        grads[k] = grad<float>(
            model, [&](ForwardPass<float>& fp) { return work.loss(fp, idx, e); }, &losses[k],
            rate > 0.0 ? &ctx : nullptr);
      });
      Gradients<float> total = std::move(grads[0]);
      for (std::size_t k = 1; k < grads.size(); ++k) add_into(total, grads[k]);
      const float inv = 1.0f / static_cast<float>(hi - lo);
      for (auto& g : total) g *= inv;
      for (double l : losses) loss_total += l;
      adam_step(model.params(), total, state, config.adam);
    }

    EpochRecord rec;
    rec.stage = config.stage;
    rec.epoch = epoch;
    rec.train_loss = work.count ? loss_total / static_cast<double>(work.count) : 0.0;
    rec.dev_metric = dev_metric();
    rec.test_acc = test_metric();
    rec.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    report.epochs.push_back(rec);

    const bool improved = report.best_epoch == 0 ||
                          (higher_is_better ? rec.dev_metric > report.best_dev_metric
                                            : rec.dev_metric < report.best_dev_metric);
    if (improved) {
      report.best_epoch = epoch;
      report.best_dev_metric = rec.dev_metric;
      best = model.params();
    }
    if (hooks.out_dir) {
      const auto dir = *hooks.out_dir;
      save_stage_checkpoint(dir / ("stage" + std::to_string(stage_no) + "-epoch" +
                                   std::to_string(epoch) + ".ckpt"),
                            model, &state, vocab, hooks, config.stage, epoch);
      if (improved) {
        save_stage_checkpoint(dir / "best.ckpt", model, nullptr, vocab, hooks, config.stage,
                              epoch);
        report.best_checkpoint = (dir / "best.ckpt").string();
      }
    }
    if (hooks.metrics_log) append_line(*hooks.metrics_log, rec.to_json(hooks.log_timing).dump());
    if (hooks.on_epoch) hooks.on_epoch(rec);

    if (epoch - report.best_epoch >= config.patience) {
      report.stopped_early = epoch < config.max_epochs;
      break;
    }
  }
  model.params() = std::move(best);
  return report;
}

void require_nonempty(const Dataset& d, const char* what) {
  if (d.instances.empty()) throw EmptyCorpus(std::string(what) + " set is empty");
}

}  // namespace

const char* to_string(Stage v) { return v == Stage::kPretrain ? "pretrain" : "finetune"; }
const char* to_string(Head v) { return v == Head::kGenerative ? "generative" : "classifier"; }
const char* to_string(MaskStyle v) { return v == MaskStyle::kEvent ? "event" : "span"; }
const char* to_string(DecayMode v) { return v == DecayMode::kDecoupled ? "decoupled" : "l2"; }

Head parse_head(const std::string& s) {
  if (s == "generative") return Head::kGenerative;
  if (s == "classifier") return Head::kClassifier;
  throw ConfigError("unknown head '" + s + "' (expected generative|classifier)");
}
MaskStyle parse_mask_style(const std::string& s) {
  if (s == "event") return MaskStyle::kEvent;
  if (s == "span") return MaskStyle::kSpan;
  throw ConfigError("unknown mask style '" + s + "' (expected event|span)");
}
DecayMode parse_decay(const std::string& s) {
  if (s == "decoupled") return DecayMode::kDecoupled;
  if (s == "l2") return DecayMode::kL2;
  throw ConfigError("unknown decay mode '" + s + "' (expected decoupled|l2)");
}

TrainConfig TrainConfig::pretrain_defaults() {
  TrainConfig c;
  c.stage = Stage::kPretrain;
  c.batch_size = 32;
  return c;
}

TrainConfig TrainConfig::finetune_defaults() {
  TrainConfig c;
  c.stage = Stage::kFinetune;
  c.batch_size = 8;
  return c;
}

void TrainConfig::validate() const {
  adam.validate();
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (threads < 1) throw ConfigError("threads must be at least 1");
  if (!(loss.margin >= 0.0)) throw ConfigError("margin must be nonnegative");
  if (masking.min_events < 1 || masking.max_events < masking.min_events)
    throw ConfigError("mask range must satisfy 1 <= min_events <= max_events");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"stage", to_string(stage)},
          {"loss", to_string(loss.kind)},
          {"margin", loss.margin},
          {"orientation", to_string(loss.orientation)},
          {"norm", to_string(scoring.norm)},
          {"scoring", to_string(scoring.mode)},
          {"null_style", scoring.null_style == NullStyle::kOmit ? "omit" : "literal"},
          {"head", to_string(head)},
          {"mask_style", to_string(mask_style)},
          {"mask_min_events", masking.min_events},
          {"mask_max_events", masking.max_events},
          {"adam", adam.to_json()},
          {"batch_size", batch_size},
          {"max_epochs", max_epochs},
          {"patience", patience},
          {"seed", seed}};
}

nlohmann::json EpochRecord::to_json(bool with_timing) const {
  nlohmann::json j = {{"stage", to_string(stage)},
                      {"epoch", epoch},
                      {"train_loss", train_loss},
                      {"dev_metric", dev_metric},
                      {"test_acc", test_acc ? nlohmann::json(*test_acc) : nlohmann::json()}};
  if (with_timing) j["seconds"] = seconds;
  return j;
}

nlohmann::json TrainReport::to_json(bool with_timing) const {
  nlohmann::json epochs_json = nlohmann::json::array();
  for (const auto& e : epochs) epochs_json.push_back(e.to_json(with_timing));
  return {{"stage", to_string(stage)},
          {"best_epoch", best_epoch},
          {"best_dev_metric", best_dev_metric},
          {"best_checkpoint", best_checkpoint},
          {"stopped_early", stopped_early},
          {"epochs", epochs_json}};
}

double mean_infill_nll(const SequenceScorer& model, std::span<const InfillSample> samples,
                       Norm norm, int threads) {
  if (samples.empty()) throw EmptyCorpus("no infill samples to score");
  std::vector<double> nll(samples.size());
  parallel_for(samples.size(), threads,
               [&](std::size_t i) { nll[i] = infill_nll(model, samples[i], norm); });
  return std::accumulate(nll.begin(), nll.end(), 0.0) / static_cast<double>(nll.size());
}

std::vector<InfillSample> fixed_infill_samples(const Dataset& data, const Vocabulary& vocab,
                                               MaskStyle style, const MaskingOptions& masking,
                                               std::uint64_t seed) {
  std::vector<InfillSample> out;
  out.reserve(data.instances.size());
  for (std::size_t i = 0; i < data.instances.size(); ++i) {
    Rng rng(derive_seed(seed, kDevMaskTag, i));
    out.push_back(make_sample(style, data.instances[i], vocab, rng, masking));
  }
  return out;
}

nlohmann::json checkpoint_meta(const Vocabulary& vocab, const nlohmann::json& fingerprint) {
  return {{"vocab", vocab.tokens()}, {"fingerprint", fingerprint}};
}

Vocabulary vocab_from_meta(const nlohmann::json& meta) {
  auto it = meta.find("vocab");
  if (it == meta.end() || !it->is_array())
    throw CheckpointError("checkpoint metadata carries no vocabulary");
  try {
    return Vocabulary::from_tokens(it->get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad vocabulary in checkpoint: ") + e.what());
  } catch (const DataError& e) {
    throw CheckpointError(std::string("bad vocabulary in checkpoint: ") + e.what());
  }
}

Transformer<float> attach_classifier_head(const Transformer<float>& model, int classes,
                                          std::uint64_t seed) {
  ModelConfig config = model.config();
  config.classifier_classes = classes;
  config.validate();
  Rng rng(seed);
  ModelParams<float> params = init_params<float>(config, rng);
  for (auto& t : params.tensors) {
    if (t.name.rfind("head.", 0) == 0) continue;
    t.value = model.params().at(t.name);
  }
  return Transformer<float>(config, std::move(params));
}

TrainReport pretrain(Transformer<float>& model, const Vocabulary& vocab, const Dataset& train,
                     const Dataset& dev, const TrainConfig& config, const TrainHooks& hooks) {
  require_nonempty(train, "pretraining");
  require_nonempty(dev, "development");
  const auto dev_samples =
      fixed_infill_samples(dev, vocab, config.mask_style, config.masking, config.seed);

  Batchable work;
  work.count = train.instances.size();
  work.loss = [&](ForwardPass<float>& fp, std::size_t idx, std::size_t epoch) {
    Rng rng(derive_seed(config.seed ^ kMaskTag, epoch, idx));
    const InfillSample s =
        make_sample(config.mask_style, train.instances[idx], vocab, rng, config.masking);
    return infill_nll_graph(fp, s, config.scoring.norm);
  };
  auto dev_metric = [&] {
    return mean_infill_nll(model, dev_samples, config.scoring.norm, config.threads);
  };
  auto test_metric = [&]() -> std::optional<double> {
    if (!hooks.test || hooks.test->instances.empty()) return std::nullopt;
    return evaluate(model, vocab, hooks.test->instances, config.scoring, config.threads)
        .accuracy;
  };
  return run_stage(model, vocab, work, config, hooks, dev_metric, false, test_metric);
}

TrainReport finetune(Transformer<float>& model, const Vocabulary& vocab, const Dataset& train,
                     const Dataset& dev, const TrainConfig& config, const TrainHooks& hooks) {
  require_nonempty(train, "fine-tuning");
  require_nonempty(dev, "development");
  const bool classifier = config.head == Head::kClassifier;
  if (classifier && !model.has_classifier()) throw HeadMissing();
  const NullStyle ns = config.scoring.null_style;

  // Token ids do not change across epochs, so encode once.
  struct Encoded {
    std::vector<TokenIds> sources;
    std::vector<TokenIds> targets;
    int answer = 0;
  };
  std::vector<Encoded> enc;
  enc.reserve(train.instances.size());
  for (const auto& inst : train.instances) {
    Encoded e;
    e.answer = inst.answer_index;
    if (classifier) {
      for (const auto& c : inst.candidates)
        e.sources.push_back(classifier_source(vocab, inst.script.events, c, ns));
    } else {
      e.sources.push_back(candidate_source(vocab, inst.script.events, ns));
      for (const auto& c : inst.candidates) e.targets.push_back(candidate_target(vocab, c, ns));
    }
    enc.push_back(std::move(e));
  }

  Batchable work;
  work.count = enc.size();
  work.loss = [&](ForwardPass<float>& fp, std::size_t idx, std::size_t) {
    const Encoded& e = enc[idx];
    if (classifier) return classifier_loss_graph<float>(fp, e.sources, e.answer);
    return finetune_loss_graph<float>(fp, e.sources[0], e.targets, e.answer, config.scoring,
                                      config.loss);
  };
  auto accuracy_on = [&](const Dataset& d) {
    return classifier ? evaluate_classifier(model, vocab, d.instances, ns, config.threads).accuracy
                      : evaluate(model, vocab, d.instances, config.scoring, config.threads)
                            .accuracy;
  };
  auto dev_metric = [&] { return accuracy_on(dev); };
  auto test_metric = [&]() -> std::optional<double> {
    if (!hooks.test || hooks.test->instances.empty()) return std::nullopt;
    return accuracy_on(*hooks.test);
  };
  return run_stage(model, vocab, work, config, hooks, dev_metric, true, test_metric);
}

}  // namespace scriptseq
