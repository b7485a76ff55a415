#include "scriptseq/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "scriptseq/errors.hpp"
#include "scriptseq/parallel.hpp"

namespace scriptseq {
namespace {

EvalReport tally(std::vector<EvalRecord> records) {
  EvalReport r;
  r.n_instances = records.size();
  for (const auto& rec : records)
    if (rec.chosen == rec.answer) ++r.n_correct;
  r.accuracy = static_cast<double>(r.n_correct) / static_cast<double>(r.n_instances);
  r.records = std::move(records);
  return r;
}

EvalRecord make_record(std::vector<double> o, int answer) {
  EvalRecord rec;
  rec.s = softmax_scores(o);
  rec.chosen = predict(o);
  rec.answer = answer;
  rec.o = std::move(o);
  return rec;
}

std::string format_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

}  // namespace

nlohmann::json EvalReport::to_json() const {
  return {{"accuracy", accuracy},
          {"n_instances", n_instances},
          {"n_correct", n_correct},
          {"fingerprint", fingerprint}};
}

void EvalReport::write_records(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    out << nlohmann::json{{"index", i}, {"chosen", r.chosen}, {"answer", r.answer},
                          {"o", r.o}, {"s", r.s}}
               .dump()
        << '\n';
  }
}

EvalReport evaluate(const SequenceScorer& model, const Vocabulary& vocab,
                    std::span<const MCNCInstance> instances, const ScoringOptions& options,
                    int threads) {
  if (instances.empty()) throw EmptyCorpus("nothing to evaluate");
  std::vector<EvalRecord> records(instances.size());
  parallel_for(instances.size(), threads, [&](std::size_t i) {
    records[i] = make_record(candidate_scores(model, vocab, instances[i], options),
                             instances[i].answer_index);
  });
  return tally(std::move(records));
}

template <typename T>
EvalReport evaluate_classifier(const Transformer<T>& model, const Vocabulary& vocab,
                               std::span<const MCNCInstance> instances, NullStyle null_style,
                               int threads) {
  if (instances.empty()) throw EmptyCorpus("nothing to evaluate");
  if (!model.has_classifier()) throw HeadMissing();
  std::vector<EvalRecord> records(instances.size());
  parallel_for(instances.size(), threads, [&](std::size_t i) {
    records[i] = make_record(classifier_scores(model, vocab, instances[i], null_style),
                             instances[i].answer_index);
  });
  return tally(std::move(records));
}

template EvalReport evaluate_classifier<float>(const Transformer<float>&, const Vocabulary&,
                                               std::span<const MCNCInstance>, NullStyle, int);
template EvalReport evaluate_classifier<double>(const Transformer<double>&, const Vocabulary&,
                                                std::span<const MCNCInstance>, NullStyle, int);

double TokenTrace::total() const {
  double t = 0.0;
  for (const auto& e : entries) t += e.nll;
  return t;
}

std::string TokenTrace::to_tsv() const {
  std::ostringstream out;
  out << "token\tnll\n";
  for (const auto& e : entries) out << e.token << '\t' << format_fixed(e.nll, 6) << '\n';
  return out.str();
}

TokenTrace token_trace(const SequenceScorer& model, const Vocabulary& vocab,
                       std::span<const Event> script, const Event& candidate,
                       NullStyle null_style) {
  const TokenIds target = candidate_target(vocab, candidate, null_style);
  const auto lp = model.target_logprobs(candidate_source(vocab, script, null_style), target);
  TokenTrace trace;
  for (std::size_t n = 0; n < lp.size(); ++n)
    trace.entries.push_back({vocab.token(target[n + 1]), -lp[n]});
  return trace;
}

LookupScorer::LookupScorer(std::vector<double> logprob_by_id, double fallback)
    : table_(std::move(logprob_by_id)), fallback_(fallback) {}

std::vector<double> LookupScorer::target_logprobs(const TokenIds&, const TokenIds& target) const {
  std::vector<double> out;
  for (std::size_t n = 1; n < target.size(); ++n) {
    const auto id = static_cast<std::size_t>(target[n]);
    out.push_back(id < table_.size() ? table_[id] : fallback_);
  }
  return out;
}

LengthBiasSet make_length_bias_set(std::size_t n, std::uint64_t seed,
                                   const LengthBiasOptions& options) {
  LengthBiasSet set;
  Rng rng(seed);
  auto jitter = [&] { return options.jitter * (2.0 * uniform01(rng) - 1.0); };
  auto token_with = [&](const std::string& tok, double lp) {
    const TokenId id = set.vocab.add(tok);
    if (set.logprob_by_id.size() <= static_cast<std::size_t>(id))
      set.logprob_by_id.resize(static_cast<std::size_t>(id) + 1, options.base);
    set.logprob_by_id[static_cast<std::size_t>(id)] = lp;
  };
  token_with(special::kSepText, options.base + jitter());
  token_with(special::kEosText, options.base + jitter());

  const int m = 5;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string tag = std::to_string(i);
    const std::string hero = "hero" + tag;
    token_with(hero, options.base + jitter());
    MCNCInstance inst;
    inst.script.protagonist = hero;
    for (int k = 0; k < 8; ++k) {
      const std::string v = "step" + tag + "_" + std::to_string(k);
      set.vocab.add(v);
      inst.script.events.push_back(make_event(hero, v, std::nullopt, std::nullopt));
    }
    // The correct event carries one extra, well-predicted argument.
    std::vector<Event> candidates;
    const std::string right = "act" + tag + "_0";
    const std::string arg = "thing" + tag;
    token_with(right, options.base + jitter());
    token_with(arg, options.extra + jitter());
    candidates.push_back(make_event(hero, right, arg, std::nullopt));
    for (int k = 1; k < m; ++k) {
      const std::string v = "act" + tag + "_" + std::to_string(k);
      token_with(v, options.base + jitter());
      candidates.push_back(make_event(hero, v, std::nullopt, std::nullopt));
    }
    std::vector<std::size_t> order(candidates.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    shuffle_range(order.begin(), order.end(), rng);
    for (std::size_t slot = 0; slot < order.size(); ++slot) {
      inst.candidates.push_back(candidates[order[slot]]);
      if (order[slot] == 0) inst.answer_index = static_cast<int>(slot);
    }
    set.instances.push_back(std::move(inst));
  }
  set.logprob_by_id.resize(set.vocab.size(), options.base);
  return set;
}

// ---------------------------------------------------------------------------
// Ablations

const std::vector<AblationVariant>& ablation_variants() {
  static const std::vector<AblationVariant> v = {
      {"full", "full model"},
      {"no_pretrain", "w/o event-centric pretraining"},
      {"no_finetune", "w/o contrastive fine-tuning"},
      {"linear_classifier", "replace with a linear classifier"},
      {"random_span_mask", "replace with random span mask"},
      {"sum_logprob", "replace with sum of log-probabilities"},
      {"cross_entropy", "replace with cross entropy loss"},
      {"margin_ranking", "replace with margin ranking loss"},
  };
  return v;
}

const AblationRow& AblationTable::row(const std::string& name) const {
  for (const auto& r : rows)
    if (r.name == name) return r;
  throw std::out_of_range("no ablation row '" + name + "'");
}

nlohmann::json AblationTable::to_json(bool with_timing) const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json pre = nlohmann::json::array();
    nlohmann::json fine = nlohmann::json::array();
    for (const auto& e : r.pretrain_epochs) pre.push_back(e.to_json(with_timing));
    for (const auto& e : r.finetune_epochs) fine.push_back(e.to_json(with_timing));
    rows_json.push_back({{"name", r.name},
                         {"label", r.label},
                         {"accuracy", r.accuracy},
                         {"pretrain_epochs", pre},
                         {"finetune_epochs", fine}});
  }
  return {{"rows", rows_json}, {"fingerprint", fingerprint}};
}

std::string AblationTable::to_text() const {
  std::ostringstream out;
  std::size_t width = 8;
  for (const auto& r : rows) width = std::max(width, r.label.size());
  out << "variant" << std::string(width - 7 + 2, ' ') << "accuracy\n";
  out << std::string(width + 2 + 8, '-') << '\n';
  for (const auto& r : rows)
    out << r.label << std::string(width - r.label.size() + 2, ' ')
        << format_fixed(100.0 * r.accuracy, 2) << '\n';
  return out.str();
}

AblationTable run_ablations(const AblationSettings& settings, const Vocabulary& vocab,
                            const Dataset& train, const Dataset& dev, const Dataset& test,
                            const std::function<void(const AblationRow&)>& on_row) {
  if (test.instances.empty()) throw EmptyCorpus("ablation test set is empty");
  std::vector<std::string> wanted = settings.variants;
  if (wanted.empty())
    for (const auto& v : ablation_variants()) wanted.push_back(v.name);
  auto want = [&](const std::string& name) {
    return std::find(wanted.begin(), wanted.end(), name) != wanted.end();
  };
  for (const auto& w : wanted) {
    bool known = false;
    for (const auto& v : ablation_variants()) known = known || v.name == w;
    if (!known) throw ConfigError("unknown ablation variant '" + w + "'");
  }

  ModelConfig mc = settings.model;
  mc.vocab_size = static_cast<int>(vocab.size());
  mc.classifier_classes = 0;
  const int m = static_cast<int>(test.instances.front().candidates.size());

  std::vector<std::string> fresh_logs;
  auto hooks_for = [&](const std::string& name, Stage) {
    TrainHooks h;
    h.test = &test;
    h.fingerprint = settings.fingerprint;
    h.fingerprint["variant"] = name;
    if (settings.out_dir) {
      const auto dir = *settings.out_dir / name;
      std::filesystem::create_directories(dir);
      h.metrics_log = dir / "metrics.jsonl";
      if (std::find(fresh_logs.begin(), fresh_logs.end(), name) == fresh_logs.end()) {
        std::filesystem::remove(*h.metrics_log);
        fresh_logs.push_back(name);
      }
    }
    return h;
  };
  auto pre_cfg = settings.pretrain;
  pre_cfg.stage = Stage::kPretrain;
  pre_cfg.threads = settings.threads;
  auto fine_cfg = settings.finetune;
  fine_cfg.stage = Stage::kFinetune;
  fine_cfg.threads = settings.threads;

  // Stage-1 models are shared by every variant that starts from them.
  std::optional<Transformer<float>> event_pre;
  std::vector<EpochRecord> event_pre_epochs;
  auto pretrained = [&](MaskStyle style, const std::string& name,
                        std::vector<EpochRecord>& epochs) {
    Transformer<float> model = Transformer<float>::initialize(mc);
    TrainConfig c = pre_cfg;
    c.mask_style = style;
    epochs = pretrain(model, vocab, train, dev, c, hooks_for(name, Stage::kPretrain)).epochs;
    return model;
  };
  auto event_pretrained = [&]() -> const Transformer<float>& {
    if (!event_pre) event_pre = pretrained(MaskStyle::kEvent, "pretrain_event", event_pre_epochs);
    return *event_pre;
  };

  AblationTable table;
  table.fingerprint = settings.fingerprint;
  for (const auto& variant : ablation_variants()) {
    if (!want(variant.name)) continue;
    AblationRow row;
    row.name = variant.name;
    row.label = variant.label;
    TrainConfig fc = fine_cfg;
    const auto name = variant.name;

    auto finetuned = [&](Transformer<float> model) {
      auto hooks = hooks_for(name, Stage::kFinetune);
      row.finetune_epochs = finetune(model, vocab, train, dev, fc, hooks).epochs;
      return model;
    };

    if (name == "no_pretrain") {
      auto model = finetuned(Transformer<float>::initialize(mc));
      row.accuracy = evaluate(model, vocab, test.instances, fc.scoring, settings.threads).accuracy;
    } else if (name == "no_finetune") {
      const auto& model = event_pretrained();
      row.pretrain_epochs = event_pre_epochs;
      row.accuracy = evaluate(model, vocab, test.instances, fc.scoring, settings.threads).accuracy;
    } else if (name == "linear_classifier") {
      row.pretrain_epochs = (event_pretrained(), event_pre_epochs);
      fc.head = Head::kClassifier;
      auto model = finetuned(attach_classifier_head(event_pretrained(), m, mc.seed ^ 0x4EAD));
      row.accuracy = evaluate_classifier(model, vocab, test.instances, fc.scoring.null_style,
                                         settings.threads)
                         .accuracy;
    } else if (name == "random_span_mask") {
      auto model = finetuned(pretrained(MaskStyle::kSpan, name, row.pretrain_epochs));
      row.accuracy = evaluate(model, vocab, test.instances, fc.scoring, settings.threads).accuracy;
    } else {
      if (name == "sum_logprob") fc.scoring.mode = ScoreMode::kSum;
      if (name == "cross_entropy") fc.loss.kind = LossKind::kCross;
      if (name == "margin_ranking") fc.loss.kind = LossKind::kMargin;
      row.pretrain_epochs = (event_pretrained(), event_pre_epochs);
      auto model = finetuned(event_pretrained());
      row.accuracy = evaluate(model, vocab, test.instances, fc.scoring, settings.threads).accuracy;
    }
    if (on_row) on_row(row);
    table.rows.push_back(std::move(row));
  }

  if (settings.out_dir) {
    std::ofstream(*settings.out_dir / "ablations.json", std::ios::trunc)
        << table.to_json(false).dump(2) << '\n';
    std::ofstream(*settings.out_dir / "ablations.txt", std::ios::trunc) << table.to_text();
  }
  return table;
}

AblationTable run_ablations(const AblationSettings& settings,
                            const std::filesystem::path& dataset_dir,
                            const std::function<void(const AblationRow&)>& on_row) {
  const Dataset train = read_instances(dataset_dir / "train.jsonl");
  const Dataset dev = read_instances(dataset_dir / "dev.jsonl");
  const Dataset test = read_instances(dataset_dir / "test.jsonl");
  const Vocabulary vocab = build_vocab(train.instances, settings.finetune.scoring.null_style);
  return run_ablations(settings, vocab, train, dev, test, on_row);
}

}  // namespace scriptseq
