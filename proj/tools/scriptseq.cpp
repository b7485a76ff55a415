// Command-line entry point: gen-data, pretrain, finetune, eval, ablate, trace.

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "scriptseq/checkpoint.hpp"
#include "scriptseq/config.hpp"
#include "scriptseq/corpus.hpp"
#include "scriptseq/errors.hpp"
#include "scriptseq/eval.hpp"
#include "scriptseq/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace scriptseq;

namespace {

enum Exit { kOk = 0, kOther = 1, kConfig = 2, kGeneration = 3, kCheckpoint = 4, kData = 5,
            kNumeric = 6 };

struct Globals {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::optional<int> threads;
};

struct TrainFlags {
  std::optional<double> lr;
  std::optional<int> epochs;
  std::optional<int> batch_size;
  std::optional<int> patience;
  std::optional<std::string> loss;
  std::optional<double> margin;
  std::optional<std::string> orientation;
  std::optional<std::string> scoring;
  std::optional<std::string> norm;
  std::optional<std::string> head;
  std::optional<std::string> mask_style;

  void add_to(CLI::App* app, bool finetune) {
    app->add_option("--lr", lr, "Adam learning rate")->check(CLI::NonNegativeNumber);
    app->add_option("--epochs", epochs, "maximum epochs")->check(CLI::PositiveNumber);
    app->add_option("--batch-size", batch_size, "batch size")->check(CLI::PositiveNumber);
    app->add_option("--patience", patience, "early-stopping patience")
        ->check(CLI::PositiveNumber);
    app->add_option("--norm", norm, "length normalizer: paper|generated");
    if (finetune) {
      app->add_option("--loss", loss, "cot|cross|margin");
      app->add_option("--margin", margin, "margin for the ranking loss")
          ->check(CLI::NonNegativeNumber);
      app->add_option("--orientation", orientation, "conventional|paper-literal");
      app->add_option("--scoring", scoring, "mean|sum");
      app->add_option("--head", head, "generative|classifier");
    } else {
      app->add_option("--mask-style", mask_style, "event|span");
    }
  }

  void apply(TrainConfig& c) const {
    if (lr) c.adam.learning_rate = *lr;
    if (epochs) c.max_epochs = *epochs;
    if (batch_size) c.batch_size = *batch_size;
    if (patience) c.patience = *patience;
    if (loss) c.loss.kind = parse_loss_kind(*loss);
    if (margin) c.loss.margin = *margin;
    if (orientation) c.loss.orientation = parse_orientation(*orientation);
    if (scoring) c.scoring.mode = parse_score_mode(*scoring);
    if (norm) c.scoring.norm = parse_norm(*norm);
    if (head) c.head = parse_head(*head);
    if (mask_style) c.mask_style = parse_mask_style(*mask_style);
  }
};

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("scriptseq");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  const char* env = std::getenv("SCRIPTSEQ_LOG");
  const std::string level = env ? env : "info";
  if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    spdlog::set_level(spdlog::level::info);
  }
}

RunConfig base_config(const Globals& g) {
  RunConfig cfg;
  if (g.config) cfg.apply(load_config(*g.config));
  if (g.seed) cfg.seed = *g.seed;
  if (g.threads) cfg.threads = *g.threads;
  cfg.propagate();
  return cfg;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

void summary(json j) { std::cout << j.dump() << std::endl; }

Dataset read_split(const fs::path& dir, const std::string& split) {
  if (split != "train" && split != "dev" && split != "test")
    throw ConfigError("unknown split '" + split + "' (expected train|dev|test)");
  const fs::path path = dir / (split + ".jsonl");
  if (!fs::exists(path)) throw DataError("missing data file '" + path.string() + "'");
  return read_instances(path);
}

struct LoadedModel {
  Transformer<float> model;
  Vocabulary vocab;
  json meta;
};

LoadedModel load_model(const fs::path& path) {
  auto ckpt = load_checkpoint<float>(path);
  Vocabulary vocab = vocab_from_meta(ckpt.meta);
  return {Transformer<float>(ckpt.config, std::move(ckpt.params)), std::move(vocab),
          std::move(ckpt.meta)};
}

void log_epoch(const EpochRecord& r) {
  spdlog::info("{} epoch {}: train_loss={:.4f} dev={:.4f} test_acc={} ({:.1f}s)",
               to_string(r.stage), r.epoch, r.train_loss, r.dev_metric,
               r.test_acc ? fmt::format("{:.4f}", *r.test_acc) : "n/a", r.seconds);
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::optional<std::string> grammar;
  std::optional<long long> train, dev, test;
};

int cmd_gen_data(const Globals& g, const GenDataArgs& a) {
  RunConfig cfg = base_config(g);
  if (a.grammar) cfg.data.grammar = *a.grammar;
  if (a.train) cfg.data.train = *a.train;
  if (a.dev) cfg.data.dev = *a.dev;
  if (a.test) cfg.data.test = *a.test;
  cfg.validate();
  if (cfg.data.grammar.empty()) throw ConfigError("no grammar given (--grammar)");
  const auto grammar = SchemaGrammar::load(cfg.data.grammar);
  const auto splits = build_dataset(
      grammar, {cfg.data.train, cfg.data.dev, cfg.data.test, cfg.seed}, cfg.data.corpus);
  fs::create_directories(g.out);
  write_dataset(g.out, splits);
  json fp = cfg.fingerprint();
  fp["command"] = "gen-data";
  write_json(fs::path(g.out) / "config.json", fp);
  spdlog::info("wrote {} / {} / {} instances to {}", splits.train.instances.size(),
               splits.dev.instances.size(), splits.test.instances.size(), g.out);
  summary({{"command", "gen-data"},
           {"out", g.out},
           {"train", splits.train.instances.size()},
           {"dev", splits.dev.instances.size()},
           {"test", splits.test.instances.size()},
           {"fingerprint", fp}});
  return kOk;
}

struct PretrainArgs {
  std::string data;
  TrainFlags flags;
  std::optional<int> dump_samples;
};

int cmd_pretrain(const Globals& g, const PretrainArgs& a) {
  RunConfig cfg = base_config(g);
  a.flags.apply(cfg.pretrain);
  cfg.validate();
  const Dataset train = read_split(a.data, "train");
  const Dataset dev = read_split(a.data, "dev");
  const Dataset test = read_split(a.data, "test");
  const Vocabulary vocab = build_vocab(train.instances, cfg.pretrain.scoring.null_style);
  fs::create_directories(g.out);
  json fp = cfg.fingerprint();
  fp["command"] = "pretrain";
  fp["data"]["dir"] = a.data;

  if (a.dump_samples) {
    std::ofstream out(fs::path(g.out) / "samples.tsv", std::ios::trunc);
    const int n = std::min<int>(*a.dump_samples, static_cast<int>(train.instances.size()));
    for (int i = 0; i < n; ++i) {
      Rng rng(derive_seed(cfg.seed, 1, static_cast<std::uint64_t>(i)));
      out << format_sample(vocab, make_sample(cfg.pretrain.mask_style, train.instances[i],
                                              vocab, rng, cfg.pretrain.masking))
          << '\n';
    }
    summary({{"command", "pretrain"}, {"dumped_samples", n}, {"fingerprint", fp}});
    return kOk;
  }

  ModelConfig mc = cfg.model;
  mc.vocab_size = static_cast<int>(vocab.size());
  auto model = Transformer<float>::initialize(mc);
  vocab.save(fs::path(g.out) / "vocab.txt");
  const fs::path log = fs::path(g.out) / "metrics.jsonl";
  fs::remove(log);
  TrainHooks hooks;
  hooks.test = &test;
  hooks.out_dir = g.out;
  hooks.metrics_log = log;
  hooks.fingerprint = fp;
  hooks.on_epoch = log_epoch;
  const auto report = pretrain(model, vocab, train, dev, cfg.pretrain, hooks);
  json rj = report.to_json();
  rj["fingerprint"] = fp;
  write_json(fs::path(g.out) / "report.json", rj);
  summary({{"command", "pretrain"},
           {"best_epoch", report.best_epoch},
           {"best_dev_nll", report.best_dev_metric},
           {"checkpoint", report.best_checkpoint},
           {"fingerprint", fp}});
  return kOk;
}

struct FinetuneArgs {
  std::string data;
  std::optional<std::string> init;
  TrainFlags flags;
};

int cmd_finetune(const Globals& g, const FinetuneArgs& a) {
  RunConfig cfg = base_config(g);
  a.flags.apply(cfg.finetune);
  cfg.validate();
  const Dataset train = read_split(a.data, "train");
  const Dataset dev = read_split(a.data, "dev");
  const Dataset test = read_split(a.data, "test");
  json fp = cfg.fingerprint();
  fp["command"] = "finetune";
  fp["data"]["dir"] = a.data;
  fp["init"] = a.init ? json(*a.init) : json();

  std::optional<Transformer<float>> model;
  Vocabulary vocab;
  if (a.init) {
    auto loaded = load_model(*a.init);
    vocab = std::move(loaded.vocab);
    model.emplace(std::move(loaded.model));
  } else {
    vocab = build_vocab(train.instances, cfg.finetune.scoring.null_style);
    ModelConfig mc = cfg.model;
    mc.vocab_size = static_cast<int>(vocab.size());
    model.emplace(Transformer<float>::initialize(mc));
  }
  if (cfg.finetune.head == Head::kClassifier && !model->has_classifier()) {
    const int m = static_cast<int>(train.instances.front().candidates.size());
    model.emplace(attach_classifier_head(*model, m, cfg.seed ^ 0x4EAD));
  }

  fs::create_directories(g.out);
  vocab.save(fs::path(g.out) / "vocab.txt");
  const fs::path log = fs::path(g.out) / "metrics.jsonl";
  fs::remove(log);
  TrainHooks hooks;
  hooks.test = &test;
  hooks.out_dir = g.out;
  hooks.metrics_log = log;
  hooks.fingerprint = fp;
  hooks.on_epoch = log_epoch;
  const auto report = finetune(*model, vocab, train, dev, cfg.finetune, hooks);
  json rj = report.to_json();
  rj["fingerprint"] = fp;
  write_json(fs::path(g.out) / "report.json", rj);
  summary({{"command", "finetune"},
           {"best_epoch", report.best_epoch},
           {"best_dev_accuracy", report.best_dev_metric},
           {"checkpoint", report.best_checkpoint},
           {"fingerprint", fp}});
  return kOk;
}

struct EvalArgs {
  std::optional<std::string> data;
  std::string split = "test";
  std::optional<std::string> checkpoint;
  std::optional<std::string> scoring;
  std::optional<std::string> norm;
  std::optional<std::string> head;
  std::optional<std::size_t> length_bias;
};

int cmd_eval(const Globals& g, const EvalArgs& a) {
  RunConfig cfg = base_config(g);
  ScoringOptions opts = cfg.finetune.scoring;
  if (a.scoring) opts.mode = parse_score_mode(*a.scoring);
  if (a.norm) opts.norm = parse_norm(*a.norm);
  cfg.finetune.scoring = opts;
  cfg.validate();
  json fp = cfg.fingerprint();
  fp["command"] = "eval";
  fp["scoring"] = to_string(opts.mode);
  fp["norm"] = to_string(opts.norm);

  EvalReport report;
  if (a.length_bias) {
    const auto set = make_length_bias_set(*a.length_bias, cfg.seed);
    fp["length_bias"] = *a.length_bias;
    report = evaluate(set.scorer(), set.vocab, set.instances, opts, cfg.threads);
  } else {
    if (!a.checkpoint) throw ConfigError("eval needs --checkpoint (or --length-bias)");
    if (!a.data) throw ConfigError("eval needs --data");
    auto loaded = load_model(*a.checkpoint);
    const Dataset data = read_split(*a.data, a.split);
    const bool classifier = a.head ? parse_head(*a.head) == Head::kClassifier
                                   : loaded.model.has_classifier();
    fp["checkpoint"] = *a.checkpoint;
    fp["checkpoint_fingerprint"] = loaded.meta.value("fingerprint", json::object());
    fp["split"] = a.split;
    fp["head"] = classifier ? "classifier" : "generative";
    report = classifier ? evaluate_classifier(loaded.model, loaded.vocab, data.instances,
                                              opts.null_style, cfg.threads)
                        : evaluate(loaded.model, loaded.vocab, data.instances, opts,
                                   cfg.threads);
  }
  report.fingerprint = fp;
  fs::create_directories(g.out);
  write_json(fs::path(g.out) / "eval.json", report.to_json());
  report.write_records(fs::path(g.out) / "records.jsonl");
  spdlog::info("accuracy {:.4f} ({} / {})", report.accuracy, report.n_correct,
               report.n_instances);
  json s = report.to_json();
  s["command"] = "eval";
  summary(s);
  return kOk;
}

struct AblateArgs {
  std::string data;
  std::vector<std::string> variants;
};

int cmd_ablate(const Globals& g, const AblateArgs& a) {
  RunConfig cfg = base_config(g);
  cfg.validate();
  json fp = cfg.fingerprint();
  fp["command"] = "ablate";
  fp["data"]["dir"] = a.data;
  AblationSettings settings;
  settings.model = cfg.model;
  settings.pretrain = cfg.pretrain;
  settings.finetune = cfg.finetune;
  settings.variants = a.variants;
  settings.threads = cfg.threads;
  settings.out_dir = g.out;
  settings.fingerprint = fp;
  fs::create_directories(g.out);
  const auto table = run_ablations(settings, a.data, [](const AblationRow& r) {
    spdlog::info("{}: accuracy {:.4f}", r.label, r.accuracy);
  });
  std::cout << table.to_text();
  json rows = json::object();
  for (const auto& r : table.rows) rows[r.name] = r.accuracy;
  summary({{"command", "ablate"}, {"accuracy", rows}, {"fingerprint", fp}});
  return kOk;
}

struct TraceArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "test";
  std::size_t index = 0;
  std::optional<std::size_t> candidate;
};

int cmd_trace(const Globals& g, const TraceArgs& a) {
  RunConfig cfg = base_config(g);
  auto loaded = load_model(a.checkpoint);
  const Dataset data = read_split(a.data, a.split);
  if (a.index >= data.instances.size())
    throw DataError("instance index " + std::to_string(a.index) + " out of range");
  const auto& inst = data.instances[a.index];
  fs::create_directories(g.out);
  std::ofstream tsv(fs::path(g.out) / "trace.tsv", std::ios::trunc);
  tsv << "candidate\tcorrect\ttoken\tnll\n";
  json traces = json::array();
  for (std::size_t c = 0; c < inst.candidates.size(); ++c) {
    if (a.candidate && *a.candidate != c) continue;
    const auto trace = token_trace(loaded.model, loaded.vocab, inst.script.events,
                                   inst.candidates[c], cfg.finetune.scoring.null_style);
    const bool correct = static_cast<int>(c) == inst.answer_index;
    for (const auto& e : trace.entries)
      tsv << c << '\t' << (correct ? 1 : 0) << '\t' << e.token << '\t'
          << fmt::format("{:.6f}", e.nll) << '\n';
    const double n = static_cast<double>(trace.entries.size() + 1);
    traces.push_back({{"candidate", c}, {"correct", correct},
                      {"mean_nll", trace.total() / n}, {"sum_nll", trace.total()}});
    std::cout << trace.to_tsv();
  }
  summary({{"command", "trace"}, {"index", a.index}, {"traces", traces},
           {"checkpoint", a.checkpoint}});
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Script event prediction by event-level infilling and likelihood ranking"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "TOML-style config file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "global seed");
  app.add_option("--out", g.out, "output directory");
  app.add_option("--threads", g.threads, "worker threads")->check(CLI::PositiveNumber);

  GenDataArgs gen;
  auto* c_gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  c_gen->add_option("--grammar", gen.grammar, "grammar JSON file");
  c_gen->add_option("--train", gen.train, "training instances")->check(CLI::NonNegativeNumber);
  c_gen->add_option("--dev", gen.dev, "development instances")->check(CLI::NonNegativeNumber);
  c_gen->add_option("--test", gen.test, "test instances")->check(CLI::NonNegativeNumber);

  PretrainArgs pre;
  auto* c_pre = app.add_subcommand("pretrain", "stage 1: event-level blank infilling");
  c_pre->add_option("--data", pre.data, "dataset directory")->required();
  c_pre->add_option("--dump-samples", pre.dump_samples,
                    "write N masked samples to samples.tsv and stop")
      ->check(CLI::NonNegativeNumber);
  pre.flags.add_to(c_pre, false);

  FinetuneArgs fine;
  auto* c_fine = app.add_subcommand("finetune", "stage 2: contrastive fine-tuning");
  c_fine->add_option("--data", fine.data, "dataset directory")->required();
  c_fine->add_option("--init", fine.init, "stage-1 checkpoint (omit to start fresh)");
  fine.flags.add_to(c_fine, true);

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "MCNC accuracy of a checkpoint");
  c_eval->add_option("--data", ev.data, "dataset directory");
  c_eval->add_option("--split", ev.split, "train|dev|test");
  c_eval->add_option("--checkpoint", ev.checkpoint, "model checkpoint");
  c_eval->add_option("--scoring", ev.scoring, "mean|sum");
  c_eval->add_option("--norm", ev.norm, "paper|generated");
  c_eval->add_option("--head", ev.head, "generative|classifier");
  c_eval->add_option("--length-bias", ev.length_bias,
                     "score N constructed length-bias instances instead of a dataset");

  AblateArgs abl;
  auto* c_abl = app.add_subcommand("ablate", "run the ablation battery");
  c_abl->add_option("--data", abl.data, "dataset directory")->required();
  c_abl->add_option("--variants", abl.variants, "subset of variants")->delimiter(',');

  TraceArgs tr;
  auto* c_tr = app.add_subcommand("trace", "per-token negative log-probabilities");
  c_tr->add_option("--checkpoint", tr.checkpoint, "model checkpoint")->required();
  c_tr->add_option("--data", tr.data, "dataset directory")->required();
  c_tr->add_option("--split", tr.split, "train|dev|test");
  c_tr->add_option("--index", tr.index, "instance index");
  c_tr->add_option("--candidate", tr.candidate, "only this candidate");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    if (*c_gen) return cmd_gen_data(g, gen);
    if (*c_pre) return cmd_pretrain(g, pre);
    if (*c_fine) return cmd_finetune(g, fine);
    if (*c_eval) return cmd_eval(g, ev);
    if (*c_abl) return cmd_ablate(g, abl);
    if (*c_tr) return cmd_trace(g, tr);
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return kConfig;
  } catch (const GenerationError& e) {
    spdlog::error("{}", e.what());
    return kGeneration;
  } catch (const CheckpointError& e) {
    spdlog::error("{}", e.what());
    return kCheckpoint;
  } catch (const DataError& e) {
    spdlog::error("{}", e.what());
    return kData;
  } catch (const NumericError& e) {
    spdlog::error("{}", e.what());
    return kNumeric;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kOther;
  }
  return kOther;
}
