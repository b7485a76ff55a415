#include "scriptseq/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "scriptseq/errors.hpp"

namespace scriptseq {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '\\' && quoted) {
      ++i;
    } else if (line[i] == '"') {
      quoted = !quoted;
    } else if (line[i] == '#' && !quoted) {
      return line.substr(0, i);
    }
  }
  return line;
}

class Section {
 public:
  Section(const ConfigTable& table, const std::string& name) {
    if (auto it = table.find(name); it != table.end()) values_ = &it->second;
  }

  template <typename U>
  void get(const char* key, U& out) {
    if (!values_) return;
    auto it = values_->find(key);
    if (it == values_->end()) return;
    seen_.push_back(key);
    try {
      out = it->second.get<U>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(std::string("config key '") + key + "' has the wrong type");
    }
  }

  template <typename E>
  void get_enum(const char* key, E& out, E (*parse)(const std::string&)) {
    std::string s;
    bool present = false;
    if (values_ && values_->count(key)) present = true;
    get(key, s);
    if (present) out = parse(s);
  }

  void reject_unknown(const std::string& name) const {
    if (!values_) return;
    for (const auto& [key, value] : *values_)
      if (std::find(seen_.begin(), seen_.end(), key) == seen_.end())
        throw ConfigError("unknown config key '" + key + "' in [" + name + "]");
  }

 private:
  const std::map<std::string, nlohmann::json>* values_ = nullptr;
  std::vector<std::string> seen_;
};

NullStyle parse_null_style(const std::string& s) {
  if (s == "omit") return NullStyle::kOmit;
  if (s == "literal") return NullStyle::kLiteral;
  throw ConfigError("unknown null style '" + s + "' (expected omit|literal)");
}

NegativePredicate parse_negative_predicate(const std::string& s) {
  if (s == "resample") return NegativePredicate::kResample;
  if (s == "keep") return NegativePredicate::kKeep;
  throw ConfigError("unknown negative predicate mode '" + s + "' (expected resample|keep)");
}

void read_train_keys(Section& sec, TrainConfig& c) {
  sec.get("learning_rate", c.adam.learning_rate);
  sec.get("weight_decay", c.adam.weight_decay);
  sec.get("beta1", c.adam.beta1);
  sec.get("beta2", c.adam.beta2);
  sec.get("eps", c.adam.eps);
  sec.get_enum("decay", c.adam.decay, &parse_decay);
  sec.get("batch_size", c.batch_size);
  sec.get("max_epochs", c.max_epochs);
  sec.get("patience", c.patience);
  sec.get_enum("loss", c.loss.kind, &parse_loss_kind);
  sec.get("margin", c.loss.margin);
  sec.get_enum("orientation", c.loss.orientation, &parse_orientation);
  sec.get_enum("norm", c.scoring.norm, &parse_norm);
  sec.get_enum("scoring", c.scoring.mode, &parse_score_mode);
  sec.get_enum("null_style", c.scoring.null_style, &parse_null_style);
  sec.get_enum("head", c.head, &parse_head);
  sec.get_enum("mask_style", c.mask_style, &parse_mask_style);
  sec.get("mask_min_events", c.masking.min_events);
  sec.get("mask_max_events", c.masking.max_events);
}

}  // namespace

ConfigTable parse_config(const std::string& text) {
  ConfigTable table;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    auto fail = [&](const std::string& what) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + what);
    };
    if (line.front() == '[') {
      if (line.back() != ']') fail("unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) fail("empty section name");
      table[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) fail("missing key");
    if (value.empty()) fail("missing value for '" + key + "'");
    nlohmann::json v;
    try {
      v = nlohmann::json::parse(value);
    } catch (const nlohmann::json::exception&) {
      fail("cannot parse value for '" + key + "': " + value);
    }
    if (v.is_structured() || v.is_null()) fail("value for '" + key + "' must be a scalar");
    if (table[section].count(key)) fail("duplicate key '" + key + "'");
    table[section][key] = std::move(v);
  }
  return table;
}

ConfigTable load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

void RunConfig::apply(const ConfigTable& table) {
  for (const auto& [name, values] : table) {
    static const char* known[] = {"", "model", "train", "pretrain", "finetune", "data"};
    if (std::find_if(std::begin(known), std::end(known),
                     [&](const char* k) { return name == k; }) == std::end(known))
      throw ConfigError("unknown config section [" + name + "]");
  }

  Section root(table, "");
  root.get("seed", seed);
  root.get("threads", threads);
  root.reject_unknown("");

  Section m(table, "model");
  m.get("d_model", model.d_model);
  m.get("n_heads", model.n_heads);
  m.get("n_enc_layers", model.n_enc_layers);
  m.get("n_dec_layers", model.n_dec_layers);
  m.get("d_ffn", model.d_ffn);
  m.get("max_len", model.max_len);
  m.get("dropout", model.dropout);
  m.reject_unknown("model");

  Section t(table, "train");
  read_train_keys(t, pretrain);
  Section t2(table, "train");
  read_train_keys(t2, finetune);
  t.reject_unknown("train");

  Section p(table, "pretrain");
  read_train_keys(p, pretrain);
  p.reject_unknown("pretrain");
  Section f(table, "finetune");
  read_train_keys(f, finetune);
  f.reject_unknown("finetune");

  Section d(table, "data");
  d.get("grammar", data.grammar);
  d.get("train", data.train);
  d.get("dev", data.dev);
  d.get("test", data.test);
  d.get("script_len", data.corpus.script_len);
  d.get("m", data.corpus.m);
  d.get("distractors", data.corpus.distractors);
  d.get("max_draws", data.corpus.max_draws);
  d.get_enum("negative_predicate", data.corpus.negative_predicate, &parse_negative_predicate);
  d.reject_unknown("data");
}

void RunConfig::propagate() {
  model.seed = seed;
  pretrain.seed = seed;
  finetune.seed = seed;
  pretrain.threads = threads;
  finetune.threads = threads;
  pretrain.stage = Stage::kPretrain;
  finetune.stage = Stage::kFinetune;
}

void RunConfig::validate() const {
  if (threads < 1) throw ConfigError("threads must be at least 1");
  if (data.train < 0 || data.dev < 0 || data.test < 0)
    throw ConfigError("split sizes must be nonnegative");
  if (data.corpus.script_len < 1) throw ConfigError("script_len must be at least 1");
  if (data.corpus.m < 2) throw ConfigError("m must be at least 2");
  pretrain.validate();
  finetune.validate();
}

nlohmann::json RunConfig::fingerprint() const {
  nlohmann::json m = model.to_json();
  m.erase("vocab_size");
  m.erase("classifier_classes");
  return {{"seed", seed},
          {"threads", threads},
          {"model", m},
          {"pretrain", pretrain.to_json()},
          {"finetune", finetune.to_json()},
          {"data",
           {{"grammar", data.grammar},
            {"train", data.train},
            {"dev", data.dev},
            {"test", data.test},
            {"script_len", data.corpus.script_len},
            {"m", data.corpus.m},
            {"distractors", data.corpus.distractors},
            {"negative_predicate", data.corpus.negative_predicate == NegativePredicate::kResample
                                       ? "resample"
                                       : "keep"}}}};
}

}  // namespace scriptseq
