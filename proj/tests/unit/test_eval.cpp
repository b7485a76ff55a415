#include <cmath>
#include <fstream>
#include <map>

#include "doctest.h"
#include "scriptseq/corpus.hpp"
#include "scriptseq/errors.hpp"
#include "scriptseq/eval.hpp"
#include "support/oracle.hpp"
#include "support/scratch.hpp"

using namespace scriptseq;

namespace {

// Gives every token of the right continuation probability 1 and every other
// token probability e^-5.
class OracleScorer : public SequenceScorer {
 public:
  OracleScorer(const Vocabulary& vocab, std::span<const MCNCInstance> instances) {
    for (const auto& inst : instances)
      answers_[candidate_source(vocab, inst.script.events)] = candidate_target(vocab, inst.answer());
  }
  std::vector<double> target_logprobs(const TokenIds& source, const TokenIds& target) const override {
    const bool right = answers_.at(source) == target;
    return std::vector<double>(target.size() - 1, right ? 0.0 : -5.0);
  }

 private:
  std::map<TokenIds, TokenIds> answers_;
};

const DatasetSplits& data() {
  static const DatasetSplits d =
      build_dataset(SchemaGrammar::load(oracle::grammar_path()), {200, 0, 200, 31});
  return d;
}

}  // namespace

TEST_CASE("an untrained model scores near chance") {
  const Vocabulary vocab = build_vocab(data().train.instances);
  ModelConfig c = oracle::tiny_config(static_cast<int>(vocab.size()), 4);
  c.d_model = 16;
  const auto m = Transformer<float>::initialize(c);
  const auto report = evaluate(m, vocab, data().test.instances);
  const double sigma = std::sqrt(0.2 * 0.8 / 200);
  CHECK(std::abs(report.accuracy - 0.2) < 5 * sigma);
  CHECK(report.n_instances == 200);
}

TEST_CASE("the oracle scorer is always right") {
  const Vocabulary vocab = build_vocab(data().train.instances);
  const OracleScorer oracle_scorer(vocab, data().test.instances);
  const auto report = evaluate(oracle_scorer, vocab, data().test.instances);
  CHECK(report.accuracy == 1.0);
  CHECK(report.n_correct == 200);
}

TEST_CASE("records are self-consistent") {
  const Vocabulary vocab = build_vocab(data().train.instances);
  const auto m = Transformer<float>::initialize(oracle::tiny_config(static_cast<int>(vocab.size()), 2));
  const std::span<const MCNCInstance> some(data().test.instances.data(), 30);
  const auto report = evaluate(m, vocab, some, {}, 2);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < report.records.size(); ++i) {
    const auto& r = report.records[i];
    CHECK(r.chosen == predict(r.o));
    CHECK(r.answer == some[i].answer_index);
    CHECK(r.s == softmax_scores(r.o));
    CHECK(r.o == candidate_scores(m, vocab, some[i]));
    correct += r.chosen == r.answer;
  }
  CHECK(correct == report.n_correct);
  CHECK(report.accuracy == static_cast<double>(correct) / 30.0);
  CHECK(evaluate(m, vocab, some, {}, 1).to_json() == report.to_json());
  CHECK_THROWS_AS(evaluate(m, vocab, std::span<const MCNCInstance>{}), EmptyCorpus);

  scratch::Dir dir("eval");
  report.write_records(dir / "records.jsonl");
  std::ifstream in(dir / "records.jsonl");
  std::string line;
  int n = 0;
  while (std::getline(in, line)) ++n;
  CHECK(n == 30);
}

TEST_CASE("evaluation leaves the model untouched") {
  const Vocabulary vocab = build_vocab(data().train.instances);
  const auto m = Transformer<float>::initialize(oracle::tiny_config(static_cast<int>(vocab.size()), 2));
  const auto before = m.params();
  evaluate(m, vocab, std::span<const MCNCInstance>(data().test.instances.data(), 10));
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(before.tensors[i].value == m.params().tensors[i].value);
}

TEST_CASE("token traces") {
  const auto inst = data().test.instances.front();
  const Vocabulary vocab = build_vocab(data().train.instances);
  SUBCASE("uniform model") {
    const auto m = oracle::uniform_model<double>(static_cast<int>(vocab.size()));
    const auto trace = token_trace(m, vocab, inst.script.events, inst.answer());
    for (const auto& e : trace.entries)
      CHECK(e.nll == doctest::Approx(std::log(static_cast<double>(vocab.size()))).epsilon(1e-12));
  }
  SUBCASE("sums to the candidate score") {
    auto m = Transformer<double>::initialize(oracle::tiny_config(static_cast<int>(vocab.size()), 3));
    oracle::perturb_all(m.params(), 3, 0.2);
    for (const auto& cand : inst.candidates) {
      const auto trace = token_trace(m, vocab, inst.script.events, cand);
      const TokenIds target = candidate_target(vocab, cand);
      REQUIRE(trace.entries.size() == target.size() - 1);
      CHECK(trace.entries.back().token == "</s>");
      for (std::size_t n = 0; n < trace.entries.size(); ++n)
        CHECK(trace.entries[n].token == vocab.token(target[n + 1]));
      CHECK(trace.total() / static_cast<double>(target.size()) ==
            doctest::Approx(-candidate_score(m, vocab, inst.script.events, cand)).epsilon(1e-12));
    }
    const std::string tsv = token_trace(m, vocab, inst.script.events, inst.answer()).to_tsv();
    CHECK(tsv.rfind("token\tnll\n", 0) == 0);
  }
}

TEST_CASE("length-biased instances split mean from sum scoring") {
  const auto set = make_length_bias_set(200, 5);
  const auto scorer = set.scorer();
  ScoringOptions sum;
  sum.mode = ScoreMode::kSum;
  const auto mean_report = evaluate(scorer, set.vocab, set.instances);
  const auto sum_report = evaluate(scorer, set.vocab, set.instances, sum);
  CHECK(mean_report.accuracy >= 0.95);
  CHECK(sum_report.accuracy <= 0.05);

  // Hand recomputation from the token table.
  std::size_t mean_right = 0;
  for (const auto& inst : set.instances) {
    std::vector<double> mean_o;
    for (const auto& cand : inst.candidates) {
      const TokenIds t = candidate_target(set.vocab, cand);
      double total = 0.0;
      for (std::size_t n = 1; n < t.size(); ++n) total += set.logprob_by_id[static_cast<std::size_t>(t[n])];
      mean_o.push_back(total / static_cast<double>(t.size()));
    }
    mean_right += predict(mean_o) == inst.answer_index;
    const auto& right = inst.answer();
    for (const auto& cand : inst.candidates)
      if (!(cand == right)) CHECK(verbalize_event(cand).size() + 1 == verbalize_event(right).size());
  }
  CHECK(mean_right == mean_report.n_correct);
}

TEST_CASE("ablation variants") {
  const auto& v = ablation_variants();
  REQUIRE(v.size() == 8);
  const char* names[] = {"full", "no_pretrain", "no_finetune", "linear_classifier",
                         "random_span_mask", "sum_logprob", "cross_entropy", "margin_ranking"};
  for (std::size_t i = 0; i < 8; ++i) CHECK(v[i].name == names[i]);
}

TEST_CASE("a miniature ablation table is complete and reproducible") {
  const auto splits = build_dataset(SchemaGrammar::load(oracle::grammar_path()), {32, 16, 16, 2});
  const Vocabulary vocab = build_vocab(splits.train.instances);
  AblationSettings s;
  s.model = oracle::tiny_config(static_cast<int>(vocab.size()), 2);
  s.model.dropout = 0.1;
  s.pretrain.max_epochs = 1;
  s.finetune.max_epochs = 1;
  s.pretrain.adam.learning_rate = 1e-3;
  s.finetune.adam.learning_rate = 1e-3;
  scratch::Dir dir("ablate");
  s.out_dir = dir.path();
  int seen = 0;
  const auto a = run_ablations(s, vocab, splits.train, splits.dev, splits.test,
                               [&](const AblationRow&) { ++seen; });
  CHECK(seen == 8);
  REQUIRE(a.rows.size() == 8);
  for (std::size_t i = 0; i < 8; ++i) CHECK(a.rows[i].name == ablation_variants()[i].name);
  CHECK(a.row("no_pretrain").pretrain_epochs.empty());
  CHECK(a.row("no_finetune").finetune_epochs.empty());
  CHECK(std::filesystem::exists(dir / "ablations.json"));
  CHECK(std::filesystem::exists(dir / "ablations.txt"));
  CHECK_THROWS_AS(a.row("nope"), std::out_of_range);

  AblationSettings s2 = s;
  s2.out_dir.reset();
  const auto b = run_ablations(s2, vocab, splits.train, splits.dev, splits.test);
  CHECK(a.to_json().dump() == b.to_json().dump());
  CHECK(a.to_text() == b.to_text());

  s2.variants = {"sum_logprob"};
  const auto c = run_ablations(s2, vocab, splits.train, splits.dev, splits.test);
  REQUIRE(c.rows.size() == 1);
  CHECK(c.rows[0].accuracy == a.row("sum_logprob").accuracy);
}
