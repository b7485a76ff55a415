#include "scriptseq/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "scriptseq/errors.hpp"

namespace scriptseq {
namespace {

constexpr double kDegenerateEps = 1e-12;
constexpr double kProbFloor = 1e-30;

void check_index(std::size_t m, int t) {
  if (t < 0 || static_cast<std::size_t>(t) >= m)
    throw DataError("answer index " + std::to_string(t) + " outside [0, " + std::to_string(m) +
                    ")");
}

double log_sum_exp(std::span<const double> x) {
  const double mx = *std::max_element(x.begin(), x.end());
  double acc = 0.0;
  for (double v : x) acc += std::exp(v - mx);
  return mx + std::log(acc);
}

}  // namespace

const char* to_string(Norm v) { return v == Norm::kPaper ? "paper" : "generated"; }
const char* to_string(ScoreMode v) { return v == ScoreMode::kMean ? "mean" : "sum"; }
const char* to_string(LossKind v) {
  switch (v) {
    case LossKind::kCot: return "cot";
    case LossKind::kCross: return "cross";
    case LossKind::kMargin: return "margin";
  }
  return "?";
}
const char* to_string(MarginOrientation v) {
  return v == MarginOrientation::kConventional ? "conventional" : "paper-literal";
}

Norm parse_norm(const std::string& s) {
  if (s == "paper") return Norm::kPaper;
  if (s == "generated") return Norm::kGenerated;
  throw ConfigError("unknown norm '" + s + "' (expected paper|generated)");
}
ScoreMode parse_score_mode(const std::string& s) {
  if (s == "mean") return ScoreMode::kMean;
  if (s == "sum") return ScoreMode::kSum;
  throw ConfigError("unknown scoring mode '" + s + "' (expected mean|sum)");
}
LossKind parse_loss_kind(const std::string& s) {
  if (s == "cot") return LossKind::kCot;
  if (s == "cross") return LossKind::kCross;
  if (s == "margin") return LossKind::kMargin;
  throw ConfigError("unknown loss '" + s + "' (expected cot|cross|margin)");
}
MarginOrientation parse_orientation(const std::string& s) {
  if (s == "conventional") return MarginOrientation::kConventional;
  if (s == "paper-literal") return MarginOrientation::kPaperLiteral;
  throw ConfigError("unknown orientation '" + s + "' (expected conventional|paper-literal)");
}

double normalizer(std::size_t target_len, Norm norm) {
  return norm == Norm::kPaper ? static_cast<double>(target_len)
                              : static_cast<double>(target_len - 1);
}

double infill_nll_from_logprobs(std::span<const double> logprobs, std::size_t target_len,
                                Norm norm) {
  if (target_len < 2) throw EmptyTarget("infill target needs at least two tokens");
  const double total = std::accumulate(logprobs.begin(), logprobs.end(), 0.0);
  return -total / normalizer(target_len, norm);
}

double infill_nll(const SequenceScorer& model, const InfillSample& sample, Norm norm) {
  if (sample.target_ids.size() < 2)
    throw EmptyTarget("infill target needs at least two tokens");
  const auto lp = model.target_logprobs(sample.source_ids, sample.target_ids);
  return infill_nll_from_logprobs(lp, sample.target_ids.size(), norm);
}

TokenIds candidate_source(const Vocabulary& vocab, std::span<const Event> script,
                          NullStyle null_style) {
  std::vector<Slot> slots(script.begin(), script.end());
  slots.push_back(kMaskSlot);
  return encode(vocab, verbalize_sequence(slots, true, null_style));
}

TokenIds candidate_target(const Vocabulary& vocab, const Event& candidate,
                          NullStyle null_style) {
  const Event one[] = {candidate};
  return encode(vocab, verbalize_events(one, true, null_style));
}

TokenIds classifier_source(const Vocabulary& vocab, std::span<const Event> script,
                           const Event& candidate, NullStyle null_style) {
  std::vector<Event> events(script.begin(), script.end());
  events.push_back(candidate);
  return encode(vocab, verbalize_events(events, true, null_style));
}

double aggregate_logprobs(std::span<const double> logprobs, const ScoringOptions& options) {
  const double total = std::accumulate(logprobs.begin(), logprobs.end(), 0.0);
  if (options.mode == ScoreMode::kSum) return total;
  return total / normalizer(logprobs.size() + 1, options.norm);
}

double candidate_score(const SequenceScorer& model, const Vocabulary& vocab,
                       std::span<const Event> script, const Event& candidate,
                       const ScoringOptions& options) {
  const auto lp = model.target_logprobs(candidate_source(vocab, script, options.null_style),
                                        candidate_target(vocab, candidate, options.null_style));
  return aggregate_logprobs(lp, options);
}

std::vector<double> candidate_scores(const SequenceScorer& model, const Vocabulary& vocab,
                                     const MCNCInstance& instance,
                                     const ScoringOptions& options) {
  const TokenIds source = candidate_source(vocab, instance.script.events, options.null_style);
  std::vector<TokenIds> targets;
  targets.reserve(instance.candidates.size());
  for (const auto& c : instance.candidates)
    targets.push_back(candidate_target(vocab, c, options.null_style));
  const auto all = model.target_logprobs_batch(source, targets);
  std::vector<double> o;
  o.reserve(all.size());
  for (const auto& lp : all) o.push_back(aggregate_logprobs(lp, options));
  return o;
}

std::vector<double> softmax_scores(std::span<const double> o) {
  std::vector<double> s(o.size());
  if (o.empty()) return s;
  const double mx = *std::max_element(o.begin(), o.end());
  double total = 0.0;
  for (std::size_t i = 0; i < o.size(); ++i) total += s[i] = std::exp(o[i] - mx);
  for (double& v : s) v /= total;
  return s;
}

ScoreVector make_score_vector(std::vector<double> o, int t) {
  ScoreVector sv;
  sv.s = softmax_scores(o);
  sv.o = std::move(o);
  sv.t = t;
  return sv;
}

double cot_complement(std::span<const double> s, int t) {
  check_index(s.size(), t);
  const double rest = 1.0 - s[t];
  if (rest <= kDegenerateEps)
    throw DegenerateScore("correct candidate holds all probability mass");
  // A lone negative has conditional probability 1.
  if (s.size() == 2) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (static_cast<int>(i) == t || s[i] <= 0.0) continue;
    const double q = s[i] / rest;
    acc += q * std::log(q);
  }
  return acc / static_cast<double>(s.size() - 1);
}

LossValue loss_cot(std::span<const double> s, int t) {
  check_index(s.size(), t);
  if (s.size() < 2) throw DataError("loss_cot needs at least two candidates");
  const double st = s[t];
  const double rest = 1.0 - st;
  if (st >= 1.0 - kDegenerateEps)
    throw DegenerateScore("correct candidate holds all probability mass");
  const double scale = 1.0 / static_cast<double>(s.size() - 1);

  LossValue out;
  out.grad.assign(s.size(), 0.0);
  out.value = -std::log(st) + cot_complement(s, t);
  // d/ds_i of q_i log q_i with q_i = s_i / (1 - s_t).
  double dt = -1.0 / st;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (static_cast<int>(i) == t) continue;
    const double q = s[i] / rest;
    const double lq = q > 0.0 ? std::log(q) : 0.0;
    out.grad[i] = scale * (lq + 1.0) / rest;
    dt += scale * (lq + 1.0) * q / rest;
  }
  out.grad[t] = dt;
  return out;
}

LossValue loss_cross(std::span<const double> s, int t) {
  check_index(s.size(), t);
  LossValue out;
  out.grad.assign(s.size(), 0.0);
  const double st = std::max(s[t], kProbFloor);
  out.value = -std::log(st);
  out.grad[t] = s[t] > kProbFloor ? -1.0 / st : 0.0;
  return out;
}

LossValue loss_margin(std::span<const double> s, int t, double margin,
                      MarginOrientation orientation) {
  check_index(s.size(), t);
  if (!(margin >= 0.0)) throw ConfigError("margin must be nonnegative");
  const double sign = orientation == MarginOrientation::kConventional ? 1.0 : -1.0;
  LossValue out;
  out.grad.assign(s.size(), 0.0);
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (static_cast<int>(i) == t) continue;
    const double h = margin - sign * (s[t] - s[i]);
    if (h > 0.0) {
      out.value += h;
      out.grad[t] -= sign;
      out.grad[i] += sign;
    }
  }
  return out;
}

LossValue finetune_loss(std::span<const double> o, int t, const LossOptions& options) {
  check_index(o.size(), t);
  const std::size_t m = o.size();
  const auto s = softmax_scores(o);
  LossValue out;
  out.grad.assign(m, 0.0);

  if (options.kind == LossKind::kMargin) {
    const LossValue ls = loss_margin(s, t, options.margin, options.orientation);
    double dot = 0.0;
    for (std::size_t i = 0; i < m; ++i) dot += ls.grad[i] * s[i];
    for (std::size_t i = 0; i < m; ++i) out.grad[i] = s[i] * (ls.grad[i] - dot);
    out.value = ls.value;
    return out;
  }

  out.value = log_sum_exp(o) - o[t];
  for (std::size_t i = 0; i < m; ++i) out.grad[i] = s[i];
  out.grad[t] -= 1.0;
  if (options.kind == LossKind::kCross || m < 2) return out;

  // Negatives renormalized by 1 - s_t are a softmax over the negatives' o.
  std::vector<double> neg;
  neg.reserve(m - 1);
  for (std::size_t i = 0; i < m; ++i)
    if (static_cast<int>(i) != t) neg.push_back(o[i]);
  const double lse = log_sum_exp(neg);
  std::vector<double> logq(m, 0.0);
  double h = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (static_cast<int>(i) == t) continue;
    logq[i] = o[i] - lse;
    h += std::exp(logq[i]) * logq[i];
  }
  const double scale = 1.0 / static_cast<double>(m - 1);
  out.value += scale * h;
  for (std::size_t i = 0; i < m; ++i) {
    if (static_cast<int>(i) == t) continue;
    out.grad[i] += scale * std::exp(logq[i]) * (logq[i] - h);
  }
  return out;
}

int predict(std::span<const double> scores) {
  if (scores.empty()) throw DataError("cannot predict from an empty score vector");
  return static_cast<int>(std::max_element(scores.begin(), scores.end()) - scores.begin());
}

template <typename T>
ad::Var infill_nll_graph(ForwardPass<T>& fp, const InfillSample& sample, Norm norm) {
  if (sample.target_ids.size() < 2)
    throw EmptyTarget("infill target needs at least two tokens");
  auto& tape = fp.tape();
  ad::Var memory = fp.encode(sample.source_ids);
  ad::Var lp = fp.target_logprobs(memory, sample.target_ids);
  return ad::scale(tape, ad::sum(tape, lp),
                   static_cast<T>(-1.0 / normalizer(sample.target_ids.size(), norm)));
}

template <typename T>
ad::Var candidate_scores_graph(ForwardPass<T>& fp, const TokenIds& source,
                               std::span<const TokenIds> targets,
                               const ScoringOptions& options) {
  auto& tape = fp.tape();
  ad::Var memory = fp.encode(source);
  std::vector<ad::Var> scores;
  scores.reserve(targets.size());
  for (const auto& target : targets) {
    if (target.size() < 2) throw EmptyTarget("candidate target needs at least two tokens");
    ad::Var total = ad::sum(tape, fp.target_logprobs(memory, target));
    const double denom =
        options.mode == ScoreMode::kSum ? 1.0 : normalizer(target.size(), options.norm);
    scores.push_back(ad::scale(tape, total, static_cast<T>(1.0 / denom)));
  }
  return ad::stack_scalars(tape, std::move(scores));
}

template <typename T>
ad::Var finetune_loss_graph(ForwardPass<T>& fp, const TokenIds& source,
                            std::span<const TokenIds> targets, int t,
                            const ScoringOptions& scoring, const LossOptions& loss) {
  ad::Var o = candidate_scores_graph(fp, source, targets, scoring);
  return ad::scalar_fn(fp.tape(), o, [t, loss](const std::vector<double>& v) {
    LossValue lv = finetune_loss(v, t, loss);
    return std::make_pair(lv.value, std::move(lv.grad));
  });
}

template <typename T>
ad::Var classifier_scores_graph(ForwardPass<T>& fp, std::span<const TokenIds> sources) {
  auto& tape = fp.tape();
  std::vector<ad::Var> scores;
  scores.reserve(sources.size());
  for (std::size_t i = 0; i < sources.size(); ++i) {
    ad::Var logits = fp.classifier_logits(fp.encode(sources[i]));
    if (tape.value(logits).cols() <= static_cast<Eigen::Index>(i))
      throw ConfigError("classifier head narrower than the candidate count");
    scores.push_back(ad::element(tape, logits, 0, static_cast<Eigen::Index>(i)));
  }
  return ad::stack_scalars(tape, std::move(scores));
}

template <typename T>
ad::Var classifier_loss_graph(ForwardPass<T>& fp, std::span<const TokenIds> sources, int t) {
  ad::Var o = classifier_scores_graph(fp, sources);
  const LossOptions cross{LossKind::kCross};
  return ad::scalar_fn(fp.tape(), o, [t, cross](const std::vector<double>& v) {
    LossValue lv = finetune_loss(v, t, cross);
    return std::make_pair(lv.value, std::move(lv.grad));
  });
}

template <typename T>
std::vector<double> classifier_scores(const Transformer<T>& model, const Vocabulary& vocab,
                                      const MCNCInstance& instance, NullStyle null_style) {
  std::vector<TokenIds> sources;
  for (const auto& c : instance.candidates)
    sources.push_back(classifier_source(vocab, instance.script.events, c, null_style));
  ForwardPass<T> fp(model, nullptr);
  const auto& row = fp.tape().value(classifier_scores_graph<T>(fp, sources));
  return std::vector<double>(row.data(), row.data() + row.size());
}

#define SCRIPTSEQ_INSTANTIATE(T)                                                             \
  template ad::Var infill_nll_graph<T>(ForwardPass<T>&, const InfillSample&, Norm);          \
  template ad::Var candidate_scores_graph<T>(ForwardPass<T>&, const TokenIds&,               \
                                             std::span<const TokenIds>,                      \
                                             const ScoringOptions&);                         \
  template ad::Var finetune_loss_graph<T>(ForwardPass<T>&, const TokenIds&,                  \
                                          std::span<const TokenIds>, int,                    \
                                          const ScoringOptions&, const LossOptions&);        \
  template ad::Var classifier_scores_graph<T>(ForwardPass<T>&, std::span<const TokenIds>);   \
  template ad::Var classifier_loss_graph<T>(ForwardPass<T>&, std::span<const TokenIds>, int); \
  template std::vector<double> classifier_scores<T>(const Transformer<T>&, const Vocabulary&, \
                                                    const MCNCInstance&, NullStyle);

SCRIPTSEQ_INSTANTIATE(float)
SCRIPTSEQ_INSTANTIATE(double)

#undef SCRIPTSEQ_INSTANTIATE

}  // namespace scriptseq
