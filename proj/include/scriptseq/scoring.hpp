#pragma once

#include <span>
#include <vector>

#include "scriptseq/masking.hpp"
#include "scriptseq/model.hpp"

namespace scriptseq {

// Denominator of the length normalization. kPaper divides by the full target
// token count N (leading <s> included); kGenerated divides by N - 1.
enum class Norm { kPaper, kGenerated };
enum class ScoreMode { kMean, kSum };

struct ScoringOptions {
  Norm norm = Norm::kPaper;
  ScoreMode mode = ScoreMode::kMean;
  NullStyle null_style = NullStyle::kOmit;
};

enum class LossKind { kCot, kCross, kMargin };
enum class MarginOrientation { kConventional, kPaperLiteral };

struct LossOptions {
  LossKind kind = LossKind::kCot;
  double margin = 0.1;
  MarginOrientation orientation = MarginOrientation::kConventional;
};

const char* to_string(Norm v);
const char* to_string(ScoreMode v);
const char* to_string(LossKind v);
const char* to_string(MarginOrientation v);
Norm parse_norm(const std::string& s);  // parse_* throw ConfigError
ScoreMode parse_score_mode(const std::string& s);
LossKind parse_loss_kind(const std::string& s);
MarginOrientation parse_orientation(const std::string& s);

struct ScoreVector {
  std::vector<double> o;
  std::vector<double> s;
  int t = -1;
};

// A loss value and its gradient with respect to the loss input.
struct LossValue {
  double value = 0.0;
  std::vector<double> grad;
};

double normalizer(std::size_t target_len, Norm norm);

// -(1/N) * sum of the scored target log-probabilities.
double infill_nll_from_logprobs(std::span<const double> logprobs, std::size_t target_len,
                                Norm norm = Norm::kPaper);
// Throws EmptyTarget when the target has fewer than two tokens.
double infill_nll(const SequenceScorer& model, const InfillSample& sample,
                  Norm norm = Norm::kPaper);

// Script followed by one <MASK> slot, with <s> and </s>.
TokenIds candidate_source(const Vocabulary& vocab, std::span<const Event> script,
                          NullStyle null_style = NullStyle::kOmit);
// <s> candidate . </s>
TokenIds candidate_target(const Vocabulary& vocab, const Event& candidate,
                          NullStyle null_style = NullStyle::kOmit);
// Source for the classifier variant: script then candidate, no mask.
TokenIds classifier_source(const Vocabulary& vocab, std::span<const Event> script,
                           const Event& candidate, NullStyle null_style = NullStyle::kOmit);

// o from one candidate's teacher-forced log-probabilities.
double aggregate_logprobs(std::span<const double> logprobs, const ScoringOptions& options);

double candidate_score(const SequenceScorer& model, const Vocabulary& vocab,
                       std::span<const Event> script, const Event& candidate,
                       const ScoringOptions& options = {});
// All candidates of an instance; the source is shared.
std::vector<double> candidate_scores(const SequenceScorer& model, const Vocabulary& vocab,
                                     const MCNCInstance& instance,
                                     const ScoringOptions& options = {});

std::vector<double> softmax_scores(std::span<const double> o);
ScoreVector make_score_vector(std::vector<double> o, int t = -1);

// Losses over softmax scores s; gradients are with respect to s.
// loss_cot throws DegenerateScore when s[t] >= 1 - 1e-12.
LossValue loss_cot(std::span<const double> s, int t);
LossValue loss_cross(std::span<const double> s, int t);
LossValue loss_margin(std::span<const double> s, int t, double margin,
                      MarginOrientation orientation = MarginOrientation::kConventional);
// Second term of loss_cot alone.
double cot_complement(std::span<const double> s, int t);

// The selected loss as a function of raw scores o, gradient with respect to
// o. The cot and cross branches work in log space and never degenerate.
LossValue finetune_loss(std::span<const double> o, int t, const LossOptions& options);

// Index of the maximum; ties go to the lowest index.
int predict(std::span<const double> scores);

// Graph builders over a ForwardPass.
template <typename T>
ad::Var infill_nll_graph(ForwardPass<T>& fp, const InfillSample& sample,
                         Norm norm = Norm::kPaper);

// 1 x M row of candidate scores; the source is encoded once.
template <typename T>
ad::Var candidate_scores_graph(ForwardPass<T>& fp, const TokenIds& source,
                               std::span<const TokenIds> targets,
                               const ScoringOptions& options);

template <typename T>
ad::Var finetune_loss_graph(ForwardPass<T>& fp, const TokenIds& source,
                            std::span<const TokenIds> targets, int t,
                            const ScoringOptions& scoring, const LossOptions& loss);

// 1 x M row whose entry i is logit i of the classifier run on sources[i].
template <typename T>
ad::Var classifier_scores_graph(ForwardPass<T>& fp, std::span<const TokenIds> sources);

template <typename T>
ad::Var classifier_loss_graph(ForwardPass<T>& fp, std::span<const TokenIds> sources, int t);

template <typename T>
std::vector<double> classifier_scores(const Transformer<T>& model,
                                      const Vocabulary& vocab, const MCNCInstance& instance,
                                      NullStyle null_style = NullStyle::kOmit);

}  // namespace scriptseq
